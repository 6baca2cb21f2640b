//! Closed-loop timing of one PE wave against the vault's banks.
//!
//! Every active PE streams its sub-operation as a sequence of fixed-size read
//! requests, computing on one buffer while up to [`PREFETCH_DEPTH`] further
//! reads are outstanding. Result writes are posted. Concurrent PEs fetch
//! adjacent granules, so the address mapping decides how their requests
//! spread over banks. Requests that map to another vault also cross that
//! vault's crossbar port, one response at a time.
//!
//! Long streams are simulated for [`SIM_CHUNKS`] buffers and extended
//! linearly at the steady-state rate of the second half of the window.

use serde::{Deserialize, Serialize};

use crate::hmc::{AddressMode, HmcConfig, HmcError, MemoryRequest, Requester, VaultArray, BLOCK_BYTES, MAX_INDICATOR};

use super::partition::PACKET_BYTES;

/// Buffers simulated per PE before extrapolating.
pub const SIM_CHUNKS: u64 = 64;
/// Reads a PE keeps in flight beyond the buffer it computes on.
pub const PREFETCH_DEPTH: u64 = 2;
/// Start of the region results are written to.
const WRITE_BASE: u64 = 1 << 26;

/// How a scenario lays PE data out in memory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MemScheme {
    pub mode: AddressMode,
    /// Fixed sub-page indicator, or `None` to size sub-pages to each request.
    pub indicator: Option<u8>,
}

impl MemScheme {
    pub fn indicator_for(&self, granule: u64) -> u8 {
        self.indicator
            .unwrap_or_else(|| ((granule / BLOCK_BYTES).max(1).trailing_zeros() as u8).min(MAX_INDICATOR))
    }
}

/// Streaming work of every PE in one wave.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct WaveWork {
    pub active_pes: usize,
    /// Pipelined compute cycles, excluding the fill latency.
    pub compute_cycles: u64,
    pub fill_cycles: u64,
    pub read_bytes: u64,
    pub write_bytes: u64,
    pub granule: u64,
}

/// Cycle breakdown of one wave. `cycles = compute + vrs + port + latency`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct WaveTiming {
    pub cycles: u64,
    pub compute: u64,
    /// Exposed waiting on busy banks.
    pub vrs: u64,
    /// Exposed waiting on the crossbar port.
    pub port: u64,
    /// Exposed bank access time.
    pub latency: u64,
    /// 16-byte blocks read or written, all PEs.
    pub bank_blocks: u64,
    /// Request plus packet bytes that crossed to other vaults, all PEs.
    pub remote_bytes: u64,
    /// Sum over requests of cycles spent queued or in service.
    pub queue_area: u64,
}

#[derive(Debug, Clone, Default)]
struct Pe {
    requested: u64,
    done: u64,
    computing_until: Option<u64>,
    writes_issued: u64,
    ready_at: Vec<Option<u64>>,
    t_half: u64,
    t_end: u64,
}

fn chunk_compute(r: u64, n: u64, total: u64, fill: u64) -> u64 {
    let share = (r + 1) * total / n - r * total / n;
    if r == 0 {
        share + fill
    } else {
        share
    }
}

pub fn simulate_wave(work: &WaveWork, scheme: &MemScheme, hmc: &HmcConfig) -> Result<WaveTiming, HmcError> {
    let compute = work.compute_cycles + work.fill_cycles;
    let n_pe = work.active_pes.max(1) as u64;
    if work.read_bytes == 0 || work.active_pes == 0 {
        let blocks = work.write_bytes.div_ceil(BLOCK_BYTES) * n_pe;
        return Ok(WaveTiming {
            cycles: compute,
            compute,
            bank_blocks: blocks,
            ..WaveTiming::default()
        });
    }
    let g = work.granule.max(BLOCK_BYTES);
    let indicator = scheme.indicator_for(g);
    let n_chunks = work.read_bytes.div_ceil(g);
    let n_sim = n_chunks.min(SIM_CHUNKS);
    let half = n_sim / 2;
    let n_writes = work.write_bytes.div_ceil(g);
    let writes_sim = (n_writes * n_sim).div_ceil(n_chunks);

    let mut mem = VaultArray::new(*hmc, scheme.mode)?;
    let port_bpc = hmc.port_bytes_per_cycle();
    let mut port_free = 0.0f64;
    let mut pes: Vec<Pe> = (0..n_pe)
        .map(|_| Pe {
            ready_at: vec![None; n_sim as usize],
            ..Pe::default()
        })
        .collect();
    let (mut vrs_w, mut port_w, mut svc_w) = (0u64, 0u64, 0u64);
    let (mut blocks, mut remote, mut area) = (0u64, 0u64, 0u64);
    let mut pending_ready: Vec<u64> = Vec::new();

    let read_len = |r: u64| (work.read_bytes - r * g).min(g);
    let mut now = 0u64;
    loop {
        let mut all_done = true;
        for (p, pe) in pes.iter_mut().enumerate() {
            if let Some(t) = pe.computing_until {
                if t <= now {
                    pe.computing_until = None;
                    pe.done += 1;
                    if pe.done == half {
                        pe.t_half = t;
                    }
                    if pe.done == n_sim {
                        pe.t_end = t;
                    }
                }
            }
            if pe.computing_until.is_none() && pe.done < n_sim {
                if let Some(t) = pe.ready_at[pe.done as usize] {
                    if t <= now {
                        let r = pe.done;
                        pe.computing_until =
                            Some(now + chunk_compute(r, n_chunks, work.compute_cycles, work.fill_cycles));
                        let due = ((r + 1) * writes_sim).div_ceil(n_sim);
                        while pe.writes_issued < due.min(writes_sim) {
                            let addr = WRITE_BASE + (pe.writes_issued * n_pe + p as u64) * g;
                            let req = MemoryRequest {
                                requester: Requester::Pe { vault: 0, pe: p },
                                address: addr,
                                n_blocks: (g / BLOCK_BYTES) as u32,
                                indicator,
                                issue_cycle: now,
                            };
                            let loc = mem.enqueue(req)?;
                            blocks += g / BLOCK_BYTES;
                            if loc.vault != 0 {
                                remote += g + PACKET_BYTES;
                            }
                            pe.writes_issued += 1;
                        }
                    }
                }
            }
            let in_use = pe.done + u64::from(pe.computing_until.is_some());
            while pe.requested < n_sim && pe.requested < in_use + PREFETCH_DEPTH {
                let r = pe.requested;
                let bytes = read_len(r);
                let req = MemoryRequest {
                    requester: Requester::Pe { vault: 0, pe: p },
                    address: (r * n_pe + p as u64) * g,
                    n_blocks: bytes.div_ceil(BLOCK_BYTES) as u32,
                    indicator,
                    issue_cycle: now,
                };
                mem.enqueue(req)?;
                pe.requested += 1;
            }
            if pe.done < n_sim {
                all_done = false;
            }
        }
        if all_done {
            break;
        }
        let mut horizon = u64::MAX;
        for pe in &pes {
            if let Some(t) = pe.computing_until {
                horizon = horizon.min(t);
            }
        }
        pending_ready.retain(|&t| t > now);
        if let Some(&t) = pending_ready.iter().min() {
            horizon = horizon.min(t);
        }
        if horizon == u64::MAX && mem.is_idle() {
            return Err(HmcError::Config("PE wave stalled with no pending work".into()));
        }
        let (next, done) = mem.advance(now, horizon);
        for c in done {
            area += c.cycle_completed - c.request.issue_cycle;
            if c.request.address >= WRITE_BASE {
                continue;
            }
            blocks += c.request.n_blocks as u64;
            let Requester::Pe { pe: p, .. } = c.request.requester else {
                continue;
            };
            let idx = c.request.address / g;
            let r = idx / n_pe;
            let bytes = c.request.n_blocks as u64 * BLOCK_BYTES;
            vrs_w += c.stalled_cycles;
            svc_w += c.cycle_completed - c.cycle_issued;
            let ready = if c.vault != 0 {
                let start = port_free.max(c.cycle_completed as f64);
                port_free = start + (bytes + PACKET_BYTES) as f64 / port_bpc;
                remote += bytes + PACKET_BYTES;
                let t = port_free.ceil() as u64;
                port_w += t - c.cycle_completed;
                pending_ready.push(t);
                t
            } else {
                c.cycle_completed
            };
            pes[p].ready_at[r as usize] = Some(ready);
        }
        now = next;
    }

    let extra = n_chunks - n_sim;
    let mut cycles = 0u64;
    for pe in &pes {
        let tail = if extra > 0 && n_sim > half {
            let slope = (pe.t_end - pe.t_half) as f64 / (n_sim - half) as f64;
            (slope * extra as f64).round() as u64
        } else {
            0
        };
        cycles = cycles.max(pe.t_end + tail);
    }
    let cycles = cycles.max(compute);
    let scale = n_chunks as f64 / n_sim as f64;
    let scaled = |x: u64| (x as f64 * scale).round() as u64;
    let exposed = cycles - compute;
    let weight = (vrs_w + port_w + svc_w).max(1) as f64;
    let vrs = (exposed as f64 * vrs_w as f64 / weight).round() as u64;
    let port = ((exposed as f64 * port_w as f64 / weight).round() as u64).min(exposed - vrs);
    Ok(WaveTiming {
        cycles,
        compute,
        vrs,
        port,
        latency: exposed - vrs - port,
        bank_blocks: scaled(blocks),
        remote_bytes: scaled(remote),
        queue_area: scaled(area),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn work(pes: usize, compute: u64, read: u64, granule: u64) -> WaveWork {
        WaveWork {
            active_pes: pes,
            compute_cycles: compute,
            fill_cycles: 0,
            read_bytes: read,
            write_bytes: 0,
            granule,
        }
    }

    const MATCHED: MemScheme = MemScheme {
        mode: AddressMode::Proposed,
        indicator: None,
    };
    const COARSE: MemScheme = MemScheme {
        mode: AddressMode::Proposed,
        indicator: Some(4),
    };
    const INTERLEAVED: MemScheme = MemScheme {
        mode: AddressMode::Default,
        indicator: None,
    };

    #[test]
    fn compute_only_wave() {
        let t = simulate_wave(&work(16, 100, 0, 64), &MATCHED, &HmcConfig::default()).unwrap();
        assert_eq!((t.cycles, t.compute, t.vrs), (100, 100, 0));
    }

    #[test]
    fn matched_subpages_avoid_bank_conflicts() {
        let hmc = HmcConfig::default();
        let w = work(16, 16 * 40, 64 * 40, 64);
        let fine = simulate_wave(&w, &MATCHED, &hmc).unwrap();
        let coarse = simulate_wave(&w, &COARSE, &hmc).unwrap();
        assert!(fine.vrs < coarse.vrs);
        assert!(fine.cycles < coarse.cycles);
        assert_eq!(fine.remote_bytes, 0);
    }

    #[test]
    fn interleaved_data_crosses_ports() {
        let hmc = HmcConfig::default();
        let w = work(16, 16 * 40, 64 * 40, 64);
        let local = simulate_wave(&w, &MATCHED, &hmc).unwrap();
        let spread = simulate_wave(&w, &INTERLEAVED, &hmc).unwrap();
        assert!(spread.remote_bytes > 0);
        assert!(spread.port > 0);
        assert!(spread.cycles > local.cycles);
    }

    #[test]
    fn long_streams_extrapolate_linearly() {
        let hmc = HmcConfig::default();
        let short = simulate_wave(&work(16, 16 * 64, 64 * 64, 64), &MATCHED, &hmc).unwrap();
        let long = simulate_wave(&work(16, 16 * 6400, 64 * 6400, 64), &MATCHED, &hmc).unwrap();
        let ratio = long.cycles as f64 / short.cycles as f64;
        assert!((90.0..=110.0).contains(&ratio), "{ratio}");
        assert_eq!(long.bank_blocks, 100 * short.bank_blocks);
    }

    #[test]
    fn breakdown_adds_up() {
        let hmc = HmcConfig::default().with_frequency(937.5e6);
        for scheme in [MATCHED, COARSE, INTERLEAVED] {
            let t = simulate_wave(&work(16, 300, 64 * 100, 64), &scheme, &hmc).unwrap();
            assert_eq!(t.cycles, t.compute + t.vrs + t.port + t.latency);
        }
    }
}
