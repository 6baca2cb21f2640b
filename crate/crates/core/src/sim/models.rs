//! Analytic companions of the simulator: the host-GPU routing model, the
//! host-layer roofline, the two-stage batch pipeline and relative energy.

use serde::{Deserialize, Serialize};

use crate::capsnet::NetworkConfig;
use crate::hmc::HmcConfig;
use crate::rmas::{self, SchedulerInput};

use super::partition::{analytic_total_ops, WORD_BYTES};
use super::{RmasPolicy, Scenario, SimError, SimMetrics};

/// Host GPU and its memory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpuModel {
    /// Bytes/s between the GPU and its memory.
    pub mem_bw: f64,
    /// Peak FP32 operations per second.
    pub peak_flops: f64,
    /// Barrier-synchronization stall time per unit of memory stall time.
    pub sync_per_mem: f64,
}

impl Default for GpuModel {
    fn default() -> Self {
        GpuModel {
            mem_bw: 320e9,
            peak_flops: 9.3e12,
            // Profiled stall shares: 34.45% synchronization, 44.64% memory.
            sync_per_mem: 0.3445 / 0.4464,
        }
    }
}

/// Bytes the host moves to route one batch: weights and inputs once, the
/// prediction tensor written once and read by the weighted sum and the
/// agreement of every round, plus the small per-round tensors.
pub fn baseline_traffic(cfg: &NetworkConfig) -> u64 {
    let (nb, nl, nh) = (cfg.batch_size as u64, cfg.low_caps as u64, cfg.high_caps as u64);
    let (cl, ch, it) = (cfg.low_dim as u64, cfg.high_dim as u64, cfg.iterations as u64);
    let w = nl * nh * cl * ch;
    let u = nb * nl * cl;
    let u_hat = nb * nl * nh * ch;
    let small = 2 * (nl * nh + nb * nh * ch);
    WORD_BYTES * (w + u + (1 + 2 * it) * u_hat + it * small)
}

/// Host-side routing: memory-bound streaming plus ALU time, with barrier
/// stalls proportional to the memory stalls. Cycles are vault cycles.
pub fn baseline_rp(cfg: &NetworkConfig, hmc: &HmcConfig, gpu: &GpuModel) -> SimMetrics {
    let traffic = baseline_traffic(cfg);
    let ops = analytic_total_ops(cfg);
    let t_mem = traffic as f64 / gpu.mem_bw;
    let t_alu = ops as f64 / gpu.peak_flops;
    let t_sync = gpu.sync_per_mem * t_mem;
    let f = hmc.vault_freq_hz;
    let cyc = |t: f64| (t * f).ceil() as u64;
    let compute = cyc(t_alu);
    let busy = cyc(t_mem.max(t_alu));
    let sync = cyc(t_sync);
    SimMetrics {
        scenario: Scenario::BaselineModel.name().to_string(),
        dim: None,
        vault_freq_hz: f,
        n_vaults: hmc.n_vaults,
        total_cycles: busy + sync,
        compute_cycles: compute,
        intervault_comm_cycles: 0,
        vrs_cycles: 0,
        memory_latency_cycles: busy - compute,
        sync_cycles: sync,
        intervault_bytes: 0,
        pe_ops: ops,
        bank_accesses: traffic.div_ceil(16),
        external_bytes: traffic,
        mean_queue_depth: 0.0,
        energy_rel: 0.0,
        per_vault_busy: Vec::new(),
        seconds: (busy + sync) as f64 / f,
    }
}

/// Work of the layers in front of routing for one batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HostWork {
    pub flops: f64,
    pub bytes: f64,
}

/// Taps of the primary-capsule convolution kernel (9x9).
pub const PRIMARY_KERNEL_TAPS: f64 = 81.0;
/// Input channels of the primary-capsule convolution.
pub const PRIMARY_IN_CHANNELS: f64 = 256.0;

/// Roofline inputs for the front layers, dominated by the primary-capsule
/// convolution: each of the `N_L·C_L` outputs per sample is a
/// `taps x channels` dot product. Weights are read once per batch; outputs
/// are written and read back.
pub fn host_work(cfg: &NetworkConfig) -> HostWork {
    let outputs = (cfg.low_caps * cfg.low_dim) as f64;
    let macs = PRIMARY_KERNEL_TAPS * PRIMARY_IN_CHANNELS;
    let flops = cfg.batch_size as f64 * outputs * 2.0 * macs;
    let weights = macs * PRIMARY_IN_CHANNELS * WORD_BYTES as f64;
    let bytes = weights + 2.0 * cfg.batch_size as f64 * outputs * WORD_BYTES as f64;
    HostWork { flops, bytes }
}

/// Seconds for the front layers of one batch on the GPU.
pub fn host_roofline_seconds(cfg: &NetworkConfig, gpu: &GpuModel) -> f64 {
    let w = host_work(cfg);
    (w.flops / gpu.peak_flops).max(w.bytes / gpu.mem_bw)
}

/// Seconds for the front layers of one batch on the vault PEs (one
/// multiply-add per PE per cycle).
pub fn host_on_pim_seconds(cfg: &NetworkConfig, hmc: &HmcConfig) -> f64 {
    let w = host_work(cfg);
    let pim_flops = 2.0 * (hmc.n_vaults * hmc.pes_per_vault) as f64 * hmc.vault_freq_hz;
    let pim_bw = hmc.internal_bw;
    (w.flops / pim_flops).max(w.bytes / pim_bw)
}

/// Two-stage pipeline: `host + (n-1)·max(host, rp) + rp`.
pub fn pipeline_model(host: u64, rp: u64, n_batches: u64) -> Result<u64, SimError> {
    if n_batches == 0 {
        return Err(SimError::Config("n_batches must be at least 1".into()));
    }
    Ok(host + (n_batches - 1) * host.max(rp) + rp)
}

/// Relative energy weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyCoeffs {
    pub pe_op: f64,
    pub bank_access: f64,
    pub crossbar_byte: f64,
    pub external_byte: f64,
}

impl Default for EnergyCoeffs {
    fn default() -> Self {
        EnergyCoeffs {
            pe_op: 1.0,
            bank_access: 4.0,
            crossbar_byte: 0.5,
            external_byte: 2.0,
        }
    }
}

impl EnergyCoeffs {
    pub fn validate(&self) -> Result<(), SimError> {
        for (name, v) in [
            ("pe_op", self.pe_op),
            ("bank_access", self.bank_access),
            ("crossbar_byte", self.crossbar_byte),
            ("external_byte", self.external_byte),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(SimError::Config(format!(
                    "energy coefficient {name} must be >= 0, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// `Σ count·coeff` over PE ops, bank accesses, crossbar bytes and host-link
/// bytes.
pub fn energy_model(m: &SimMetrics, c: &EnergyCoeffs) -> Result<f64, SimError> {
    c.validate()?;
    Ok(m.pe_ops as f64 * c.pe_op
        + m.bank_accesses as f64 * c.bank_access
        + m.intervault_bytes as f64 * c.crossbar_byte
        + m.external_bytes as f64 * c.external_byte)
}

/// End-to-end latency of `n_batches` batches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndToEnd {
    pub scenario: String,
    pub n_batches: u64,
    pub host_cycles: u64,
    pub rp_cycles: u64,
    /// Vaults granting host priority, when the arbiter is involved.
    pub host_priority_vaults: Option<usize>,
    pub total_cycles: u64,
    pub seconds: f64,
}

/// Bytes the arbiter treats as one host memory operation per vault.
pub const HOST_OP_BYTES_PER_VAULT: f64 = 256.0;

/// Combines the front layers and routing into the batch pipeline.
///
/// The GPU-hosted scenarios overlap the front layers of batch `n+1` with the
/// routing of batch `n`. While they overlap, every host memory operation
/// touches all vaults and the arbiter's choice of `n_h` delays the host by
/// `γ_h·n_max/n_h` and the PEs by `γ_v·n_h·Q̄` bank accesses. The
/// all-in-memory and all-on-host scenarios run both stages back to back on
/// one device.
pub fn end_to_end(
    scenario: Scenario,
    cfg: &NetworkConfig,
    rp: &SimMetrics,
    host_seconds: f64,
    n_batches: u64,
    hmc: &HmcConfig,
) -> Result<EndToEnd, SimError> {
    if n_batches == 0 {
        return Err(SimError::Config("n_batches must be at least 1".into()));
    }
    if !(host_seconds.is_finite() && host_seconds >= 0.0) {
        return Err(SimError::Config(format!(
            "host latency must be >= 0, got {host_seconds}"
        )));
    }
    let f = hmc.vault_freq_hz;
    let host = (host_seconds * f).ceil() as u64;
    let finish = |host_cycles: u64, rp_cycles: u64, total: u64, granted: Option<usize>| EndToEnd {
        scenario: scenario.name().to_string(),
        n_batches,
        host_cycles,
        rp_cycles,
        host_priority_vaults: granted,
        total_cycles: total,
        seconds: total as f64 / f,
    };
    match scenario {
        Scenario::BaselineModel => {
            let total = n_batches * (host + rp.total_cycles);
            Ok(finish(host, rp.total_cycles, total, None))
        }
        Scenario::AllInPim => {
            let host_pim = (host_on_pim_seconds(cfg, hmc) * f).ceil() as u64;
            let total = n_batches * (host_pim + rp.total_cycles);
            Ok(finish(host_pim, rp.total_cycles, total, None))
        }
        _ => {
            let n_max = hmc.n_vaults;
            let input = SchedulerInput {
                n_max,
                q_bar: rp.mean_queue_depth,
                q_per_vault: vec![rp.mean_queue_depth.round() as usize; n_max],
                gamma_v: 1.0,
                gamma_h: rmas::GAMMA_H_COMPUTE,
            };
            let n_h = match scenario {
                Scenario::Rmas(RmasPolicy::PimFirst) => 0,
                Scenario::Rmas(RmasPolicy::GpuFirst) => n_max,
                _ => rmas::optimal_nh(&input).map_err(|e| SimError::Config(e.to_string()))?,
            };
            let host_ops = (host_work(cfg).bytes / (HOST_OP_BYTES_PER_VAULT * n_max as f64)).ceil();
            let unit = hmc.access_cycles() as f64;
            let host_wait = if n_h == 0 {
                input.gamma_h * n_max as f64 / rmas::SERIAL_DEFERRAL
            } else {
                input.gamma_h * n_max as f64 / n_h as f64
            };
            let pe_wait = input.gamma_v * n_h as f64 * input.q_bar;
            let overlap = if n_batches > 1 { 1.0 } else { 0.0 };
            let host_eff = host + (overlap * host_ops * host_wait * unit).ceil() as u64;
            let rp_eff = rp.total_cycles + (overlap * host_ops * pe_wait * unit).ceil() as u64;
            let total = pipeline_model(host_eff, rp_eff, n_batches)?;
            Ok(finish(host_eff, rp_eff, total, Some(n_h)))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn metrics() -> SimMetrics {
        SimMetrics {
            pe_ops: 10,
            bank_accesses: 3,
            intervault_bytes: 8,
            external_bytes: 5,
            ..baseline_rp(
                &NetworkConfig::new(1, 1, 1, 1, 1, 1).unwrap(),
                &HmcConfig::default(),
                &GpuModel::default(),
            )
        }
    }

    #[test]
    fn pipeline_examples() {
        assert_eq!(pipeline_model(7, 5, 1).unwrap(), 12);
        assert_eq!(pipeline_model(10, 10, 10).unwrap(), 110);
        assert_eq!(pipeline_model(1000, 1, 10).unwrap(), 10 * 1000 + 1);
        assert!(pipeline_model(1, 1, 0).is_err());
    }

    #[test]
    fn energy_is_linear() {
        let m = metrics();
        let zero = EnergyCoeffs {
            pe_op: 0.0,
            bank_access: 0.0,
            crossbar_byte: 0.0,
            external_byte: 0.0,
        };
        assert_eq!(energy_model(&m, &zero).unwrap(), 0.0);
        let c = EnergyCoeffs::default();
        let one = energy_model(&m, &c).unwrap();
        assert_eq!(one, 10.0 + 12.0 + 4.0 + 10.0);
        let twice = EnergyCoeffs {
            pe_op: 2.0,
            bank_access: 8.0,
            crossbar_byte: 1.0,
            external_byte: 4.0,
        };
        assert_eq!(energy_model(&m, &twice).unwrap(), 2.0 * one);
        assert!(energy_model(&m, &EnergyCoeffs { pe_op: -1.0, ..c }).is_err());
    }

    #[test]
    fn baseline_is_memory_bound_on_table_shapes() {
        let cfg = NetworkConfig::new(100, 1152, 10, 8, 16, 3).unwrap();
        let m = baseline_rp(&cfg, &HmcConfig::default(), &GpuModel::default());
        assert!(m.memory_latency_cycles > m.compute_cycles);
        assert_eq!(
            m.total_cycles,
            m.compute_cycles + m.memory_latency_cycles + m.sync_cycles
        );
        // 4·(1152·10·128 + 100·1152·8 + 7·100·1152·10·16 + 3·2·(11520 + 16000))
        assert_eq!(
            baseline_traffic(&cfg),
            4 * (1_474_560 + 921_600 + 7 * 18_432_000 + 165_120)
        );
    }

    #[test]
    fn host_roofline_is_compute_bound() {
        let cfg = NetworkConfig::new(100, 1152, 10, 8, 16, 3).unwrap();
        let w = host_work(&cfg);
        assert_eq!(w.flops, 100.0 * 9216.0 * 2.0 * 20736.0);
        let gpu = GpuModel::default();
        assert_eq!(host_roofline_seconds(&cfg, &gpu), w.flops / gpu.peak_flops);
    }
}
