//! List scheduling of a workload plan.
//!
//! Steps start in program order once their dependencies are done. A compute
//! step also waits for its vault; a transfer waits for the out-port of its
//! source and the in-ports of its destinations.

use std::collections::HashMap;

use crate::arith::PeConfig;
use crate::capsnet::NetworkConfig;
use crate::hmc::{link_cost, HmcConfig};
use crate::par::{self, Execution};

use super::partition::{Step, WorkloadPlan};
use super::schedule::{granule_bytes, intra_vault_schedule, sub_op_bytes, sub_op_cycles};
use super::window::{simulate_wave, MemScheme, WaveTiming, WaveWork};
use super::{SimError, TraceRow};

#[derive(Debug, Clone, Default)]
pub(crate) struct EngineOutput {
    pub total_cycles: u64,
    /// Breakdown on the vault that finishes its compute last.
    pub compute: u64,
    pub vrs: u64,
    pub latency: u64,
    pub per_vault_busy: Vec<f64>,
    pub bank_blocks: u64,
    pub remote_bytes: u64,
    pub mean_queue_depth: f64,
    pub trace: Vec<TraceRow>,
}

#[derive(Debug, Clone, Copy, Default)]
struct VaultAcc {
    free: u64,
    busy: u64,
    compute: u64,
    vrs: u64,
    latency: u64,
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn run_plan(
    plan: &WorkloadPlan,
    cfg: &NetworkConfig,
    hmc: &HmcConfig,
    pe: &PeConfig,
    scheme: &MemScheme,
    resplit: bool,
    exec: Execution,
    want_trace: bool,
) -> Result<EngineOutput, SimError> {
    let pes = hmc.pes_per_vault;
    // Waves of every compute step as (repeat, index into `works`).
    let mut works: Vec<WaveWork> = Vec::new();
    let mut index: HashMap<WaveWork, usize> = HashMap::new();
    let mut step_waves: Vec<Vec<(u64, usize)>> = Vec::with_capacity(plan.steps.len());
    for ps in &plan.steps {
        let mut waves = Vec::new();
        if let Step::Compute(snippet) = &ps.step {
            for w in intra_vault_schedule(snippet, plan.dim, pes, resplit).waves {
                let (body, fill) = sub_op_cycles(&w.sub_op, cfg, pe)?;
                let (read_bytes, write_bytes) = sub_op_bytes(&w.sub_op, cfg);
                let work = WaveWork {
                    active_pes: w.active_pes,
                    compute_cycles: body,
                    fill_cycles: fill,
                    read_bytes,
                    write_bytes,
                    granule: granule_bytes(&w.sub_op, cfg),
                };
                let i = *index.entry(work).or_insert_with(|| {
                    works.push(work);
                    works.len() - 1
                });
                waves.push((w.repeat, i));
            }
        }
        step_waves.push(waves);
    }
    let timings: Vec<WaveTiming> = par::map_slice(exec, &works, |w| simulate_wave(w, scheme, hmc))
        .into_iter()
        .collect::<Result<_, _>>()?;

    let n = plan.n_vaults;
    let mut vaults = vec![VaultAcc::default(); n];
    let mut out_free = vec![0u64; n];
    let mut in_free = vec![0u64; n];
    let mut finish = vec![0u64; plan.steps.len()];
    let mut out = EngineOutput::default();
    let mut queue_area = 0u64;
    for (i, ps) in plan.steps.iter().enumerate() {
        let ready = ps.deps.iter().map(|&d| finish[d]).max().unwrap_or(0);
        let row = match &ps.step {
            Step::Compute(s) => {
                let acc = &mut vaults[s.vault];
                let start = ready.max(acc.free);
                let mut dur = 0;
                for &(repeat, w) in &step_waves[i] {
                    let t = &timings[w];
                    dur += repeat * t.cycles;
                    acc.compute += repeat * t.compute;
                    acc.vrs += repeat * t.vrs;
                    acc.latency += repeat * t.latency;
                    out.bank_blocks += repeat * t.bank_blocks;
                    out.remote_bytes += repeat * t.remote_bytes;
                    queue_area += repeat * t.queue_area;
                }
                acc.free = start + dur;
                acc.busy += dur;
                finish[i] = start + dur;
                TraceRow {
                    step: i,
                    kind: "compute".into(),
                    label: format!("{}-{:?}", s.kernel.name(), s.role).to_lowercase(),
                    iteration: s.iteration,
                    vault: s.vault,
                    dsts: String::new(),
                    start,
                    end: finish[i],
                    ops: s.op_count,
                    bytes: s.bytes_in + s.bytes_out,
                }
            }
            Step::Transfer(t) => {
                let port_ready = t.dsts.iter().map(|&d| in_free[d]).fold(out_free[t.src], u64::max);
                let start = ready.max(port_ready);
                let end = start + link_cost(t.bytes, hmc);
                out_free[t.src] = end;
                for &d in &t.dsts {
                    in_free[d] = end;
                }
                finish[i] = end;
                TraceRow {
                    step: i,
                    kind: "transfer".into(),
                    label: format!("{:?}", t.eq).to_lowercase(),
                    iteration: t.iteration,
                    vault: t.src,
                    dsts: t.dsts.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(" "),
                    start,
                    end,
                    ops: 0,
                    bytes: t.bytes,
                }
            }
        };
        if want_trace {
            out.trace.push(row);
        }
    }
    out.total_cycles = finish.iter().copied().max().unwrap_or(0);
    let critical = vaults
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.free.cmp(&b.1.free).then(b.0.cmp(&a.0)))
        .map(|(v, _)| v)
        .unwrap_or(0);
    out.compute = vaults[critical].compute;
    out.vrs = vaults[critical].vrs;
    out.latency = vaults[critical].latency;
    let total = out.total_cycles.max(1) as f64;
    out.per_vault_busy = vaults.iter().map(|a| a.busy as f64 / total).collect();
    out.mean_queue_depth = queue_area as f64 / (total * plan.active_vaults.max(1) as f64);
    Ok(out)
}
