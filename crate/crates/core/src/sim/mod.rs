//! Cycle-level simulation of one routing layer under each execution scenario.
//!
//! [`run_rp`] partitions the layer over the vaults ([`partition`]), spreads
//! every snippet over the PEs of its vault ([`schedule`]), times each distinct
//! wave against the bank model ([`window`]) and list-schedules the task graph
//! with inter-vault transfers serialized on the vault ports ([`engine`]).
//! [`models`] holds the analytic host, pipeline and energy models.

mod engine;
pub mod models;
pub mod partition;
pub mod schedule;
pub mod window;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arith::{ArithError, ExpApproxParams, PeConfig};
use crate::capsnet::{dynamic_routing_with, Approx, CapsError, CapsuleTensor, Exact, NetworkConfig, RoutingInstance};
use crate::hmc::{AddressMode, HmcConfig, HmcError};
use crate::par::Execution;
use crate::planner::{DistributionDim, PlanError};

pub use models::{
    baseline_rp, baseline_traffic, end_to_end, energy_model, host_on_pim_seconds, host_roofline_seconds, host_work,
    pipeline_model, EndToEnd, EnergyCoeffs, GpuModel, HostWork,
};
pub use partition::{partition_workload, Cells, Kernel, PlanStep, Role, Step, Transfer, WorkloadPlan, WorkloadSnippet};
pub use schedule::{intra_vault_schedule, SubOp, VaultSchedule, Wave};
pub use window::{simulate_wave, MemScheme, WaveTiming, WaveWork};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation input: {0}")]
    Config(String),
    #[error(transparent)]
    Hmc(#[from] HmcError),
    #[error(transparent)]
    Arith(#[from] ArithError),
    #[error(transparent)]
    Caps(#[from] CapsError),
    #[error(transparent)]
    Plan(#[from] PlanError),
}

/// Which side the arbiter favours when host and PE requests collide.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RmasPolicy {
    /// PE requests always win.
    PimFirst,
    /// Host requests always win.
    GpuFirst,
    /// Host priority on the `n_h` vaults that minimize the combined stall.
    Adaptive,
}

/// Where routing runs and how its data is laid out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scenario {
    /// Everything on the host GPU.
    BaselineModel,
    /// Routing in memory with the stock address mapping: data interleaved
    /// across vaults, so most PE reads cross the crossbar.
    PimIntra,
    /// Vault-local data with fixed 256 B sub-pages and no second-level split
    /// of partial waves.
    PimInter,
    /// Vault-local data with sub-pages matched to each request.
    PimCapsNet,
    /// As [`Scenario::PimCapsNet`], with the front layers also on the PEs.
    AllInPim,
    /// As [`Scenario::PimCapsNet`], overlapped with the host under an arbiter.
    Rmas(RmasPolicy),
}

impl Scenario {
    pub const ALL: [Scenario; 8] = [
        Scenario::BaselineModel,
        Scenario::PimIntra,
        Scenario::PimInter,
        Scenario::PimCapsNet,
        Scenario::AllInPim,
        Scenario::Rmas(RmasPolicy::PimFirst),
        Scenario::Rmas(RmasPolicy::GpuFirst),
        Scenario::Rmas(RmasPolicy::Adaptive),
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::BaselineModel => "baseline",
            Scenario::PimIntra => "pim-intra",
            Scenario::PimInter => "pim-inter",
            Scenario::PimCapsNet => "pim-capsnet",
            Scenario::AllInPim => "all-in-pim",
            Scenario::Rmas(RmasPolicy::PimFirst) => "rmas-pim",
            Scenario::Rmas(RmasPolicy::GpuFirst) => "rmas-gpu",
            Scenario::Rmas(RmasPolicy::Adaptive) => "rmas-adaptive",
        }
    }

    /// Memory layout of the PE data; `None` for the host-only scenario.
    pub fn mem_scheme(self) -> Option<MemScheme> {
        match self {
            Scenario::BaselineModel => None,
            Scenario::PimIntra => Some(MemScheme {
                mode: AddressMode::Default,
                indicator: None,
            }),
            Scenario::PimInter => Some(MemScheme {
                mode: AddressMode::Proposed,
                indicator: Some(4),
            }),
            _ => Some(MemScheme {
                mode: AddressMode::Proposed,
                indicator: None,
            }),
        }
    }

    /// Whether partial waves are cut along a second dimension.
    pub fn resplit(self) -> bool {
        self != Scenario::PimInter
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scenario {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.trim().to_ascii_lowercase().replace('_', "-");
        Scenario::ALL.into_iter().find(|sc| sc.name() == key).ok_or_else(|| {
            let names: Vec<&str> = Scenario::ALL.iter().map(|s| s.name()).collect();
            SimError::Config(format!("unknown scenario '{s}' (expected one of {})", names.join(", ")))
        })
    }
}

/// Outcome of simulating one routing layer.
///
/// On the critical vault `total = compute + intervault_comm + vrs +
/// memory_latency + sync`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimMetrics {
    pub scenario: String,
    pub dim: Option<DistributionDim>,
    pub vault_freq_hz: f64,
    pub n_vaults: usize,
    pub total_cycles: u64,
    pub compute_cycles: u64,
    pub intervault_comm_cycles: u64,
    pub vrs_cycles: u64,
    pub memory_latency_cycles: u64,
    pub sync_cycles: u64,
    pub intervault_bytes: u64,
    pub pe_ops: u64,
    pub bank_accesses: u64,
    pub external_bytes: u64,
    /// Requests outstanding per vault, averaged over the layer.
    pub mean_queue_depth: f64,
    pub energy_rel: f64,
    /// Busy fraction of each vault.
    pub per_vault_busy: Vec<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SimOptions {
    pub seed: u64,
    pub exp_params: ExpApproxParams,
    /// Also run the routing numerics and return `v`.
    pub numerics: bool,
    pub trace: bool,
    pub exec: Execution,
    pub energy: EnergyCoeffs,
    pub gpu: GpuModel,
}

/// One step of the simulated task graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub kind: String,
    pub label: String,
    pub iteration: usize,
    pub vault: usize,
    pub dsts: String,
    pub start: u64,
    pub end: u64,
    pub ops: u64,
    pub bytes: u64,
}

impl TraceRow {
    pub const CSV_HEADER: &'static str = "step,kind,label,iteration,vault,dsts,start,end,ops,bytes";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.step,
            self.kind,
            self.label,
            self.iteration,
            self.vault,
            self.dsts,
            self.start,
            self.end,
            self.ops,
            self.bytes
        )
    }
}

#[derive(Debug, Clone)]
pub struct RpRun {
    pub metrics: SimMetrics,
    /// High-level capsules, when numerics were requested.
    pub v: Option<CapsuleTensor>,
    pub trace: Vec<TraceRow>,
}

/// Bytes of every routing tensor held in memory at once.
pub fn data_footprint(cfg: &NetworkConfig) -> u64 {
    let (nb, nl, nh) = (cfg.batch_size as u64, cfg.low_caps as u64, cfg.high_caps as u64);
    let (cl, ch) = (cfg.low_dim as u64, cfg.high_dim as u64);
    partition::WORD_BYTES * (nl * nh * cl * ch + nb * nl * cl + nb * nl * nh * ch + 2 * nl * nh + 2 * nb * nh * ch)
}

/// Bytes crossing the host link for one batch: `u` in, `v` out.
pub fn pim_external_bytes(cfg: &NetworkConfig) -> u64 {
    let (nb, nl, nh) = (cfg.batch_size as u64, cfg.low_caps as u64, cfg.high_caps as u64);
    partition::WORD_BYTES * (nb * nl * cfg.low_dim as u64 + nb * nh * cfg.high_dim as u64)
}

/// Simulates one routing layer distributed along `dim`. The host-only
/// scenario ignores `dim` and uses the analytic GPU model.
pub fn run_rp(
    cfg: &NetworkConfig,
    dim: DistributionDim,
    scenario: Scenario,
    hmc: &HmcConfig,
    pe: &PeConfig,
    opts: &SimOptions,
) -> Result<RpRun, SimError> {
    cfg.validate()?;
    hmc.validate()?;
    opts.energy.validate()?;
    let footprint = data_footprint(cfg);
    if footprint > hmc.capacity_bytes {
        return Err(SimError::Config(format!(
            "routing data needs {footprint} bytes, cube holds {}",
            hmc.capacity_bytes
        )));
    }
    let (mut metrics, trace) = match scenario.mem_scheme() {
        None => (baseline_rp(cfg, hmc, &opts.gpu), Vec::new()),
        Some(scheme) => {
            let plan = partition_workload(cfg, dim, hmc.n_vaults);
            let out = engine::run_plan(&plan, cfg, hmc, pe, &scheme, scenario.resplit(), opts.exec, opts.trace)?;
            let f = hmc.vault_freq_hz;
            let metrics = SimMetrics {
                scenario: scenario.name().to_string(),
                dim: Some(dim),
                vault_freq_hz: f,
                n_vaults: hmc.n_vaults,
                total_cycles: out.total_cycles,
                compute_cycles: out.compute,
                intervault_comm_cycles: out.total_cycles - out.compute - out.vrs - out.latency,
                vrs_cycles: out.vrs,
                memory_latency_cycles: out.latency,
                sync_cycles: 0,
                intervault_bytes: plan.intervault_bytes() + out.remote_bytes,
                pe_ops: plan.total_ops(),
                bank_accesses: out.bank_blocks,
                external_bytes: pim_external_bytes(cfg),
                mean_queue_depth: out.mean_queue_depth,
                energy_rel: 0.0,
                per_vault_busy: out.per_vault_busy,
                seconds: out.total_cycles as f64 / f,
            };
            (metrics, out.trace)
        }
    };
    metrics.energy_rel = energy_model(&metrics, &opts.energy)?;
    let v = if opts.numerics {
        let inst = RoutingInstance::random(*cfg, opts.seed)?;
        let (v, _) = if scenario == Scenario::BaselineModel {
            dynamic_routing_with(opts.exec, &inst.u, &inst.w, cfg, &Exact)?
        } else {
            let approx = Approx::new(opts.exp_params)?;
            dynamic_routing_with(opts.exec, &inst.u, &inst.w, cfg, &approx)?
        };
        Some(v)
    } else {
        None
    };
    Ok(RpRun { metrics, v, trace })
}
