//! Closed-form cost model for distributing the routing procedure over vaults.
//!
//! `E` is the operation count of the busiest vault and `M` the bytes moved
//! between vaults when the whole procedure is split along one of the batch
//! (B), low-capsule (L) or high-capsule (H) dimensions. The execution score
//! `S = 1/(αE + βM)` ranks the three candidates.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::capsnet::NetworkConfig;
use crate::hmc::HmcConfig;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanError {
    #[error("invalid cost parameters: {0}")]
    Params(String),
    #[error("execution score undefined: alpha*E + beta*M = 0")]
    ZeroCost,
    #[error("frequency {0} Hz must be positive and finite")]
    Frequency(f64),
    #[error("frequency sweep needs at least one frequency")]
    EmptySweep,
    #[error("unknown distribution dimension `{0}`")]
    UnknownDim(String),
    #[error("unknown routing stage `{0}`")]
    UnknownStage(String),
    #[error(transparent)]
    Config(#[from] crate::capsnet::CapsError),
}

/// Distribution dimension. Declaration order is the tie-break order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DistributionDim {
    B,
    L,
    H,
}

impl DistributionDim {
    pub const ALL: [DistributionDim; 3] = [DistributionDim::B, DistributionDim::L, DistributionDim::H];

    pub fn name(self) -> &'static str {
        match self {
            DistributionDim::B => "B",
            DistributionDim::L => "L",
            DistributionDim::H => "H",
        }
    }

    /// Extent of this dimension in `cfg`.
    pub fn extent(self, cfg: &NetworkConfig) -> usize {
        match self {
            DistributionDim::B => cfg.batch_size,
            DistributionDim::L => cfg.low_caps,
            DistributionDim::H => cfg.high_caps,
        }
    }
}

impl fmt::Display for DistributionDim {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DistributionDim {
    type Err = PlanError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "B" => Ok(DistributionDim::B),
            "L" => Ok(DistributionDim::L),
            "H" => Ok(DistributionDim::H),
            _ => Err(PlanError::UnknownDim(s.to_string())),
        }
    }
}

/// Routing stages: prediction, weighted sum, squash, agreement, softmax.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EqId {
    Eq1,
    Eq2,
    Eq3,
    Eq4,
    Eq5,
}

impl EqId {
    pub const ALL: [EqId; 5] = [EqId::Eq1, EqId::Eq2, EqId::Eq3, EqId::Eq4, EqId::Eq5];

    pub fn name(self) -> &'static str {
        match self {
            EqId::Eq1 => "Eq1",
            EqId::Eq2 => "Eq2",
            EqId::Eq3 => "Eq3",
            EqId::Eq4 => "Eq4",
            EqId::Eq5 => "Eq5",
        }
    }
}

impl fmt::Display for EqId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EqId {
    type Err = PlanError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        EqId::ALL
            .into_iter()
            .find(|e| e.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| PlanError::UnknownStage(s.to_string()))
    }
}

/// Dimensions along which a stage can run without cross-vault aggregation.
pub fn parallelizable_dims(eq: EqId) -> &'static [DistributionDim] {
    use DistributionDim::*;
    match eq {
        EqId::Eq1 => &[B, L, H],
        EqId::Eq2 => &[B, H],
        EqId::Eq3 => &[B, H],
        EqId::Eq4 => &[L, H],
        EqId::Eq5 => &[L],
    }
}

/// Device coefficients and transfer sizes of the cost model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostParams {
    pub n_vault: usize,
    /// Seconds per operation on one vault at `freq_hz`.
    pub alpha: f64,
    /// Seconds per inter-vault byte.
    pub beta: f64,
    /// Bytes of one `b_ij`.
    pub size_b: f64,
    /// Bytes of one `c_ij`.
    pub size_c: f64,
    /// Bytes of one `s^k_j` vector.
    pub size_s: f64,
    /// Bytes of one `v^k_j` vector.
    pub size_v: f64,
    /// Packet head plus tail bytes.
    pub size_pkt: f64,
    /// Vault clock `alpha` was derived for.
    pub freq_hz: f64,
}

impl CostParams {
    /// Coefficients derived from the memory configuration: `α = 1/(PEs·f)`,
    /// `β = 1/internal_bw`, scalar variables 4 bytes, capsule vectors
    /// `4·C_H` bytes.
    pub fn from_hardware(cfg: &NetworkConfig, hmc: &HmcConfig) -> Self {
        let vec_bytes = 4.0 * cfg.high_dim as f64;
        CostParams {
            n_vault: hmc.n_vaults,
            alpha: 1.0 / (hmc.pes_per_vault as f64 * hmc.vault_freq_hz),
            beta: 1.0 / hmc.internal_bw,
            size_b: 4.0,
            size_c: 4.0,
            size_s: vec_bytes,
            size_v: vec_bytes,
            size_pkt: 16.0,
            freq_hz: hmc.vault_freq_hz,
        }
    }

    pub fn validate(&self) -> Result<(), PlanError> {
        if self.n_vault == 0 {
            return Err(PlanError::Params("n_vault must be at least 1".into()));
        }
        let positive = [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("size_b", self.size_b),
            ("size_c", self.size_c),
            ("size_s", self.size_s),
            ("size_v", self.size_v),
            ("size_pkt", self.size_pkt),
            ("freq_hz", self.freq_hz),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(PlanError::Params(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// Same device clocked at `freq_hz`: `α` scales inversely, `β` is held.
    pub fn at_frequency(&self, freq_hz: f64) -> Result<Self, PlanError> {
        if !(freq_hz.is_finite() && freq_hz > 0.0) {
            return Err(PlanError::Frequency(freq_hz));
        }
        Ok(CostParams {
            alpha: self.alpha * self.freq_hz / freq_hz,
            freq_hz,
            ..*self
        })
    }
}

fn ceil_div(a: usize, b: usize) -> f64 {
    a.div_ceil(b) as f64
}

fn ceil_log2(n: usize) -> f64 {
    (usize::BITS - (n.max(1) - 1).leading_zeros()) as f64
}

/// Busiest-vault operation count for `dim`; B uses the unsimplified form.
pub fn compute_e(dim: DistributionDim, cfg: &NetworkConfig, p: &CostParams) -> f64 {
    let nv = p.n_vault.max(1);
    let (nb, nl, nh) = (cfg.batch_size as f64, cfg.low_caps as f64, cfg.high_caps as f64);
    let (cl, ch, it) = (cfg.low_dim as f64, cfg.high_dim as f64, cfg.iterations as f64);
    match dim {
        DistributionDim::B => {
            let q = ceil_div(cfg.batch_size, nv);
            q * nl * nh * ch * (2.0 * cl - 1.0)
                + it * (q * nh * ch * (2.0 * nl - 1.0)
                    + q * nh * (3.0 * ch + 19.0)
                    + q * nl * nh * (2.0 * ch - 1.0)
                    + ceil_log2(nv) / nv as f64
                    + 4.0 * ch)
        }
        DistributionDim::L => {
            let q = ceil_div(cfg.low_caps, nv);
            nb * q * nh * (2.0 * it * (2.0 * ch - 1.0) + ch * (2.0 * cl - 1.0))
        }
        DistributionDim::H => {
            let q = ceil_div(cfg.high_caps, nv);
            nb * nl * q * ch * (2.0 * cl - 1.0 + 2.0 * it)
        }
    }
}

/// Simplified closed form of the B-dimension workload.
pub fn compute_e_b_simplified(cfg: &NetworkConfig, p: &CostParams) -> f64 {
    let q = ceil_div(cfg.batch_size, p.n_vault.max(1));
    let (nl, nh) = (cfg.low_caps as f64, cfg.high_caps as f64);
    let (cl, ch, it) = (cfg.low_dim as f64, cfg.high_dim as f64, cfg.iterations as f64);
    q * nl * nh * ((4.0 * it - 1.0) * ch + 2.0 * cl * ch - it)
}

/// Inter-vault bytes for `dim`.
pub fn compute_m(dim: DistributionDim, cfg: &NetworkConfig, p: &CostParams) -> f64 {
    let others = p.n_vault.saturating_sub(1) as f64;
    let (nb, nl, nh) = (cfg.batch_size as f64, cfg.low_caps as f64, cfg.high_caps as f64);
    let it = cfg.iterations as f64;
    match dim {
        DistributionDim::B => {
            it * (others * nl * nh * (p.size_b + p.size_pkt) + others * nl * nh * (p.size_c + p.size_pkt))
        }
        DistributionDim::L => {
            it * (nb * others * nh * (p.size_s + p.size_pkt) + nb * others * nh * (p.size_v + p.size_pkt))
        }
        DistributionDim::H => it * (others * nl * (p.size_b + p.size_pkt) + nl * (p.size_c + p.size_pkt)),
    }
}

pub fn execution_score(e: f64, m: f64, p: &CostParams) -> Result<f64, PlanError> {
    if !(e >= 0.0 && m >= 0.0) {
        return Err(PlanError::Params(format!("E={e} and M={m} must be non-negative")));
    }
    let cost = p.alpha * e + p.beta * m;
    if cost <= 0.0 || !cost.is_finite() {
        return Err(PlanError::ZeroCost);
    }
    Ok(1.0 / cost)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DimCost {
    pub dim: DistributionDim,
    pub e: f64,
    pub m: f64,
    pub s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub costs: Vec<DimCost>,
    pub selected: DistributionDim,
}

impl CostReport {
    pub fn cost(&self, dim: DistributionDim) -> Option<&DimCost> {
        self.costs.iter().find(|c| c.dim == dim)
    }
}

/// Highest score wins; equal scores resolve in B, L, H order.
pub fn pick_best(costs: &[DimCost]) -> Option<DistributionDim> {
    let mut sorted: Vec<&DimCost> = costs.iter().collect();
    sorted.sort_by_key(|c| c.dim);
    sorted
        .into_iter()
        .fold(None::<&DimCost>, |best, c| match best {
            Some(b) if b.s >= c.s => Some(b),
            _ => Some(c),
        })
        .map(|c| c.dim)
}

pub fn select_dimension(cfg: &NetworkConfig, p: &CostParams) -> Result<CostReport, PlanError> {
    cfg.validate()?;
    p.validate()?;
    let costs = DistributionDim::ALL
        .into_iter()
        .map(|dim| {
            let e = compute_e(dim, cfg, p);
            let m = compute_m(dim, cfg, p);
            Ok(DimCost {
                dim,
                e,
                m,
                s: execution_score(e, m, p)?,
            })
        })
        .collect::<Result<Vec<_>, PlanError>>()?;
    let selected = pick_best(&costs).expect("three candidates");
    Ok(CostReport { costs, selected })
}

pub const DEFAULT_SWEEP_HZ: [f64; 3] = [312.5e6, 625.0e6, 937.5e6];

pub fn frequency_sweep(
    cfg: &NetworkConfig,
    p: &CostParams,
    freqs: &[f64],
) -> Result<Vec<(f64, CostReport)>, PlanError> {
    if freqs.is_empty() {
        return Err(PlanError::EmptySweep);
    }
    freqs
        .iter()
        .map(|&f| Ok((f, select_dimension(cfg, &p.at_frequency(f)?)?)))
        .collect()
}
