//! Spreading one snippet over the PEs of its vault.
//!
//! Sub-operations are the indices of the split dimension: the plan dimension
//! when the stage is parallel along it, otherwise the stage's widest parallel
//! dimension. They run in waves of one sub-operation per PE. A wave with idle
//! PEs may cut each of its sub-operations further along a second parallel
//! dimension.

use serde::{Deserialize, Serialize};

use crate::arith::{pe_flow_latency, ArithError, OpKind, PeConfig};
use crate::capsnet::NetworkConfig;
use crate::planner::{parallelizable_dims, DistributionDim};

use super::partition::{kernel_cost, Cells, Kernel, Role, WorkloadSnippet, WORD_BYTES};

/// Work one PE does in one wave.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SubOp {
    pub kernel: Kernel,
    pub role: Role,
    pub cells: Cells,
    pub combine_elems: u64,
}

/// `repeat` back-to-back waves with `active_pes` PEs each running `sub_op`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Wave {
    pub repeat: u64,
    pub active_pes: usize,
    pub sub_op: SubOp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VaultSchedule {
    pub split_dim: Option<DistributionDim>,
    pub resplit_dim: Option<DistributionDim>,
    pub waves: Vec<Wave>,
}

impl VaultSchedule {
    /// PE-slots of work issued, counting idle PEs in partial waves as empty.
    pub fn occupancy(&self, pes: usize) -> f64 {
        let used: u64 = self.waves.iter().map(|w| w.repeat * w.active_pes as u64).sum();
        let slots: u64 = self.waves.iter().map(|w| w.repeat * pes as u64).sum();
        if slots == 0 {
            0.0
        } else {
            used as f64 / slots as f64
        }
    }
}

/// Axes a kernel's cells actually span.
fn kernel_axes(kernel: Kernel) -> &'static [DistributionDim] {
    use DistributionDim::*;
    match kernel {
        Kernel::Predict | Kernel::WeightedSum | Kernel::Agreement => &[B, L, H],
        Kernel::Squash => &[B, H],
        Kernel::Softmax | Kernel::SoftmaxPartial | Kernel::SoftmaxNormalize => &[L, H],
        Kernel::Combine => &[],
    }
}

/// Dimensions along which the snippet's cells are independent.
fn split_candidates(s: &WorkloadSnippet) -> Vec<DistributionDim> {
    let axes = kernel_axes(s.kernel);
    parallelizable_dims(s.eq)
        .iter()
        .copied()
        .filter(|d| axes.contains(d))
        .collect()
}

/// Waves of one snippet on a vault with `pes` PEs. `resplit` enables cutting
/// partial waves along a second dimension.
pub fn intra_vault_schedule(
    snippet: &WorkloadSnippet,
    plan_dim: DistributionDim,
    pes: usize,
    resplit: bool,
) -> VaultSchedule {
    let pes = pes.max(1);
    let base = SubOp {
        kernel: snippet.kernel,
        role: snippet.role,
        cells: snippet.cells,
        combine_elems: snippet.combine_elems,
    };
    if snippet.kernel == Kernel::Combine {
        let elems = snippet.combine_elems;
        let active = (pes as u64).min(elems.max(1)) as usize;
        let per = elems.div_ceil(active as u64);
        return VaultSchedule {
            split_dim: None,
            resplit_dim: None,
            waves: vec![Wave {
                repeat: 1,
                active_pes: active,
                sub_op: SubOp {
                    combine_elems: per,
                    ..base
                },
            }],
        };
    }
    let candidates = split_candidates(snippet);
    let cells = snippet.cells;
    let widest = |exclude: Option<DistributionDim>| {
        candidates
            .iter()
            .copied()
            .filter(|&d| Some(d) != exclude)
            .fold(None::<DistributionDim>, |best, d| match best {
                Some(b) if cells.get(b) >= cells.get(d) => Some(b),
                _ => Some(d),
            })
    };
    let split = if candidates.contains(&plan_dim) {
        Some(plan_dim)
    } else {
        widest(None)
    };
    let Some(d1) = split else {
        return VaultSchedule {
            split_dim: None,
            resplit_dim: None,
            waves: vec![Wave {
                repeat: 1,
                active_pes: 1,
                sub_op: base,
            }],
        };
    };
    let n1 = cells.get(d1);
    let unit = SubOp {
        cells: cells.with(d1, 1),
        ..base
    };
    let mut waves = Vec::new();
    let full = (n1 / pes) as u64;
    let rem = n1 % pes;
    if full > 0 {
        waves.push(Wave {
            repeat: full,
            active_pes: pes,
            sub_op: unit,
        });
    }
    let mut resplit_dim = None;
    if rem > 0 {
        let d2 = if resplit { widest(Some(d1)) } else { None };
        match d2 {
            Some(d2) if pes >= 2 * rem && cells.get(d2) > 1 => {
                let ext = cells.get(d2);
                let f = (pes / rem).min(ext);
                let piece = ext.div_ceil(f);
                let pieces = ext.div_ceil(piece);
                resplit_dim = Some(d2);
                waves.push(Wave {
                    repeat: 1,
                    active_pes: rem * pieces,
                    sub_op: SubOp {
                        cells: unit.cells.with(d2, piece),
                        ..unit
                    },
                });
            }
            _ => waves.push(Wave {
                repeat: 1,
                active_pes: rem,
                sub_op: unit,
            }),
        }
    }
    VaultSchedule {
        split_dim: Some(d1),
        resplit_dim,
        waves,
    }
}

/// Flow counts of one sub-operation, indexed like [`OpKind::ALL`].
pub fn sub_op_flows(op: &SubOp, cfg: &NetworkConfig) -> [u64; 4] {
    let c = op.cells;
    let (kb, ib, jb) = (c.batch as u64, c.low as u64, c.high as u64);
    let (cl, ch) = (cfg.low_dim as u64, cfg.high_dim as u64);
    // [MAC, EXP, INVSQRT, DIV]
    match op.kernel {
        Kernel::Predict => [kb * ib * jb * cl * ch, 0, 0, 0],
        Kernel::Softmax => [ib * jb, ib * jb, 0, ib * jb],
        Kernel::SoftmaxPartial => [ib * jb, ib * jb, 0, 0],
        Kernel::SoftmaxNormalize => [0, 0, 0, ib * jb],
        Kernel::WeightedSum => [kb * ib * jb * ch, 0, 0, 0],
        Kernel::Squash => [kb * jb * (2 * ch + 3), 0, kb * jb, kb * jb],
        Kernel::Agreement if op.role == Role::Global => [ib * jb, 0, 0, 0],
        Kernel::Agreement => [kb * ib * jb * ch, 0, 0, 0],
        Kernel::Combine => [op.combine_elems, 0, 0, 0],
    }
}

/// Pipelined PE cycles for a sub-operation: every flow occupies its
/// initiation interval, plus one fill of the longest flow used.
pub fn sub_op_compute_cycles(op: &SubOp, cfg: &NetworkConfig, pe: &PeConfig) -> Result<u64, ArithError> {
    let (body, fill) = sub_op_cycles(op, cfg, pe)?;
    Ok(body + fill)
}

/// `(issue cycles, pipeline fill)` of a sub-operation.
pub fn sub_op_cycles(op: &SubOp, cfg: &NetworkConfig, pe: &PeConfig) -> Result<(u64, u64), ArithError> {
    let flows = sub_op_flows(op, cfg);
    let mut cycles = 0u64;
    let mut fill = 0u64;
    for (kind, n) in OpKind::ALL.iter().zip(flows) {
        if n == 0 {
            continue;
        }
        cycles += n * pe.initiation_interval(*kind)?;
        fill = fill.max(pe_flow_latency(*kind, pe)?);
    }
    Ok((cycles, fill.saturating_sub(1)))
}

/// `(bytes read, bytes written)` by one sub-operation.
pub fn sub_op_bytes(op: &SubOp, cfg: &NetworkConfig) -> (u64, u64) {
    if op.kernel == Kernel::Combine {
        return (0, 0);
    }
    let (_, r, w) = kernel_cost(op.kernel, op.role, op.cells, cfg);
    (r, w)
}

/// Contiguous bytes a PE fetches per request: one weight matrix for the
/// prediction stage, one capsule vector for the vector stages, one block
/// for scalar streams. Clamped to 16..=256.
pub fn granule_bytes(op: &SubOp, cfg: &NetworkConfig) -> u64 {
    let natural = match op.kernel {
        Kernel::Predict => WORD_BYTES * (cfg.low_dim * cfg.high_dim) as u64,
        Kernel::WeightedSum | Kernel::Squash => WORD_BYTES * cfg.high_dim as u64,
        Kernel::Agreement if op.role != Role::Global => WORD_BYTES * cfg.high_dim as u64,
        _ => 16,
    };
    natural.next_power_of_two().clamp(16, 256)
}
