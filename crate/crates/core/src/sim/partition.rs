//! Splitting one routing layer into per-vault snippets and the inter-vault
//! transfers that stitch them together.
//!
//! Stages parallel along the plan dimension run locally on each active vault.
//! The others run as a local pre-aggregation, a binary reduction tree towards
//! vault 0, a global step on vault 0 and (where the result is needed
//! everywhere) a broadcast back down the tree.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::capsnet::NetworkConfig;
use crate::planner::{DistributionDim, EqId};

/// Bytes of packet head plus tail on every inter-vault element.
pub const PACKET_BYTES: u64 = 16;
/// Bytes of one scalar.
pub const WORD_BYTES: u64 = 4;

/// What a snippet computes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Kernel {
    /// Prediction vectors for every local (k, i, j).
    Predict,
    /// Softmax of whole logit rows.
    Softmax,
    /// Exponentials of the local logits plus their partial row sums.
    SoftmaxPartial,
    /// Division of local exponentials by the gathered row sums.
    SoftmaxNormalize,
    WeightedSum,
    Squash,
    Agreement,
    /// Element-wise accumulation of a received partial result.
    Combine,
}

impl Kernel {
    pub fn eq(self, combine_of: EqId) -> EqId {
        match self {
            Kernel::Predict => EqId::Eq1,
            Kernel::WeightedSum => EqId::Eq2,
            Kernel::Squash => EqId::Eq3,
            Kernel::Agreement => EqId::Eq4,
            Kernel::Softmax | Kernel::SoftmaxPartial | Kernel::SoftmaxNormalize => EqId::Eq5,
            Kernel::Combine => combine_of,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Kernel::Predict => "predict",
            Kernel::Softmax => "softmax",
            Kernel::SoftmaxPartial => "softmax-partial",
            Kernel::SoftmaxNormalize => "softmax-normalize",
            Kernel::WeightedSum => "weighted-sum",
            Kernel::Squash => "squash",
            Kernel::Agreement => "agreement",
            Kernel::Combine => "combine",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Role {
    /// Stage parallel along the plan dimension, run on the vault's slice.
    Local,
    /// Partial result over the vault's slice of a non-parallel stage.
    PreAggregate,
    /// Remainder of a non-parallel stage, run once on the root vault.
    Global,
    /// Accumulation of a partial result received from a child vault.
    Combine,
}

/// Local cell counts along the three routing axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Cells {
    pub batch: usize,
    pub low: usize,
    pub high: usize,
}

impl Cells {
    pub fn get(&self, dim: DistributionDim) -> usize {
        match dim {
            DistributionDim::B => self.batch,
            DistributionDim::L => self.low,
            DistributionDim::H => self.high,
        }
    }

    pub fn with(mut self, dim: DistributionDim, n: usize) -> Self {
        match dim {
            DistributionDim::B => self.batch = n,
            DistributionDim::L => self.low = n,
            DistributionDim::H => self.high = n,
        }
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSnippet {
    pub eq: EqId,
    pub kernel: Kernel,
    pub role: Role,
    /// 0 for the prediction stage, `1..=I` for routing rounds.
    pub iteration: usize,
    pub vault: usize,
    /// Index range along the plan dimension; the full range for global and
    /// combine snippets.
    pub slice: Range<usize>,
    pub cells: Cells,
    /// Scalars combined by a [`Kernel::Combine`] snippet.
    pub combine_elems: u64,
    pub op_count: u64,
    pub bytes_in: u64,
    pub bytes_out: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transfer {
    pub eq: EqId,
    pub iteration: usize,
    pub src: usize,
    /// More than one destination is a crossbar multicast, paid once.
    pub dsts: Vec<usize>,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Step {
    Compute(WorkloadSnippet),
    Transfer(Transfer),
}

/// One node of the layer's task graph. `deps` index earlier steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanStep {
    pub step: Step,
    pub deps: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadPlan {
    pub dim: DistributionDim,
    pub n_vaults: usize,
    pub active_vaults: usize,
    pub steps: Vec<PlanStep>,
}

impl WorkloadPlan {
    pub fn snippets(&self) -> impl Iterator<Item = &WorkloadSnippet> {
        self.steps.iter().filter_map(|s| match &s.step {
            Step::Compute(c) => Some(c),
            Step::Transfer(_) => None,
        })
    }

    pub fn transfers(&self) -> impl Iterator<Item = &Transfer> {
        self.steps.iter().filter_map(|s| match &s.step {
            Step::Transfer(t) => Some(t),
            Step::Compute(_) => None,
        })
    }

    pub fn intervault_bytes(&self) -> u64 {
        self.transfers().map(|t| t.bytes).sum()
    }

    /// Scalar operations assigned to each vault.
    pub fn vault_ops(&self) -> Vec<u64> {
        let mut ops = vec![0u64; self.n_vaults];
        for s in self.snippets() {
            ops[s.vault] += s.op_count;
        }
        ops
    }

    pub fn total_ops(&self) -> u64 {
        self.snippets().map(|s| s.op_count).sum()
    }
}

/// Scalar operations of one full routing layer: prediction once, then per
/// round softmax, weighted sum, squash and agreement.
pub fn analytic_total_ops(cfg: &NetworkConfig) -> u64 {
    let (nb, nl, nh) = (cfg.batch_size as u64, cfg.low_caps as u64, cfg.high_caps as u64);
    let (cl, ch, it) = (cfg.low_dim as u64, cfg.high_dim as u64, cfg.iterations as u64);
    let predict = nb * nl * nh * ch * (2 * cl - 1);
    let softmax = nl * (3 * nh - 1);
    let weighted = nb * nh * ch * (2 * nl - 1);
    let squash = nb * nh * (3 * ch + 19);
    let agreement = nb * nl * nh * 2 * ch;
    predict + it * (softmax + weighted + squash + agreement)
}

/// Operations of the squash of one `C_H`-vector: norm, inverse square root,
/// scale factor and rescale.
pub fn squash_ops(ch: u64) -> u64 {
    3 * ch + 19
}

/// Sizes of `n` items split over `parts`, larger shares first.
pub fn ceil_first_split(n: usize, parts: usize) -> Vec<usize> {
    let parts = parts.max(1);
    let (base, rem) = (n / parts, n % parts);
    (0..parts).map(|p| base + usize::from(p < rem)).collect()
}

struct Builder<'a> {
    cfg: &'a NetworkConfig,
    dim: DistributionDim,
    active: usize,
    slices: Vec<Range<usize>>,
    steps: Vec<PlanStep>,
    last: Vec<Option<usize>>,
}

impl<'a> Builder<'a> {
    fn new(cfg: &'a NetworkConfig, dim: DistributionDim, n_vaults: usize) -> Self {
        let extent = dim.extent(cfg);
        let active = n_vaults.min(extent).max(1);
        let mut start = 0;
        let slices = ceil_first_split(extent, active)
            .into_iter()
            .map(|len| {
                let r = start..start + len;
                start += len;
                r
            })
            .collect();
        Builder {
            cfg,
            dim,
            active,
            slices,
            steps: Vec::new(),
            last: vec![None; n_vaults],
        }
    }

    fn full(&self) -> Cells {
        Cells {
            batch: self.cfg.batch_size,
            low: self.cfg.low_caps,
            high: self.cfg.high_caps,
        }
    }

    fn local_cells(&self, v: usize) -> Cells {
        self.full().with(self.dim, self.slices[v].len())
    }

    fn push(&mut self, step: Step, vaults: &[usize], extra: &[usize]) -> usize {
        let mut deps: Vec<usize> = vaults.iter().filter_map(|&v| self.last[v]).collect();
        deps.extend_from_slice(extra);
        deps.sort_unstable();
        deps.dedup();
        let idx = self.steps.len();
        self.steps.push(PlanStep { step, deps });
        idx
    }

    fn compute(&mut self, snippet: WorkloadSnippet, extra: &[usize]) -> usize {
        let v = snippet.vault;
        let idx = self.push(Step::Compute(snippet), &[v], extra);
        self.last[v] = Some(idx);
        idx
    }

    /// Transfers wait for their source; receivers wait for the transfer.
    fn transfer(&mut self, t: Transfer) {
        let dsts = t.dsts.clone();
        let deps: Vec<usize> = self.last[t.src].into_iter().collect();
        let idx = self.steps.len();
        self.steps.push(PlanStep {
            step: Step::Transfer(t),
            deps,
        });
        for d in dsts {
            self.last[d] = Some(idx);
        }
    }

    fn snippet(
        &self,
        kernel: Kernel,
        eq: EqId,
        role: Role,
        iteration: usize,
        vault: usize,
        cells: Cells,
    ) -> WorkloadSnippet {
        let global = matches!(role, Role::Global | Role::Combine);
        let slice = if global {
            0..self.dim.extent(self.cfg)
        } else {
            self.slices[vault].clone()
        };
        let (op_count, bytes_in, bytes_out) = kernel_cost(kernel, role, cells, self.cfg);
        WorkloadSnippet {
            eq,
            kernel,
            role,
            iteration,
            vault,
            slice,
            cells,
            combine_elems: 0,
            op_count,
            bytes_in,
            bytes_out,
        }
    }

    /// Local snippet on every active vault.
    fn each_local(&mut self, kernel: Kernel, role: Role, iteration: usize, cells: impl Fn(&Self, usize) -> Cells) {
        for v in 0..self.active {
            let c = cells(self, v);
            let s = self.snippet(kernel, kernel.eq(EqId::Eq1), role, iteration, v, c);
            self.compute(s, &[]);
        }
    }

    /// Binary reduction tree onto vault 0. Every hop ships `elems` scalars in
    /// `elem_bytes`-sized packets and is folded in by a combine snippet of
    /// `elems * lanes` additions.
    fn reduce(&mut self, eq: EqId, iteration: usize, elems: u64, elem_bytes: u64, lanes: u64) {
        let mut step = 1;
        while step < self.active {
            for parent in (0..self.active).step_by(2 * step) {
                let child = parent + step;
                if child >= self.active {
                    continue;
                }
                self.transfer(Transfer {
                    eq,
                    iteration,
                    src: child,
                    dsts: vec![parent],
                    bytes: elems * (elem_bytes + PACKET_BYTES),
                });
                let mut s = self.snippet(Kernel::Combine, eq, Role::Combine, iteration, parent, self.full());
                s.combine_elems = elems * lanes;
                s.op_count = elems * lanes;
                self.compute(s, &[]);
            }
            step *= 2;
        }
    }

    /// Binary broadcast tree from vault 0.
    fn broadcast(&mut self, eq: EqId, iteration: usize, elems: u64, elem_bytes: u64) {
        let mut step = 1;
        while step < self.active {
            step *= 2;
        }
        while step > 1 {
            let half = step / 2;
            for src in (0..self.active).step_by(step) {
                let dst = src + half;
                if dst < self.active {
                    self.transfer(Transfer {
                        eq,
                        iteration,
                        src,
                        dsts: vec![dst],
                        bytes: elems * (elem_bytes + PACKET_BYTES),
                    });
                }
            }
            step = half;
        }
    }

    fn global(&mut self, kernel: Kernel, eq: EqId, iteration: usize, cells: Cells) {
        let s = self.snippet(kernel, eq, Role::Global, iteration, 0, cells);
        self.compute(s, &[]);
    }

    fn finish(self, n_vaults: usize) -> WorkloadPlan {
        WorkloadPlan {
            dim: self.dim,
            n_vaults,
            active_vaults: self.active,
            steps: self.steps,
        }
    }
}

/// `(ops, bytes read, bytes written)` of one snippet.
pub(crate) fn kernel_cost(kernel: Kernel, role: Role, c: Cells, cfg: &NetworkConfig) -> (u64, u64, u64) {
    let (kb, ib, jb) = (c.batch as u64, c.low as u64, c.high as u64);
    let (cl, ch) = (cfg.low_dim as u64, cfg.high_dim as u64);
    let w = WORD_BYTES;
    match kernel {
        Kernel::Predict => (
            kb * ib * jb * ch * (2 * cl - 1),
            ib * jb * cl * ch * w + kb * ib * cl * w,
            kb * ib * jb * ch * w,
        ),
        Kernel::Softmax => (ib * (3 * jb - 1), ib * jb * w, ib * jb * w),
        Kernel::SoftmaxPartial => (ib * (2 * jb - 1), ib * jb * w, ib * jb * w),
        Kernel::SoftmaxNormalize => (ib * jb, ib * jb * w, ib * jb * w),
        Kernel::WeightedSum => (
            kb * jb * ch * (2 * ib - 1),
            kb * ib * jb * ch * w + ib * jb * w,
            kb * jb * ch * w,
        ),
        Kernel::Squash => (kb * jb * squash_ops(ch), kb * jb * ch * w, kb * jb * ch * w),
        Kernel::Agreement => {
            let ops = match role {
                // Partial sums over the local batch slice; the old logit is
                // added once by the global step.
                Role::PreAggregate => ib * jb * (2 * ch * kb - 1),
                Role::Global => ib * jb,
                _ => ib * jb * kb * 2 * ch,
            };
            let bytes_in = if role == Role::Global {
                ib * jb * w
            } else {
                kb * ib * jb * ch * w + kb * jb * ch * w
            };
            (ops, bytes_in, ib * jb * w)
        }
        Kernel::Combine => (0, 0, 0),
    }
}

/// Snippets and transfers of one routing layer distributed along `dim` over
/// `n_vaults` vaults. Only `min(n_vaults, extent)` vaults receive work; their
/// slices are split ceiling-first.
pub fn partition_workload(cfg: &NetworkConfig, dim: DistributionDim, n_vaults: usize) -> WorkloadPlan {
    let n_vaults = n_vaults.max(1);
    let mut b = Builder::new(cfg, dim, n_vaults);
    let full = b.full();
    let (nb, nl, nh) = (cfg.batch_size as u64, cfg.low_caps as u64, cfg.high_caps as u64);
    let ch = cfg.high_dim as u64;
    let vec_bytes = WORD_BYTES * ch;

    b.each_local(Kernel::Predict, Role::Local, 0, |b, v| b.local_cells(v));
    for t in 1..=cfg.iterations {
        match dim {
            DistributionDim::B => {
                b.global(Kernel::Softmax, EqId::Eq5, t, full);
                b.broadcast(EqId::Eq5, t, nl * nh, WORD_BYTES);
                b.each_local(Kernel::WeightedSum, Role::Local, t, |b, v| b.local_cells(v));
                b.each_local(Kernel::Squash, Role::Local, t, |b, v| b.local_cells(v));
                b.each_local(Kernel::Agreement, Role::PreAggregate, t, |b, v| b.local_cells(v));
                b.reduce(EqId::Eq4, t, nl * nh, WORD_BYTES, 1);
                b.global(Kernel::Agreement, EqId::Eq4, t, full);
            }
            DistributionDim::L => {
                b.each_local(Kernel::Softmax, Role::Local, t, |b, v| b.local_cells(v));
                b.each_local(Kernel::WeightedSum, Role::PreAggregate, t, |b, v| b.local_cells(v));
                b.reduce(EqId::Eq2, t, nb * nh, vec_bytes, ch);
                b.global(Kernel::Squash, EqId::Eq3, t, full);
                b.broadcast(EqId::Eq3, t, nb * nh, vec_bytes);
                b.each_local(Kernel::Agreement, Role::Local, t, |b, v| b.local_cells(v));
            }
            DistributionDim::H => {
                b.each_local(Kernel::SoftmaxPartial, Role::PreAggregate, t, |b, v| b.local_cells(v));
                b.reduce(EqId::Eq5, t, nl, WORD_BYTES, 1);
                if b.active > 1 {
                    b.transfer(Transfer {
                        eq: EqId::Eq5,
                        iteration: t,
                        src: 0,
                        dsts: (1..b.active).collect(),
                        bytes: nl * (WORD_BYTES + PACKET_BYTES),
                    });
                }
                b.each_local(Kernel::SoftmaxNormalize, Role::Local, t, |b, v| b.local_cells(v));
                b.each_local(Kernel::WeightedSum, Role::Local, t, |b, v| b.local_cells(v));
                b.each_local(Kernel::Squash, Role::Local, t, |b, v| b.local_cells(v));
                b.each_local(Kernel::Agreement, Role::Local, t, |b, v| b.local_cells(v));
            }
        }
    }
    b.finish(n_vaults)
}
