//! Runtime arbitration between host and PE requests.
//!
//! Granting host priority on `n_h` of the `n_max` vaults a host operation
//! touches delays the PE queues there (`γ_v·n_h·Q̄`) while the host waits on
//! the remaining vaults (`γ_h·n_max/n_h`).

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Stand-in for `n_h` in the host term when no vault grants host priority.
pub const SERIAL_DEFERRAL: f64 = 0.5;

/// Host-side impact factor for memory-intensive host phases.
pub const GAMMA_H_MEMORY: f64 = 2.0;
/// Host-side impact factor for compute-intensive host phases.
pub const GAMMA_H_COMPUTE: f64 = 1.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RmasError {
    #[error("n_h = {n_h} outside 0..={n_max}")]
    OutOfRange { n_h: usize, n_max: usize },
    #[error("invalid scheduler input: {0}")]
    Input(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HostPhase {
    MemoryIntensive,
    ComputeIntensive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchedulerInput {
    pub n_max: usize,
    pub q_bar: f64,
    /// Queue depth of each targeted vault, indexed by vault ID.
    pub q_per_vault: Vec<usize>,
    pub gamma_v: f64,
    pub gamma_h: f64,
}

impl SchedulerInput {
    /// Input built from per-vault depths, with `Q̄` their mean.
    pub fn from_depths(q_per_vault: Vec<usize>, phase: HostPhase) -> Self {
        let n_max = q_per_vault.len();
        let q_bar = if n_max == 0 {
            0.0
        } else {
            q_per_vault.iter().sum::<usize>() as f64 / n_max as f64
        };
        SchedulerInput {
            n_max,
            q_bar,
            q_per_vault,
            gamma_v: 1.0,
            gamma_h: match phase {
                HostPhase::MemoryIntensive => GAMMA_H_MEMORY,
                HostPhase::ComputeIntensive => GAMMA_H_COMPUTE,
            },
        }
    }

    pub fn validate(&self) -> Result<(), RmasError> {
        let ok = |x: f64| x.is_finite() && x >= 0.0;
        if !ok(self.q_bar) || !ok(self.gamma_v) || !ok(self.gamma_h) {
            return Err(RmasError::Input("Q̄ and γ must be finite and non-negative".into()));
        }
        if self.gamma_v == 0.0 && self.gamma_h == 0.0 {
            return Err(RmasError::Input("γ_v and γ_h cannot both be zero".into()));
        }
        Ok(())
    }
}

/// `κ(n_h) = γ_v·n_h·Q̄ + γ_h·n_max/n_h`, with `n_h = 0` priced through
/// [`SERIAL_DEFERRAL`].
pub fn kappa(n_h: usize, input: &SchedulerInput) -> Result<f64, RmasError> {
    input.validate()?;
    if n_h > input.n_max {
        return Err(RmasError::OutOfRange {
            n_h,
            n_max: input.n_max,
        });
    }
    let n_max = input.n_max as f64;
    if n_h == 0 {
        return Ok(input.gamma_h * n_max / SERIAL_DEFERRAL);
    }
    let n = n_h as f64;
    Ok(input.gamma_v * n * input.q_bar + input.gamma_h * n_max / n)
}

/// Closed-form minimizer `x = √(n_max·γ_h/(Q̄·γ_v))` rounded to an integer
/// and clamped to `0..=n_max`; a zero `Q̄·γ_v` selects `n_max`.
///
/// κ is convex in `n_h`, and `κ(n) = κ(n+1)` exactly at `x² = n(n+1)`, so
/// rounding up past that point (rather than past `n + 1/2`) always lands on
/// the integer minimum. Exact ties round up.
pub fn optimal_nh(input: &SchedulerInput) -> Result<usize, RmasError> {
    input.validate()?;
    let denom = input.q_bar * input.gamma_v;
    if denom == 0.0 {
        return Ok(input.n_max);
    }
    let x2 = input.n_max as f64 * input.gamma_h / denom;
    let lo = x2.sqrt().floor();
    let n = if x2 >= lo * (lo + 1.0) && x2 > 0.0 {
        lo + 1.0
    } else {
        lo
    };
    Ok((n as usize).min(input.n_max))
}

/// The `optimal_nh` targeted vaults with the smallest queues, lowest ID
/// first on ties. Returned in ascending ID order.
pub fn grant_priority(input: &SchedulerInput) -> Result<Vec<usize>, RmasError> {
    if input.q_per_vault.len() != input.n_max {
        return Err(RmasError::Input(format!(
            "{} queue depths for n_max = {}",
            input.q_per_vault.len(),
            input.n_max
        )));
    }
    let n_h = optimal_nh(input)?;
    let mut ids: Vec<usize> = (0..input.n_max).collect();
    ids.sort_by_key(|&v| (input.q_per_vault[v], v));
    let mut granted: Vec<usize> = ids.into_iter().take(n_h).collect();
    granted.sort_unstable();
    Ok(granted)
}

/// Integer argmin of κ over `lo..=n_max`, smallest `n_h` on exact ties.
pub fn brute_force_nh(input: &SchedulerInput, lo: usize) -> Result<usize, RmasError> {
    let mut best = (f64::INFINITY, lo);
    for n in lo..=input.n_max {
        let k = kappa(n, input)?;
        if k < best.0 {
            best = (k, n);
        }
    }
    Ok(best.1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn input(n_max: usize, q_bar: f64, gv: f64, gh: f64) -> SchedulerInput {
        SchedulerInput {
            n_max,
            q_bar,
            q_per_vault: vec![q_bar.round() as usize; n_max],
            gamma_v: gv,
            gamma_h: gh,
        }
    }

    #[test]
    fn kappa_examples() {
        let a = input(4, 1.0, 1.0, 1.0);
        assert_eq!(kappa(2, &a).unwrap(), 4.0);
        assert!(kappa(5, &a).is_err());
        let no_host = input(6, 2.0, 1.0, 0.0);
        let vals: Vec<f64> = (1..=6).map(|n| kappa(n, &no_host).unwrap()).collect();
        assert!(vals.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(kappa(6, &input(6, 3.0, 0.0, 1.0)).unwrap(), 1.0);
        assert_eq!(kappa(0, &a).unwrap(), 8.0);
    }

    #[test]
    fn optimal_examples() {
        let a = input(4, 1.0, 1.0, 1.0);
        assert_eq!(optimal_nh(&a).unwrap(), 2);
        assert_eq!(brute_force_nh(&a, 0).unwrap(), 2);
        assert_eq!(optimal_nh(&input(4, 1e9, 1.0, 1.0)).unwrap(), 1);
        assert_eq!(optimal_nh(&input(4, 1.0, 1.0, 0.0)).unwrap(), 0);
        // x = √2.1 ≈ 1.449 rounds down by magnitude but κ(2) < κ(1).
        let gap = input(21, 10.0, 1.0, 1.0);
        assert_eq!(optimal_nh(&gap).unwrap(), 2);
        assert_eq!(brute_force_nh(&gap, 0).unwrap(), 2);
        assert_eq!(optimal_nh(&input(7, 3.0, 0.0, 1.0)).unwrap(), 7);
        assert_eq!(optimal_nh(&input(7, 0.0, 1.0, 1.0)).unwrap(), 7);
    }

    #[test]
    fn grant_examples() {
        let mut a = input(4, 1.0, 1.0, 1.0);
        a.q_per_vault = vec![5, 1, 3, 2];
        a.q_bar = 2.75;
        // n_max·γ_h/(Q̄·γ_v) = 4/2.75, sqrt ≈ 1.21 → 1 vault
        assert_eq!(grant_priority(&a).unwrap(), vec![1]);
        a.q_bar = 1.0;
        assert_eq!(grant_priority(&a).unwrap(), vec![1, 3]);
        a.q_bar = 1e9;
        assert_eq!(grant_priority(&a).unwrap(), vec![1]);
        a.gamma_h = 0.0;
        assert_eq!(grant_priority(&a).unwrap(), Vec::<usize>::new());
        a.gamma_h = 1.0;
        a.gamma_v = 0.0;
        assert_eq!(grant_priority(&a).unwrap(), vec![0, 1, 2, 3]);
        let tie = SchedulerInput {
            q_per_vault: vec![2, 2, 2, 2],
            ..input(4, 1.0, 1.0, 1.0)
        };
        assert_eq!(grant_priority(&tie).unwrap(), vec![0, 1]);
    }

    #[test]
    fn phase_defaults() {
        let m = SchedulerInput::from_depths(vec![1, 3], HostPhase::MemoryIntensive);
        assert_eq!((m.gamma_h, m.q_bar, m.n_max), (2.0, 2.0, 2));
        let c = SchedulerInput::from_depths(vec![1, 3], HostPhase::ComputeIntensive);
        assert_eq!(c.gamma_h, 1.0);
    }

    proptest! {
        #[test]
        fn closed_form_matches_brute_force(
            n_max in 1usize..=32, q_bar in 0.001f64..=64.0,
            gv in 0.01f64..=100.0, gh in 0.01f64..=100.0,
        ) {
            let a = input(n_max, q_bar, gv, gh);
            let closed = optimal_nh(&a).unwrap();
            let brute = brute_force_nh(&a, 1).unwrap();
            let kc = kappa(closed, &a).unwrap();
            let kb = kappa(brute, &a).unwrap();
            prop_assert!(closed == brute || kc == kb);
        }

        #[test]
        fn grant_size_and_determinism(depths in proptest::collection::vec(0usize..50, 0..32), gh in 0.01f64..100.0) {
            let mut a = SchedulerInput::from_depths(depths, HostPhase::ComputeIntensive);
            a.gamma_h = gh;
            let g1 = grant_priority(&a).unwrap();
            let g2 = grant_priority(&a).unwrap();
            prop_assert_eq!(&g1, &g2);
            prop_assert_eq!(g1.len(), optimal_nh(&a).unwrap().min(a.n_max));
        }
    }
}
