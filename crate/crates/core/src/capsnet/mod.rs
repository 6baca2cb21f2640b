//! Dynamic routing between capsules, parameterized by a scalar provider so
//! the same kernels run with host arithmetic or with the PE approximations.

mod ops;
mod provider;
mod tensor;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arith::ArithError;
use crate::par::Execution;

pub use ops::{
    agreement_update, agreement_update_with, predict, predict_with, routing_softmax, squash, squash_vec, weighted_sum,
    weighted_sum_with,
};
pub use provider::{Approx, Exact, ScalarProvider};
pub use tensor::{Axis, CapsuleTensor};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CapsError {
    #[error("shape mismatch on the {axis} axis: {left} vs {right}")]
    ShapeMismatch { axis: Axis, left: usize, right: usize },
    #[error("operand is missing the {0} axis")]
    MissingAxis(Axis),
    #[error("axis layout {got:?} does not match expected {expected:?}")]
    AxisLayout { expected: Vec<Axis>, got: Vec<Axis> },
    #[error("axis {0} appears twice")]
    DuplicateAxis(Axis),
    #[error("data length {got} does not match shape volume {expected}")]
    DataLength { expected: usize, got: usize },
    #[error("non-finite value {value} at flat index {index}")]
    NonFinite { index: usize, value: f32 },
    #[error("{op} failed: {source}")]
    Arith {
        op: &'static str,
        #[source]
        source: ArithError,
    },
    #[error("invalid network config: {0}")]
    Config(String),
}

/// Shape of one routing layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NetworkConfig {
    /// `N_B`.
    pub batch_size: usize,
    /// `N_L`.
    pub low_caps: usize,
    /// `N_H`.
    pub high_caps: usize,
    /// `C_L`.
    pub low_dim: usize,
    /// `C_H`.
    pub high_dim: usize,
    /// `I`.
    pub iterations: usize,
}

impl NetworkConfig {
    pub const DEFAULT_LOW_DIM: usize = 8;
    pub const DEFAULT_HIGH_DIM: usize = 16;

    pub fn new(
        batch_size: usize,
        low_caps: usize,
        high_caps: usize,
        low_dim: usize,
        high_dim: usize,
        iterations: usize,
    ) -> Result<Self, CapsError> {
        let cfg = NetworkConfig {
            batch_size,
            low_caps,
            high_caps,
            low_dim,
            high_dim,
            iterations,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CapsError> {
        let fields = [
            ("batch_size", self.batch_size),
            ("low_caps", self.low_caps),
            ("high_caps", self.high_caps),
            ("low_dim", self.low_dim),
            ("high_dim", self.high_dim),
            ("iterations", self.iterations),
        ];
        for (name, value) in fields {
            if value == 0 {
                return Err(CapsError::Config(format!("{name} must be at least 1")));
            }
        }
        Ok(())
    }

    pub fn u_shape(&self) -> [(Axis, usize); 3] {
        [
            (Axis::Batch, self.batch_size),
            (Axis::Low, self.low_caps),
            (Axis::InDim, self.low_dim),
        ]
    }

    pub fn w_shape(&self) -> [(Axis, usize); 4] {
        [
            (Axis::Low, self.low_caps),
            (Axis::High, self.high_caps),
            (Axis::InDim, self.low_dim),
            (Axis::OutDim, self.high_dim),
        ]
    }

    pub fn logit_shape(&self) -> [(Axis, usize); 2] {
        [(Axis::Low, self.low_caps), (Axis::High, self.high_caps)]
    }
}

/// Every tensor of one routing invocation after its final iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct RoutingState {
    pub u: CapsuleTensor,
    pub w: CapsuleTensor,
    pub u_hat: CapsuleTensor,
    pub b: CapsuleTensor,
    pub c: CapsuleTensor,
    pub s: CapsuleTensor,
    pub v: CapsuleTensor,
}

/// Runs predict once, zeroes `b`, then `I` rounds of softmax, weighted sum,
/// squash and agreement.
pub fn dynamic_routing<P: ScalarProvider + ?Sized>(
    u: &CapsuleTensor,
    w: &CapsuleTensor,
    cfg: &NetworkConfig,
    provider: &P,
) -> Result<(CapsuleTensor, RoutingState), CapsError> {
    dynamic_routing_with(Execution::default(), u, w, cfg, provider)
}

pub fn dynamic_routing_with<P: ScalarProvider + ?Sized>(
    exec: Execution,
    u: &CapsuleTensor,
    w: &CapsuleTensor,
    cfg: &NetworkConfig,
    provider: &P,
) -> Result<(CapsuleTensor, RoutingState), CapsError> {
    cfg.validate()?;
    check_shape(u, &cfg.u_shape())?;
    check_shape(w, &cfg.w_shape())?;
    let u_hat = predict_with(exec, u, w, provider)?;
    let mut b = CapsuleTensor::zeros(&cfg.logit_shape());
    let mut c = b.clone();
    let mut s = CapsuleTensor::zeros(&[
        (Axis::Batch, cfg.batch_size),
        (Axis::High, cfg.high_caps),
        (Axis::OutDim, cfg.high_dim),
    ]);
    let mut v = s.clone();
    for _ in 0..cfg.iterations {
        c = routing_softmax(&b, provider)?;
        s = weighted_sum_with(exec, &u_hat, &c, provider)?;
        v = squash(&s, provider)?;
        b = agreement_update_with(exec, &v, &u_hat, &b, provider)?;
    }
    let state = RoutingState {
        u: u.clone(),
        w: w.clone(),
        u_hat,
        b,
        c,
        s,
        v: v.clone(),
    };
    Ok((v, state))
}

fn check_shape(t: &CapsuleTensor, want: &[(Axis, usize)]) -> Result<(), CapsError> {
    let axes: Vec<Axis> = want.iter().map(|(a, _)| *a).collect();
    t.expect_axes(&axes)?;
    for (axis, extent) in want {
        let got = t.extent(*axis).unwrap_or(0);
        if got != *extent {
            return Err(CapsError::ShapeMismatch {
                axis: *axis,
                left: got,
                right: *extent,
            });
        }
    }
    Ok(())
}

/// Seeded inputs for one routing layer: `u ~ N(0, 1)` and
/// `W ~ N(0, 1/sqrt(C_L))` (standard deviation).
#[derive(Debug, Clone, PartialEq)]
pub struct RoutingInstance {
    pub config: NetworkConfig,
    pub u: CapsuleTensor,
    pub w: CapsuleTensor,
}

impl RoutingInstance {
    pub fn random(config: NetworkConfig, seed: u64) -> Result<Self, CapsError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let unit = Normal::new(0.0f32, 1.0).expect("unit normal");
        let u_len = config.batch_size * config.low_caps * config.low_dim;
        let u_data: Vec<f32> = (0..u_len).map(|_| unit.sample(&mut rng)).collect();
        let w = init_weights(&config, &mut rng);
        Ok(RoutingInstance {
            config,
            u: CapsuleTensor::from_vec(&config.u_shape(), u_data)?,
            w,
        })
    }

    pub fn route<P: ScalarProvider + ?Sized>(&self, provider: &P) -> Result<(CapsuleTensor, RoutingState), CapsError> {
        dynamic_routing(&self.u, &self.w, &self.config, provider)
    }
}

/// Seeded Gaussian weight tensor with standard deviation `1/sqrt(C_L)`.
pub fn seeded_weights(config: &NetworkConfig, seed: u64) -> Result<CapsuleTensor, CapsError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(init_weights(config, &mut rng))
}

fn init_weights(config: &NetworkConfig, rng: &mut ChaCha8Rng) -> CapsuleTensor {
    let sd = 1.0 / (config.low_dim as f32).sqrt();
    let dist = Normal::new(0.0f32, sd).expect("positive standard deviation");
    let len = config.low_caps * config.high_caps * config.low_dim * config.high_dim;
    let data = (0..len).map(|_| dist.sample(rng)).collect();
    CapsuleTensor::from_vec(&config.w_shape(), data).expect("shape matches length")
}

/// Euclidean norm of every `v[k,j,·]`, row-major over `(k, j)`.
pub fn capsule_norms(v: &CapsuleTensor) -> Vec<f32> {
    let c_h = v.extent(Axis::OutDim).unwrap_or(1).max(1);
    v.data()
        .chunks(c_h)
        .map(|x| x.iter().map(|a| a * a).sum::<f32>().sqrt())
        .collect()
}
