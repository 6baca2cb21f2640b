//! Scalar arithmetic back ends for the routing kernels.

use crate::arith::{self, ArithError, ExpApproxParams};

/// Scalar operations the routing kernels are written against.
pub trait ScalarProvider: Sync {
    fn name(&self) -> &'static str;
    fn add(&self, a: f32, b: f32) -> f32;
    fn mul(&self, a: f32, b: f32) -> f32;
    fn div(&self, a: f32, d: f32) -> Result<f32, ArithError>;
    fn inv_sqrt(&self, x: f32) -> Result<f32, ArithError>;
    fn exp(&self, x: f32) -> Result<f32, ArithError>;
    /// Whether softmax subtracts the per-row maximum before exponentiating.
    fn stabilizes_softmax(&self) -> bool;
}

/// Host-native binary32 arithmetic.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Exact;

impl ScalarProvider for Exact {
    fn name(&self) -> &'static str {
        "exact"
    }

    fn add(&self, a: f32, b: f32) -> f32 {
        a + b
    }

    fn mul(&self, a: f32, b: f32) -> f32 {
        a * b
    }

    fn div(&self, a: f32, d: f32) -> Result<f32, ArithError> {
        if d == 0.0 {
            return Err(ArithError::NonPositive { value: d });
        }
        Ok(a / d)
    }

    fn inv_sqrt(&self, x: f32) -> Result<f32, ArithError> {
        if !x.is_finite() {
            return Err(ArithError::NonFinite { value: x });
        }
        if x <= 0.0 {
            return Err(ArithError::NonPositive { value: x });
        }
        Ok(1.0 / x.sqrt())
    }

    fn exp(&self, x: f32) -> Result<f32, ArithError> {
        if !x.is_finite() {
            return Err(ArithError::NonFinite { value: x });
        }
        Ok(x.exp())
    }

    fn stabilizes_softmax(&self) -> bool {
        true
    }
}

/// PE datapath arithmetic: native add/multiply, bit-level exp, inverse
/// square root and division.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Approx {
    params: ExpApproxParams,
}

impl Approx {
    pub fn new(params: ExpApproxParams) -> Result<Self, ArithError> {
        params.validate()?;
        Ok(Approx { params })
    }

    /// Calibrated with the default range, sample count and the given seed.
    pub fn calibrated(seed: u64) -> Result<Self, ArithError> {
        let params = arith::calibrate_exp_recovery(
            arith::DEFAULT_CALIBRATION_SAMPLES,
            arith::DEFAULT_CALIBRATION_RANGE,
            seed,
        )?;
        Ok(Approx { params })
    }

    pub fn params(&self) -> &ExpApproxParams {
        &self.params
    }
}

impl ScalarProvider for Approx {
    fn name(&self) -> &'static str {
        "approx"
    }

    fn add(&self, a: f32, b: f32) -> f32 {
        a + b
    }

    fn mul(&self, a: f32, b: f32) -> f32 {
        a * b
    }

    fn div(&self, a: f32, d: f32) -> Result<f32, ArithError> {
        arith::approx_div(a, d)
    }

    fn inv_sqrt(&self, x: f32) -> Result<f32, ArithError> {
        arith::approx_inv_sqrt(x)
    }

    fn exp(&self, x: f32) -> Result<f32, ArithError> {
        arith::approx_exp(x, &self.params)
    }

    fn stabilizes_softmax(&self) -> bool {
        false
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_rejects_singular_inputs() {
        assert!(Exact.div(1.0, 0.0).is_err());
        assert!(Exact.inv_sqrt(0.0).is_err());
        assert!(Exact.exp(f32::INFINITY).is_err());
        assert_eq!(Exact.div(3.0, 2.0).unwrap(), 1.5);
    }

    #[test]
    fn approx_delegates_to_pe_model() {
        let p = Approx::calibrated(1).unwrap();
        assert_eq!(
            p.exp(0.5).unwrap().to_bits(),
            arith::approx_exp(0.5, p.params()).unwrap().to_bits()
        );
        assert!(p.exp(25.0).is_err());
        assert!(p.div(1.0, -1.0).is_err());
    }
}
