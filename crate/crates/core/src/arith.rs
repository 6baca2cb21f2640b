//! Bit-level model of the vault PE datapath.
//!
//! The PE owns one multiplier, one adder and one bit-shifter. Every special
//! function is a fixed flow through those units, and the approximations below
//! use only what the flows can express: IEEE-754 binary32 multiply/add plus
//! integer manipulation of the bit pattern.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Exponent bias of binary32.
pub const BIAS: i32 = 127;

/// Inputs outside this interval over/underflow the exponent field of the
/// exponential construction.
pub const EXP_SAFE_RANGE: (f32, f32) = (-20.0, 20.0);

/// Default calibration interval for the exponential recovery factor.
pub const DEFAULT_CALIBRATION_RANGE: (f32, f32) = (-5.0, 5.0);

/// Default number of calibration draws.
pub const DEFAULT_CALIBRATION_SAMPLES: usize = 10_000;

/// Smallest accepted calibration sample count.
pub const MIN_CALIBRATION_SAMPLES: usize = 1_000;

const INV_SQRT_MAGIC: u32 = 0x5f37_59df;
const RECIP_MAGIC: u32 = 0x7eef_127f;
const FRACTION_BITS: u32 = 23;
const FRACTION_MASK: u32 = (1 << FRACTION_BITS) - 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ArithError {
    #[error("input {value} outside the safe range [{lo}, {hi}]")]
    OutOfRange { value: f32, lo: f32, hi: f32 },
    #[error("input {value} must be strictly positive")]
    NonPositive { value: f32 },
    #[error("input {value} is not finite")]
    NonFinite { value: f32 },
    #[error("invalid interval [{lo}, {hi}]")]
    InvalidRange { lo: f32, hi: f32 },
    #[error("calibration needs at least {min} samples, got {n}")]
    TooFewSamples { n: usize, min: usize },
    #[error("unknown PE operation kind `{0}`")]
    UnknownOpKind(String),
    #[error("PE config has no flow for {0}")]
    MissingFlow(OpKind),
    #[error("invalid exponential parameters: {0}")]
    InvalidParams(String),
    #[error("malformed parameter record: {0}")]
    Record(String),
}

/// Sign / biased exponent / fraction split of a binary32 bit pattern.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Binary32View {
    pub sign: u8,
    pub exponent: u8,
    pub fraction: u32,
}

impl Binary32View {
    pub fn from_bits(bits: u32) -> Self {
        Binary32View {
            sign: (bits >> 31) as u8,
            exponent: ((bits >> FRACTION_BITS) & 0xff) as u8,
            fraction: bits & FRACTION_MASK,
        }
    }

    pub fn from_f32(x: f32) -> Self {
        Self::from_bits(x.to_bits())
    }

    pub fn to_bits(self) -> u32 {
        ((self.sign as u32 & 1) << 31) | ((self.exponent as u32) << FRACTION_BITS) | (self.fraction & FRACTION_MASK)
    }

    pub fn to_f32(self) -> f32 {
        f32::from_bits(self.to_bits())
    }

    /// Unbiased exponent `ep - b`.
    pub fn real_exponent(self) -> i32 {
        self.exponent as i32 - BIAS
    }
}

/// Constants of the bit-shift exponential.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpApproxParams {
    /// log2(e), fixed offline.
    pub log2e: f32,
    /// Mean of `2^f - f` over `f` in [0, 1), i.e. `1/ln2 - 1/2`.
    pub avg: f32,
    /// Multiplicative accuracy-recovery factor; 1.0 before calibration.
    pub recovery_factor: f32,
}

impl Default for ExpApproxParams {
    fn default() -> Self {
        ExpApproxParams {
            log2e: std::f32::consts::LOG2_E,
            avg: (1.0 / std::f64::consts::LN_2 - 0.5) as f32,
            recovery_factor: 1.0,
        }
    }
}

impl ExpApproxParams {
    pub fn validate(&self) -> Result<(), ArithError> {
        if !(self.log2e.is_finite() && self.avg.is_finite() && self.recovery_factor.is_finite()) {
            return Err(ArithError::InvalidParams("non-finite constant".into()));
        }
        if !(self.avg > 0.94 && self.avg < 0.95) {
            return Err(ArithError::InvalidParams(format!(
                "avg {} outside (0.94, 0.95)",
                self.avg
            )));
        }
        if self.recovery_factor <= 0.0 {
            return Err(ArithError::InvalidParams(format!(
                "recovery factor {} must be positive",
                self.recovery_factor
            )));
        }
        Ok(())
    }

    /// Offset `avg + b - 1` added after the log2(e) scaling.
    fn offset(&self) -> f32 {
        self.avg + (BIAS - 1) as f32
    }

    pub fn to_record(&self) -> ExpParamsRecord {
        ExpParamsRecord {
            log2e: hex_bits(self.log2e),
            avg: hex_bits(self.avg),
            recovery_factor: hex_bits(self.recovery_factor),
        }
    }

    pub fn from_record(rec: &ExpParamsRecord) -> Result<Self, ArithError> {
        let params = ExpApproxParams {
            log2e: parse_hex_bits(&rec.log2e)?,
            avg: parse_hex_bits(&rec.avg)?,
            recovery_factor: parse_hex_bits(&rec.recovery_factor)?,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_record()).expect("record serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ArithError> {
        let rec: ExpParamsRecord = serde_json::from_str(text).map_err(|e| ArithError::Record(e.to_string()))?;
        Self::from_record(&rec)
    }
}

/// On-disk form of [`ExpApproxParams`]: each constant as its binary32 bit
/// pattern in hex, so a round trip is bit-exact.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpParamsRecord {
    pub log2e: String,
    pub avg: String,
    pub recovery_factor: String,
}

fn hex_bits(x: f32) -> String {
    format!("0x{:08x}", x.to_bits())
}

fn parse_hex_bits(s: &str) -> Result<f32, ArithError> {
    let digits = s
        .strip_prefix("0x")
        .or_else(|| s.strip_prefix("0X"))
        .ok_or_else(|| ArithError::Record(format!("`{s}` is not a 0x-prefixed bit pattern")))?;
    u32::from_str_radix(digits, 16)
        .map(f32::from_bits)
        .map_err(|e| ArithError::Record(format!("`{s}`: {e}")))
}

fn check_exp_input(x: f32) -> Result<(), ArithError> {
    if !x.is_finite() {
        return Err(ArithError::NonFinite { value: x });
    }
    let (lo, hi) = EXP_SAFE_RANGE;
    if x < lo || x > hi {
        return Err(ArithError::OutOfRange { value: x, lo, hi });
    }
    Ok(())
}

/// Exponential before accuracy recovery.
///
/// `z = log2e * x + (avg + b - 1)` is evaluated in binary32 (the alignment in
/// the add is where low fraction bits get chucked), then `floor(z * 2^23)` is
/// reinterpreted as a bit pattern: the integer part of `z` lands in the
/// exponent field and its fractional part in the fraction field.
pub fn raw_approx_exp(x: f32, params: &ExpApproxParams) -> Result<f32, ArithError> {
    check_exp_input(x)?;
    let y = params.log2e * x;
    let z = y + params.offset();
    // Power-of-two scaling is exact in binary32.
    let shifted = z * (1u32 << FRACTION_BITS) as f32;
    Ok(f32::from_bits(shifted.floor() as u32))
}

/// Exponential with the calibrated recovery multiply applied.
pub fn approx_exp(x: f32, params: &ExpApproxParams) -> Result<f32, ArithError> {
    Ok(raw_approx_exp(x, params)? * params.recovery_factor)
}

/// Magic-constant inverse square root followed by one Newton-Raphson step.
pub fn approx_inv_sqrt(x: f32) -> Result<f32, ArithError> {
    if !x.is_finite() {
        return Err(ArithError::NonFinite { value: x });
    }
    if x <= 0.0 {
        return Err(ArithError::NonPositive { value: x });
    }
    let half = 0.5 * x;
    let y = f32::from_bits(INV_SQRT_MAGIC - (x.to_bits() >> 1));
    Ok(y * (1.5 - half * y * y))
}

/// Reciprocal seed by integer subtraction from the exponent field, one Newton
/// step, then `a * r`.
///
/// Divisors whose biased exponent is 251 or above are pre-scaled by 2^-8 (an
/// exact exponent-field subtraction) so the seed does not fall into the
/// subnormal range. The error bound holds while `1/d` is itself normal.
pub fn approx_div(a: f32, d: f32) -> Result<f32, ArithError> {
    if !a.is_finite() {
        return Err(ArithError::NonFinite { value: a });
    }
    if !d.is_finite() {
        return Err(ArithError::NonFinite { value: d });
    }
    if d <= 0.0 {
        return Err(ArithError::NonPositive { value: d });
    }
    let view = Binary32View::from_f32(d);
    let (scaled, post) = if view.exponent >= 251 {
        let v = Binary32View {
            exponent: view.exponent - 8,
            ..view
        };
        (v.to_f32(), 1.0 / 256.0)
    } else {
        (d, 1.0)
    };
    let r0 = f32::from_bits(RECIP_MAGIC.wrapping_sub(scaled.to_bits()));
    let r = r0 * (2.0 - scaled * r0) * post;
    Ok(a * r)
}

/// Calibrates the recovery factor as the mean of `exp(x) / raw_approx_exp(x)`
/// over `n_samples` uniform draws from `range`.
pub fn calibrate_exp_recovery(n_samples: usize, range: (f32, f32), seed: u64) -> Result<ExpApproxParams, ArithError> {
    calibrate_exp_recovery_from(ExpApproxParams::default(), n_samples, range, seed)
}

/// Like [`calibrate_exp_recovery`] starting from explicit constants.
pub fn calibrate_exp_recovery_from(
    base: ExpApproxParams,
    n_samples: usize,
    range: (f32, f32),
    seed: u64,
) -> Result<ExpApproxParams, ArithError> {
    if n_samples < MIN_CALIBRATION_SAMPLES {
        return Err(ArithError::TooFewSamples {
            n: n_samples,
            min: MIN_CALIBRATION_SAMPLES,
        });
    }
    let (lo, hi) = range;
    if !(lo.is_finite() && hi.is_finite()) || lo >= hi {
        return Err(ArithError::InvalidRange { lo, hi });
    }
    let (safe_lo, safe_hi) = EXP_SAFE_RANGE;
    if lo < safe_lo || hi > safe_hi {
        return Err(ArithError::InvalidRange { lo, hi });
    }
    let raw = ExpApproxParams {
        recovery_factor: 1.0,
        ..base
    };
    raw.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sum = 0.0f64;
    for _ in 0..n_samples {
        let x: f32 = rng.random_range(lo..hi);
        let approx = raw_approx_exp(x, &raw)? as f64;
        sum += (x as f64).exp() / approx;
    }
    let params = ExpApproxParams {
        recovery_factor: (sum / n_samples as f64) as f32,
        ..raw
    };
    params.validate()?;
    Ok(params)
}

/// Functional units of the PE; the numbering follows the datapath figure
/// (1 multiplier, 2 adder, 3 bit-shifter).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PeUnit {
    Multiplier,
    Adder,
    Shifter,
}

/// Operation classes the PE flow multiplexer can be configured for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OpKind {
    Mac,
    Exp,
    InvSqrt,
    Div,
}

impl OpKind {
    pub const ALL: [OpKind; 4] = [OpKind::Mac, OpKind::Exp, OpKind::InvSqrt, OpKind::Div];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Mac => "MAC",
            OpKind::Exp => "EXP",
            OpKind::InvSqrt => "INVSQRT",
            OpKind::Div => "DIV",
        }
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OpKind {
    type Err = ArithError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "MAC" => Ok(OpKind::Mac),
            "EXP" => Ok(OpKind::Exp),
            "INVSQRT" | "INV_SQRT" => Ok(OpKind::InvSqrt),
            "DIV" => Ok(OpKind::Div),
            _ => Err(ArithError::UnknownOpKind(s.to_string())),
        }
    }
}

/// Timing configuration of one PE.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PeConfig {
    /// Cycles per datapath stage.
    pub stage_latency: u64,
    /// Unit sequence each operation kind flows through.
    pub flows: BTreeMap<OpKind, Vec<PeUnit>>,
}

impl Default for PeConfig {
    fn default() -> Self {
        use PeUnit::*;
        let flows = BTreeMap::from([
            (OpKind::Mac, vec![Multiplier, Adder]),
            (OpKind::Exp, vec![Multiplier, Adder, Adder, Shifter]),
            (OpKind::InvSqrt, vec![Shifter, Adder, Multiplier, Adder, Multiplier]),
            (OpKind::Div, vec![Shifter, Adder, Multiplier]),
        ]);
        PeConfig {
            stage_latency: 1,
            flows,
        }
    }
}

impl PeConfig {
    fn flow(&self, kind: OpKind) -> Result<&[PeUnit], ArithError> {
        self.flows
            .get(&kind)
            .map(Vec::as_slice)
            .ok_or(ArithError::MissingFlow(kind))
    }

    /// Cycles between issuing two back-to-back flows of `kind`: the busiest
    /// unit in the flow bounds the pipeline.
    pub fn initiation_interval(&self, kind: OpKind) -> Result<u64, ArithError> {
        let flow = self.flow(kind)?;
        let mut uses: BTreeMap<PeUnit, u64> = BTreeMap::new();
        for unit in flow {
            *uses.entry(*unit).or_default() += 1;
        }
        Ok(uses.values().copied().max().unwrap_or(1) * self.stage_latency)
    }
}

/// Latency of one flow: stage count times per-stage latency.
pub fn pe_flow_latency(kind: OpKind, config: &PeConfig) -> Result<u64, ArithError> {
    Ok(config.flow(kind)?.len() as u64 * config.stage_latency)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    #[test]
    fn view_round_trips_known_patterns() {
        for bits in [0u32, 0x8000_0000, 0x3f80_0000, 0x7f80_0000, 0xffff_ffff, 0x0000_0001] {
            assert_eq!(Binary32View::from_bits(bits).to_bits(), bits);
        }
        let one = Binary32View::from_f32(1.0);
        assert_eq!((one.sign, one.exponent, one.fraction), (0, 127, 0));
        assert_eq!(one.real_exponent(), 0);
    }

    #[test]
    fn avg_matches_integral() {
        // Midpoint rule on 2^f - f over [0, 1).
        let n = 100_000;
        let integral: f64 = (0..n)
            .map(|k| {
                let f = (k as f64 + 0.5) / n as f64;
                2f64.powf(f) - f
            })
            .sum::<f64>()
            / n as f64;
        let p = ExpApproxParams::default();
        assert!((p.avg as f64 - integral).abs() < 1e-6, "{} vs {integral}", p.avg);
        assert!(p.avg > 0.94 && p.avg < 0.95);
    }

    #[test]
    fn exp_examples() {
        let p = ExpApproxParams::default();
        let e0 = approx_exp(0.0, &p).unwrap() as f64;
        assert!(rel(e0, 1.0) < 0.07, "{e0}");
        let e1 = approx_exp(1.0, &p).unwrap() as f64;
        assert!(rel(e1, std::f64::consts::E) < 0.07, "{e1}");
        let em1 = approx_exp(-1.0, &p).unwrap() as f64;
        assert!((e1 * em1 - 1.0).abs() < 0.15);
    }

    #[test]
    fn exp_rejects_out_of_range() {
        let p = ExpApproxParams::default();
        assert!(matches!(approx_exp(20.5, &p), Err(ArithError::OutOfRange { .. })));
        assert!(matches!(approx_exp(f32::NAN, &p), Err(ArithError::NonFinite { .. })));
        assert!(approx_exp(-20.0, &p).unwrap() > 0.0);
        assert!(approx_exp(20.0, &p).unwrap().is_finite());
    }

    #[test]
    fn inv_sqrt_examples() {
        for (x, want) in [(1.0f32, 1.0f64), (4.0, 0.5), (0.25, 2.0)] {
            let got = approx_inv_sqrt(x).unwrap() as f64;
            assert!(rel(got, want) <= 0.002, "x={x} got={got}");
        }
        assert!(approx_inv_sqrt(0.0).is_err());
        assert!(approx_inv_sqrt(-1.0).is_err());
        assert!(approx_inv_sqrt(f32::INFINITY).is_err());
    }

    #[test]
    fn div_examples() {
        for x in [0.3f32, 1.0, 7.5, -12.25] {
            let got = approx_div(x, 1.0).unwrap() as f64;
            assert!(rel(got, x as f64) <= 0.005);
        }
        assert!(rel(approx_div(1.0, 2.0).unwrap() as f64, 0.5) <= 0.005);
        assert_eq!(approx_div(0.0, 3.0).unwrap(), 0.0);
        assert!(approx_div(1.0, 0.0).is_err());
        assert!(approx_div(1.0, -2.0).is_err());
        assert!(approx_div(f32::NAN, 2.0).is_err());
    }

    #[test]
    fn div_handles_huge_divisors() {
        let d = 2f32.powi(125) * 1.7;
        let got = approx_div(1.0, d).unwrap() as f64;
        assert!(rel(got, 1.0 / d as f64) <= 0.005, "{got}");
    }

    #[test]
    fn calibration_basics() {
        let a = calibrate_exp_recovery(10_000, (-5.0, 5.0), 7).unwrap();
        let b = calibrate_exp_recovery(10_000, (-5.0, 5.0), 7).unwrap();
        assert_eq!(a.recovery_factor.to_bits(), b.recovery_factor.to_bits());
        assert!(a.recovery_factor > 0.0);
        assert!(matches!(
            calibrate_exp_recovery(10, (-5.0, 5.0), 7),
            Err(ArithError::TooFewSamples { .. })
        ));
        assert!(matches!(
            calibrate_exp_recovery(1000, (5.0, -5.0), 7),
            Err(ArithError::InvalidRange { .. })
        ));
        assert!(matches!(
            calibrate_exp_recovery(1000, (1.0, 1.0), 7),
            Err(ArithError::InvalidRange { .. })
        ));
    }

    #[test]
    fn params_record_round_trip_is_bit_exact() {
        let p = calibrate_exp_recovery(2_000, (-5.0, 5.0), 3).unwrap();
        let back = ExpApproxParams::from_json(&p.to_json()).unwrap();
        assert_eq!(p.log2e.to_bits(), back.log2e.to_bits());
        assert_eq!(p.avg.to_bits(), back.avg.to_bits());
        assert_eq!(p.recovery_factor.to_bits(), back.recovery_factor.to_bits());
        assert!(ExpApproxParams::from_json("{\"log2e\":\"1.0\",\"avg\":\"0x0\",\"recovery_factor\":\"0x0\"}").is_err());
    }

    #[test]
    fn flow_latencies() {
        let cfg = PeConfig::default();
        assert_eq!(pe_flow_latency(OpKind::Mac, &cfg).unwrap(), 2);
        assert_eq!(pe_flow_latency(OpKind::Exp, &cfg).unwrap(), 4);
        assert_eq!(pe_flow_latency(OpKind::InvSqrt, &cfg).unwrap(), 5);
        assert_eq!(pe_flow_latency(OpKind::Div, &cfg).unwrap(), 3);
        let slow = PeConfig {
            stage_latency: 3,
            ..PeConfig::default()
        };
        assert_eq!(pe_flow_latency(OpKind::InvSqrt, &slow).unwrap(), 15);
        assert_eq!(cfg.initiation_interval(OpKind::Mac).unwrap(), 1);
        assert_eq!(cfg.initiation_interval(OpKind::Exp).unwrap(), 2);
    }

    #[test]
    fn unknown_kind_rejected() {
        assert!(matches!("FMA".parse::<OpKind>(), Err(ArithError::UnknownOpKind(_))));
        assert_eq!("invsqrt".parse::<OpKind>().unwrap(), OpKind::InvSqrt);
        let mut cfg = PeConfig::default();
        cfg.flows.remove(&OpKind::Div);
        assert!(matches!(
            pe_flow_latency(OpKind::Div, &cfg),
            Err(ArithError::MissingFlow(OpKind::Div))
        ));
    }
}
