//! Magnitude thresholding operators and threshold selection.
//!
//! For a threshold `T`, every operator zeroes entries with `|w| <= T` and
//! keeps the sign of the survivors. The survivors' magnitudes are
//!
//! * soft: `|w| - T`
//! * hard: `|w|`
//! * power-p: `(|w|^p - T^p)^(1/p)`
//!
//! Power-p interpolates between the two: `p = 1` is soft thresholding and
//! the operator approaches hard thresholding as `p` grows.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ThresholdOperator {
    Soft,
    Hard,
    PowerP { p: f64 },
}

impl ThresholdOperator {
    /// Power-p operator. `p = 1` is accepted and behaves exactly like
    /// [`ThresholdOperator::Soft`]; `p = +inf` is hard thresholding.
    pub fn power(p: f64) -> Result<Self> {
        if p.is_nan() || p < 1.0 {
            return Err(Error::contract(format!("operator power p={p} must be >= 1")));
        }
        if p.is_infinite() {
            return Ok(ThresholdOperator::Hard);
        }
        Ok(ThresholdOperator::PowerP { p })
    }

    /// Effective power: 1 for soft, infinity for hard.
    pub fn p(&self) -> f64 {
        match *self {
            ThresholdOperator::Soft => 1.0,
            ThresholdOperator::Hard => f64::INFINITY,
            ThresholdOperator::PowerP { p } => p,
        }
    }
}

impl Default for ThresholdOperator {
    fn default() -> Self {
        ThresholdOperator::PowerP { p: 3.0 }
    }
}

impl fmt::Display for ThresholdOperator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ThresholdOperator::Soft => f.write_str("soft"),
            ThresholdOperator::Hard => f.write_str("hard"),
            ThresholdOperator::PowerP { p } => write!(f, "powerp:{p}"),
        }
    }
}

/// Accepts `soft`, `hard`, `powerp:<p>` and a bare power (`3`, `inf`).
impl FromStr for ThresholdOperator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s.to_ascii_lowercase().as_str() {
            "soft" => Ok(ThresholdOperator::Soft),
            "hard" => Ok(ThresholdOperator::Hard),
            other => {
                let p = other.strip_prefix("powerp:").unwrap_or(other);
                let p: f64 = p
                    .parse()
                    .map_err(|_| Error::contract(format!("unknown thresholding operator {s:?}")))?;
                ThresholdOperator::power(p)
            }
        }
    }
}

/// A non-negative, finite pruning threshold.
#[derive(Clone, Copy, Debug, Default, PartialEq, PartialOrd)]
pub struct ThresholdValue(f32);

impl ThresholdValue {
    pub const ZERO: ThresholdValue = ThresholdValue(0.0);

    pub fn new(t: f32) -> Result<Self> {
        if !t.is_finite() || t < 0.0 {
            return Err(Error::contract(format!("threshold {t} must be finite and >= 0")));
        }
        // normalise -0.0
        Ok(Self(t.abs()))
    }

    pub fn get(self) -> f32 {
        self.0
    }
}

/// Applies the operator to one value.
///
/// The surviving magnitude is evaluated in f64 as `|w| (1 - (T/|w|)^p)^(1/p)`,
/// which cannot overflow for large `p`. After rounding to f32 the result is
/// nudged up by one ulp when needed so that `|w| - |P(w)| <= T` holds exactly.
pub fn threshold_scalar(w: f32, t: ThresholdValue, op: ThresholdOperator) -> f32 {
    let (a, t) = (w.abs(), t.0);
    if a <= t {
        return 0.0;
    }
    if t == 0.0 {
        return w;
    }
    let (a64, t64) = (f64::from(a), f64::from(t));
    let magnitude = match op {
        ThresholdOperator::Hard => return w,
        ThresholdOperator::Soft | ThresholdOperator::PowerP { p: 1.0 } => a64 - t64,
        ThresholdOperator::PowerP { p } => a64 * (1.0 - (t64 / a64).powf(p)).powf(p.recip()),
    };
    let mut m = magnitude as f32;
    if a64 - f64::from(m) > t64 {
        m = m.next_up();
    }
    m.min(a).copysign(w)
}

/// Elementwise thresholding. Returns the pruned values and the mask of
/// survivors (`|w| > T`).
pub fn apply_threshold(
    w: &[f32],
    t: ThresholdValue,
    op: ThresholdOperator,
) -> Result<(Vec<f32>, Vec<bool>)> {
    if let Some(i) = w.iter().position(|v| !v.is_finite()) {
        return Err(Error::Data(format!(
            "cannot threshold non-finite weight {} at index {i}",
            w[i]
        )));
    }
    let pruned = w.iter().map(|&v| threshold_scalar(v, t, op)).collect();
    let mask = w.iter().map(|&v| v.abs() > t.0).collect();
    Ok((pruned, mask))
}

/// Number of entries removed when pruning `floor(target * n)` of `n`.
///
/// The product is nudged by a relative 1e-12 before flooring so that
/// targets like `0.29 * 100` (28.999999999999996 in binary) land on the
/// intended integer.
pub fn prune_count(target_sparsity: f64, n: usize) -> usize {
    let raw = target_sparsity * n as f64;
    ((raw + raw * 1e-12).floor() as usize).min(n)
}

/// Threshold that prunes at least `floor(target * N)` magnitudes: the k-th
/// smallest magnitude (1-indexed), or zero when `k = 0`.
///
/// Entries tied with the k-th value are pruned as well because the mask uses
/// a strict `|w| > T`.
pub fn select_threshold(magnitudes: &[f32], target_sparsity: f64) -> Result<ThresholdValue> {
    if magnitudes.is_empty() {
        return Err(Error::contract("threshold selection over an empty array"));
    }
    if !(0.0..=1.0).contains(&target_sparsity) {
        return Err(Error::contract(format!(
            "target sparsity {target_sparsity} outside [0, 1]"
        )));
    }
    if let Some(bad) = magnitudes.iter().find(|m| !(m.is_finite() && **m >= 0.0)) {
        return Err(Error::contract(format!(
            "magnitudes must be finite and non-negative, found {bad}"
        )));
    }
    let k = prune_count(target_sparsity, magnitudes.len());
    if k == 0 {
        return Ok(ThresholdValue::ZERO);
    }
    let mut scratch = magnitudes.to_vec();
    let (_, kth, _) = scratch.select_nth_unstable_by(k - 1, f32::total_cmp);
    ThresholdValue::new(*kth)
}

/// Fraction of entries with `|w| <= T`.
pub fn sparsity_at(weights: &[f32], t: ThresholdValue) -> f64 {
    if weights.is_empty() {
        return 0.0;
    }
    let pruned = weights.iter().filter(|w| w.abs() <= t.0).count();
    pruned as f64 / weights.len() as f64
}
