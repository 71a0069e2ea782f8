//! Scalar statistics in asymmetric norms.
//!
//! Everything here works on empirical distributions with uniform `1/n` weights:
//! asymmetric L1/L2 norms, the τ-expectile and τ-quantile of a sample, the
//! τ-variance and τ-deviation, the `T` distribution function whose τ-quantile is
//! the τ-expectile, and the plug-in estimate of the expectile's asymptotic
//! variance.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Iteration cap for the scalar expectile fixed point.
pub const EXPECTILE_MAX_ITER: usize = 200;

/// Asymmetry level τ, strictly inside `(0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct TauLevel(f64);

impl TauLevel {
    pub fn new(value: f64) -> Result<Self> {
        if value.is_finite() && value > 0.0 && value < 1.0 {
            Ok(TauLevel(value))
        } else {
            Err(Error::InvalidTau(value))
        }
    }

    /// The symmetric level ½, where every statistic here reduces to its classical counterpart.
    pub fn half() -> Self {
        TauLevel(0.5)
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }

    /// The mirrored level `1 − τ`.
    pub fn complement(self) -> Self {
        TauLevel(1.0 - self.0)
    }

    /// Weight attached to a residual: τ when strictly positive, `1 − τ` otherwise.
    #[inline]
    pub fn weight(self, residual: f64) -> f64 {
        if residual > 0.0 {
            self.0
        } else {
            1.0 - self.0
        }
    }

    /// Weight for a label (`true` = positive side).
    #[inline]
    pub fn label_weight(self, positive: bool) -> f64 {
        if positive {
            self.0
        } else {
            1.0 - self.0
        }
    }
}

impl TryFrom<f64> for TauLevel {
    type Error = Error;
    fn try_from(value: f64) -> Result<Self> {
        TauLevel::new(value)
    }
}

impl From<TauLevel> for f64 {
    fn from(t: TauLevel) -> f64 {
        t.0
    }
}

impl std::fmt::Display for TauLevel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A non-empty sample of finite reals.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleVector(Vec<f64>);

impl SampleVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::NotEnoughSamples { required: 1, got: 0 });
        }
        check_finite(&values)?;
        Ok(SampleVector(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.0.iter().sum::<f64>() / self.0.len() as f64
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl TryFrom<Vec<f64>> for SampleVector {
    type Error = Error;
    fn try_from(values: Vec<f64>) -> Result<Self> {
        SampleVector::new(values)
    }
}

impl TryFrom<&[f64]> for SampleVector {
    type Error = Error;
    fn try_from(values: &[f64]) -> Result<Self> {
        SampleVector::new(values.to_vec())
    }
}

pub(crate) fn check_finite(values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFinite {
            index,
            value: values[index],
        }),
        None => Ok(()),
    }
}

/// Outcome of the scalar expectile iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpectileResult {
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// `τ‖y₊‖₁ + (1 − τ)‖y₋‖₁`.
pub fn asym_l1_norm(y: &[f64], tau: TauLevel) -> Result<f64> {
    check_finite(y)?;
    Ok(y.iter().map(|&v| tau.weight_l1(v) * v.abs()).sum())
}

/// `τ‖y₊‖₂² + (1 − τ)‖y₋‖₂²`.
pub fn asym_l2_norm_sq(y: &[f64], tau: TauLevel) -> Result<f64> {
    check_finite(y)?;
    Ok(y.iter().map(|&v| tau.weight(v) * v * v).sum())
}

impl TauLevel {
    // For the L1 norm the sign split is y ≥ 0 versus y < 0; at zero the term vanishes
    // so the tie side is immaterial.
    #[inline]
    fn weight_l1(self, v: f64) -> f64 {
        if v >= 0.0 {
            self.0
        } else {
            1.0 - self.0
        }
    }
}

/// Σᵢ ‖yᵢ − e‖²_{τ,2} for a scalar location `e`.
pub fn expectile_loss(values: &[f64], e: f64, tau: TauLevel) -> f64 {
    values
        .iter()
        .map(|&y| {
            let r = y - e;
            tau.weight(r) * r * r
        })
        .sum()
}

/// Σᵢ ‖yᵢ − q‖_{τ,1} for a scalar location `q`.
pub fn quantile_loss(values: &[f64], q: f64, tau: TauLevel) -> f64 {
    values
        .iter()
        .map(|&y| {
            let r = y - q;
            tau.weight_l1(r) * r.abs()
        })
        .sum()
}

/// Weighted mean `Σ wᵢyᵢ / Σ wᵢ` under the labels `yᵢ > e`, accumulated about the
/// first observation so that constant samples reproduce their value exactly.
fn relabelled_mean(values: &[f64], labels: &[bool], tau: TauLevel) -> f64 {
    let anchor = values[0];
    let (mut num, mut den) = (0.0, 0.0);
    for (&y, &pos) in values.iter().zip(labels) {
        let w = tau.label_weight(pos);
        num += w * (y - anchor);
        den += w;
    }
    anchor + num / den
}

/// Sample τ-expectile by the weight-set fixed point.
///
/// Starts from equal weights (the mean), then alternates between labelling each
/// observation by the sign of `yᵢ − e` and recomputing `e` as the label-weighted
/// mean. Stops as soon as the label set repeats.
pub fn expectile_1d(samples: &SampleVector, tau: TauLevel) -> ExpectileResult {
    expectile_1d_with_trace(samples, tau).0
}

/// Like [`expectile_1d`], additionally returning every iterate `e⁽ᵗ⁾`, starting with the mean.
pub fn expectile_1d_with_trace(samples: &SampleVector, tau: TauLevel) -> (ExpectileResult, Vec<f64>) {
    expectile_slice(samples.values(), tau, true)
}

pub(crate) fn expectile_slice(values: &[f64], tau: TauLevel, keep_trace: bool) -> (ExpectileResult, Vec<f64>) {
    let anchor = values[0];
    let mut e = anchor + values.iter().map(|y| y - anchor).sum::<f64>() / values.len() as f64;
    let mut trace = Vec::new();
    if keep_trace {
        trace.push(e);
    }
    let mut labels: Vec<bool> = values.iter().map(|&y| y - e > 0.0).collect();
    let mut next = labels.clone();
    for iter in 1..=EXPECTILE_MAX_ITER {
        e = relabelled_mean(values, &labels, tau);
        if keep_trace {
            trace.push(e);
        }
        for (l, &y) in next.iter_mut().zip(values) {
            *l = y - e > 0.0;
        }
        if next == labels {
            return (
                ExpectileResult {
                    value: e,
                    iterations: iter,
                    converged: true,
                },
                trace,
            );
        }
        std::mem::swap(&mut labels, &mut next);
    }
    (
        ExpectileResult {
            value: e,
            iterations: EXPECTILE_MAX_ITER,
            converged: false,
        },
        trace,
    )
}

/// Sample τ-quantile; the lower endpoint of the minimising interval when it is not unique.
pub fn quantile_1d(samples: &SampleVector, tau: TauLevel) -> f64 {
    let mut sorted = samples.values().to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    // The right derivative at the k-th order statistic is (1 − τ)k − τ(n − k) ≥ 0 ⇔ k ≥ nτ.
    // The slack keeps integer nτ (e.g. 10 × 0.7) from rounding past the true endpoint.
    let target = n as f64 * tau.value() * (1.0 - 4.0 * f64::EPSILON);
    let k = (1..=n).find(|&k| k as f64 >= target).unwrap_or(n);
    sorted[k - 1]
}

/// `n⁻¹ Σᵢ ‖yᵢ − e_τ‖²_{τ,2}`.
pub fn tau_variance(samples: &SampleVector, tau: TauLevel) -> f64 {
    let e = expectile_1d(samples, tau).value;
    expectile_loss(samples.values(), e, tau) / samples.len() as f64
}

pub(crate) fn tau_variance_slice(values: &[f64], tau: TauLevel) -> f64 {
    let e = expectile_slice(values, tau, false).0.value;
    expectile_loss(values, e, tau) / values.len() as f64
}

/// `n⁻¹ Σᵢ ‖yᵢ − q_τ‖_{τ,1}`.
pub fn tau_deviation(samples: &SampleVector, tau: TauLevel) -> f64 {
    let q = quantile_1d(samples, tau);
    quantile_loss(samples.values(), q, tau) / samples.len() as f64
}

/// Empirical `T(x) = {G(x) − xF(x)} / [2{G(x) − xF(x)} + {x − ȳ}]`.
///
/// `F` is the empirical cdf and `G(x) = n⁻¹ Σ yᵢ·1(yᵢ ≤ x)`. The τ-expectile is the
/// τ-quantile of `T`, i.e. `T(e_τ) = τ`.
pub fn t_function(x: f64, samples: &SampleVector) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::NonFinite { index: 0, value: x });
    }
    let n = samples.len() as f64;
    let mean = samples.mean();
    // G(x) − xF(x) = −n⁻¹ Σ (x − yᵢ)₊, accumulated directly to avoid cancellation.
    let lower = -samples.values().iter().map(|&y| (x - y).max(0.0)).sum::<f64>() / n;
    let denom = 2.0 * lower + (x - mean);
    let scale = samples.values().iter().map(|y| y.abs()).fold(x.abs(), f64::max);
    if denom.abs() <= f64::EPSILON * (1.0 + scale) {
        return Err(Error::Degenerate(format!(
            "T({x}) has a vanishing denominator (all samples equal to x)"
        )));
    }
    Ok((lower / denom).clamp(0.0, 1.0))
}

/// Plug-in estimate `K / J²` of the asymptotic variance of `√n (e_{τ,n} − e_τ)`.
///
/// `K = n⁻¹ Σ {τ(yᵢ − e)₊ + (1 − τ)(e − yᵢ)₊}²` and `J = τ{1 − Fₙ(e)} + (1 − τ)Fₙ(e)`.
pub fn asymptotic_variance(samples: &SampleVector, tau: TauLevel) -> f64 {
    let e = expectile_1d(samples, tau).value;
    let t = tau.value();
    let n = samples.len() as f64;
    let k = samples
        .values()
        .iter()
        .map(|&y| {
            let g = t * (y - e).max(0.0) + (1.0 - t) * (e - y).max(0.0);
            g * g
        })
        .sum::<f64>()
        / n;
    let cdf = samples.values().iter().filter(|&&y| y <= e).count() as f64 / n;
    let j = t * (1.0 - cdf) + (1.0 - t) * cdf;
    k / (j * j)
}
