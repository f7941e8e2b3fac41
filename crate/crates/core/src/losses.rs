//! Loss functions over softmax outputs, their gradients with respect to the
//! probability vector, and tools for checking the symmetry condition
//! `sum_j L(g, j) = C` for all `g`.
//!
//! Grammar accepted by [`LossSpec::from_str`]:
//!
//! ```text
//! cce | mse | mae | rll[:<alpha>] | zero-one | norm-<bounded loss>
//! ```
//!
//! `norm-cce` is rejected because cross entropy is unbounded.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::prob::{argmax, ClassLabel, ProbVector};
use crate::seed;

pub const DEFAULT_RLL_ALPHA: f64 = 0.01;
pub const DEFAULT_CCE_CLAMP: f64 = 1e-12;

/// Maximum spread of symmetry sums for [`probe_symmetry`] to call a loss symmetric.
pub const SYMMETRY_PROBE_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub enum LossKind {
    /// Categorical cross entropy, `-log(max(g_k, clamp))`.
    Cce { clamp: f64 },
    /// Squared distance to the one-hot target.
    Mse,
    /// Absolute distance to the one-hot target, equal to `2(1 - g_k)`.
    Mae,
    /// Robust log loss with parameter `alpha > 0`.
    Rll { alpha: f64 },
    /// Misclassification indicator. Evaluation only.
    ZeroOne,
    /// `L(g, k) / sum_s L(g, s)` of a bounded inner loss.
    Normalized(Box<LossSpec>),
}

/// A validated loss descriptor.
#[derive(Debug, Clone, PartialEq)]
pub struct LossSpec {
    kind: LossKind,
}

impl LossSpec {
    pub fn cce() -> Self {
        LossSpec {
            kind: LossKind::Cce {
                clamp: DEFAULT_CCE_CLAMP,
            },
        }
    }

    pub fn cce_with_clamp(clamp: f64) -> Result<Self> {
        if !(clamp > 0.0 && clamp < 1.0) {
            return Err(Error::Parameter(format!("cce clamp must lie in (0, 1), got {clamp}")));
        }
        Ok(LossSpec {
            kind: LossKind::Cce { clamp },
        })
    }

    pub fn mse() -> Self {
        LossSpec { kind: LossKind::Mse }
    }

    pub fn mae() -> Self {
        LossSpec { kind: LossKind::Mae }
    }

    pub fn rll(alpha: f64) -> Result<Self> {
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(Error::Parameter(format!("rll alpha must be positive, got {alpha}")));
        }
        Ok(LossSpec {
            kind: LossKind::Rll { alpha },
        })
    }

    pub fn zero_one() -> Self {
        LossSpec {
            kind: LossKind::ZeroOne,
        }
    }

    /// Wraps a bounded loss so that it sums to one over labels.
    pub fn normalized(inner: LossSpec) -> Result<Self> {
        if !inner.is_bounded() {
            return Err(Error::Parameter(format!("cannot normalize unbounded loss `{inner}`")));
        }
        Ok(LossSpec {
            kind: LossKind::Normalized(Box::new(inner)),
        })
    }

    pub fn kind(&self) -> &LossKind {
        &self.kind
    }

    pub fn is_bounded(&self) -> bool {
        !matches!(self.kind, LossKind::Cce { .. })
    }

    pub fn is_differentiable(&self) -> bool {
        match &self.kind {
            LossKind::ZeroOne => false,
            LossKind::Normalized(inner) => inner.is_differentiable(),
            _ => true,
        }
    }

    /// Loss of prediction `g` against true class `k`.
    pub fn value(&self, g: &ProbVector, k: ClassLabel) -> Result<f64> {
        check_label(g, k)?;
        self.value_raw(g, k.0)
    }

    /// Gradient of the loss with respect to the entries of `g`.
    pub fn grad(&self, g: &ProbVector, k: ClassLabel) -> Result<Vec<f64>> {
        check_label(g, k)?;
        if !self.is_differentiable() {
            return Err(Error::UnsupportedGradient(self.to_string()));
        }
        let mut out = vec![0.0; g.len()];
        self.grad_raw(g, k.0, &mut out)?;
        Ok(out)
    }

    /// Loss values for every possible label, `[L(g, 0), .., L(g, K-1)]`.
    pub fn values_all(&self, g: &ProbVector) -> Result<Vec<f64>> {
        (0..g.len()).map(|j| self.value_raw(g, j)).collect()
    }

    /// `sum_j L(g, j)`.
    pub fn symmetry_sum(&self, g: &ProbVector) -> Result<f64> {
        Ok(self.values_all(g)?.iter().sum())
    }

    /// The constant `C` of the symmetry condition, or `None` when the loss is
    /// not symmetric.
    pub fn symmetry_constant(&self, num_classes: usize) -> Option<f64> {
        let k = num_classes as f64;
        match &self.kind {
            LossKind::Rll { alpha } => Some(k * ((alpha + 1.0) / alpha).ln()),
            LossKind::Mae => Some(2.0 * (k - 1.0)),
            LossKind::ZeroOne => Some(k - 1.0),
            LossKind::Normalized(_) => Some(1.0),
            LossKind::Cce { .. } | LossKind::Mse => None,
        }
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetry_constant(2).is_some()
    }

    /// Value without label or vector validation. `k < g.len()` is required.
    pub(crate) fn value_raw(&self, g: &[f64], k: usize) -> Result<f64> {
        Ok(match &self.kind {
            LossKind::Cce { clamp } => -g[k].max(*clamp).ln(),
            LossKind::Mse => g
                .iter()
                .enumerate()
                .map(|(i, &p)| {
                    let d = if i == k { p - 1.0 } else { p };
                    d * d
                })
                .sum(),
            LossKind::Mae => 2.0 * (1.0 - g[k]),
            LossKind::Rll { alpha } => rll_value(*alpha, g, k),
            LossKind::ZeroOne => {
                if argmax(g) == k {
                    0.0
                } else {
                    1.0
                }
            }
            LossKind::Normalized(inner) => {
                let own = inner.value_raw(g, k)?;
                let total = inner.sum_raw(g)?;
                if total == 0.0 {
                    return Err(Error::DegeneratePrediction);
                }
                own / total
            }
        })
    }

    fn sum_raw(&self, g: &[f64]) -> Result<f64> {
        let mut total = 0.0;
        for j in 0..g.len() {
            total += self.value_raw(g, j)?;
        }
        Ok(total)
    }

    /// Writes `dL/dg` into `out`. The caller guarantees differentiability.
    pub(crate) fn grad_raw(&self, g: &[f64], k: usize, out: &mut [f64]) -> Result<()> {
        let n = g.len();
        match &self.kind {
            LossKind::Cce { clamp } => {
                out.fill(0.0);
                // Past the clamp the value is constant.
                if g[k] > *clamp {
                    out[k] = -1.0 / g[k];
                }
            }
            LossKind::Mse => {
                for (i, (o, &p)) in out.iter_mut().zip(g).enumerate() {
                    *o = 2.0 * if i == k { p - 1.0 } else { p };
                }
            }
            LossKind::Mae => {
                out.fill(0.0);
                out[k] = -2.0;
            }
            LossKind::Rll { alpha } => {
                let off = 1.0 / (n as f64 - 1.0);
                for (j, (o, &p)) in out.iter_mut().zip(g).enumerate() {
                    *o = if j == k { -1.0 / (alpha + p) } else { off / (alpha + p) };
                }
            }
            LossKind::ZeroOne => return Err(Error::UnsupportedGradient(self.to_string())),
            LossKind::Normalized(inner) => {
                // Quotient rule: d(L_k / S) = (dL_k * S - L_k * dS) / S^2.
                let mut own_grad = vec![0.0; n];
                let mut sum_grad = vec![0.0; n];
                let mut scratch = vec![0.0; n];
                let mut total = 0.0;
                let mut own = 0.0;
                for s in 0..n {
                    let v = inner.value_raw(g, s)?;
                    inner.grad_raw(g, s, &mut scratch)?;
                    total += v;
                    for (acc, d) in sum_grad.iter_mut().zip(&scratch) {
                        *acc += d;
                    }
                    if s == k {
                        own = v;
                        own_grad.copy_from_slice(&scratch);
                    }
                }
                if total == 0.0 {
                    return Err(Error::DegeneratePrediction);
                }
                let inv = 1.0 / total;
                for i in 0..n {
                    out[i] = (own_grad[i] - own * inv * sum_grad[i]) * inv;
                }
            }
        }
        Ok(())
    }
}

fn rll_value(alpha: f64, g: &[f64], k: usize) -> f64 {
    let others: f64 = g
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != k)
        .map(|(_, &p)| (alpha + p).ln())
        .sum();
    ((alpha + 1.0) / alpha).ln() - (alpha + g[k]).ln() + others / (g.len() as f64 - 1.0)
}

fn check_label(g: &ProbVector, k: ClassLabel) -> Result<()> {
    ClassLabel::checked(k.0, g.len()).map(|_| ())
}

impl fmt::Display for LossSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            LossKind::Cce { .. } => f.write_str("cce"),
            LossKind::Mse => f.write_str("mse"),
            LossKind::Mae => f.write_str("mae"),
            LossKind::Rll { alpha } => write!(f, "rll:{alpha}"),
            LossKind::ZeroOne => f.write_str("zero-one"),
            LossKind::Normalized(inner) => write!(f, "norm-{inner}"),
        }
    }
}

impl FromStr for LossSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some(inner) = s.strip_prefix("norm-") {
            return LossSpec::normalized(inner.parse()?);
        }
        match s {
            "cce" => Ok(LossSpec::cce()),
            "mse" => Ok(LossSpec::mse()),
            "mae" => Ok(LossSpec::mae()),
            "rll" => LossSpec::rll(DEFAULT_RLL_ALPHA),
            "zero-one" => Ok(LossSpec::zero_one()),
            _ => match s.strip_prefix("rll:") {
                Some(alpha) => {
                    let alpha: f64 = alpha
                        .parse()
                        .map_err(|_| Error::Parameter(format!("bad rll alpha `{alpha}`")))?;
                    LossSpec::rll(alpha)
                }
                None => Err(Error::Parameter(format!(
                    "unknown loss `{s}` (expected cce | mse | mae | rll:<alpha> | zero-one | norm-<loss>)"
                ))),
            },
        }
    }
}

impl serde::Serialize for LossSpec {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> serde::Deserialize<'de> for LossSpec {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Samples a probability vector uniformly from the simplex (flat Dirichlet).
pub fn random_prob_vector<R: Rng + ?Sized>(rng: &mut R, num_classes: usize) -> ProbVector {
    let mut v: Vec<f64> = (0..num_classes).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
    let sum: f64 = v.iter().sum();
    for p in &mut v {
        *p /= sum;
    }
    ProbVector::from_raw(v)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SymmetryProbe {
    pub symmetric: bool,
    pub max_deviation: f64,
    pub median_sum: f64,
    pub trials: usize,
}

/// Evaluates the symmetry sum on `trials` random probability vectors and
/// reports whether every sum lies within [`SYMMETRY_PROBE_TOLERANCE`] of the median.
pub fn probe_symmetry(spec: &LossSpec, num_classes: usize, trials: usize, seed: u64) -> Result<SymmetryProbe> {
    if trials == 0 {
        return Err(Error::Parameter("trials must be at least 1".into()));
    }
    if num_classes < 2 {
        return Err(Error::Parameter("need at least 2 classes".into()));
    }
    let mut rng = seed::rng(seed);
    let mut sums = Vec::with_capacity(trials);
    for _ in 0..trials {
        let g = random_prob_vector(&mut rng, num_classes);
        sums.push(spec.symmetry_sum(&g)?);
    }
    let mut sorted = sums.clone();
    sorted.sort_by(f64::total_cmp);
    let median = if trials % 2 == 1 {
        sorted[trials / 2]
    } else {
        0.5 * (sorted[trials / 2 - 1] + sorted[trials / 2])
    };
    let max_deviation = sums.iter().map(|s| (s - median).abs()).fold(0.0, f64::max);
    Ok(SymmetryProbe {
        symmetric: max_deviation < SYMMETRY_PROBE_TOLERANCE,
        max_deviation,
        median_sum: median,
        trials,
    })
}
