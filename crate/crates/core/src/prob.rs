//! Probability vectors produced by the softmax head, and class labels.

use std::fmt;
use std::ops::Deref;

use crate::error::{Error, Result};

/// Tolerance on `sum(g) == 1` accepted by [`ProbVector::new`].
pub const SUM_TOLERANCE: f64 = 1e-9;

/// A class index in `[0, K)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ClassLabel(pub usize);

impl ClassLabel {
    pub fn index(self) -> usize {
        self.0
    }

    pub fn checked(index: usize, num_classes: usize) -> Result<Self> {
        if index < num_classes {
            Ok(ClassLabel(index))
        } else {
            Err(Error::Parameter(format!(
                "label {index} out of range for {num_classes} classes"
            )))
        }
    }
}

impl From<usize> for ClassLabel {
    fn from(index: usize) -> Self {
        ClassLabel(index)
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A length-K vector of nonnegative class probabilities summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    /// Validates that `probs` has at least two finite, nonnegative entries summing to one.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.len() < 2 {
            return Err(Error::Probability(format!(
                "need at least 2 classes, got {}",
                probs.len()
            )));
        }
        if let Some(p) = probs.iter().find(|p| !p.is_finite() || **p < 0.0) {
            return Err(Error::Probability(format!("entry {p} is not a probability")));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::Probability(format!("entries sum to {sum}")));
        }
        Ok(ProbVector(probs))
    }

    /// Uniform distribution over `num_classes` classes.
    pub fn uniform(num_classes: usize) -> Result<Self> {
        ProbVector::new(vec![1.0 / num_classes as f64; num_classes])
    }

    /// The one-hot vector `e^k`.
    pub fn one_hot(k: ClassLabel, num_classes: usize) -> Result<Self> {
        let k = ClassLabel::checked(k.0, num_classes)?;
        let mut v = vec![0.0; num_classes];
        v[k.0] = 1.0;
        ProbVector::new(v)
    }

    /// Numerically stable softmax of `logits`.
    pub fn softmax(logits: &[f64]) -> Result<Self> {
        let mut out = logits.to_vec();
        softmax_in_place(&mut out);
        ProbVector::new(out)
    }

    pub(crate) fn from_raw(probs: Vec<f64>) -> Self {
        ProbVector(probs)
    }

    pub fn num_classes(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// Predicted class, see [`argmax`].
    pub fn predict(&self) -> ClassLabel {
        ClassLabel(argmax(&self.0))
    }
}

impl Deref for ProbVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn softmax_of_zero_logits_is_uniform() {
        let g = ProbVector::softmax(&[0.0; 5]).unwrap();
        for &p in g.iter() {
            assert_abs_diff_eq!(p, 0.2, epsilon = 1e-15);
        }
    }

    #[test]
    fn softmax_of_ln3_and_zero() {
        let g = ProbVector::softmax(&[3f64.ln(), 0.0]).unwrap();
        assert_abs_diff_eq!(g[0], 0.75, epsilon = 1e-15);
        assert_abs_diff_eq!(g[1], 0.25, epsilon = 1e-15);
    }

    #[test]
    fn softmax_survives_huge_logits() {
        let g = ProbVector::softmax(&[1000.0, 999.0, -1000.0]).unwrap();
        assert!((g.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(g[0] > g[1]);
    }

    #[test]
    fn rejects_bad_vectors() {
        assert!(ProbVector::new(vec![1.0]).is_err());
        assert!(ProbVector::new(vec![0.5, 0.6]).is_err());
        assert!(ProbVector::new(vec![1.5, -0.5]).is_err());
        assert!(ProbVector::new(vec![f64::NAN, 1.0]).is_err());
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[0.1, 0.7, 0.2]), 1);
        assert_eq!(argmax(&[0.5, 0.5]), 0);
        assert_eq!(argmax(&[0.1; 10]), 0);
    }
}
