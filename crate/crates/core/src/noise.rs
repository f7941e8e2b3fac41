//! Symmetric label noise and the exact expected loss under it.
//!
//! With flip rate `eta`, each label is kept with probability `1 - eta` and
//! otherwise replaced by one of the other `K - 1` classes uniformly. For a loss
//! whose label sum is a constant `C`, the expected noisy risk is the affine
//! function `C eta / (K - 1) + (1 - eta K / (K - 1)) * clean_risk`, so any two
//! classifiers keep their risk ordering as long as `eta < (K - 1) / K`.
//! [`verify_theorem1`] checks this on concrete networks without sampling.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rand::Rng;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::losses::LossSpec;
use crate::nn::MlpNetwork;
use crate::output::write_atomic;
use crate::prob::{ClassLabel, ProbVector};
use crate::seed;

/// Tolerance on the affine identity for symmetric losses.
pub const AFFINE_TOLERANCE: f64 = 1e-9;

/// Risk differences below this are treated as ties when comparing orderings.
pub const ORDERING_TIE: f64 = 1e-12;

/// Maps a draw `r` in `[0, K-2]` onto the classes other than `clean`.
pub fn flip_target(clean: usize, draw: usize) -> usize {
    if draw >= clean {
        draw + 1
    } else {
        draw
    }
}

fn check_eta(eta: f64) -> Result<()> {
    if !(0.0..1.0).contains(&eta) {
        return Err(Error::Parameter(format!("noise rate must lie in [0, 1), got {eta}")));
    }
    Ok(())
}

/// Applies symmetric label noise. The decision for example `i` depends only on
/// `(seed, i)`, never on the other labels.
pub fn corrupt_labels(clean: &[ClassLabel], eta: f64, num_classes: usize, seed: u64) -> Result<Vec<ClassLabel>> {
    check_eta(eta)?;
    if num_classes < 2 {
        return Err(Error::Parameter("need at least 2 classes".into()));
    }
    clean
        .iter()
        .enumerate()
        .map(|(i, &y)| {
            let y = ClassLabel::checked(y.0, num_classes)?;
            if eta == 0.0 {
                return Ok(y);
            }
            let mut rng = seed::rng(seed::derive(seed, i as u64));
            if rng.random::<f64>() < eta {
                let draw = rng.random_range(0..num_classes - 1);
                Ok(ClassLabel(flip_target(y.0, draw)))
            } else {
                Ok(y)
            }
        })
        .collect()
}

/// A clean dataset together with its label-corrupted copy.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisyDataset {
    features: Array2<f64>,
    clean_labels: Vec<ClassLabel>,
    noisy_labels: Vec<ClassLabel>,
    eta: f64,
    num_classes: usize,
    seed: u64,
    source_name: String,
}

impl NoisyDataset {
    pub fn from_clean(ds: &Dataset, eta: f64, seed: u64) -> Result<Self> {
        let noisy = corrupt_labels(&ds.labels, eta, ds.num_classes, seed)?;
        NoisyDataset::with_noisy_labels(ds, noisy, eta, seed)
    }

    /// Pairs a clean dataset with externally supplied noisy labels.
    pub fn with_noisy_labels(ds: &Dataset, noisy_labels: Vec<ClassLabel>, eta: f64, seed: u64) -> Result<Self> {
        check_eta(eta)?;
        if noisy_labels.len() != ds.len() {
            return Err(Error::shape("noisy labels", ds.len(), noisy_labels.len()));
        }
        if let Some(bad) = noisy_labels.iter().find(|l| l.0 >= ds.num_classes) {
            return Err(Error::Consistency(format!("noisy label {bad} out of range")));
        }
        if eta == 0.0 && noisy_labels != ds.labels {
            return Err(Error::Consistency("eta = 0 but labels differ".into()));
        }
        Ok(NoisyDataset {
            features: ds.features.clone(),
            clean_labels: ds.labels.clone(),
            noisy_labels,
            eta,
            num_classes: ds.num_classes,
            seed,
            source_name: ds.name.clone(),
        })
    }

    pub fn features(&self) -> ArrayView2<'_, f64> {
        self.features.view()
    }

    pub fn clean_labels(&self) -> &[ClassLabel] {
        &self.clean_labels
    }

    pub fn noisy_labels(&self) -> &[ClassLabel] {
        &self.noisy_labels
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn source_name(&self) -> &str {
        &self.source_name
    }

    pub fn len(&self) -> usize {
        self.clean_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clean_labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn flipped_fraction(&self) -> f64 {
        let flipped = self
            .clean_labels
            .iter()
            .zip(&self.noisy_labels)
            .filter(|(c, n)| c != n)
            .count();
        flipped as f64 / self.len() as f64
    }

    /// `index,clean_label,noisy_label` rows for auditing the corruption.
    pub fn audit_csv(&self) -> String {
        let mut out = String::from("index,clean_label,noisy_label\n");
        for (i, (c, n)) in self.clean_labels.iter().zip(&self.noisy_labels).enumerate() {
            writeln!(out, "{i},{c},{n}").expect("string write");
        }
        out
    }

    pub fn write_audit_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), self.audit_csv().as_bytes())
    }
}

/// `(1 - eta) L(g, y) + eta / (K - 1) * sum_{i != y} L(g, i)`, the exact
/// expectation of the loss over the flip distribution of label `y`.
pub fn expected_noisy_loss(spec: &LossSpec, g: &ProbVector, y: ClassLabel, eta: f64) -> Result<f64> {
    check_eta(eta)?;
    ClassLabel::checked(y.0, g.len())?;
    expected_noisy_loss_raw(spec, g, y.0, eta)
}

pub(crate) fn expected_noisy_loss_raw(spec: &LossSpec, g: &[f64], y: usize, eta: f64) -> Result<f64> {
    let own = spec.value_raw(g, y)?;
    if eta == 0.0 {
        return Ok(own);
    }
    let mut others = 0.0;
    for i in (0..g.len()).filter(|&i| i != y) {
        others += spec.value_raw(g, i)?;
    }
    Ok((1.0 - eta) * own + eta / (g.len() as f64 - 1.0) * others)
}

/// Mean of [`expected_noisy_loss`] over precomputed predictions and clean labels.
pub(crate) fn noisy_risk_from_probs(
    spec: &LossSpec,
    probs: ArrayView2<'_, f64>,
    clean: &[ClassLabel],
    eta: f64,
) -> Result<f64> {
    let mut total = 0.0;
    for (row, y) in probs.rows().into_iter().zip(clean) {
        let g = row.as_slice().expect("standard layout");
        total += expected_noisy_loss_raw(spec, g, y.0, eta)?;
    }
    Ok(total / clean.len() as f64)
}

pub(crate) fn clean_risk_from_probs(spec: &LossSpec, probs: ArrayView2<'_, f64>, labels: &[ClassLabel]) -> Result<f64> {
    let mut total = 0.0;
    for (row, y) in probs.rows().into_iter().zip(labels) {
        total += spec.value_raw(row.as_slice().expect("standard layout"), y.0)?;
    }
    Ok(total / labels.len() as f64)
}

/// Expected empirical noisy risk of `net` given the clean labels of `ds`, at the
/// dataset's own noise rate.
pub fn noisy_risk_exact(spec: &LossSpec, net: &MlpNetwork, ds: &NoisyDataset) -> Result<f64> {
    noisy_risk_exact_at(spec, net, ds, ds.eta)
}

pub fn noisy_risk_exact_at(spec: &LossSpec, net: &MlpNetwork, ds: &NoisyDataset, eta: f64) -> Result<f64> {
    check_eta(eta)?;
    let probs = net.forward_batch(ds.features())?;
    noisy_risk_from_probs(spec, probs.view(), &ds.clean_labels, eta)
}

/// Slope and intercept of the noisy-vs-clean risk line for a loss with label
/// sum `c`.
pub fn predicted_line(c: f64, num_classes: usize, eta: f64) -> (f64, f64) {
    let km1 = num_classes as f64 - 1.0;
    (1.0 - eta * num_classes as f64 / km1, c * eta / km1)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskPoint {
    pub clean: f64,
    pub noisy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Theorem1Report {
    pub loss: String,
    pub num_classes: usize,
    pub eta: f64,
    /// `1 - eta K / (K - 1)`.
    pub slope: f64,
    /// `C eta / (K - 1)`; `None` when the loss is not symmetric.
    pub intercept: Option<f64>,
    pub points: Vec<RiskPoint>,
    /// Against the predicted line when symmetric, otherwise against the
    /// least-squares fit.
    pub residuals: Vec<f64>,
    pub max_residual: f64,
    pub fitted_slope: f64,
    pub fitted_intercept: f64,
    pub pairs_total: usize,
    pub pairs_preserved: usize,
}

impl Theorem1Report {
    pub fn symmetric(&self) -> bool {
        self.intercept.is_some()
    }

    pub fn all_orderings_preserved(&self) -> bool {
        self.pairs_preserved == self.pairs_total
    }

    /// True when the loss is symmetric, every point is on the predicted line
    /// and no pair of networks swaps its risk ordering.
    pub fn holds(&self) -> bool {
        self.symmetric() && self.max_residual < AFFINE_TOLERANCE && self.all_orderings_preserved()
    }
}

fn same_order(a: f64, b: f64) -> bool {
    let sa = if a.abs() <= ORDERING_TIE { 0 } else { a.signum() as i8 };
    let sb = if b.abs() <= ORDERING_TIE { 0 } else { b.signum() as i8 };
    sa == sb
}

fn least_squares(points: &[RiskPoint]) -> (f64, f64) {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.clean).sum::<f64>() / n;
    let my = points.iter().map(|p| p.noisy).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.clean - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.clean - mx) * (p.noisy - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (slope, my - slope * mx)
}

/// Computes clean and exact noisy risk of every network on the clean labels of
/// `ds` and compares them against the affine identity.
pub fn verify_theorem1(spec: &LossSpec, nets: &[MlpNetwork], ds: &NoisyDataset, eta: f64) -> Result<Theorem1Report> {
    let k = ds.num_classes;
    let bound = (k as f64 - 1.0) / k as f64;
    if !(0.0..bound).contains(&eta) {
        return Err(Error::Precondition(format!(
            "eta must lie in [0, (K-1)/K) = [0, {bound}) for K = {k}, got {eta}"
        )));
    }
    if nets.len() < 2 {
        return Err(Error::Precondition("need at least 2 networks".into()));
    }
    let mut points = Vec::with_capacity(nets.len());
    for net in nets {
        if net.num_classes() != k {
            return Err(Error::shape("network classes", k, net.num_classes()));
        }
        let probs = net.forward_batch(ds.features())?;
        points.push(RiskPoint {
            clean: clean_risk_from_probs(spec, probs.view(), &ds.clean_labels)?,
            noisy: noisy_risk_from_probs(spec, probs.view(), &ds.clean_labels, eta)?,
        });
    }

    let (slope, _) = predicted_line(0.0, k, eta);
    let intercept = spec.symmetry_constant(k).map(|c| predicted_line(c, k, eta).1);
    let (fitted_slope, fitted_intercept) = least_squares(&points);
    let (line_slope, line_intercept) = match intercept {
        Some(b) => (slope, b),
        None => (fitted_slope, fitted_intercept),
    };
    let residuals: Vec<f64> = points
        .iter()
        .map(|p| p.noisy - (line_intercept + line_slope * p.clean))
        .collect();
    let max_residual = residuals.iter().fold(0.0f64, |m, r| m.max(r.abs()));

    let mut pairs_total = 0;
    let mut pairs_preserved = 0;
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            pairs_total += 1;
            if same_order(points[i].clean - points[j].clean, points[i].noisy - points[j].noisy) {
                pairs_preserved += 1;
            }
        }
    }

    Ok(Theorem1Report {
        loss: spec.to_string(),
        num_classes: k,
        eta,
        slope,
        intercept,
        points,
        residuals,
        max_residual,
        fitted_slope,
        fitted_intercept,
        pairs_total,
        pairs_preserved,
    })
}
