//! J1 / J2 accuracies, empirical risks and the per-epoch CSV.
//!
//! J1 is accuracy against the labels the network was trained on (the noisy
//! ones) and is what gets reported as training accuracy. J2 is accuracy
//! against the original clean labels.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::losses::LossSpec;
use crate::nn::MlpNetwork;
use crate::noise::{self, NoisyDataset};
use crate::output::{sig9, write_atomic};
use crate::prob::{argmax, ClassLabel};

pub const CSV_HEADER: &str = "epoch,j1,j2,train_loss_noisy,clean_risk,noisy_risk_exact,step_size";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub j1: f64,
    pub j2: f64,
    pub train_loss_noisy: f64,
    pub clean_risk: f64,
    pub noisy_risk_exact: f64,
    pub step_size: f64,
}

/// Predicted class for one input; ties go to the lowest index.
pub fn predict(net: &MlpNetwork, x: &[f64]) -> Result<ClassLabel> {
    Ok(net.forward(x)?.predict())
}

pub fn predictions_from_probs(probs: ArrayView2<'_, f64>) -> Vec<ClassLabel> {
    probs
        .axis_iter(Axis(0))
        .map(|row| ClassLabel(argmax(row.as_slice().expect("standard layout"))))
        .collect()
}

pub fn predict_batch(net: &MlpNetwork, features: ArrayView2<'_, f64>) -> Result<Vec<ClassLabel>> {
    Ok(predictions_from_probs(net.forward_batch(features)?.view()))
}

/// Fraction of positions where `predicted` and `labels` agree.
pub fn accuracy(predicted: &[ClassLabel], labels: &[ClassLabel]) -> Result<f64> {
    if predicted.len() != labels.len() {
        return Err(Error::shape("accuracy labels", predicted.len(), labels.len()));
    }
    if labels.is_empty() {
        return Err(Error::Parameter("accuracy of an empty set".into()));
    }
    let hits = predicted.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Accuracy against the noisy training labels.
pub fn j1_accuracy(net: &MlpNetwork, ds: &NoisyDataset) -> Result<f64> {
    accuracy(&predict_batch(net, ds.features())?, ds.noisy_labels())
}

/// Accuracy against the clean labels.
pub fn j2_accuracy(net: &MlpNetwork, ds: &NoisyDataset) -> Result<f64> {
    accuracy(&predict_batch(net, ds.features())?, ds.clean_labels())
}

/// Mean loss of `net` over `(features, labels)`.
pub fn empirical_risk(
    spec: &LossSpec,
    net: &MlpNetwork,
    features: ArrayView2<'_, f64>,
    labels: &[ClassLabel],
) -> Result<f64> {
    if features.nrows() != labels.len() {
        return Err(Error::shape("risk labels", features.nrows(), labels.len()));
    }
    if labels.is_empty() {
        return Err(Error::Parameter("risk of an empty set".into()));
    }
    if let Some(bad) = labels.iter().find(|l| l.0 >= net.num_classes()) {
        return Err(Error::Parameter(format!("label {bad} out of range")));
    }
    let probs = net.forward_batch(features)?;
    noise::clean_risk_from_probs(spec, probs.view(), labels)
}

/// All per-epoch measurements from one full forward pass over the dataset.
pub fn evaluate_epoch(
    spec: &LossSpec,
    net: &MlpNetwork,
    ds: &NoisyDataset,
    epoch: usize,
    step_size: f64,
) -> Result<EpochRecord> {
    let probs = net.forward_batch(ds.features())?;
    let predicted = predictions_from_probs(probs.view());
    Ok(EpochRecord {
        epoch,
        j1: accuracy(&predicted, ds.noisy_labels())?,
        j2: accuracy(&predicted, ds.clean_labels())?,
        train_loss_noisy: noise::clean_risk_from_probs(spec, probs.view(), ds.noisy_labels())?,
        clean_risk: noise::clean_risk_from_probs(spec, probs.view(), ds.clean_labels())?,
        noisy_risk_exact: noise::noisy_risk_from_probs(spec, probs.view(), ds.clean_labels(), ds.eta())?,
        step_size,
    })
}

pub fn records_to_csv(records: &[EpochRecord]) -> String {
    let mut out = String::with_capacity(64 * (records.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.epoch,
            sig9(r.j1),
            sig9(r.j2),
            sig9(r.train_loss_noisy),
            sig9(r.clean_risk),
            sig9(r.noisy_risk_exact),
            sig9(r.step_size)
        )
        .expect("string write");
    }
    out
}

pub fn emit_csv(records: &[EpochRecord], path: impl AsRef<Path>) -> Result<()> {
    if records.is_empty() {
        return Err(Error::Parameter("no epoch records to write".into()));
    }
    write_atomic(path.as_ref(), records_to_csv(records).as_bytes())
}

/// Parses the output of [`records_to_csv`].
pub fn parse_csv(text: &str) -> Result<Vec<EpochRecord>> {
    let mut lines = text.lines();
    if lines.next() != Some(CSV_HEADER) {
        return Err(Error::Format("missing or unexpected CSV header".into()));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let bad = || Error::Format(format!("malformed CSV row {}: `{line}`", i + 1));
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 7 {
                return Err(bad());
            }
            let real = |j: usize| fields[j].parse::<f64>().map_err(|_| bad());
            Ok(EpochRecord {
                epoch: fields[0].parse().map_err(|_| bad())?,
                j1: real(1)?,
                j2: real(2)?,
                train_loss_noisy: real(3)?,
                clean_risk: real(4)?,
                noisy_risk_exact: real(5)?,
                step_size: real(6)?,
            })
        })
        .collect()
}
