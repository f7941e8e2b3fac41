//! Loss × noise-rate sweeps and the command helpers behind the `symloss` binary.

mod config;

pub use config::*;

use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;

use crate::data::{self, gaussian_blobs, BlobParams, Dataset};
use crate::error::{Error, Result};
use crate::losses::{probe_symmetry, LossSpec, SymmetryProbe};
use crate::metrics::{emit_csv, EpochRecord};
use crate::nn::MlpNetwork;
use crate::noise::{verify_theorem1, NoisyDataset, Theorem1Report};
use crate::optim::Optimizer;
use crate::output::{sig9, write_atomic};
use crate::seed::{derive, fnv1a};
use crate::train::{train, TrainConfig};

/// J1 level counted as "memorized" in the summary.
pub const MEMORIZED_J1: f64 = 0.99;

pub const SUMMARY_HEADER: &str = "loss,eta,cell_seed,status,final_j1,final_j2,epochs_to_99_j1,error";

pub fn dataset_seed(master: u64) -> u64 {
    derive(master, fnv1a(b"dataset"))
}

/// Depends only on the master seed, the loss name and the noise rate, so a
/// cell gets the same seed whatever else is in the sweep.
pub fn cell_seed(master: u64, loss: &LossSpec, eta: f64) -> u64 {
    derive(derive(master, fnv1a(loss.to_string().as_bytes())), eta.to_bits())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CellSeeds {
    pub cell: u64,
    pub noise: u64,
    pub init: u64,
    pub shuffle: u64,
}

impl CellSeeds {
    pub fn new(master: u64, loss: &LossSpec, eta: f64) -> Self {
        let cell = cell_seed(master, loss, eta);
        CellSeeds {
            cell,
            noise: derive(cell, 1),
            init: derive(cell, 2),
            shuffle: derive(cell, 3),
        }
    }
}

pub fn cell_file_stem(loss: &LossSpec, eta: f64) -> String {
    format!("{loss}_{eta}")
}

pub fn load_dataset(config: &ExperimentConfig) -> Result<Dataset> {
    let seed = dataset_seed(config.seed);
    let ds = match &config.dataset {
        DatasetSpec::Blobs(params) => gaussian_blobs(*params, seed)?,
        DatasetSpec::Idx {
            images,
            labels,
            subsample,
            stratified,
        } => {
            let full = data::load_idx(images, labels)?;
            match subsample {
                Some(n) => data::subsample(&full, *n, seed, *stratified)?,
                None => full,
            }
        }
    };
    let k = ds.num_classes as f64;
    if let Some(bad) = config.etas.iter().find(|&&e| e >= (k - 1.0) / k) {
        return Err(Error::config(
            "sweep.etas",
            format!(
                "noise rate {bad} outside [0, {}) for {} classes",
                (k - 1.0) / k,
                ds.num_classes
            ),
        ));
    }
    Ok(ds)
}

/// Corrupts, initializes and trains one (loss, eta) cell.
pub fn run_cell(
    config: &ExperimentConfig,
    ds: &Dataset,
    loss: &LossSpec,
    eta: f64,
) -> Result<(NoisyDataset, Vec<EpochRecord>)> {
    let seeds = CellSeeds::new(config.seed, loss, eta);
    let noisy = NoisyDataset::from_clean(ds, eta, seeds.noise)?;
    let mut net = MlpNetwork::new(ds.dim(), &config.hidden, ds.num_classes, seeds.init)?;
    let mut opt = Optimizer::new(config.optimizer, config.step_size, config.decay)?;
    let records = train(
        &mut net,
        &noisy,
        loss,
        &mut opt,
        &TrainConfig {
            epochs: config.epochs,
            batch_size: config.batch_size,
            seed: seeds.shuffle,
        },
    )?;
    Ok((noisy, records))
}

pub fn epochs_to_memorize(records: &[EpochRecord]) -> Option<usize> {
    records.iter().find(|r| r.j1 >= MEMORIZED_J1).map(|r| r.epoch)
}

#[derive(Debug, Clone, PartialEq)]
pub enum CellOutcome {
    Completed {
        final_j1: f64,
        final_j2: f64,
        epochs_to_99_j1: Option<usize>,
    },
    Failed(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellSummary {
    pub loss: LossSpec,
    pub eta: f64,
    pub seed: u64,
    pub csv: PathBuf,
    pub outcome: CellOutcome,
}

impl CellSummary {
    fn csv_row(&self) -> String {
        let head = format!("{},{},{}", self.loss, self.eta, self.seed);
        match &self.outcome {
            CellOutcome::Completed {
                final_j1,
                final_j2,
                epochs_to_99_j1,
            } => format!(
                "{head},ok,{},{},{},",
                sig9(*final_j1),
                sig9(*final_j2),
                epochs_to_99_j1.map_or("never".to_string(), |e| e.to_string())
            ),
            CellOutcome::Failed(msg) => format!("{head},failed,,,,\"{}\"", msg.replace('"', "'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub dataset: String,
    pub cells: Vec<CellSummary>,
    pub out: PathBuf,
}

impl SweepReport {
    pub fn failed(&self) -> usize {
        self.cells
            .iter()
            .filter(|c| matches!(c.outcome, CellOutcome::Failed(_)))
            .count()
    }

    pub fn summary_csv(&self) -> String {
        let mut s = String::from(SUMMARY_HEADER);
        s.push('\n');
        for c in &self.cells {
            s.push_str(&c.csv_row());
            s.push('\n');
        }
        s
    }
}

fn metadata(config: &ExperimentConfig, ds: &Dataset) -> String {
    let mut s = String::new();
    writeln!(s, "# symloss {} run metadata", env!("CARGO_PKG_VERSION")).unwrap();
    writeln!(s, "# Rerun with: symloss run --config <this file>").unwrap();
    if config.overrides.is_empty() {
        writeln!(s, "# command-line overrides: none").unwrap();
    } else {
        writeln!(s, "# command-line overrides: {}", config.overrides.join(" ")).unwrap();
    }
    writeln!(
        s,
        "# dataset {} ({} examples, {} classes, dim {}), seed {}",
        ds.name,
        ds.len(),
        ds.num_classes,
        ds.dim(),
        dataset_seed(config.seed)
    )
    .unwrap();
    for loss in &config.losses {
        for &eta in &config.etas {
            let seeds = CellSeeds::new(config.seed, loss, eta);
            writeln!(
                s,
                "# cell {}: seed {} noise {} init {} shuffle {}",
                cell_file_stem(loss, eta),
                seeds.cell,
                seeds.noise,
                seeds.init,
                seeds.shuffle
            )
            .unwrap();
        }
    }
    s.push('\n');
    s.push_str(&config.to_toml());
    s
}

/// Runs every (loss, eta) cell and writes `<loss>_<eta>.csv` per cell plus
/// `summary.csv` and `metadata.toml` into `config.out`. A cell that fails is
/// recorded as failed; the remaining cells still run.
pub fn run_sweep(config: &ExperimentConfig) -> Result<SweepReport> {
    let ds = load_dataset(config)?;
    fs::create_dir_all(&config.out)?;
    write_atomic(&config.out.join("metadata.toml"), metadata(config, &ds).as_bytes())?;

    let mut cells = Vec::new();
    for loss in &config.losses {
        for &eta in &config.etas {
            let stem = cell_file_stem(loss, eta);
            let csv = config.out.join(format!("{stem}.csv"));
            let outcome = match run_cell(config, &ds, loss, eta) {
                Ok((noisy, records)) => {
                    emit_csv(&records, &csv)?;
                    if config.audit_labels {
                        noisy.write_audit_csv(config.out.join(format!("{stem}_labels.csv")))?;
                    }
                    let last = records.last().expect("at least one epoch");
                    CellOutcome::Completed {
                        final_j1: last.j1,
                        final_j2: last.j2,
                        epochs_to_99_j1: epochs_to_memorize(&records),
                    }
                }
                Err(e @ (Error::NonFinite { .. } | Error::DegeneratePrediction)) => CellOutcome::Failed(e.to_string()),
                Err(e) => return Err(e),
            };
            cells.push(CellSummary {
                loss: loss.clone(),
                eta,
                seed: cell_seed(config.seed, loss, eta),
                csv,
                outcome,
            });
        }
    }
    let report = SweepReport {
        dataset: ds.name.clone(),
        cells,
        out: config.out.clone(),
    };
    write_atomic(&config.out.join("summary.csv"), report.summary_csv().as_bytes())?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyArgs {
    pub loss: LossSpec,
    pub num_classes: usize,
    pub eta: f64,
    pub nets: usize,
    pub seed: u64,
}

/// Width of the hidden layer of the random networks used by [`verify_theorem1_cmd`].
pub const VERIFY_HIDDEN: usize = 32;

/// Checks the noisy-risk identity on `args.nets` randomly initialized networks
/// evaluated on a blob dataset with 50 points per class in 20 dimensions.
pub fn verify_theorem1_cmd(args: &VerifyArgs) -> Result<Theorem1Report> {
    let k = args.num_classes;
    if k < 2 {
        return Err(Error::Parameter(format!("need at least 2 classes, got {k}")));
    }
    let bound = (k as f64 - 1.0) / k as f64;
    if !(0.0..bound).contains(&args.eta) {
        return Err(Error::Precondition(format!(
            "eta must lie in [0, (K-1)/K) = [0, {bound}) for K = {k}, got {}",
            args.eta
        )));
    }
    let ds = gaussian_blobs(
        BlobParams {
            num_classes: k,
            ..DEFAULT_BLOBS
        },
        dataset_seed(args.seed),
    )?;
    let noisy = NoisyDataset::from_clean(&ds, args.eta, derive(args.seed, 1))?;
    let nets = (0..args.nets)
        .map(|i| MlpNetwork::new(ds.dim(), &[VERIFY_HIDDEN], k, derive(args.seed, 100 + i as u64)))
        .collect::<Result<Vec<_>>>()?;
    verify_theorem1(&args.loss, &nets, &noisy, args.eta)
}

pub fn format_report(r: &Theorem1Report) -> String {
    let mut s = String::new();
    writeln!(s, "loss          {}", r.loss).unwrap();
    writeln!(s, "classes       {}", r.num_classes).unwrap();
    writeln!(s, "eta           {}", r.eta).unwrap();
    writeln!(s, "networks      {}", r.points.len()).unwrap();
    writeln!(s, "slope         {:.6}", r.slope).unwrap();
    match r.intercept {
        Some(b) => writeln!(s, "intercept     {b:.6}").unwrap(),
        None => writeln!(
            s,
            "intercept     none (loss is not symmetric; fitted slope {:.6}, intercept {:.6})",
            r.fitted_slope, r.fitted_intercept
        )
        .unwrap(),
    }
    writeln!(s, "max residual  {:.3e}", r.max_residual).unwrap();
    writeln!(s, "orderings     {}/{} preserved", r.pairs_preserved, r.pairs_total).unwrap();
    let verdict = if r.holds() {
        "holds"
    } else if r.symmetric() {
        "VIOLATED"
    } else {
        "not applicable (asymmetric loss)"
    };
    writeln!(s, "verdict       {verdict}").unwrap();
    s
}

pub fn format_probe(spec: &LossSpec, num_classes: usize, p: &SymmetryProbe) -> String {
    let mut s = String::new();
    writeln!(s, "loss           {spec}").unwrap();
    writeln!(s, "classes        {num_classes}").unwrap();
    writeln!(s, "trials         {}", p.trials).unwrap();
    writeln!(s, "median sum     {:.9}", p.median_sum).unwrap();
    writeln!(s, "max deviation  {:.3e}", p.max_deviation).unwrap();
    if let Some(c) = spec.symmetry_constant(num_classes) {
        writeln!(s, "closed form    {c:.9}").unwrap();
    }
    writeln!(s, "symmetric      {}", if p.symmetric { "yes" } else { "no" }).unwrap();
    s
}

pub fn probe_symmetry_cmd(spec: &LossSpec, num_classes: usize, trials: usize, seed: u64) -> Result<SymmetryProbe> {
    probe_symmetry(spec, num_classes, trials, seed)
}
