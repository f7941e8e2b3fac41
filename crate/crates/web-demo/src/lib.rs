//! WebAssembly bindings for the demo page in `www/`.
//!
//! Every exported function returns JSON. The `*_json` functions hold the
//! logic and run natively so they can be tested without a browser.

use serde::Serialize;
use symloss::data::{gaussian_blobs, BlobParams};
use symloss::experiment::{verify_theorem1_cmd, VerifyArgs};
use symloss::metrics::EpochRecord;
use symloss::optim::Optimizer;
use symloss::train::Trainer;
use symloss::{ClassLabel, LossSpec, MlpNetwork, NoisyDataset, ProbVector};
use wasm_bindgen::prelude::*;

type DemoResult<T> = Result<T, String>;

fn parse_loss(name: &str) -> DemoResult<LossSpec> {
    name.parse().map_err(|e: symloss::Error| e.to_string())
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("plain data serializes")
}

#[derive(Serialize)]
struct Curves {
    loss: String,
    num_classes: usize,
    p: Vec<f64>,
    /// Loss on the true label when it gets probability `p` and the rest is
    /// spread evenly.
    value: Vec<f64>,
    /// Sum of the loss over every label at the same prediction.
    label_sum: Vec<f64>,
    constant: Option<f64>,
}

pub fn loss_curves_json(loss: &str, num_classes: usize, points: usize) -> DemoResult<String> {
    let spec = parse_loss(loss)?;
    if num_classes < 2 {
        return Err("need at least 2 classes".into());
    }
    let points = points.max(2);
    let mut curves = Curves {
        loss: spec.to_string(),
        num_classes,
        p: Vec::with_capacity(points),
        value: Vec::with_capacity(points),
        label_sum: Vec::with_capacity(points),
        constant: spec.symmetry_constant(num_classes),
    };
    for i in 0..points {
        let p = 0.001 + 0.998 * i as f64 / (points - 1) as f64;
        let rest = (1.0 - p) / (num_classes - 1) as f64;
        let mut g = vec![rest; num_classes];
        g[0] = p;
        let g = ProbVector::new(g).map_err(|e| e.to_string())?;
        curves.p.push(p);
        curves
            .value
            .push(spec.value(&g, ClassLabel(0)).map_err(|e| e.to_string())?);
        curves.label_sum.push(spec.symmetry_sum(&g).map_err(|e| e.to_string())?);
    }
    Ok(to_json(&curves))
}

#[derive(Serialize)]
struct RiskLine {
    loss: String,
    eta: f64,
    clean: Vec<f64>,
    noisy: Vec<f64>,
    slope: f64,
    intercept: Option<f64>,
    fitted_slope: f64,
    fitted_intercept: f64,
    max_residual: f64,
    pairs_preserved: usize,
    pairs_total: usize,
}

pub fn risk_line_json(loss: &str, num_classes: usize, eta: f64, nets: usize, seed: u64) -> DemoResult<String> {
    let report = verify_theorem1_cmd(&VerifyArgs {
        loss: parse_loss(loss)?,
        num_classes,
        eta,
        nets,
        seed,
    })
    .map_err(|e| e.to_string())?;
    Ok(to_json(&RiskLine {
        loss: report.loss.clone(),
        eta,
        clean: report.points.iter().map(|p| p.clean).collect(),
        noisy: report.points.iter().map(|p| p.noisy).collect(),
        slope: report.slope,
        intercept: report.intercept,
        fitted_slope: report.fitted_slope,
        fitted_intercept: report.fitted_intercept,
        max_residual: report.max_residual,
        pairs_preserved: report.pairs_preserved,
        pairs_total: report.pairs_total,
    }))
}

/// Small blob problem sized to train at interactive speed.
pub const DEMO_BLOBS: BlobParams = BlobParams {
    num_classes: 5,
    per_class: 40,
    dim: 10,
    spread: 0.5,
    separation: 3.0,
};
pub const DEMO_HIDDEN: [usize; 1] = [256];

#[derive(Serialize)]
struct History {
    epoch: Vec<usize>,
    j1: Vec<f64>,
    j2: Vec<f64>,
    loss: Vec<f64>,
    flipped: f64,
}

/// A training run that the page advances a few epochs at a time.
#[wasm_bindgen]
pub struct TrainingDemo {
    trainer: Trainer,
    records: Vec<EpochRecord>,
}

impl TrainingDemo {
    pub fn create(loss: &str, eta: f64, seed: u64) -> DemoResult<TrainingDemo> {
        let spec = parse_loss(loss)?;
        let err = |e: symloss::Error| e.to_string();
        let ds = gaussian_blobs(DEMO_BLOBS, seed).map_err(err)?;
        let noisy = NoisyDataset::from_clean(&ds, eta, seed.wrapping_add(1)).map_err(err)?;
        let net = MlpNetwork::new(ds.dim(), &DEMO_HIDDEN, ds.num_classes, seed.wrapping_add(2)).map_err(err)?;
        let trainer =
            Trainer::new(net, noisy, spec, Optimizer::adam_default(), 16, seed.wrapping_add(3)).map_err(err)?;
        Ok(TrainingDemo {
            trainer,
            records: Vec::new(),
        })
    }

    pub fn advance(&mut self, epochs: usize) -> DemoResult<String> {
        for _ in 0..epochs {
            let r = self.trainer.run_epoch().map_err(|e| e.to_string())?;
            self.records.push(r);
        }
        Ok(self.history_json())
    }

    pub fn history_json(&self) -> String {
        to_json(&History {
            epoch: self.records.iter().map(|r| r.epoch).collect(),
            j1: self.records.iter().map(|r| r.j1).collect(),
            j2: self.records.iter().map(|r| r.j2).collect(),
            loss: self.records.iter().map(|r| r.train_loss_noisy).collect(),
            flipped: self.trainer.dataset().flipped_fraction(),
        })
    }
}

#[wasm_bindgen]
impl TrainingDemo {
    #[wasm_bindgen(constructor)]
    pub fn new(loss: &str, eta: f64, seed: u32) -> Result<TrainingDemo, JsError> {
        TrainingDemo::create(loss, eta, seed as u64).map_err(|e| JsError::new(&e))
    }

    /// Runs `epochs` more epochs and returns the whole history.
    pub fn step(&mut self, epochs: u32) -> Result<String, JsError> {
        self.advance(epochs as usize).map_err(|e| JsError::new(&e))
    }

    pub fn history(&self) -> String {
        self.history_json()
    }
}

#[wasm_bindgen]
pub fn loss_curves(loss: &str, num_classes: u32, points: u32) -> Result<String, JsError> {
    loss_curves_json(loss, num_classes as usize, points as usize).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn risk_line(loss: &str, num_classes: u32, eta: f64, nets: u32, seed: u32) -> Result<String, JsError> {
    risk_line_json(loss, num_classes as usize, eta, nets as usize, seed as u64).map_err(|e| JsError::new(&e))
}
