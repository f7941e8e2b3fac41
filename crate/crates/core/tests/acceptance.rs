//! Acceptance suite. Runs without the libtest harness so that every criterion
//! prints one PASS/FAIL/SKIP line; exits nonzero if any criterion fails.

mod common;

use std::path::PathBuf;
use std::time::{Duration, Instant};

use ndarray::{Array2, Axis};
use statrs::distribution::{ChiSquared, ContinuousCDF};
use symloss::data::{gaussian_blobs, Dataset};
use symloss::experiment::{load_dataset, parse_config, run_cell, ExperimentConfig, Overrides, DEFAULT_BLOBS};
use symloss::losses::random_prob_vector;
use symloss::metrics::{records_to_csv, EpochRecord};
use symloss::noise::verify_theorem1;
use symloss::{seed, ClassLabel, LossSpec, MlpNetwork, NoisyDataset};

struct Outcome {
    passed: Option<bool>,
    detail: String,
}

impl Outcome {
    fn check(ok: bool, detail: impl Into<String>) -> Self {
        Outcome {
            passed: Some(ok),
            detail: detail.into(),
        }
    }

    fn skip(detail: impl Into<String>) -> Self {
        Outcome {
            passed: None,
            detail: detail.into(),
        }
    }
}

fn within(elapsed: Duration, limit: Duration) -> (bool, String) {
    (
        elapsed <= limit,
        format!("{:.2}s of {}s", elapsed.as_secs_f64(), limit.as_secs()),
    )
}

// Closed forms written out independently of the library.
fn rll_constant(alpha: f64, k: usize) -> f64 {
    k as f64 * ((alpha + 1.0) / alpha).ln()
}

fn symmetry_identities() -> Outcome {
    let start = Instant::now();
    let k = 10;
    let kf = k as f64;
    let symmetric: Vec<(&str, f64)> = vec![
        ("rll:0.01", rll_constant(0.01, k)),
        ("rll:0.1", rll_constant(0.1, k)),
        ("mae", 2.0 * (kf - 1.0)),
        ("zero-one", kf - 1.0),
        ("norm-mse", 1.0),
        ("norm-mae", 1.0),
    ];
    let mut rng = seed::rng(11);
    let probes: Vec<_> = (0..1000).map(|_| random_prob_vector(&mut rng, k)).collect();
    let mut ok = true;
    let mut notes = Vec::new();
    for (name, c) in symmetric {
        let spec: LossSpec = name.parse().unwrap();
        let worst = probes
            .iter()
            .map(|g| (spec.symmetry_sum(g).unwrap() - c).abs())
            .fold(0.0, f64::max);
        ok &= worst < 1e-9;
        notes.push(format!("{name} {worst:.1e}"));
    }
    for name in ["cce", "mse"] {
        let spec: LossSpec = name.parse().unwrap();
        let sums: Vec<f64> = probes.iter().map(|g| spec.symmetry_sum(g).unwrap()).collect();
        let spread = sums.iter().cloned().fold(f64::MIN, f64::max) - sums.iter().cloned().fold(f64::MAX, f64::min);
        ok &= spread > 1e-3;
        notes.push(format!("{name} spread {spread:.3}"));
    }
    let (fast, t) = within(start.elapsed(), Duration::from_secs(1));
    Outcome::check(ok && fast, format!("{}; {t}", notes.join(", ")))
}

/// Noisy risk as a direct expectation over the flip distribution.
fn direct_noisy_risk(spec: &LossSpec, probs: &Array2<f64>, labels: &[ClassLabel], eta: f64) -> f64 {
    let k = probs.ncols();
    let mut total = 0.0;
    for (row, y) in probs.axis_iter(Axis(0)).zip(labels) {
        let g = symloss::ProbVector::new(row.to_vec()).unwrap();
        for j in 0..k {
            let w = if j == y.0 { 1.0 - eta } else { eta / (k as f64 - 1.0) };
            total += w * spec.value(&g, ClassLabel(j)).unwrap();
        }
    }
    total / labels.len() as f64
}

fn direct_clean_risk(spec: &LossSpec, probs: &Array2<f64>, labels: &[ClassLabel]) -> f64 {
    probs
        .axis_iter(Axis(0))
        .zip(labels)
        .map(|(row, &y)| spec.value(&symloss::ProbVector::new(row.to_vec()).unwrap(), y).unwrap())
        .sum::<f64>()
        / labels.len() as f64
}

fn risk_identity() -> Outcome {
    let start = Instant::now();
    let k = 10;
    let ds = gaussian_blobs(DEFAULT_BLOBS, 21).unwrap();
    let nets: Vec<MlpNetwork> = (0..20)
        .map(|i| MlpNetwork::new(ds.dim(), &[32], k, 500 + i).unwrap())
        .collect();
    let probs: Vec<Array2<f64>> = nets
        .iter()
        .map(|n| n.forward_batch(ds.features.view()).unwrap())
        .collect();
    let mut ok = ds.len() == 500;
    let mut worst_residual = 0.0f64;
    let mut swapped = 0;
    for (name, c) in [("rll:0.01", rll_constant(0.01, k)), ("mae", 2.0 * 9.0)] {
        let spec: LossSpec = name.parse().unwrap();
        for eta in [0.2, 0.4, 0.6] {
            let slope = 1.0 - eta * k as f64 / (k as f64 - 1.0);
            let intercept = c * eta / (k as f64 - 1.0);
            let points: Vec<(f64, f64)> = probs
                .iter()
                .map(|p| {
                    (
                        direct_clean_risk(&spec, p, &ds.labels),
                        direct_noisy_risk(&spec, p, &ds.labels, eta),
                    )
                })
                .collect();
            for &(clean, noisy) in &points {
                worst_residual = worst_residual.max((noisy - (slope * clean + intercept)).abs());
            }
            for a in 0..points.len() {
                for b in a + 1..points.len() {
                    let dc = points[a].0 - points[b].0;
                    let dn = points[a].1 - points[b].1;
                    if dc * dn < 0.0 {
                        swapped += 1;
                    }
                }
            }
            // The library's own report must agree with the direct computation.
            let noisy = NoisyDataset::from_clean(&ds, eta, 1).unwrap();
            let report = verify_theorem1(&spec, &nets, &noisy, eta).unwrap();
            ok &= report.holds() && report.pairs_total == 190;
            ok &= (report.slope - slope).abs() < 1e-12 && (report.intercept.unwrap() - intercept).abs() < 1e-12;
        }
    }
    ok &= worst_residual < 1e-9 && swapped == 0;
    let (fast, t) = within(start.elapsed(), Duration::from_secs(10));
    Outcome::check(
        ok && fast,
        format!("max residual {worst_residual:.1e}, {swapped} swapped pairs of 190 x 6; {t}"),
    )
}

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut worst_loss = String::new();
    for loss in common::differentiable_losses() {
        for net_seed in 0..10 {
            let e = common::worst_gradient_error(&loss, net_seed);
            if e > worst {
                worst = e;
                worst_loss = loss.to_string();
            }
        }
    }
    let (fast, t) = within(start.elapsed(), Duration::from_secs(30));
    Outcome::check(
        worst < common::FD_TOLERANCE && fast,
        format!("worst relative error {worst:.1e} ({worst_loss}); {t}"),
    )
}

const RIG_LOSSES: [&str; 4] = ["cce", "mse", "rll:0.01", "norm-mse"];
const RIG_SEEDS: [u64; 3] = [1, 2, 3];

fn rig_config(seed: u64) -> ExperimentConfig {
    let text = format!(
        "seed = {seed}\n[sweep]\nlosses = [{}]\netas = [0.4]\n\
         [training]\noptimizer = \"adam\"\nstep_size = 0.002\ndecay = 1.0\nepochs = 200\nbatch_size = 32\nhidden = [512, 512]\n",
        RIG_LOSSES.map(|l| format!("\"{l}\"")).join(", ")
    );
    parse_config(Some(&text), &Overrides::default()).unwrap()
}

struct RigRun {
    seed: u64,
    loss: String,
    records: Vec<EpochRecord>,
}

fn run_rig() -> (Vec<RigRun>, Duration) {
    let start = Instant::now();
    let mut runs = Vec::new();
    for seed in RIG_SEEDS {
        let cfg = rig_config(seed);
        let ds = load_dataset(&cfg).unwrap();
        for loss in &cfg.losses {
            let (_, records) = run_cell(&cfg, &ds, loss, 0.4).unwrap();
            runs.push(RigRun {
                seed,
                loss: loss.to_string(),
                records,
            });
        }
    }
    (runs, start.elapsed())
}

fn memorization(runs: &[RigRun], elapsed: Duration) -> Outcome {
    let mut ok = true;
    let mut notes = Vec::new();
    for r in runs {
        let last = r.records.last().unwrap();
        let pass = match r.loss.as_str() {
            "cce" | "mse" => last.j1 >= 0.99 && last.j2 < last.j1,
            "rll:0.01" => last.j1 <= 0.75 && r.records.iter().filter(|e| e.epoch > 10).all(|e| e.j2 > e.j1),
            "norm-mse" => last.j1 <= 0.80 && last.j2 > last.j1,
            other => unreachable!("{other}"),
        };
        ok &= pass;
        notes.push(format!(
            "{}@{} {:.3}/{:.3}{}",
            r.loss,
            r.seed,
            last.j1,
            last.j2,
            if pass { "" } else { " FAIL" }
        ));
    }
    let (fast, t) = within(elapsed, Duration::from_secs(300));
    Outcome::check(ok && fast, format!("final J1/J2: {}; {t}", notes.join(", ")))
}

fn cce_flip(runs: &[RigRun]) -> Outcome {
    let mut ok = true;
    let mut notes = Vec::new();
    for r in runs.iter().filter(|r| r.loss == "cce") {
        let early = r.records.iter().find(|e| e.j2 > e.j1).map(|e| e.epoch);
        let last = r.records.last().unwrap();
        let flipped = early.is_some() && last.j1 > last.j2;
        ok &= flipped;
        notes.push(format!(
            "seed {}: J2 > J1 at epoch {}, final {:.3} > {:.3}",
            r.seed,
            early.map_or("never".into(), |e| e.to_string()),
            last.j1,
            last.j2
        ));
    }
    Outcome::check(ok, notes.join("; "))
}

fn noise_runs() -> Vec<NoisyDataset> {
    let (k, n) = (10, 10_000);
    let labels: Vec<ClassLabel> = (0..n).map(|i| ClassLabel(i % k)).collect();
    let ds = Dataset::new(Array2::zeros((n, 1)), labels, k, "balanced").unwrap();
    (0..20)
        .map(|s| NoisyDataset::from_clean(&ds, 0.6, 900 + s).unwrap())
        .collect()
}

fn noise_statistics(runs: &[NoisyDataset], elapsed: Duration) -> Outcome {
    let k = 10;
    let mut ok = true;
    let mut worst_fraction: f64 = 0.6;
    // Flip destination as an offset from the clean label: 0..K-2, uniform
    // when destinations are uniform over the other classes.
    let mut counts = vec![0u64; k - 1];
    for r in runs {
        let f = r.flipped_fraction();
        if (f - 0.6).abs() > (worst_fraction - 0.6).abs() {
            worst_fraction = f;
        }
        ok &= (f - 0.6).abs() <= 0.02;
        for (c, n) in r.clean_labels().iter().zip(r.noisy_labels()) {
            if c != n {
                counts[(n.0 + k - c.0) % k - 1] += 1;
            }
        }
    }
    let total: u64 = counts.iter().sum();
    let expected = total as f64 / (k - 1) as f64;
    let chi2: f64 = counts.iter().map(|&o| (o as f64 - expected).powi(2) / expected).sum();
    let p = 1.0 - ChiSquared::new((k - 2) as f64).unwrap().cdf(chi2);
    ok &= p > 0.01;
    let (fast, t) = within(elapsed, Duration::from_secs(5));
    Outcome::check(
        ok && fast,
        format!("worst flipped fraction {worst_fraction:.4}, chi2 {chi2:.2} on 8 dof, p {p:.3}; {t}"),
    )
}

fn mnist_dir() -> Option<PathBuf> {
    let dir = std::env::var_os("MNIST_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("data/mnist"));
    let ok = dir.join("train-images-idx3-ubyte").is_file() && dir.join("train-labels-idx1-ubyte").is_file();
    ok.then_some(dir)
}

fn mnist_run() -> Outcome {
    let Some(dir) = mnist_dir() else {
        return Outcome::skip("no train-images-idx3-ubyte / train-labels-idx1-ubyte in $MNIST_DIR or ./data/mnist");
    };
    let start = Instant::now();
    let text = format!(
        "[dataset]\nsource = \"idx\"\nimages = {:?}\nlabels = {:?}\nsubsample = 1000\nstratified = true\n\
         [sweep]\nlosses = [\"cce\", \"rll:0.01\"]\netas = [0.4]\n\
         [training]\noptimizer = \"adam\"\nepochs = 100\nhidden = [512]\n",
        dir.join("train-images-idx3-ubyte").display().to_string(),
        dir.join("train-labels-idx1-ubyte").display().to_string()
    );
    let cfg = parse_config(Some(&text), &Overrides::default()).unwrap();
    let ds = load_dataset(&cfg).unwrap();
    let (_, cce) = run_cell(&cfg, &ds, &LossSpec::cce(), 0.4).unwrap();
    let (_, rll) = run_cell(&cfg, &ds, &LossSpec::rll(0.01).unwrap(), 0.4).unwrap();
    let (c, r) = (cce.last().unwrap(), rll.last().unwrap());
    let (fast, t) = within(start.elapsed(), Duration::from_secs(600));
    Outcome::check(
        c.j1 >= 0.99 && r.j2 > r.j1 && fast,
        format!("cce {:.3}/{:.3}, rll {:.3}/{:.3}; {t}", c.j1, c.j2, r.j1, r.j2),
    )
}

fn determinism(rig: &[RigRun], noise: &[NoisyDataset]) -> Outcome {
    let (again, _) = run_rig();
    let rig_same = rig
        .iter()
        .zip(&again)
        .all(|(a, b)| records_to_csv(&a.records).as_bytes() == records_to_csv(&b.records).as_bytes());
    let noise_same = noise
        .iter()
        .zip(&noise_runs())
        .all(|(a, b)| a.audit_csv().as_bytes() == b.audit_csv().as_bytes());
    Outcome::check(
        rig_same && noise_same && again.len() == rig.len(),
        format!(
            "{} training CSVs {}, {} label audit CSVs {}",
            rig.len(),
            if rig_same { "identical" } else { "DIFFER" },
            noise.len(),
            if noise_same { "identical" } else { "DIFFER" }
        ),
    )
}

fn report(number: usize, name: &str, outcome: Outcome) -> bool {
    let status = match outcome.passed {
        Some(true) => "PASS",
        Some(false) => "FAIL",
        None => "SKIP",
    };
    println!("criterion {number} {status} {name}: {}", outcome.detail);
    outcome.passed != Some(false)
}

fn main() {
    let mut all = true;
    all &= report(1, "symmetry identities", symmetry_identities());
    all &= report(2, "noisy risk is affine in clean risk", risk_identity());
    all &= report(3, "gradient correctness", gradient_correctness());

    let (rig, rig_time) = run_rig();
    all &= report(4, "memorization vs resistance at eta 0.4", memorization(&rig, rig_time));
    all &= report(5, "cce flips from J2 > J1 to J1 > J2", cce_flip(&rig));

    let start = Instant::now();
    let noise = noise_runs();
    let noise_time = start.elapsed();
    all &= report(6, "label noise statistics", noise_statistics(&noise, noise_time));
    all &= report(7, "mnist desk run", mnist_run());
    all &= report(8, "determinism", determinism(&rig, &noise));

    if !all {
        std::process::exit(1);
    }
}
