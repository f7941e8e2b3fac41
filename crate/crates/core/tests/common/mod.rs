#![allow(dead_code)]

use ndarray::{Array2, Axis};
use rand::Rng;
use symloss::seed;
use symloss::{ClassLabel, LossSpec, MlpNetwork};

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOLERANCE: f64 = 1e-5;
/// Gradients smaller than this are compared absolutely; central differences
/// cannot resolve them to five relative digits.
pub const FD_FLOOR: f64 = 1e-6;

pub fn differentiable_losses() -> Vec<LossSpec> {
    [
        "cce",
        "mse",
        "mae",
        "rll:0.01",
        "rll:0.1",
        "rll:1",
        "norm-mse",
        "norm-mae",
        "norm-rll:0.01",
    ]
    .iter()
    .map(|s| s.parse().unwrap())
    .collect()
}

fn mean_loss(loss: &LossSpec, net: &MlpNetwork, x: &Array2<f64>, y: &[ClassLabel]) -> f64 {
    let probs = net.forward_batch(x.view()).unwrap();
    let total: f64 = probs
        .axis_iter(Axis(0))
        .zip(y)
        .map(|(g, &k)| {
            let g = symloss::ProbVector::new(g.to_vec()).unwrap();
            loss.value(&g, k).unwrap()
        })
        .sum();
    total / y.len() as f64
}

/// Largest elementwise relative error between the analytic gradient of the
/// mean loss over a small batch and central finite differences.
pub fn worst_gradient_error(loss: &LossSpec, net_seed: u64) -> f64 {
    let (dim, k, n) = (4, 4, 3);
    let net = MlpNetwork::new(dim, &[6, 5], k, net_seed).unwrap();
    let mut rng = seed::rng(seed::derive(net_seed, 77));
    let x = Array2::from_shape_fn((n, dim), |_| rng.random_range(-1.5..1.5));
    let y: Vec<ClassLabel> = (0..n).map(|_| ClassLabel(rng.random_range(0..k))).collect();

    let cache = net.forward_batch_cached(x.view()).unwrap();
    let mut dl_dg = Array2::zeros((n, k));
    for ((g, mut out), &label) in cache
        .probs()
        .axis_iter(Axis(0))
        .zip(dl_dg.axis_iter_mut(Axis(0)))
        .zip(&y)
    {
        let g = symloss::ProbVector::new(g.to_vec()).unwrap();
        let grad = loss.grad(&g, label).unwrap();
        for (o, d) in out.iter_mut().zip(grad) {
            *o = d / n as f64;
        }
    }
    let analytic = net.backward_batch(&cache, dl_dg.view()).unwrap();

    let mut worst = 0.0f64;
    let mut probe = |li: usize, is_weight: bool, idx: (usize, usize), a: f64| {
        let mut plus = net.clone();
        let mut minus = net.clone();
        let bump = |n: &mut MlpNetwork, d: f64| {
            let layer = &mut n.layers_mut()[li];
            if is_weight {
                layer.weights_mut()[idx] += d;
            } else {
                layer.biases_mut()[idx.0] += d;
            }
        };
        bump(&mut plus, FD_STEP);
        bump(&mut minus, -FD_STEP);
        let numeric = (mean_loss(loss, &plus, &x, &y) - mean_loss(loss, &minus, &x, &y)) / (2.0 * FD_STEP);
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(FD_FLOOR);
        worst = worst.max(err);
    };
    for (li, g) in analytic.layers.iter().enumerate() {
        for ((r, c), &a) in g.weights.indexed_iter() {
            probe(li, true, (r, c), a);
        }
        for (r, &a) in g.biases.iter().enumerate() {
            probe(li, false, (r, 0), a);
        }
    }
    worst
}
