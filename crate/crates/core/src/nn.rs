//! Dense feedforward classifier with a softmax head.
//!
//! Backpropagation always goes through the full softmax Jacobian, so any loss
//! that supplies `dL/dg` can be trained, not only cross entropy.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis, Zip};
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::prob::{softmax_in_place, ProbVector};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    weights: Array2<f64>,
    biases: Array1<f64>,
    activation: Activation,
}

impl DenseLayer {
    /// `weights` is `out x in`.
    pub fn new(weights: Array2<f64>, biases: Array1<f64>, activation: Activation) -> Result<Self> {
        if weights.nrows() != biases.len() {
            return Err(Error::shape("layer biases", weights.nrows(), biases.len()));
        }
        if weights.is_empty() {
            return Err(Error::Parameter("layer has no weights".into()));
        }
        Ok(DenseLayer {
            weights,
            biases,
            activation,
        })
    }

    /// He-initialized layer: weights ~ N(0, 2 / fan_in), zero biases.
    pub fn he(inputs: usize, outputs: usize, activation: Activation, seed: u64) -> Self {
        let mut rng = seed::rng(seed);
        let normal = Normal::new(0.0, (2.0 / inputs as f64).sqrt()).expect("positive std");
        let weights = Array2::from_shape_simple_fn((outputs, inputs), || normal.sample(&mut rng));
        DenseLayer {
            weights,
            biases: Array1::zeros(outputs),
            activation,
        }
    }

    pub fn inputs(&self) -> usize {
        self.weights.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weights.nrows()
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn weights(&self) -> ArrayView2<'_, f64> {
        self.weights.view()
    }

    pub fn biases(&self) -> ArrayView1<'_, f64> {
        self.biases.view()
    }

    pub fn weights_mut(&mut self) -> ArrayViewMut2<'_, f64> {
        self.weights.view_mut()
    }

    pub fn biases_mut(&mut self) -> ArrayViewMut1<'_, f64> {
        self.biases.view_mut()
    }

    fn apply(&self, input: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut z = input.dot(&self.weights.t());
        if !z.is_standard_layout() {
            z = z.as_standard_layout().into_owned();
        }
        z += &self.biases;
        if self.activation == Activation::Relu {
            z.mapv_inplace(|v| v.max(0.0));
        }
        z
    }
}

/// Parameter-shaped buffers: one `(weights, biases)` pair per layer. Used for
/// gradients and optimizer moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGradient>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradient {
    pub weights: Array2<f64>,
    pub biases: Array1<f64>,
}

impl Gradients {
    pub fn zeros_like(net: &MlpNetwork) -> Self {
        Gradients {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGradient {
                    weights: Array2::zeros(l.weights.raw_dim()),
                    biases: Array1::zeros(l.biases.len()),
                })
                .collect(),
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for l in &mut self.layers {
            l.weights *= factor;
            l.biases *= factor;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().all(|v| v.is_finite()) && l.biases.iter().all(|v| v.is_finite()))
    }

    pub fn max_abs(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.biases.iter()))
            .fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Errors unless `self` has exactly the parameter shapes of `net`.
    pub fn check_shape(&self, net: &MlpNetwork) -> Result<()> {
        if self.layers.len() != net.layers.len() {
            return Err(Error::shape("gradient layers", net.layers.len(), self.layers.len()));
        }
        for (g, l) in self.layers.iter().zip(&net.layers) {
            if g.weights.dim() != l.weights.dim() {
                return Err(Error::shape("gradient weights", l.weights.len(), g.weights.len()));
            }
            if g.biases.len() != l.biases.len() {
                return Err(Error::shape("gradient biases", l.biases.len(), g.biases.len()));
            }
        }
        Ok(())
    }
}

/// Activations retained by [`MlpNetwork::forward_batch_cached`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `inputs[i]` is the input to layer `i`.
    inputs: Vec<Array2<f64>>,
    probs: Array2<f64>,
}

impl ForwardCache {
    pub fn probs(&self) -> ArrayView2<'_, f64> {
        self.probs.view()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpNetwork {
    layers: Vec<DenseLayer>,
    input_dim: usize,
    num_classes: usize,
}

impl MlpNetwork {
    /// ReLU hidden layers of the given widths, identity output layer of width
    /// `num_classes`, He initialization.
    pub fn new(input_dim: usize, hidden: &[usize], num_classes: usize, seed: u64) -> Result<Self> {
        if input_dim == 0 || hidden.contains(&0) {
            return Err(Error::Parameter("layer widths must be positive".into()));
        }
        let mut widths = vec![input_dim];
        widths.extend_from_slice(hidden);
        widths.push(num_classes);
        let last = widths.len() - 2;
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let act = if i == last {
                    Activation::Identity
                } else {
                    Activation::Relu
                };
                DenseLayer::he(w[0], w[1], act, seed::derive(seed, i as u64))
            })
            .collect();
        MlpNetwork::from_layers(layers)
    }

    pub fn from_layers(layers: Vec<DenseLayer>) -> Result<Self> {
        let first = layers
            .first()
            .ok_or_else(|| Error::Parameter("network needs at least one layer".into()))?;
        let input_dim = first.inputs();
        for pair in layers.windows(2) {
            if pair[0].outputs() != pair[1].inputs() {
                return Err(Error::shape("layer chain", pair[0].outputs(), pair[1].inputs()));
            }
        }
        let num_classes = layers.last().map(DenseLayer::outputs).unwrap_or(0);
        if num_classes < 2 {
            return Err(Error::Parameter(format!(
                "need at least 2 output classes, got {num_classes}"
            )));
        }
        Ok(MlpNetwork {
            layers,
            input_dim,
            num_classes,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().all(|v| v.is_finite()) && l.biases.iter().all(|v| v.is_finite()))
    }

    /// Softmax output `g(x)` for a single example.
    pub fn forward(&self, x: &[f64]) -> Result<ProbVector> {
        let row = ArrayView2::from_shape((1, x.len()), x).expect("contiguous slice");
        let probs = self.forward_batch(row)?;
        Ok(ProbVector::from_raw(probs.row(0).to_vec()))
    }

    /// Softmax outputs for each row of `x`.
    pub fn forward_batch(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_input(x)?;
        let mut a = self.layers[0].apply(x);
        for layer in &self.layers[1..] {
            a = layer.apply(a.view());
        }
        softmax_rows(&mut a);
        Ok(a)
    }

    pub fn forward_batch_cached(&self, x: ArrayView2<'_, f64>) -> Result<ForwardCache> {
        self.check_input(x)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        inputs.push(x.to_owned());
        for (i, layer) in self.layers.iter().enumerate() {
            let out = layer.apply(inputs[i].view());
            inputs.push(out);
        }
        let mut probs = inputs.pop().expect("at least one layer");
        softmax_rows(&mut probs);
        Ok(ForwardCache { inputs, probs })
    }

    /// Parameter gradients for a single example given `dL/dg`.
    pub fn backward(&self, x: &[f64], dl_dg: &[f64]) -> Result<Gradients> {
        let row = ArrayView2::from_shape((1, x.len()), x).expect("contiguous slice");
        let cache = self.forward_batch_cached(row)?;
        let dl_dg = ArrayView2::from_shape((1, dl_dg.len()), dl_dg)
            .map_err(|_| Error::shape("dL/dg", self.num_classes, dl_dg.len()))?;
        self.backward_batch(&cache, dl_dg)
    }

    /// Gradient of `sum_rows L(g(x_row))` given the per-row `dL/dg`.
    pub fn backward_batch(&self, cache: &ForwardCache, dl_dg: ArrayView2<'_, f64>) -> Result<Gradients> {
        if dl_dg.dim() != cache.probs.dim() {
            return Err(Error::shape("dL/dg", self.num_classes, dl_dg.ncols()));
        }
        // Softmax Jacobian: dz_i = g_i * (dg_i - sum_j g_j dg_j).
        let mut delta = Array2::zeros(cache.probs.raw_dim());
        Zip::from(delta.rows_mut())
            .and(cache.probs.rows())
            .and(dl_dg.rows())
            .for_each(|mut d, g, dg| {
                let inner = g.dot(&dg);
                Zip::from(&mut d)
                    .and(&g)
                    .and(&dg)
                    .for_each(|d, &g, &dg| *d = g * (dg - inner));
            });

        let mut grads = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let input = &cache.inputs[i];
            let weights = delta.t().dot(input);
            let biases = delta.sum_axis(Axis(0));
            if i > 0 {
                let mut upstream = delta.dot(&layer.weights);
                if self.layers[i - 1].activation == Activation::Relu {
                    Zip::from(&mut upstream).and(input).for_each(|u, &a| {
                        if a <= 0.0 {
                            *u = 0.0;
                        }
                    });
                }
                delta = upstream;
            }
            grads.push(LayerGradient { weights, biases });
        }
        grads.reverse();
        Ok(Gradients { layers: grads })
    }

    fn check_input(&self, x: ArrayView2<'_, f64>) -> Result<()> {
        if x.ncols() != self.input_dim {
            return Err(Error::shape("input", self.input_dim, x.ncols()));
        }
        Ok(())
    }
}

fn softmax_rows(a: &mut Array2<f64>) {
    for mut row in a.rows_mut() {
        match row.as_slice_mut() {
            Some(s) => softmax_in_place(s),
            None => {
                let mut v = row.to_vec();
                softmax_in_place(&mut v);
                row.assign(&ArrayView1::from(&v));
            }
        }
    }
}
