//! Mini-batch empirical risk minimization on the noisy labels.

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::losses::LossSpec;
use crate::metrics::{evaluate_epoch, EpochRecord};
use crate::nn::MlpNetwork;
use crate::noise::NoisyDataset;
use crate::optim::Optimizer;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

/// Epoch-at-a-time training state. Owns everything it touches so that callers
/// can drive it incrementally.
#[derive(Debug, Clone)]
pub struct Trainer {
    net: MlpNetwork,
    ds: NoisyDataset,
    loss: LossSpec,
    optimizer: Optimizer,
    batch_size: usize,
    rng: ChaCha8Rng,
    order: Vec<usize>,
    epoch: usize,
}

impl Trainer {
    pub fn new(
        net: MlpNetwork,
        ds: NoisyDataset,
        loss: LossSpec,
        optimizer: Optimizer,
        batch_size: usize,
        seed: u64,
    ) -> Result<Self> {
        if !loss.is_differentiable() {
            return Err(Error::UnsupportedGradient(loss.to_string()));
        }
        if batch_size == 0 {
            return Err(Error::Parameter("batch size must be at least 1".into()));
        }
        if ds.is_empty() {
            return Err(Error::Parameter("cannot train on an empty dataset".into()));
        }
        if ds.dim() != net.input_dim() {
            return Err(Error::shape("dataset features", net.input_dim(), ds.dim()));
        }
        if ds.num_classes() != net.num_classes() {
            return Err(Error::shape("dataset classes", net.num_classes(), ds.num_classes()));
        }
        let order = (0..ds.len()).collect();
        Ok(Trainer {
            net,
            ds,
            loss,
            optimizer,
            batch_size,
            rng: seed::rng(seed),
            order,
            epoch: 0,
        })
    }

    pub fn network(&self) -> &MlpNetwork {
        &self.net
    }

    pub fn into_network(self) -> MlpNetwork {
        self.net
    }

    pub fn dataset(&self) -> &NoisyDataset {
        &self.ds
    }

    pub fn epochs_done(&self) -> usize {
        self.epoch
    }

    /// Runs one pass over the shuffled data, then measures the network on the
    /// full training set.
    pub fn run_epoch(&mut self) -> Result<EpochRecord> {
        let epoch = self.epoch + 1;
        let step_size = self.optimizer.step_size();
        self.order.shuffle(&mut self.rng);
        let k = self.net.num_classes();
        let features = self.ds.features();
        let labels = self.ds.noisy_labels();

        for (batch, idx) in self.order.chunks(self.batch_size).enumerate() {
            let x = features.select(Axis(0), idx);
            let cache = self.net.forward_batch_cached(x.view())?;
            let probs = cache.probs();
            let scale = 1.0 / idx.len() as f64;
            let mut dl_dg = Array2::zeros((idx.len(), k));
            let mut loss_sum = 0.0;
            for ((row, mut out), &i) in probs.axis_iter(Axis(0)).zip(dl_dg.axis_iter_mut(Axis(0))).zip(idx) {
                let g = row.as_slice().expect("standard layout");
                let y = labels[i].0;
                loss_sum += self.loss.value_raw(g, y)?;
                let out = out.as_slice_mut().expect("standard layout");
                self.loss.grad_raw(g, y, out)?;
                out.iter_mut().for_each(|d| *d *= scale);
            }
            if !loss_sum.is_finite() {
                return Err(Error::NonFinite {
                    what: "loss",
                    epoch,
                    batch,
                });
            }
            let grads = self.net.backward_batch(&cache, dl_dg.view())?;
            self.optimizer.step(&mut self.net, &grads)?;
            if !self.net.is_finite() {
                return Err(Error::NonFinite {
                    what: "parameters",
                    epoch,
                    batch,
                });
            }
        }
        self.optimizer.end_epoch();
        self.epoch = epoch;
        evaluate_epoch(&self.loss, &self.net, &self.ds, epoch, step_size)
    }
}

/// Trains `net` in place for `config.epochs` epochs and returns one record per
/// epoch. Deterministic given `config.seed`.
pub fn train(
    net: &mut MlpNetwork,
    ds: &NoisyDataset,
    loss: &LossSpec,
    optimizer: &mut Optimizer,
    config: &TrainConfig,
) -> Result<Vec<EpochRecord>> {
    let mut trainer = Trainer::new(
        net.clone(),
        ds.clone(),
        loss.clone(),
        optimizer.clone(),
        config.batch_size,
        config.seed,
    )?;
    let records = (0..config.epochs)
        .map(|_| trainer.run_epoch())
        .collect::<Result<Vec<_>>>()?;
    *optimizer = trainer.optimizer.clone();
    *net = trainer.into_network();
    Ok(records)
}
