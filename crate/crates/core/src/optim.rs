//! SGD and Adam. Step-size decay is applied once per epoch by the training
//! loop through [`Optimizer::end_epoch`], never per step.

use ndarray::Zip;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Gradients, MlpNetwork};

pub const DEFAULT_SGD_STEP: f64 = 0.01;
pub const DEFAULT_SGD_DECAY: f64 = 0.95;
pub const DEFAULT_ADAM_STEP: f64 = 0.001;
pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            _ => Err(Error::Parameter(format!("unknown optimizer `{s}` (sgd | adam)"))),
        }
    }
}

impl std::fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
struct AdamState {
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    timestep: i32,
    m: Option<Gradients>,
    v: Option<Gradients>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer {
    kind: OptimizerKind,
    step_size: f64,
    decay: f64,
    adam: Option<AdamState>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, step_size: f64, decay: f64) -> Result<Self> {
        if !(step_size.is_finite() && step_size > 0.0) {
            return Err(Error::Parameter(format!("step size must be positive, got {step_size}")));
        }
        if !(decay > 0.0 && decay <= 1.0) {
            return Err(Error::Parameter(format!("decay must lie in (0, 1], got {decay}")));
        }
        let adam = (kind == OptimizerKind::Adam).then(|| AdamState {
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            epsilon: ADAM_EPSILON,
            timestep: 0,
            m: None,
            v: None,
        });
        Ok(Optimizer {
            kind,
            step_size,
            decay,
            adam,
        })
    }

    /// Step size 0.01, decayed by 0.95 after each epoch.
    pub fn sgd_default() -> Self {
        Optimizer::new(OptimizerKind::Sgd, DEFAULT_SGD_STEP, DEFAULT_SGD_DECAY).expect("valid")
    }

    /// Step size 0.001, no decay.
    pub fn adam_default() -> Self {
        Optimizer::new(OptimizerKind::Adam, DEFAULT_ADAM_STEP, 1.0).expect("valid")
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn step_size(&self) -> f64 {
        self.step_size
    }

    pub fn decay(&self) -> f64 {
        self.decay
    }

    pub fn end_epoch(&mut self) {
        self.step_size *= self.decay;
    }

    pub fn step(&mut self, net: &mut MlpNetwork, grads: &Gradients) -> Result<()> {
        grads.check_shape(net)?;
        match self.kind {
            OptimizerKind::Sgd => {
                sgd_step(net, grads, self.step_size);
                Ok(())
            }
            OptimizerKind::Adam => {
                let state = self.adam.as_mut().expect("adam state");
                adam_step(net, grads, self.step_size, state);
                Ok(())
            }
        }
    }
}

fn sgd_step(net: &mut MlpNetwork, grads: &Gradients, step: f64) {
    for (layer, g) in net.layers_mut().iter_mut().zip(&grads.layers) {
        layer.weights_mut().scaled_add(-step, &g.weights);
        layer.biases_mut().scaled_add(-step, &g.biases);
    }
}

fn adam_step(net: &mut MlpNetwork, grads: &Gradients, step: f64, state: &mut AdamState) {
    let m = state.m.get_or_insert_with(|| Gradients::zeros_like(net));
    let v = state.v.get_or_insert_with(|| Gradients::zeros_like(net));
    state.timestep += 1;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.epsilon);
    let c1 = 1.0 - b1.powi(state.timestep);
    let c2 = 1.0 - b2.powi(state.timestep);

    let update = |p: &mut f64, g: &f64, m: &mut f64, v: &mut f64| {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= step * m_hat / (v_hat.sqrt() + eps);
    };
    for (((layer, g), m), v) in net
        .layers_mut()
        .iter_mut()
        .zip(&grads.layers)
        .zip(&mut m.layers)
        .zip(&mut v.layers)
    {
        Zip::from(layer.weights_mut())
            .and(&g.weights)
            .and(&mut m.weights)
            .and(&mut v.weights)
            .for_each(update);
        Zip::from(layer.biases_mut())
            .and(&g.biases)
            .and(&mut m.biases)
            .and(&mut v.biases)
            .for_each(update);
    }
}
