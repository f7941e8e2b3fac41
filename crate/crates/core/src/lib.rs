//! Loss functions, label noise and memorization diagnostics for small dense
//! classifiers.
//!
//! The library trains softmax MLPs on data whose labels have been randomly
//! flipped and tracks two accuracies: against the labels it was given (J1)
//! and against the original labels (J2). Losses whose sum over all labels is
//! constant keep J2 above J1 instead of memorizing the flipped labels.

pub mod data;
pub mod error;
pub mod experiment;
pub mod losses;
pub mod metrics;
pub mod nn;
pub mod noise;
pub mod optim;
pub mod output;
pub mod prob;
pub mod seed;
pub mod train;

pub use error::{Error, Result};
pub use losses::LossSpec;
pub use nn::MlpNetwork;
pub use noise::NoisyDataset;
pub use prob::{ClassLabel, ProbVector};
