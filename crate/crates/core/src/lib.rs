//! Tikhonov-regularized many-to-one LSTM regression.
//!
//! The regularizer bounds how much the network output can move when the
//! input window is perturbed, and is computed in closed form from norms of
//! the weight matrices. The crate provides the model and its gradients
//! ([`lstm`]), the regularizer ([`tikhonov`]), a training loop ([`trainer`]),
//! Monte-Carlo checks of the perturbation bounds ([`perturb`]), and dataset
//! and checkpoint I/O ([`data`]).

pub mod data;
pub mod error;
pub mod gradcheck;
pub mod linalg;
pub mod lstm;
pub mod perturb;
pub mod tikhonov;
pub mod trainer;

pub use data::{Checkpoint, DataDims, Dataset, Splits};
pub use error::{Error, Result};
pub use linalg::{Matrix, NormMode, PowerIteration, Vector};
pub use lstm::{Dims, LstmState, ModelParams, ParamGrads, Sequence, StepCache};
pub use perturb::{PerturbReport, PerturbTrial};
pub use tikhonov::{Objective, RegCoefficients, RegConfig, ALPHA, BETA};
pub use trainer::{EpochMetrics, OptimizerKind, RegMode, TrainConfig, TrainResult};
