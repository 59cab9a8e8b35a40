//! The activity predictor: an LSTM unrolled over the input window, a dense
//! ReLU layer, inverted dropout and a dense softmax over the ten categories.
//! Trained with cross-entropy, BPTT gradients and Adam or SGD.

pub mod io;
pub mod model;
pub mod optim;
pub mod params;
pub mod train;

pub use model::{forward, loss_and_grads, predict, Dropout};
pub use optim::{sgd_step, AdamState, OptimizerKind};
pub use params::{Dims, Gradients, ModelParameters, ParamArray};
pub use train::{evaluate, train, EpochRecord, TrainConfig, TrainOutcome};
