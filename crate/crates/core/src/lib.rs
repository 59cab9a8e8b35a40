//! Next-activity prediction for smart homes that join a collaborative
//! learning pool over time.
//!
//! The crate simulates local, centralized and federated training of an
//! LSTM activity predictor under a staggered (Poisson) deployment schedule,
//! and derives the quantities a privacy-aware home needs to decide whether
//! sharing is worthwhile: the crossover day, the regret, and a classifier
//! that predicts early crossover from the first days of activity.

pub mod advisor;
pub mod analysis;
pub mod deploy;
pub mod error;
pub mod ingest;
pub mod nn;
pub mod ontology;
pub mod regimes;
pub mod seed;
pub mod synth;

pub use deploy::{available_data, CentralView, DayRange, DeploymentSchedule, HomeSchedule};
pub use error::{Error, Result};
pub use ingest::{Event, HomeDataset, Sample};
pub use nn::{ModelParameters, TrainConfig};

pub use ontology::{Category, FeatureVector, OntologyMap};
