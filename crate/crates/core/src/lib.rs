//! Federated learning simulation core.
//!
//! * [`nn`]: dense MLP with softmax cross-entropy and momentum SGD
//! * [`data`]: FCUBE and Gaussian-blob generators, IDX and LIBSVM readers
//! * [`partition`]: IID and non-IID partitioners with feature-noise overlay
//! * [`engine`]: FedAvg, FedProx, SCAFFOLD and FedNova round loop

pub mod data;
pub mod engine;
pub mod error;
pub mod matrix;
pub mod nn;
pub mod partition;
pub mod rng;

pub use data::LabeledDataset;
pub use engine::{Algorithm, ControlUpdate, FedRunConfig, RoundRecord};
pub use error::{FedError, Result};
pub use matrix::Matrix;
pub use nn::{Batch, MlpArch, ParamVector};
pub use partition::{PartitionKind, PartitionMap, PartitionSpec, PartyView};
