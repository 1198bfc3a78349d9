//! Neural excess-Gibbs-energy model with hard thermodynamic constraints.
//!
//! The network predicts `g^E/RT` of a liquid mixture from component
//! embeddings, mole fractions and temperature. Activity coefficients are its
//! exact composition derivatives, so they satisfy the Gibbs–Duhem equation
//! by construction. Pure components have `g^E = 0`, identical components are
//! lumped, and the prediction is invariant to component order.
//!
//! Modules:
//! * [`model`], [`layers`], [`graph`]: parameters and the batched forward pass.
//! * [`predict`]: inference on mixture states and binary phase diagrams.
//! * [`surrogate`]: a differentiable curve-to-binodal solver.
//! * [`world`], [`data`]: the synthetic ground truth and its datasets.
//! * [`train`], [`eval`]: losses, optimisation and metrics.
//! * [`checkpoint`], [`embeddings`]: file formats.

pub mod checkpoint;
pub mod data;
pub mod embeddings;
pub mod eval;
pub mod graph;
pub mod layers;
pub mod model;
pub mod optim;
pub mod parallel;
pub mod predict;
pub mod surrogate;
pub mod train;
pub mod world;

pub use embeddings::EmbeddingTable;
pub use model::{ModelParams, Scaler};
pub use world::{make_world, World, WorldConfig};
pub use predict::{NeuralBinary, Prediction, Predictor};


use gibbsnet_autodiff::AdError;
use gibbsnet_thermo::{ComponentId, ThermoError};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{what}: expected {expected}, found {found}")]
    Dimension {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("{0} scaler is not fitted")]
    Unfitted(&'static str),
    #[error("unknown component {0}")]
    UnknownComponent(ComponentId),
    #[error("data error: {0}")]
    Data(String),
    #[error("invalid file: {0}")]
    Format(String),
    #[error("bad magic: not a {expected} file")]
    BadMagic { expected: &'static str },
    #[error("file is truncated")]
    Truncated,
    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("non-finite {term} at epoch {epoch}, batch {batch}")]
    NonFinite {
        epoch: usize,
        batch: usize,
        term: String,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Thermo(#[from] ThermoError),
    #[error(transparent)]
    Autodiff(#[from] AdError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
