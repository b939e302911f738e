//! Desk-scale framework for learning and transferring visuo-motor reaching
//! policies between two synthetic render domains.
//!
//! The crate is organised as a stack:
//!
//! * [`numgrad`] — dense `f64` tensors, a reverse-mode autodiff tape and the
//!   RMSProp optimizer used by every training procedure.
//! * [`simworld`] — a kinematic 7-DoF arm, randomized table-top scenes, a
//!   pinhole rasterizer and the dataset factory for both render domains.
//! * [`policynet`] — perception (encoder + regressor), control and
//!   discriminator network definitions plus the combined network.
//! * [`transfer`] — losses, the PI-regulated adversarial balance and the
//!   training procedures (pretraining, supervised adaptation, adversarial
//!   adaptation, control training, end-to-end fine-tuning).
//! * [`bench`] — metrics, box statistics, error-map grids, closed-loop
//!   rollout evaluation and report emission.
//! * [`config`] / [`cli`] — run configuration and the command-line pipeline.

pub mod bench;
pub mod cli;
pub mod config;
pub mod numgrad;
pub mod policynet;
pub mod simworld;
pub mod transfer;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {details}")]
    ShapeMismatch { op: &'static str, details: String },
    #[error("loss node must be scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("NaN gradient for parameter `{0}`, step aborted")]
    NanGradient(String),
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error("empty batch passed to {0}")]
    EmptyBatch(&'static str),
    #[error("joint {index} angle {value} outside limits [{min}, {max}]")]
    JointLimit {
        index: usize,
        value: f64,
        min: f64,
        max: f64,
    },
    #[error("target {0:?} unreachable: {1}")]
    Unreachable([f64; 3], String),
    #[error("architecture mismatch: {0}")]
    ArchMismatch(String),
    #[error("input out of range for {op}: {details}")]
    InputRange { op: &'static str, details: String },
    #[error("bad file format in {path}: {details}")]
    Format { path: String, details: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("missing dataset: {0}")]
    MissingDataset(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
