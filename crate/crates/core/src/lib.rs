//! Fairness auditing for small neural classifiers on tabular data.
//!
//! The crate trains a plain and an adversarially mitigated classifier,
//! scores each test prediction by its sensitivity to a protected attribute,
//! and compares those scores against group fairness statistics and a proxy
//! "fair"/"unfair" labelling derived from model agreement.
//!
//! Layers, bottom up:
//!
//! - [`tensor`] and [`tape`]: dense tensors and reverse-mode differentiation.
//! - [`nn`] and [`model_file`]: the two model families and their file format.
//! - [`train`]: Adam on binary cross-entropy, with optional adversarial mitigation.
//! - [`data`]: CSV ingest, one-hot encoding, normalization and splitting.
//! - [`sensitivity`], [`metrics`], [`eval`]: the audit itself.
//! - [`experiment`]: the whole pipeline with a reproducibility manifest.
//!
//! ```
//! use fairaudit::nn::{ModelSpec, TrainedModel};
//! use fairaudit::sensitivity::prediction_sensitivity;
//!
//! let model = TrainedModel::build(ModelSpec::linear(4, 7)).unwrap();
//! let s = prediction_sensitivity(&model.network, &[0.1, -0.3, 1.0, 0.0], 2).unwrap();
//! assert!(s >= 0.0);
//! ```

pub mod data;
pub mod eval;
pub mod experiment;
pub mod metrics;
pub mod model_file;
pub mod nn;
pub mod rng;
pub mod sensitivity;
pub mod tape;
pub mod tensor;
pub mod train;

use std::path::Path;

use thiserror::Error;

pub use data::{DataError, Dataset, DatasetSchema};
pub use eval::HarnessError;
pub use metrics::MetricsError;
pub use nn::{ModelError, ModelKind, ModelSpec, TrainedModel};
pub use sensitivity::{AuditError, SensitivityConfig, SensitivityResult};
pub use tensor::{Tensor, TensorError};
pub use train::{TrainConfig, TrainError};

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Audit(#[from] AuditError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

/// Process exit codes by error class.
pub mod exit {
    pub const OTHER: i32 = 1;
    pub const SCHEMA: i32 = 2;
    pub const DATA: i32 = 3;
    pub const CONFIG: i32 = 4;
    pub const DIVERGENCE: i32 = 5;
    pub const IO: i32 = 6;
}

impl Error {
    pub(crate) fn io(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
        move |source| Error::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        use exit::*;
        match self {
            Error::Data(DataError::Schema(_)) => SCHEMA,
            Error::Data(DataError::Io { .. }) | Error::Io { .. } => IO,
            Error::Model(ModelError::Io { .. }) => IO,
            Error::Data(_) | Error::Csv(_) | Error::Metrics(_) => DATA,
            Error::Model(ModelError::Dimension { .. }) => DATA,
            Error::Train(TrainError::Divergence { .. }) => DIVERGENCE,
            Error::Train(TrainError::Label(_)) => DATA,
            Error::Train(TrainError::Config(_))
            | Error::Audit(AuditError::Config(_) | AuditError::AttributeOutOfRange { .. })
            | Error::Model(ModelError::Spec(_))
            | Error::Harness(HarnessError::Collision(_) | HarnessError::Config(_))
            | Error::Config(_) => CONFIG,
            Error::Harness(HarnessError::Dimension(_) | HarnessError::IdMismatch(_) | HarnessError::Parse(_)) => DATA,
            _ => OTHER,
        }
    }
}
