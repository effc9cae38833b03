//! Dataset input and output, the synthetic street generator and the
//! persisted database.
//!
//! A dataset is a directory with a `manifest.json` listing panoramas in
//! route order (image, plane-encoded depth, geotag, heading) and query
//! frames with optional ground truth. See `docs/dataset-format.md`.

mod dataset;
mod store;
mod synthetic;
mod texture;

pub use dataset::{
    load_dataset, read_depth_map, save_manifest, write_depth_map, Dataset, DatasetManifest,
    DepthFile, GroundTruth, PanoramaEntry, PanoramaRecord, QueryEntry, QueryRecord,
    DATASET_FORMAT_VERSION,
};
pub use store::{
    load_database, load_features, save_database, save_features, DATABASE_FORMAT_VERSION,
    FEATURES_FORMAT_VERSION,
};
pub use synthetic::{
    generate_synthetic_street, NoiseConfig, QueryPose, QueryTrajectory, SyntheticSceneConfig,
    SyntheticStreet,
};

use std::path::Path;

use thiserror::Error;

use crate::PersistError;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{record}: missing file {path}")]
    MissingFile { record: String, path: String },
    #[error("{record}: malformed input: {reason}")]
    FormatError { record: String, reason: String },
    #[error("{record}: {reason}")]
    InvariantViolation { record: String, reason: String },
    #[error("i/o error on {path}: {reason}")]
    Io { path: String, reason: String },
    #[error(transparent)]
    Persist(#[from] PersistError),
}

impl IngestError {
    pub(crate) fn format(record: &str, reason: impl Into<String>) -> Self {
        Self::FormatError {
            record: record.to_string(),
            reason: reason.into(),
        }
    }

    pub(crate) fn invariant(record: &str, reason: impl Into<String>) -> Self {
        Self::InvariantViolation {
            record: record.to_string(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: &Path, err: impl std::fmt::Display) -> Self {
        Self::Io {
            path: path.display().to_string(),
            reason: err.to_string(),
        }
    }
}
