//! The offline and online pipeline as composable commands.
//!
//! Offline: `prepare` renders the rectilinear view store from a dataset,
//! `train` fits both dictionaries, `build` quantizes the store into the
//! retrieval database. Online: `localize` processes query frames in order
//! and writes one JSON line per frame; `eval` scores those lines against
//! ground truth. Each command reads and writes plain files, so any stage
//! can be rerun alone.

mod build;
mod config;
mod eval;
mod localize;
mod prepare;

pub use build::{
    cmd_build, cmd_train, load_vocabulary, BuildReport, DATABASE_FILE, LOCAL_VOCAB_FILE,
    REGION_VOCAB_FILE,
};
pub use config::{GateConfig, PipelineConfig, RigConfig};
pub use eval::{cmd_eval, evaluate, EvalReport, FrameError, TableRow};
pub use localize::{
    cmd_localize, read_records, LocalizationRecord, Localizer, PairRecord, PoseRecord,
    SearchRecord, TopologicalHit, RECORDS_FILE,
};
pub use prepare::{cmd_prepare, PrepareReport, ViewRecord, ViewStore};

use std::path::Path;

use thiserror::Error;

use crate::geo::GeoError;
use crate::ingest::IngestError;
use crate::pose::PoseError;
use crate::retrieval::RetrievalError;
use crate::vocab::VocabError;
use crate::PersistError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("missing artifact {path}; run `{stage}` first")]
    MissingArtifact { path: String, stage: &'static str },
    #[error("frame {frame_id} has no ground truth")]
    MissingGroundTruth { frame_id: String },
    #[error("i/o error on {path}: {reason}")]
    Io { path: String, reason: String },
    #[error("{path}: {reason}")]
    Format { path: String, reason: String },
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Persist(#[from] PersistError),
    #[error(transparent)]
    Vocab(#[from] VocabError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Pose(#[from] PoseError),
    #[error(transparent)]
    Geo(#[from] GeoError),
}

impl CliError {
    pub(crate) fn io(path: &Path, err: impl std::fmt::Display) -> Self {
        Self::Io {
            path: path.display().to_string(),
            reason: err.to_string(),
        }
    }

    pub(crate) fn format(path: &Path, err: impl std::fmt::Display) -> Self {
        Self::Format {
            path: path.display().to_string(),
            reason: err.to_string(),
        }
    }
}

fn require(path: &Path, stage: &'static str) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::MissingArtifact {
            path: path.display().to_string(),
            stage,
        })
    }
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

/// Writes through a temporary sibling so readers never see a partial file.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(|e| CliError::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    write_atomic(
        path,
        serde_json::to_string_pretty(value)
            .expect("serializable")
            .as_bytes(),
    )
}

fn write_jsonl<T: serde::Serialize>(path: &Path, items: &[T]) -> Result<(), CliError> {
    let mut text = String::new();
    for item in items {
        text.push_str(&serde_json::to_string(item).expect("serializable"));
        text.push('\n');
    }
    write_atomic(path, text.as_bytes())
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| CliError::format(path, format!("line {}: {e}", i + 1)))
        })
        .collect()
}
