//! Versioned JSON envelopes for model files:
//! `{"schema_version":1,"kind":"<kind>","model":{...}}`.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gbm::GbmError;

pub const MODEL_SCHEMA_VERSION: u64 = 1;
pub const KIND_CLASSIFIER: &str = "binary_classifier";
pub const KIND_ROUTER: &str = "router";

#[derive(Debug, Error)]
pub enum ModelIoError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: corrupted model file: {message}")]
    Corrupt { path: PathBuf, message: String },
    #[error("{path}: unsupported model schema_version {found} (expected {MODEL_SCHEMA_VERSION})")]
    Version { path: PathBuf, found: String },
    #[error("{path}: expected a '{expected}' file, found '{found}'")]
    Kind {
        path: PathBuf,
        expected: String,
        found: String,
    },
    #[error("schema hash mismatch: model expects {expected}, found {found}")]
    SchemaHash { expected: String, found: String },
    #[error(transparent)]
    Gbm(#[from] GbmError),
    #[error("invalid router: {0}")]
    Invalid(String),
}

#[derive(Serialize)]
struct EnvelopeOut<'a, T> {
    schema_version: u64,
    kind: &'a str,
    model: &'a T,
}

#[derive(Deserialize)]
struct EnvelopeIn {
    schema_version: serde_json::Value,
    kind: String,
    model: serde_json::Value,
}

pub fn to_versioned_string<T: Serialize>(kind: &str, model: &T) -> String {
    let mut s = serde_json::to_string(&EnvelopeOut {
        schema_version: MODEL_SCHEMA_VERSION,
        kind,
        model,
    })
    .expect("model serializes");
    s.push('\n');
    s
}

pub fn write_versioned<T: Serialize>(path: &Path, kind: &str, model: &T) -> Result<(), ModelIoError> {
    std::fs::write(path, to_versioned_string(kind, model)).map_err(|source| ModelIoError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn from_versioned_str<T: DeserializeOwned>(
    path: &Path,
    text: &str,
    kind: &str,
) -> Result<T, ModelIoError> {
    let corrupt = |e: serde_json::Error| ModelIoError::Corrupt {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let env: EnvelopeIn = serde_json::from_str(text).map_err(corrupt)?;
    if env.schema_version.as_u64() != Some(MODEL_SCHEMA_VERSION) {
        return Err(ModelIoError::Version {
            path: path.to_path_buf(),
            found: env.schema_version.to_string(),
        });
    }
    if env.kind != kind {
        return Err(ModelIoError::Kind {
            path: path.to_path_buf(),
            expected: kind.to_string(),
            found: env.kind,
        });
    }
    serde_json::from_value(env.model).map_err(corrupt)
}

pub fn read_versioned<T: DeserializeOwned>(path: &Path, kind: &str) -> Result<T, ModelIoError> {
    let text = std::fs::read_to_string(path).map_err(|source| ModelIoError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    from_versioned_str(path, &text, kind)
}
