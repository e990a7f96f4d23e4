use std::collections::HashMap;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use crate::datamodel::Dataset;
use crate::metrics::{normalize_text, reference_tokens, wer};

#[derive(Debug, Error)]
pub enum QeError {
    #[error("no QE score for segment '{segment}', system '{system}'")]
    Missing { segment: String, system: String },
    #[error("cannot read QE scores from {path}: {message}")]
    Source { path: PathBuf, message: String },
}

/// Reference-free transcription quality score; higher is better.
pub trait QualityEstimator: Sync {
    fn score(&self, segment_id: &str, system_id: &str, text: &str) -> Result<f64, QeError>;
}

/// Same score for everything.
#[derive(Debug, Clone, Copy)]
pub struct ConstantQe(pub f64);

impl QualityEstimator for ConstantQe {
    fn score(&self, _: &str, _: &str, _: &str) -> Result<f64, QeError> {
        Ok(self.0)
    }
}

/// Precomputed scores keyed by (segment id, system id), read from
/// line-delimited JSON objects `{"segment_id":..,"system_id":..,"score":..}`.
/// Lines carrying `schema_version` are skipped.
#[derive(Debug, Clone, Default)]
pub struct FileQe {
    scores: HashMap<(String, String), f64>,
}

#[derive(Deserialize)]
struct ScoreLine {
    segment_id: String,
    system_id: String,
    score: f64,
}

impl FileQe {
    pub fn load(path: &Path) -> Result<Self, QeError> {
        let err = |message: String| QeError::Source {
            path: path.to_path_buf(),
            message,
        };
        let file = std::fs::File::open(path).map_err(|e| err(e.to_string()))?;
        let mut scores = HashMap::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| err(e.to_string()))?;
            if line.trim().is_empty() || line.contains("\"schema_version\"") {
                continue;
            }
            let s: ScoreLine =
                serde_json::from_str(&line).map_err(|e| err(format!("line {}: {e}", i + 1)))?;
            scores.insert((s.segment_id, s.system_id), s.score);
        }
        Ok(Self { scores })
    }

    pub fn insert(&mut self, segment_id: &str, system_id: &str, score: f64) {
        self.scores
            .insert((segment_id.to_string(), system_id.to_string()), score);
    }
}

impl QualityEstimator for FileQe {
    fn score(&self, segment_id: &str, system_id: &str, _: &str) -> Result<f64, QeError> {
        self.scores
            .get(&(segment_id.to_string(), system_id.to_string()))
            .copied()
            .ok_or_else(|| QeError::Missing {
                segment: segment_id.to_string(),
                system: system_id.to_string(),
            })
    }
}

/// Test-only estimator: the negative true WER of the transcription against
/// the segment's reference.
#[derive(Debug, Clone)]
pub struct OracleQe {
    references: HashMap<String, Vec<String>>,
}

impl OracleQe {
    pub fn from_dataset(ds: &Dataset) -> Self {
        Self {
            references: ds
                .records
                .iter()
                .filter_map(|r| reference_tokens(r).map(|t| (r.segment_id.clone(), t)))
                .collect(),
        }
    }
}

impl QualityEstimator for OracleQe {
    fn score(&self, segment_id: &str, system_id: &str, text: &str) -> Result<f64, QeError> {
        let reference = self.references.get(segment_id).ok_or_else(|| QeError::Missing {
            segment: segment_id.to_string(),
            system: system_id.to_string(),
        })?;
        let w = wer(reference, &normalize_text(text)).map_err(|_| QeError::Missing {
            segment: segment_id.to_string(),
            system: system_id.to_string(),
        })?;
        Ok(-w)
    }
}
