//! Segment records, system profiles and the line-delimited dataset format.
//!
//! A dataset file starts with a header line carrying `schema_version`
//! (and, when written by this crate, the feature-group dimensions), followed
//! by one JSON object per segment:
//!
//! ```text
//! {"schema_version":1,"kind":"dataset","schema":{"audio_dim":4,...}}
//! {"segment_id":"s0","language":"en","duration":3.1,"features":{...},"outcomes":{"whisper":{...}}}
//! ```
//!
//! Feature-group dimensions come from the header when present, otherwise from
//! the first record, and every later record must match them.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DATASET_SCHEMA_VERSION: u32 = 1;

pub const CONFIDENCE_STATS_LEN: usize = 7;
pub const SIGNAL_PROPS_LEN: usize = 6;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed record: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: unsupported dataset schema_version {found} (expected {DATASET_SCHEMA_VERSION})")]
    Version { line: usize, found: u64 },
    #[error("line {line}: segment '{segment_id}': field '{field}' {detail}")]
    Schema {
        line: usize,
        segment_id: String,
        field: String,
        detail: String,
    },
    #[error("line {line}: duplicate segment_id '{segment_id}'")]
    DuplicateSegment { line: usize, segment_id: String },
    #[error("line {line}: segment '{segment_id}' has an outcome for unknown system '{system}'")]
    UnknownSystem {
        line: usize,
        segment_id: String,
        system: String,
    },
    #[error("invalid system configuration: {0}")]
    Systems(String),
    #[error("invalid split ratios {0:?}: must be positive and sum to 1")]
    Ratios([f64; 3]),
    #[error("invalid generator config: {0}")]
    Generator(String),
}

/// One candidate ASR system and its cost model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemProfile {
    pub id: String,
    /// Currency units per audio-second.
    pub cost_rate: f64,
    /// Wall-seconds per audio-second.
    pub latency_rate: f64,
    #[serde(default)]
    pub is_pivot: bool,
}

impl SystemProfile {
    pub fn new(id: impl Into<String>, cost_rate: f64, latency_rate: f64, is_pivot: bool) -> Self {
        Self {
            id: id.into(),
            cost_rate,
            latency_rate,
            is_pivot,
        }
    }
}

/// Validated list of system profiles with exactly one pivot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<SystemProfile>", into = "Vec<SystemProfile>")]
pub struct SystemSet {
    profiles: Vec<SystemProfile>,
    pivot: usize,
}

impl SystemSet {
    pub fn new(profiles: Vec<SystemProfile>) -> Result<Self, DataError> {
        let pivots: Vec<usize> = profiles
            .iter()
            .enumerate()
            .filter(|(_, p)| p.is_pivot)
            .map(|(i, _)| i)
            .collect();
        if pivots.len() != 1 {
            return Err(DataError::Systems(format!(
                "exactly one pivot required, found {}",
                pivots.len()
            )));
        }
        let mut seen = HashSet::new();
        for p in &profiles {
            if p.id.is_empty() {
                return Err(DataError::Systems("empty system id".into()));
            }
            if !seen.insert(p.id.as_str()) {
                return Err(DataError::Systems(format!("duplicate system id '{}'", p.id)));
            }
            if !(p.cost_rate.is_finite() && p.cost_rate >= 0.0) {
                return Err(DataError::Systems(format!(
                    "system '{}': cost_rate must be finite and >= 0",
                    p.id
                )));
            }
            if !(p.latency_rate.is_finite() && p.latency_rate > 0.0) {
                return Err(DataError::Systems(format!(
                    "system '{}': latency_rate must be finite and > 0",
                    p.id
                )));
            }
        }
        Ok(Self {
            pivot: pivots[0],
            profiles,
        })
    }

    pub fn pivot(&self) -> &SystemProfile {
        &self.profiles[self.pivot]
    }

    pub fn all(&self) -> &[SystemProfile] {
        &self.profiles
    }

    /// Non-pivot systems in declaration order.
    pub fn challengers(&self) -> impl Iterator<Item = &SystemProfile> {
        self.profiles.iter().filter(|p| !p.is_pivot)
    }

    pub fn get(&self, id: &str) -> Option<&SystemProfile> {
        self.profiles.iter().find(|p| p.id == id)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.get(id).is_some()
    }

    pub fn ids(&self) -> Vec<String> {
        self.profiles.iter().map(|p| p.id.clone()).collect()
    }

    pub fn len(&self) -> usize {
        self.profiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.profiles.is_empty()
    }

    /// Returns a new set with `profile` appended as a challenger.
    pub fn with_challenger(&self, mut profile: SystemProfile) -> Result<Self, DataError> {
        profile.is_pivot = false;
        let mut profiles = self.profiles.clone();
        profiles.push(profile);
        Self::new(profiles)
    }

    /// Restricts the set to the given ids (the pivot must be among them).
    pub fn subset(&self, ids: &[&str]) -> Result<Self, DataError> {
        let profiles = self
            .profiles
            .iter()
            .filter(|p| ids.contains(&p.id.as_str()))
            .cloned()
            .collect();
        Self::new(profiles)
    }
}

impl TryFrom<Vec<SystemProfile>> for SystemSet {
    type Error = DataError;
    fn try_from(v: Vec<SystemProfile>) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<SystemSet> for Vec<SystemProfile> {
    fn from(s: SystemSet) -> Self {
        s.profiles
    }
}

/// What one system produced on one segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemOutcome {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hypothesis: Option<String>,
    pub wer: f64,
    pub cost: f64,
    pub runtime: f64,
}

/// Per-segment feature groups. `None` means the group is absent for the whole dataset.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FeatureBundle {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audio_embedding: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub asr_embedding: Option<Vec<f64>>,
    /// mean, std, min, Q1, median, Q3, max of token probabilities.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence_stats: Option<Vec<f64>>,
    /// Set when the upstream ASR emitted no tokens; stats are then all zero.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub confidence_missing: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qe_score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qe_embedding: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub signal_props: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentRecord {
    pub segment_id: String,
    pub language: String,
    pub duration: f64,
    pub features: FeatureBundle,
    #[serde(default)]
    pub outcomes: BTreeMap<String, SystemOutcome>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<Vec<String>>,
    /// True best system under a synthetic generator's planted rule.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub planted_best: Option<String>,
}

impl SegmentRecord {
    pub fn outcome(&self, system: &str) -> Option<&SystemOutcome> {
        self.outcomes.get(system)
    }
}

/// Which feature groups a dataset carries, and their widths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSchema {
    pub audio_dim: Option<usize>,
    pub asr_dim: Option<usize>,
    pub confidence: bool,
    pub qe_score: bool,
    pub qe_dim: Option<usize>,
    pub signal: bool,
}

impl Default for DatasetSchema {
    fn default() -> Self {
        Self {
            audio_dim: Some(1024),
            asr_dim: Some(768),
            confidence: true,
            qe_score: true,
            qe_dim: Some(384),
            signal: true,
        }
    }
}

impl DatasetSchema {
    pub fn of(features: &FeatureBundle) -> Self {
        Self {
            audio_dim: features.audio_embedding.as_ref().map(Vec::len),
            asr_dim: features.asr_embedding.as_ref().map(Vec::len),
            confidence: features.confidence_stats.is_some(),
            qe_score: features.qe_score.is_some(),
            qe_dim: features.qe_embedding.as_ref().map(Vec::len),
            signal: features.signal_props.is_some(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub systems: SystemSet,
    pub schema: DatasetSchema,
    pub records: Vec<SegmentRecord>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    schema_version: u64,
    #[serde(default)]
    kind: Option<String>,
    #[serde(default)]
    schema: Option<DatasetSchema>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, segment_id: &str) -> Option<&SegmentRecord> {
        self.records.iter().find(|r| r.segment_id == segment_id)
    }

    /// New dataset over the same systems and schema holding `records`.
    pub fn with_records(&self, records: Vec<SegmentRecord>) -> Dataset {
        Dataset {
            systems: self.systems.clone(),
            schema: self.schema,
            records,
        }
    }

    /// Parses a dataset stream. `defaults` is the schema used when neither a
    /// header schema nor any record is present.
    pub fn read_from<R: Read>(
        reader: R,
        systems: &SystemSet,
        defaults: DatasetSchema,
    ) -> Result<Dataset, DataError> {
        let reader = BufReader::new(reader);
        let mut schema: Option<DatasetSchema> = None;
        let mut saw_header = false;
        let mut records = Vec::new();
        let mut seen = HashSet::new();
        for (idx, line) in reader.lines().enumerate() {
            let lineno = idx + 1;
            let line = line.map_err(|e| DataError::Parse {
                line: lineno,
                message: e.to_string(),
            })?;
            if line.trim().is_empty() {
                continue;
            }
            if !saw_header {
                let header: Header = serde_json::from_str(&line).map_err(|e| DataError::Parse {
                    line: lineno,
                    message: format!("expected schema_version header: {e}"),
                })?;
                if header.schema_version != u64::from(DATASET_SCHEMA_VERSION) {
                    return Err(DataError::Version {
                        line: lineno,
                        found: header.schema_version,
                    });
                }
                if let Some(kind) = &header.kind {
                    if kind != "dataset" {
                        return Err(DataError::Parse {
                            line: lineno,
                            message: format!("header kind '{kind}' is not a dataset"),
                        });
                    }
                }
                schema = header.schema;
                saw_header = true;
                continue;
            }
            let record: SegmentRecord =
                serde_json::from_str(&line).map_err(|e| DataError::Parse {
                    line: lineno,
                    message: e.to_string(),
                })?;
            let expected = *schema.get_or_insert_with(|| DatasetSchema::of(&record.features));
            validate_record(&record, &expected, systems, lineno)?;
            if !seen.insert(record.segment_id.clone()) {
                return Err(DataError::DuplicateSegment {
                    line: lineno,
                    segment_id: record.segment_id,
                });
            }
            records.push(record);
        }
        Ok(Dataset {
            systems: systems.clone(),
            schema: schema.unwrap_or(defaults),
            records,
        })
    }

    pub fn write_to<W: Write>(&self, mut writer: W) -> std::io::Result<()> {
        let header = Header {
            schema_version: u64::from(DATASET_SCHEMA_VERSION),
            kind: Some("dataset".into()),
            schema: Some(self.schema),
        };
        serde_json::to_writer(&mut writer, &header)?;
        writer.write_all(b"\n")?;
        for r in &self.records {
            serde_json::to_writer(&mut writer, r)?;
            writer.write_all(b"\n")?;
        }
        writer.flush()
    }

    pub fn save(&self, path: &Path) -> Result<(), DataError> {
        let io_err = |source| DataError::Io {
            path: path.to_path_buf(),
            source,
        };
        let file = File::create(path).map_err(io_err)?;
        self.write_to(BufWriter::new(file)).map_err(io_err)
    }
}

/// Loads a dataset file, validating every record against the first.
pub fn load_dataset(path: &Path, systems: &SystemSet) -> Result<Dataset, DataError> {
    let file = File::open(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Dataset::read_from(file, systems, DatasetSchema::default())
}

fn validate_record(
    r: &SegmentRecord,
    schema: &DatasetSchema,
    systems: &SystemSet,
    line: usize,
) -> Result<(), DataError> {
    let fail = |field: &str, detail: String| DataError::Schema {
        line,
        segment_id: r.segment_id.clone(),
        field: field.to_string(),
        detail,
    };
    if r.segment_id.is_empty() {
        return Err(fail("segment_id", "must be non-empty".into()));
    }
    if !(r.duration.is_finite() && r.duration > 0.0) {
        return Err(fail("duration", format!("must be > 0, got {}", r.duration)));
    }
    let f = &r.features;
    check_vec("audio_embedding", f.audio_embedding.as_deref(), schema.audio_dim, &fail)?;
    check_vec("asr_embedding", f.asr_embedding.as_deref(), schema.asr_dim, &fail)?;
    check_vec("qe_embedding", f.qe_embedding.as_deref(), schema.qe_dim, &fail)?;
    check_vec(
        "confidence_stats",
        f.confidence_stats.as_deref(),
        schema.confidence.then_some(CONFIDENCE_STATS_LEN),
        &fail,
    )?;
    check_vec(
        "signal_props",
        f.signal_props.as_deref(),
        schema.signal.then_some(SIGNAL_PROPS_LEN),
        &fail,
    )?;
    match (f.qe_score, schema.qe_score) {
        (Some(v), true) if !v.is_finite() => return Err(fail("qe_score", "must be finite".into())),
        (Some(_), false) => return Err(fail("qe_score", "present but absent in schema".into())),
        (None, true) => return Err(fail("qe_score", "missing but present in schema".into())),
        _ => {}
    }
    for (sys, o) in &r.outcomes {
        if !systems.contains(sys) {
            return Err(DataError::UnknownSystem {
                line,
                segment_id: r.segment_id.clone(),
                system: sys.clone(),
            });
        }
        for (name, v) in [("wer", o.wer), ("cost", o.cost), ("runtime", o.runtime)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(fail(
                    &format!("outcomes.{sys}.{name}"),
                    format!("must be finite and >= 0, got {v}"),
                ));
            }
        }
    }
    Ok(())
}

fn check_vec(
    field: &str,
    v: Option<&[f64]>,
    expected: Option<usize>,
    fail: &dyn Fn(&str, String) -> DataError,
) -> Result<(), DataError> {
    match (v, expected) {
        (None, None) => Ok(()),
        (Some(_), None) => Err(fail(field, "present but absent in schema".into())),
        (None, Some(d)) => Err(fail(field, format!("missing (schema expects {d} dims)"))),
        (Some(v), Some(d)) if v.len() != d => Err(fail(
            field,
            format!("has {} dims, schema expects {d}", v.len()),
        )),
        (Some(v), Some(_)) => {
            if v.iter().all(|x| x.is_finite()) {
                Ok(())
            } else {
                Err(fail(field, "contains a non-finite value".into()))
            }
        }
    }
}

/// Seeded shuffle split into (train, valid, test). Subset sizes are the
/// rounded ratios with the test split taking the remainder; records keep
/// their original relative order within each subset.
pub fn split_dataset(
    ds: &Dataset,
    ratios: [f64; 3],
    seed: u64,
) -> Result<(Dataset, Dataset, Dataset), DataError> {
    let sum: f64 = ratios.iter().sum();
    if ratios.iter().any(|r| !(r.is_finite() && *r > 0.0)) || (sum - 1.0).abs() > 1e-9 {
        return Err(DataError::Ratios(ratios));
    }
    let n = ds.records.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((ratios[0] * n as f64).round() as usize).min(n);
    let n_valid = ((ratios[1] * n as f64).round() as usize).min(n - n_train);
    let take = |idx: &[usize]| {
        let mut idx = idx.to_vec();
        idx.sort_unstable();
        ds.with_records(idx.into_iter().map(|i| ds.records[i].clone()).collect())
    };
    Ok((
        take(&order[..n_train]),
        take(&order[n_train..n_train + n_valid]),
        take(&order[n_train + n_valid..]),
    ))
}
