//! Routing: merge the one-vs-pivot classifiers into one system choice per
//! segment, with optional quality-estimation rescoring.

mod qe;

use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use qe::{ConstantQe, FileQe, OracleQe, QeError, QualityEstimator};

use crate::datamodel::{DataError, SegmentRecord, SystemProfile, SystemSet};
use crate::features::{FeatureError, FeatureSchema};
use crate::gbm::{BinaryClassifier, GbmError, Hyperparams};
use crate::labeling::Weighting;
use crate::modelio::{self, ModelIoError};

/// A challenger is selected only when its probability exceeds this.
pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error)]
pub enum EnsembleError {
    #[error("feature schema mismatch: router expects {expected}, got {found}")]
    SchemaMismatch { expected: String, found: String },
    #[error("classifier pivot '{found}' does not match router pivot '{expected}'")]
    PivotMismatch { expected: String, found: String },
    #[error("system '{0}' already has a classifier")]
    DuplicateChallenger(String),
    #[error("invalid router: {0}")]
    Invalid(String),
    #[error("segment '{segment}': missing transcription for system '{system}'")]
    MissingTranscription { segment: String, system: String },
    #[error(transparent)]
    Features(#[from] FeatureError),
    #[error(transparent)]
    Gbm(#[from] GbmError),
    #[error(transparent)]
    Qe(#[from] QeError),
    #[error(transparent)]
    Systems(#[from] DataError),
}

/// How the training run that produced a router was configured.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingInfo {
    pub hyperparams: Hyperparams,
    pub weighting: Weighting,
    pub seed: u64,
}

/// The deployable artifact: pivot, one classifier per challenger, and the
/// feature schema every input must match.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouterModel {
    pub pivot_id: String,
    pub systems: SystemSet,
    pub feature_schema: FeatureSchema,
    pub schema_hash: String,
    pub training: TrainingInfo,
    pub classifiers: Vec<BinaryClassifier>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RescoreDetail {
    pub pre_rescore_id: String,
    pub compared: Vec<String>,
    pub scores: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub segment_id: String,
    pub chosen_id: String,
    /// Probability that each challenger beats the pivot.
    pub probabilities: BTreeMap<String, f64>,
    pub threshold: f64,
    pub rescored: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rescoring: Option<RescoreDetail>,
}

impl Decision {
    /// Challengers whose probability exceeds the decision threshold.
    pub fn fired(&self) -> Vec<&str> {
        self.probabilities
            .iter()
            .filter(|(_, p)| **p > self.threshold)
            .map(|(s, _)| s.as_str())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RescoreMode {
    #[default]
    Off,
    /// Compare the pivot against the selected system.
    PivotVsSelected,
    /// Compare the pivot against every challenger whose classifier fired.
    AllFired,
}

/// Picks the winner from challenger probabilities: the pivot unless some
/// probability exceeds `threshold`, otherwise the highest probability with
/// ties going to the lower cost rate and then the smaller id.
pub fn select(
    probabilities: &BTreeMap<String, f64>,
    systems: &SystemSet,
    threshold: f64,
) -> String {
    let mut best: Option<(&str, f64, f64)> = None;
    for (id, &p) in probabilities {
        if !(p > threshold) {
            continue;
        }
        let cost = systems.get(id).map_or(f64::INFINITY, |s| s.cost_rate);
        let better = match best {
            None => true,
            Some((bid, bp, bc)) => p > bp || (p == bp && (cost < bc || (cost == bc && id.as_str() < bid))),
        };
        if better {
            best = Some((id, p, cost));
        }
    }
    best.map_or_else(|| systems.pivot().id.clone(), |(id, _, _)| id.to_string())
}

impl RouterModel {
    pub fn new(
        systems: SystemSet,
        feature_schema: FeatureSchema,
        training: TrainingInfo,
        classifiers: Vec<BinaryClassifier>,
    ) -> Result<Self, EnsembleError> {
        let router = Self {
            pivot_id: systems.pivot().id.clone(),
            schema_hash: feature_schema.hash(),
            systems,
            feature_schema,
            training,
            classifiers,
        };
        router.validate()?;
        Ok(router)
    }

    pub fn validate(&self) -> Result<(), EnsembleError> {
        if self.systems.pivot().id != self.pivot_id {
            return Err(EnsembleError::Invalid("pivot id disagrees with system profiles".into()));
        }
        let hash = self.feature_schema.hash();
        if hash != self.schema_hash {
            return Err(EnsembleError::SchemaMismatch {
                expected: self.schema_hash.clone(),
                found: hash,
            });
        }
        if self.classifiers.len() + 1 != self.systems.len() {
            return Err(EnsembleError::Invalid(format!(
                "{} classifiers for {} systems",
                self.classifiers.len(),
                self.systems.len()
            )));
        }
        let mut seen = HashSet::new();
        for c in &self.classifiers {
            if c.pivot_id != self.pivot_id {
                return Err(EnsembleError::PivotMismatch {
                    expected: self.pivot_id.clone(),
                    found: c.pivot_id.clone(),
                });
            }
            if c.schema_hash != self.schema_hash {
                return Err(EnsembleError::SchemaMismatch {
                    expected: self.schema_hash.clone(),
                    found: c.schema_hash.clone(),
                });
            }
            match self.systems.get(&c.challenger_id) {
                Some(p) if !p.is_pivot => {}
                _ => {
                    return Err(EnsembleError::Invalid(format!(
                        "classifier for unknown challenger '{}'",
                        c.challenger_id
                    )))
                }
            }
            if !seen.insert(c.challenger_id.as_str()) {
                return Err(EnsembleError::DuplicateChallenger(c.challenger_id.clone()));
            }
            if c.booster.trees.is_empty() {
                return Err(EnsembleError::Invalid(format!(
                    "classifier '{}' has no trees",
                    c.challenger_id
                )));
            }
            if c.booster.n_features != self.feature_schema.total_dim() {
                return Err(EnsembleError::Invalid(format!(
                    "classifier '{}' expects {} features, schema has {}",
                    c.challenger_id,
                    c.booster.n_features,
                    self.feature_schema.total_dim()
                )));
            }
        }
        Ok(())
    }

    pub fn probabilities(&self, features: &[f64]) -> Result<BTreeMap<String, f64>, EnsembleError> {
        self.classifiers
            .iter()
            .map(|c| Ok((c.challenger_id.clone(), c.predict_proba(features)?)))
            .collect()
    }

    pub fn decide(&self, segment_id: &str, features: &[f64]) -> Result<Decision, EnsembleError> {
        self.decide_with_threshold(segment_id, features, DEFAULT_THRESHOLD)
    }

    pub fn decide_with_threshold(
        &self,
        segment_id: &str,
        features: &[f64],
        threshold: f64,
    ) -> Result<Decision, EnsembleError> {
        let probabilities = self.probabilities(features)?;
        Ok(Decision {
            segment_id: segment_id.to_string(),
            chosen_id: select(&probabilities, &self.systems, threshold),
            probabilities,
            threshold,
            rescored: false,
            rescoring: None,
        })
    }

    /// Assembles the record's features with the router schema and decides.
    pub fn decide_record(
        &self,
        record: &SegmentRecord,
        threshold: f64,
    ) -> Result<Decision, EnsembleError> {
        let x = self.feature_schema.assemble(record)?;
        self.decide_with_threshold(&record.segment_id, &x, threshold)
    }

    /// Second pass: when a challenger was selected, compare QE scores of the
    /// candidate transcriptions and keep the best, falling back to the pivot
    /// on ties.
    pub fn rescore(
        &self,
        decision: &Decision,
        transcriptions: &BTreeMap<String, String>,
        qe: &dyn QualityEstimator,
        mode: RescoreMode,
    ) -> Result<Decision, EnsembleError> {
        if mode == RescoreMode::Off || decision.chosen_id == self.pivot_id {
            return Ok(decision.clone());
        }
        let mut compared = vec![self.pivot_id.clone()];
        match mode {
            RescoreMode::PivotVsSelected => compared.push(decision.chosen_id.clone()),
            RescoreMode::AllFired => compared.extend(decision.fired().into_iter().map(String::from)),
            RescoreMode::Off => unreachable!(),
        }
        let mut scores = BTreeMap::new();
        for id in &compared {
            let text = transcriptions
                .get(id)
                .ok_or_else(|| EnsembleError::MissingTranscription {
                    segment: decision.segment_id.clone(),
                    system: id.clone(),
                })?;
            scores.insert(id.clone(), qe.score(&decision.segment_id, id, text)?);
        }
        // Highest score; ties keep the earlier entry, and the pivot comes
        // first, then challengers by cost.
        let mut order = compared.clone();
        order[1..].sort_by(|a, b| {
            let ca = self.systems.get(a).map_or(f64::INFINITY, |s| s.cost_rate);
            let cb = self.systems.get(b).map_or(f64::INFINITY, |s| s.cost_rate);
            ca.total_cmp(&cb).then_with(|| a.cmp(b))
        });
        let mut winner = &order[0];
        for id in &order[1..] {
            if scores[id] > scores[winner] {
                winner = id;
            }
        }
        Ok(Decision {
            chosen_id: winner.clone(),
            rescored: true,
            rescoring: Some(RescoreDetail {
                pre_rescore_id: decision.chosen_id.clone(),
                compared,
                scores,
            }),
            ..decision.clone()
        })
    }

    /// Returns a router with one more challenger. Existing classifiers are
    /// carried over unchanged.
    pub fn add_system(
        &self,
        profile: SystemProfile,
        classifier: BinaryClassifier,
    ) -> Result<RouterModel, EnsembleError> {
        if classifier.pivot_id != self.pivot_id {
            return Err(EnsembleError::PivotMismatch {
                expected: self.pivot_id.clone(),
                found: classifier.pivot_id,
            });
        }
        if classifier.schema_hash != self.schema_hash {
            return Err(EnsembleError::SchemaMismatch {
                expected: self.schema_hash.clone(),
                found: classifier.schema_hash,
            });
        }
        if classifier.challenger_id != profile.id {
            return Err(EnsembleError::Invalid(format!(
                "classifier is for '{}', profile is '{}'",
                classifier.challenger_id, profile.id
            )));
        }
        if self.systems.contains(&profile.id) {
            return Err(EnsembleError::DuplicateChallenger(profile.id));
        }
        let mut next = self.clone();
        next.systems = self.systems.with_challenger(profile)?;
        next.classifiers.push(classifier);
        next.validate()?;
        Ok(next)
    }

    /// Router without the given challenger.
    pub fn without_system(&self, challenger: &str) -> Result<RouterModel, EnsembleError> {
        let keep: Vec<&str> = self
            .systems
            .all()
            .iter()
            .map(|s| s.id.as_str())
            .filter(|id| *id != challenger)
            .collect();
        let mut next = self.clone();
        next.systems = self.systems.subset(&keep)?;
        next.classifiers.retain(|c| c.challenger_id != challenger);
        next.validate()?;
        Ok(next)
    }

    pub fn to_file_string(&self) -> String {
        modelio::to_versioned_string(modelio::KIND_ROUTER, self)
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelIoError> {
        modelio::write_versioned(path, modelio::KIND_ROUTER, self)
    }

    pub fn load(path: &Path) -> Result<Self, ModelIoError> {
        let text = std::fs::read_to_string(path).map_err(|source| ModelIoError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_file_str(path, &text)
    }

    pub fn from_file_str(path: &Path, text: &str) -> Result<Self, ModelIoError> {
        let router: RouterModel = modelio::from_versioned_str(path, text, modelio::KIND_ROUTER)?;
        for c in &router.classifiers {
            c.booster.validate()?;
        }
        router.validate().map_err(|e| match e {
            EnsembleError::SchemaMismatch { expected, found } => {
                ModelIoError::SchemaHash { expected, found }
            }
            other => ModelIoError::Invalid(other.to_string()),
        })?;
        Ok(router)
    }
}

#[derive(Serialize, Deserialize)]
struct DecisionsHeader {
    schema_version: u64,
    kind: String,
}

/// Writes decisions as line-delimited JSON after a `schema_version` header.
pub fn write_decisions<W: Write>(decisions: &[Decision], mut out: W) -> std::io::Result<()> {
    serde_json::to_writer(
        &mut out,
        &DecisionsHeader {
            schema_version: 1,
            kind: "decisions".into(),
        },
    )?;
    out.write_all(b"\n")?;
    for d in decisions {
        serde_json::to_writer(&mut out, d)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn read_decisions<R: Read>(input: R) -> Result<Vec<Decision>, DataError> {
    let mut out = Vec::new();
    let mut header = false;
    for (i, line) in BufReader::new(input).lines().enumerate() {
        let parse = |m: String| DataError::Parse { line: i + 1, message: m };
        let line = line.map_err(|e| parse(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        if !header {
            let h: DecisionsHeader = serde_json::from_str(&line).map_err(|e| parse(e.to_string()))?;
            if h.schema_version != 1 {
                return Err(DataError::Version {
                    line: i + 1,
                    found: h.schema_version,
                });
            }
            header = true;
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| parse(e.to_string()))?);
    }
    Ok(out)
}
