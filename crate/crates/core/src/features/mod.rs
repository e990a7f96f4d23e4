//! Flat feature vectors for the pairwise classifiers.
//!
//! Group order is fixed: audio embedding, language one-hot (vocabulary plus
//! an unknown slot), ASR embedding, confidence statistics (seven values plus
//! a missing indicator), QE score, QE embedding, signal properties.

mod signal;
mod wav;

use std::ops::Range;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use signal::{signal_properties, SignalError, FRAME_SECONDS, SILENCE_RMS};
pub use wav::{read_wav, read_wav_bytes, WavError};

use crate::datamodel::{DatasetSchema, SegmentRecord, CONFIDENCE_STATS_LEN, SIGNAL_PROPS_LEN};

#[derive(Debug, Error, PartialEq)]
pub enum FeatureError {
    #[error("segment '{segment}': enabled feature group '{group}' is missing")]
    MissingGroup { segment: String, group: FeatureGroup },
    #[error("segment '{segment}': group '{group}' has {found} values, schema expects {expected}")]
    Dimension {
        segment: String,
        group: FeatureGroup,
        expected: usize,
        found: usize,
    },
    #[error("confidence summary needs at least one token log-probability")]
    NoTokens,
    #[error("token log-probability {0} is not a finite value <= 0")]
    BadLogProb(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureGroup {
    AudioEmbedding,
    Language,
    AsrEmbedding,
    Confidence,
    QeScore,
    QeEmbedding,
    SignalProps,
}

impl FeatureGroup {
    pub const ORDER: [FeatureGroup; 7] = [
        FeatureGroup::AudioEmbedding,
        FeatureGroup::Language,
        FeatureGroup::AsrEmbedding,
        FeatureGroup::Confidence,
        FeatureGroup::QeScore,
        FeatureGroup::QeEmbedding,
        FeatureGroup::SignalProps,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FeatureGroup::AudioEmbedding => "audio_embedding",
            FeatureGroup::Language => "language",
            FeatureGroup::AsrEmbedding => "asr_embedding",
            FeatureGroup::Confidence => "confidence",
            FeatureGroup::QeScore => "qe_score",
            FeatureGroup::QeEmbedding => "qe_embedding",
            FeatureGroup::SignalProps => "signal_props",
        }
    }

    /// Coarse family used by ablation reports: audio, asr, qe, signal, language.
    pub fn family(self) -> FeatureFamily {
        match self {
            FeatureGroup::AudioEmbedding => FeatureFamily::Audio,
            FeatureGroup::AsrEmbedding | FeatureGroup::Confidence => FeatureFamily::Asr,
            FeatureGroup::QeScore | FeatureGroup::QeEmbedding => FeatureFamily::Qe,
            FeatureGroup::SignalProps => FeatureFamily::Signal,
            FeatureGroup::Language => FeatureFamily::Language,
        }
    }
}

impl std::fmt::Display for FeatureGroup {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureFamily {
    Audio,
    Asr,
    Qe,
    Signal,
    Language,
}

impl FeatureFamily {
    pub fn label(self) -> &'static str {
        match self {
            FeatureFamily::Audio => "Audio",
            FeatureFamily::Asr => "ASR",
            FeatureFamily::Qe => "QE",
            FeatureFamily::Signal => "Signal",
            FeatureFamily::Language => "Language",
        }
    }
}

/// Which groups to feed the classifiers. Language is always on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct GroupToggles {
    pub audio: bool,
    pub asr: bool,
    pub qe: bool,
    pub signal: bool,
}

impl Default for GroupToggles {
    fn default() -> Self {
        Self {
            audio: true,
            asr: true,
            qe: true,
            signal: true,
        }
    }
}

impl GroupToggles {
    pub fn enables(&self, group: FeatureGroup) -> bool {
        match group.family() {
            FeatureFamily::Audio => self.audio,
            FeatureFamily::Asr => self.asr,
            FeatureFamily::Qe => self.qe,
            FeatureFamily::Signal => self.signal,
            FeatureFamily::Language => true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupSpec {
    pub group: FeatureGroup,
    pub dim: usize,
    pub enabled: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub groups: Vec<GroupSpec>,
    pub languages: Vec<String>,
}

impl FeatureSchema {
    /// Builds a schema over the groups a dataset carries. `languages` is
    /// sorted and deduplicated to form the one-hot vocabulary.
    pub fn new(dataset: &DatasetSchema, mut languages: Vec<String>, toggles: GroupToggles) -> Self {
        languages.sort();
        languages.dedup();
        let mut groups = Vec::new();
        for g in FeatureGroup::ORDER {
            let dim = match g {
                FeatureGroup::AudioEmbedding => dataset.audio_dim,
                FeatureGroup::Language => Some(languages.len() + 1),
                FeatureGroup::AsrEmbedding => dataset.asr_dim,
                FeatureGroup::Confidence => dataset.confidence.then_some(CONFIDENCE_STATS_LEN + 1),
                FeatureGroup::QeScore => dataset.qe_score.then_some(1),
                FeatureGroup::QeEmbedding => dataset.qe_dim,
                FeatureGroup::SignalProps => dataset.signal.then_some(SIGNAL_PROPS_LEN),
            };
            if let Some(dim) = dim {
                groups.push(GroupSpec {
                    group: g,
                    dim,
                    enabled: toggles.enables(g),
                });
            }
        }
        Self { groups, languages }
    }

    /// Schema with languages taken from the records.
    pub fn for_records(
        dataset: &DatasetSchema,
        records: &[SegmentRecord],
        toggles: GroupToggles,
    ) -> Self {
        let languages = records.iter().map(|r| r.language.clone()).collect();
        Self::new(dataset, languages, toggles)
    }

    pub fn with_toggles(&self, toggles: GroupToggles) -> Self {
        let mut s = self.clone();
        for g in &mut s.groups {
            g.enabled = toggles.enables(g.group);
        }
        s
    }

    pub fn total_dim(&self) -> usize {
        self.groups.iter().filter(|g| g.enabled).map(|g| g.dim).sum()
    }

    /// Index ranges of the enabled groups in assembled vectors.
    pub fn group_ranges(&self) -> Vec<(FeatureGroup, Range<usize>)> {
        let mut start = 0;
        self.groups
            .iter()
            .filter(|g| g.enabled)
            .map(|g| {
                let r = start..start + g.dim;
                start += g.dim;
                (g.group, r)
            })
            .collect()
    }

    /// Maps a feature index to its group and offset within the group.
    pub fn locate(&self, index: usize) -> Option<(FeatureGroup, usize)> {
        self.group_ranges()
            .into_iter()
            .find(|(_, r)| r.contains(&index))
            .map(|(g, r)| (g, index - r.start))
    }

    pub fn feature_name(&self, index: usize) -> String {
        const CONF: [&str; 8] = ["mean", "std", "min", "q1", "median", "q3", "max", "missing"];
        const SIG: [&str; 6] = [
            "duration_s",
            "rms_energy",
            "zero_crossing_rate",
            "peak_amplitude",
            "silence_ratio",
            "spectral_centroid_proxy",
        ];
        match self.locate(index) {
            None => format!("f{index}"),
            Some((g, off)) => match g {
                FeatureGroup::Language => match self.languages.get(off) {
                    Some(l) => format!("language={l}"),
                    None => "language=<unk>".into(),
                },
                FeatureGroup::Confidence => format!("confidence.{}", CONF[off]),
                FeatureGroup::SignalProps => format!("signal.{}", SIG[off]),
                FeatureGroup::QeScore => "qe_score".into(),
                _ => format!("{}[{off}]", g.name()),
            },
        }
    }

    /// Stable content hash; distinct for every toggle combination.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("schema serializes");
        let digest = Sha256::digest(&canonical);
        digest[..16].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn assemble(&self, record: &SegmentRecord) -> Result<Vec<f64>, FeatureError> {
        let mut out = Vec::with_capacity(self.total_dim());
        self.assemble_into(record, &mut out)?;
        Ok(out)
    }

    pub fn assemble_into(
        &self,
        record: &SegmentRecord,
        out: &mut Vec<f64>,
    ) -> Result<(), FeatureError> {
        let f = &record.features;
        let missing = |group| FeatureError::MissingGroup {
            segment: record.segment_id.clone(),
            group,
        };
        for spec in self.groups.iter().filter(|g| g.enabled) {
            let start = out.len();
            match spec.group {
                FeatureGroup::AudioEmbedding => {
                    out.extend_from_slice(f.audio_embedding.as_ref().ok_or(missing(spec.group))?)
                }
                FeatureGroup::AsrEmbedding => {
                    out.extend_from_slice(f.asr_embedding.as_ref().ok_or(missing(spec.group))?)
                }
                FeatureGroup::QeEmbedding => {
                    out.extend_from_slice(f.qe_embedding.as_ref().ok_or(missing(spec.group))?)
                }
                FeatureGroup::SignalProps => {
                    out.extend_from_slice(f.signal_props.as_ref().ok_or(missing(spec.group))?)
                }
                FeatureGroup::QeScore => out.push(f.qe_score.ok_or(missing(spec.group))?),
                FeatureGroup::Confidence => {
                    let stats = f.confidence_stats.as_ref().ok_or(missing(spec.group))?;
                    if f.confidence_missing {
                        out.extend(std::iter::repeat_n(0.0, stats.len()));
                    } else {
                        out.extend_from_slice(stats);
                    }
                    out.push(if f.confidence_missing { 1.0 } else { 0.0 });
                }
                FeatureGroup::Language => {
                    let slot = self
                        .languages
                        .iter()
                        .position(|l| *l == record.language)
                        .unwrap_or(self.languages.len());
                    out.extend((0..=self.languages.len()).map(|i| if i == slot { 1.0 } else { 0.0 }));
                }
            }
            let found = out.len() - start;
            if found != spec.dim {
                return Err(FeatureError::Dimension {
                    segment: record.segment_id.clone(),
                    group: spec.group,
                    expected: spec.dim,
                    found,
                });
            }
        }
        Ok(())
    }
}

/// How token scores are summarized.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfidenceMode {
    /// Exponentiate log-probabilities first.
    #[default]
    Probability,
    LogProbability,
}

/// (mean, population std, min, Q1, median, Q3, max) of token scores.
/// Quantiles interpolate linearly between order statistics.
pub fn confidence_summary(
    token_logprobs: &[f64],
    mode: ConfidenceMode,
) -> Result<[f64; CONFIDENCE_STATS_LEN], FeatureError> {
    if token_logprobs.is_empty() {
        return Err(FeatureError::NoTokens);
    }
    if let Some(bad) = token_logprobs.iter().find(|v| !(v.is_finite() && **v <= 0.0)) {
        return Err(FeatureError::BadLogProb(*bad));
    }
    let mut v: Vec<f64> = match mode {
        ConfidenceMode::Probability => token_logprobs.iter().map(|l| l.exp()).collect(),
        ConfidenceMode::LogProbability => token_logprobs.to_vec(),
    };
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let q = |p: f64| {
        let h = (v.len() - 1) as f64 * p;
        let lo = h.floor() as usize;
        let hi = (lo + 1).min(v.len() - 1);
        v[lo] + (h - lo as f64) * (v[hi] - v[lo])
    };
    // Rounding can push the mean a hair outside [min, max] for constant input.
    let mean = mean.clamp(v[0], v[v.len() - 1]);
    Ok([
        mean,
        var.sqrt(),
        v[0],
        q(0.25),
        q(0.5),
        q(0.75),
        v[v.len() - 1],
    ])
}

/// Confidence group values as stored in a [`crate::datamodel::FeatureBundle`]:
/// the summary plus a missing flag; an empty token list gives zeros and `true`.
pub fn confidence_features(
    token_logprobs: &[f64],
    mode: ConfidenceMode,
) -> Result<(Vec<f64>, bool), FeatureError> {
    match confidence_summary(token_logprobs, mode) {
        Ok(s) => Ok((s.to_vec(), false)),
        Err(FeatureError::NoTokens) => Ok((vec![0.0; CONFIDENCE_STATS_LEN], true)),
        Err(e) => Err(e),
    }
}
