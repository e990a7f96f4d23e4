//! One-vs-pivot labels and sample weights.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datamodel::{SegmentRecord, SystemProfile};

/// Floor applied to the normalized WER-difference factor.
pub const DEFAULT_WEIGHT_FLOOR: f64 = 0.01;

#[derive(Debug, Error, PartialEq)]
pub enum LabelError {
    #[error("segment '{segment}' has no outcome for system '{system}'")]
    MissingOutcome { segment: String, system: String },
    #[error("no records to label")]
    Empty,
}

/// Labels for one challenger-vs-pivot pair. `labels[i]` is true when the
/// challenger wins on record `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairLabeling {
    pub challenger_id: String,
    pub pivot_id: String,
    pub segment_ids: Vec<String>,
    pub labels: Vec<bool>,
    /// |WER(challenger) - WER(pivot)| per record.
    pub wer_diffs: Vec<f64>,
    pub positives: usize,
    pub negatives: usize,
}

/// How sample weights are formed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Weighting {
    /// Every sample weighs 1.
    Uniform,
    /// Range-normalized |ΔWER| (floored at `floor`) times inverse label frequency.
    WerDiffInverseFreq { floor: f64 },
}

impl Default for Weighting {
    fn default() -> Self {
        Weighting::WerDiffInverseFreq {
            floor: DEFAULT_WEIGHT_FLOOR,
        }
    }
}

impl Weighting {
    pub fn is_weighted(&self) -> bool {
        !matches!(self, Weighting::Uniform)
    }
}

/// Challenger wins iff its WER is lower, or WERs tie and it is strictly cheaper.
pub fn challenger_wins(
    challenger_wer: f64,
    pivot_wer: f64,
    challenger: &SystemProfile,
    pivot: &SystemProfile,
) -> bool {
    challenger_wer < pivot_wer
        || (challenger_wer == pivot_wer && challenger.cost_rate < pivot.cost_rate)
}

pub fn make_pair_labels(
    records: &[SegmentRecord],
    challenger: &SystemProfile,
    pivot: &SystemProfile,
) -> Result<PairLabeling, LabelError> {
    let mut out = PairLabeling {
        challenger_id: challenger.id.clone(),
        pivot_id: pivot.id.clone(),
        segment_ids: Vec::with_capacity(records.len()),
        labels: Vec::with_capacity(records.len()),
        wer_diffs: Vec::with_capacity(records.len()),
        positives: 0,
        negatives: 0,
    };
    for r in records {
        let wer_of = |p: &SystemProfile| {
            r.outcome(&p.id)
                .map(|o| o.wer)
                .ok_or_else(|| LabelError::MissingOutcome {
                    segment: r.segment_id.clone(),
                    system: p.id.clone(),
                })
        };
        let (wc, wp) = (wer_of(challenger)?, wer_of(pivot)?);
        let label = challenger_wins(wc, wp, challenger, pivot);
        if label {
            out.positives += 1;
        } else {
            out.negatives += 1;
        }
        out.segment_ids.push(r.segment_id.clone());
        out.labels.push(label);
        out.wer_diffs.push((wc - wp).abs());
    }
    Ok(out)
}

/// Spreads at or below this count as all-equal differences; float rounding
/// of equal WER gaps otherwise yields a tiny range and huge weights.
const RANGE_EPS: f64 = 1e-12;

/// The two weight factors per record: (normalized WER difference, inverse label frequency).
pub fn weight_factors(labeling: &PairLabeling, floor: f64) -> Result<Vec<(f64, f64)>, LabelError> {
    let n = labeling.labels.len();
    if n == 0 {
        return Err(LabelError::Empty);
    }
    let (lo, hi) = labeling
        .wer_diffs
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &d| (lo.min(d), hi.max(d)));
    let range = hi - lo;
    Ok(labeling
        .wer_diffs
        .iter()
        .zip(&labeling.labels)
        .map(|(&d, &label)| {
            let diff = if range > RANGE_EPS { (d / range).max(floor) } else { 1.0 };
            let count = if label {
                labeling.positives
            } else {
                labeling.negatives
            };
            (diff, n as f64 / (2.0 * count as f64))
        })
        .collect())
}

pub fn sample_weights(labeling: &PairLabeling, weighting: Weighting) -> Result<Vec<f64>, LabelError> {
    match weighting {
        Weighting::Uniform => {
            if labeling.labels.is_empty() {
                Err(LabelError::Empty)
            } else {
                Ok(vec![1.0; labeling.labels.len()])
            }
        }
        Weighting::WerDiffInverseFreq { floor } => Ok(weight_factors(labeling, floor)?
            .into_iter()
            .map(|(a, b)| a * b)
            .collect()),
    }
}

/// Writes `segment_id,wer_diff,label,weight` rows for auditing.
pub fn export_labeling<W: Write>(
    labeling: &PairLabeling,
    weights: &[f64],
    mut out: W,
) -> std::io::Result<()> {
    writeln!(out, "# schema_version: 1")?;
    writeln!(
        out,
        "# pair: {} vs {}",
        labeling.challenger_id, labeling.pivot_id
    )?;
    writeln!(out, "segment_id,wer_diff,label,weight")?;
    for i in 0..labeling.labels.len() {
        writeln!(
            out,
            "{},{},{},{}",
            labeling.segment_ids[i],
            labeling.wer_diffs[i],
            u8::from(labeling.labels[i]),
            weights[i]
        )?;
    }
    Ok(())
}
