//! Text normalization, word error rate, weighted F1 and cost/runtime accounting.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_general_category::{get_general_category, GeneralCategory};

use crate::datamodel::{Dataset, SegmentRecord, SystemSet};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("WER is undefined for an empty reference")]
    EmptyReference,
    #[error("length mismatch: {predicted} predictions vs {actual} labels")]
    LengthMismatch { predicted: usize, actual: usize },
    #[error("label '{0}' is not in the class set")]
    UnknownLabel(String),
    #[error("segment '{0}' not found in dataset")]
    UnknownSegment(String),
    #[error("segment '{segment}' has no outcome for system '{system}'")]
    MissingOutcome { segment: String, system: String },
}

fn is_punctuation(c: char) -> bool {
    matches!(
        get_general_category(c),
        GeneralCategory::ConnectorPunctuation
            | GeneralCategory::DashPunctuation
            | GeneralCategory::OpenPunctuation
            | GeneralCategory::ClosePunctuation
            | GeneralCategory::InitialPunctuation
            | GeneralCategory::FinalPunctuation
            | GeneralCategory::OtherPunctuation
    )
}

/// Drops Unicode punctuation (categories P*), lowercases, splits on whitespace.
pub fn normalize_text(raw: &str) -> Vec<String> {
    let cleaned: String = raw
        .chars()
        .filter(|c| !is_punctuation(*c))
        .flat_map(char::to_lowercase)
        .collect();
    cleaned.split_whitespace().map(str::to_owned).collect()
}

/// Unit-cost Levenshtein distance over tokens (substitutions + deletions + insertions).
pub fn edit_distance<S: AsRef<str>, T: AsRef<str>>(reference: &[S], hypothesis: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=hypothesis.len()).collect();
    let mut curr = vec![0usize; hypothesis.len() + 1];
    for (i, r) in reference.iter().enumerate() {
        curr[0] = i + 1;
        for (j, h) in hypothesis.iter().enumerate() {
            let sub = prev[j] + usize::from(r.as_ref() != h.as_ref());
            curr[j + 1] = sub.min(prev[j + 1] + 1).min(curr[j] + 1);
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    prev[hypothesis.len()]
}

pub fn wer<S: AsRef<str>, T: AsRef<str>>(
    reference: &[S],
    hypothesis: &[T],
) -> Result<f64, MetricsError> {
    if reference.is_empty() {
        return Err(MetricsError::EmptyReference);
    }
    Ok(edit_distance(reference, hypothesis) as f64 / reference.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedF1 {
    pub score: f64,
    /// Classes absent from the ground truth whose weight came from the count floor.
    pub floored_classes: Vec<String>,
}

/// One-vs-rest F1 per class, averaged with weights `1 / max(count in actual, 1)`.
///
/// A class that never occurs in either list is excluded. A class that only
/// occurs in the predictions contributes F1 = 0 at the floored weight.
pub fn weighted_f1(
    predicted: &[&str],
    actual: &[&str],
    class_set: &[&str],
) -> Result<WeightedF1, MetricsError> {
    f1_with(predicted, actual, class_set, |support| {
        1.0 / (support.max(1) as f64)
    })
}

/// Support-weighted F1 (weights proportional to ground-truth counts).
pub fn support_weighted_f1(
    predicted: &[&str],
    actual: &[&str],
    class_set: &[&str],
) -> Result<f64, MetricsError> {
    f1_with(predicted, actual, class_set, |support| support as f64).map(|f| f.score)
}

fn f1_with(
    predicted: &[&str],
    actual: &[&str],
    class_set: &[&str],
    weight: impl Fn(usize) -> f64,
) -> Result<WeightedF1, MetricsError> {
    if predicted.len() != actual.len() {
        return Err(MetricsError::LengthMismatch {
            predicted: predicted.len(),
            actual: actual.len(),
        });
    }
    let idx = |label: &str| {
        class_set
            .iter()
            .position(|c| *c == label)
            .ok_or_else(|| MetricsError::UnknownLabel(label.to_string()))
    };
    let k = class_set.len();
    let (mut tp, mut fp, mut fnn) = (vec![0usize; k], vec![0usize; k], vec![0usize; k]);
    for (p, a) in predicted.iter().zip(actual) {
        let (pi, ai) = (idx(p)?, idx(a)?);
        if pi == ai {
            tp[pi] += 1;
        } else {
            fp[pi] += 1;
            fnn[ai] += 1;
        }
    }
    let (mut num, mut den) = (0.0, 0.0);
    let mut floored = Vec::new();
    for c in 0..k {
        let support = tp[c] + fnn[c];
        let predicted_count = tp[c] + fp[c];
        if support == 0 && predicted_count == 0 {
            continue;
        }
        if support == 0 {
            floored.push(class_set[c].to_string());
        }
        let f1 = if tp[c] == 0 {
            0.0
        } else {
            2.0 * tp[c] as f64 / (2 * tp[c] + fp[c] + fnn[c]) as f64
        };
        let w = weight(support);
        num += w * f1;
        den += w;
    }
    let score = if den > 0.0 { num / den } else { 0.0 };
    Ok(WeightedF1 {
        score,
        floored_classes: floored,
    })
}

/// Reference tokens of a record after normalization, if it has a reference.
pub fn reference_tokens(record: &SegmentRecord) -> Option<Vec<String>> {
    record
        .reference
        .as_ref()
        .map(|r| normalize_text(&r.join(" ")))
        .filter(|r| !r.is_empty())
}

/// Word errors and reference length for one system's output on one segment.
///
/// Uses the hypothesis text against the reference when both exist; otherwise
/// falls back to the stored WER times the reference length. Records without
/// a reference count as a single reference word.
pub fn segment_errors(record: &SegmentRecord, system: &str) -> Result<(f64, usize), MetricsError> {
    let outcome = record
        .outcome(system)
        .ok_or_else(|| MetricsError::MissingOutcome {
            segment: record.segment_id.clone(),
            system: system.to_string(),
        })?;
    match reference_tokens(record) {
        Some(reference) => {
            let errors = match &outcome.hypothesis {
                Some(h) => edit_distance(&reference, &normalize_text(h)) as f64,
                None => outcome.wer * reference.len() as f64,
            };
            Ok((errors, reference.len()))
        }
        None => Ok((outcome.wer, 1)),
    }
}

/// Per-segment best system: lowest WER, then lower cost rate, then the pivot, then id.
pub fn top_system(record: &SegmentRecord, systems: &SystemSet) -> Result<String, MetricsError> {
    let mut best: Option<(f64, f64, bool, &str)> = None;
    for p in systems.all() {
        let (errors, n) = segment_errors(record, &p.id)?;
        let key = (errors / n as f64, p.cost_rate, !p.is_pivot, p.id.as_str());
        let better = match &best {
            None => true,
            Some(b) => {
                key.0 < b.0
                    || (key.0 == b.0
                        && (key.1 < b.1
                            || (key.1 == b.1 && (key.2 < b.2 || (key.2 == b.2 && key.3 < b.3)))))
            }
        };
        if better {
            best = Some(key);
        }
    }
    Ok(best.map(|b| b.3.to_string()).unwrap_or_default())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    /// Pooled errors over pooled reference words.
    pub corpus_wer: f64,
    pub mean_segment_wer: f64,
    pub weighted_f1: f64,
    pub support_weighted_f1: f64,
    pub f1_floored_classes: Vec<String>,
    pub cost_pct: f64,
    pub runtime_pct: f64,
    pub total_cost: f64,
    pub total_runtime: f64,
    pub baseline_cost: f64,
    pub baseline_runtime: f64,
    pub n_segments: usize,
    pub per_system_selection_counts: BTreeMap<String, usize>,
}

/// Scores a list of (segment id, chosen system) decisions against `dataset`.
///
/// `extra_cost` and `extra_runtime` are added on top of the chosen systems'
/// totals (e.g. rescoring overhead) before taking percentages of `baseline`.
pub fn aggregate_report(
    decisions: &[(String, String)],
    dataset: &Dataset,
    baseline: &str,
    extra_cost: f64,
    extra_runtime: f64,
) -> Result<EvaluationReport, MetricsError> {
    let index: BTreeMap<&str, &SegmentRecord> = dataset
        .records
        .iter()
        .map(|r| (r.segment_id.as_str(), r))
        .collect();
    let classes: Vec<String> = dataset.systems.ids();
    let class_refs: Vec<&str> = classes.iter().map(String::as_str).collect();
    let mut counts: BTreeMap<String, usize> = classes.iter().map(|c| (c.clone(), 0)).collect();
    let (mut errors, mut words, mut seg_wer_sum) = (0.0, 0usize, 0.0);
    let (mut cost, mut runtime, mut base_cost, mut base_runtime) = (0.0, 0.0, 0.0, 0.0);
    let mut tops = Vec::with_capacity(decisions.len());
    for (seg, chosen) in decisions {
        let record = index
            .get(seg.as_str())
            .ok_or_else(|| MetricsError::UnknownSegment(seg.clone()))?;
        let missing = |system: &str| MetricsError::MissingOutcome {
            segment: seg.clone(),
            system: system.to_string(),
        };
        let out = record.outcome(chosen).ok_or_else(|| missing(chosen))?;
        let base = record.outcome(baseline).ok_or_else(|| missing(baseline))?;
        let (e, n) = segment_errors(record, chosen)?;
        errors += e;
        words += n;
        seg_wer_sum += e / n as f64;
        cost += out.cost;
        runtime += out.runtime;
        base_cost += base.cost;
        base_runtime += base.runtime;
        *counts.entry(chosen.clone()).or_insert(0) += 1;
        tops.push(top_system(record, &dataset.systems)?);
    }
    let predicted: Vec<&str> = decisions.iter().map(|(_, c)| c.as_str()).collect();
    let actual: Vec<&str> = tops.iter().map(String::as_str).collect();
    let f1 = weighted_f1(&predicted, &actual, &class_refs)?;
    let support_f1 = support_weighted_f1(&predicted, &actual, &class_refs)?;
    let pct = |x: f64, base: f64| if base > 0.0 { 100.0 * x / base } else { 0.0 };
    let n = decisions.len();
    Ok(EvaluationReport {
        corpus_wer: if words > 0 { errors / words as f64 } else { 0.0 },
        mean_segment_wer: if n > 0 { seg_wer_sum / n as f64 } else { 0.0 },
        weighted_f1: f1.score,
        support_weighted_f1: support_f1,
        f1_floored_classes: f1.floored_classes,
        cost_pct: pct(cost + extra_cost, base_cost),
        runtime_pct: pct(runtime + extra_runtime, base_runtime),
        total_cost: cost + extra_cost,
        total_runtime: runtime + extra_runtime,
        baseline_cost: base_cost,
        baseline_runtime: base_runtime,
        n_segments: n,
        per_system_selection_counts: counts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::{DatasetSchema, FeatureBundle, SystemOutcome, SystemProfile};
    use proptest::prelude::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_owned).collect()
    }

    #[test]
    fn normalization_examples() {
        assert_eq!(normalize_text("Hello, World!"), ["hello", "world"]);
        assert!(normalize_text("").is_empty());
        assert_eq!(normalize_text("It's  3 PM."), ["its", "3", "pm"]);
        assert_eq!(normalize_text("«Ça va?» — ÉTÉ"), ["ça", "va", "été"]);
    }

    #[test]
    fn wer_examples() {
        assert_eq!(wer(&toks("a b c"), &toks("a b c")).unwrap(), 0.0);
        assert_eq!(wer(&toks("a"), &toks("a b c")).unwrap(), 2.0);
        assert_eq!(wer(&toks("a b c d"), &toks("a x c")).unwrap(), 0.5);
        assert_eq!(
            wer::<String, String>(&[], &toks("a")),
            Err(MetricsError::EmptyReference)
        );
    }

    #[test]
    fn weighted_f1_examples() {
        let f = weighted_f1(&["A", "B", "B", "B"], &["A", "A", "B", "B"], &["A", "B"]).unwrap();
        assert!((f.score - 11.0 / 15.0).abs() < 1e-12);
        let f = weighted_f1(&["A", "B", "C"], &["A", "B", "C"], &["A", "B", "C", "D"]).unwrap();
        assert_eq!(f.score, 1.0);
        assert!(f.floored_classes.is_empty());
        let f = weighted_f1(&["B", "A"], &["A", "B"], &["A", "B"]).unwrap();
        assert_eq!(f.score, 0.0);
        // C only predicted: weight 1 (floor), F1 0.
        let f = weighted_f1(&["A", "C"], &["A", "A"], &["A", "B", "C"]).unwrap();
        assert_eq!(f.floored_classes, vec!["C".to_string()]);
        let f1_a = 2.0 / 3.0;
        assert!((f.score - (0.5 * f1_a) / 1.5).abs() < 1e-12);
        assert!(matches!(
            weighted_f1(&["A"], &["A", "B"], &["A", "B"]),
            Err(MetricsError::LengthMismatch { .. })
        ));
        assert!(matches!(
            weighted_f1(&["Z"], &["A"], &["A"]),
            Err(MetricsError::UnknownLabel(_))
        ));
    }

    #[test]
    fn support_weighted_f1_of_constant_predictor() {
        // Always predicting the majority class: F1_major * share of majority.
        let actual = ["P", "P", "P", "C"];
        let f = support_weighted_f1(&["P"; 4], &actual, &["P", "C"]).unwrap();
        let f1_p = 2.0 * 3.0 / (2.0 * 3.0 + 1.0);
        assert!((f - 0.75 * f1_p).abs() < 1e-12);
    }

    fn tiny_dataset() -> Dataset {
        let systems = SystemSet::new(vec![
            SystemProfile::new("p", 1.0, 1.0, true),
            SystemProfile::new("c", 4.0, 2.0, false),
        ])
        .unwrap();
        let rec = |id: &str, hp: &str, hc: &str| {
            let mut outcomes = BTreeMap::new();
            outcomes.insert(
                "p".into(),
                SystemOutcome {
                    hypothesis: Some(hp.into()),
                    wer: 0.0,
                    cost: 1.0,
                    runtime: 1.0,
                },
            );
            outcomes.insert(
                "c".into(),
                SystemOutcome {
                    hypothesis: Some(hc.into()),
                    wer: 0.0,
                    cost: 4.0,
                    runtime: 2.0,
                },
            );
            SegmentRecord {
                segment_id: id.into(),
                language: "en".into(),
                duration: 1.0,
                features: FeatureBundle::default(),
                outcomes,
                reference: Some(toks("the cat sat down")),
                planted_best: None,
            }
        };
        Dataset {
            systems,
            schema: DatasetSchema::default(),
            records: vec![
                rec("s0", "the cat sat down", "the bat sat down"),
                rec("s1", "a cat sat", "The cat, sat down."),
            ],
        }
    }

    #[test]
    fn report_accounting() {
        let ds = tiny_dataset();
        let all_base: Vec<(String, String)> =
            vec![("s0".into(), "c".into()), ("s1".into(), "c".into())];
        let r = aggregate_report(&all_base, &ds, "c", 0.0, 0.0).unwrap();
        assert_eq!((r.cost_pct, r.runtime_pct), (100.0, 100.0));
        // pooled: (1 + 0) / 8
        assert!((r.corpus_wer - 1.0 / 8.0).abs() < 1e-15);

        let cheap: Vec<(String, String)> =
            vec![("s0".into(), "p".into()), ("s1".into(), "p".into())];
        let r = aggregate_report(&cheap, &ds, "c", 0.0, 0.0).unwrap();
        assert_eq!(r.cost_pct, 25.0);
        assert_eq!(r.runtime_pct, 50.0);
        // s1 pivot: "a cat sat" vs "the cat sat down" → 2 errors.
        assert!((r.corpus_wer - 2.0 / 8.0).abs() < 1e-15);
        assert_eq!(r.per_system_selection_counts["p"], 2);

        let more = aggregate_report(&cheap, &ds, "c", 0.5, 0.0).unwrap();
        assert!(more.cost_pct > r.cost_pct);

        let oracle: Vec<(String, String)> =
            vec![("s0".into(), "p".into()), ("s1".into(), "c".into())];
        let r = aggregate_report(&oracle, &ds, "c", 0.0, 0.0).unwrap();
        assert_eq!(r.weighted_f1, 1.0);
        assert_eq!(r.corpus_wer, 0.0);

        let bad = vec![("s0".to_string(), "ghost".to_string())];
        assert!(matches!(
            aggregate_report(&bad, &ds, "c", 0.0, 0.0),
            Err(MetricsError::MissingOutcome { .. })
        ));
    }

    fn token_seq() -> impl Strategy<Value = Vec<String>> {
        prop::collection::vec(
            prop::sample::select(vec!["a", "b", "c", "d"]).prop_map(String::from),
            0..10,
        )
    }

    proptest! {
        #[test]
        fn wer_identity_and_bound(r in token_seq(), h in token_seq()) {
            prop_assume!(!r.is_empty());
            prop_assert_eq!(wer(&r, &r).unwrap(), 0.0);
            let w = wer(&r, &h).unwrap();
            prop_assert!(w <= (r.len() + h.len()) as f64 / r.len() as f64);
        }

        #[test]
        fn normalization_is_idempotent(s in "\\PC{0,40}") {
            let once = normalize_text(&s);
            prop_assert_eq!(normalize_text(&once.join(" ")), once);
        }

        #[test]
        fn f1_invariant_under_relabeling(
            pairs in prop::collection::vec((0usize..3, 0usize..3), 1..40),
            perm in Just([2usize, 0, 1]),
        ) {
            let names = ["x", "y", "z"];
            let pred: Vec<&str> = pairs.iter().map(|p| names[p.0]).collect();
            let act: Vec<&str> = pairs.iter().map(|p| names[p.1]).collect();
            let pred2: Vec<&str> = pairs.iter().map(|p| names[perm[p.0]]).collect();
            let act2: Vec<&str> = pairs.iter().map(|p| names[perm[p.1]]).collect();
            let a = weighted_f1(&pred, &act, &names).unwrap().score;
            let b = weighted_f1(&pred2, &act2, &names).unwrap().score;
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}
