//! Baseline policies, routed policies and the table-style reports built from them.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datamodel::{DataError, Dataset, SegmentRecord};
use crate::ensemble::{Decision, EnsembleError, QualityEstimator, RescoreMode, RouterModel, TrainingInfo};
use crate::features::{FeatureFamily, FeatureGroup, FeatureSchema, GroupToggles};
use crate::gbm::{group_importance, mean_importance, GbmError};
use crate::hpo::HpoError;
use crate::metrics::{aggregate_report, segment_errors, top_system, EvaluationReport, MetricsError};
use crate::modelio::ModelIoError;
use crate::training::{train_router, TrainError};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

pub const LABEL_AUTOMODE: &str = "AutoMode-ASR";
pub const LABEL_WEIGHTS: &str = "+ Sample weights";
pub const LABEL_RESCORING: &str = "+ QE rescoring";
pub const LABEL_ORACLE: &str = "Oracle";
pub const LABEL_PIVOT_ONLY: &str = "Pivot only";
pub const LABEL_NON_PIVOT_ONLY: &str = "Non-pivot only";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Ensemble(#[from] EnsembleError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Hpo(#[from] HpoError),
    #[error(transparent)]
    Gbm(#[from] GbmError),
    #[error(transparent)]
    ModelIo(#[from] ModelIoError),
    #[error("{0}")]
    Invalid(String),
}

/// Lowest pooled WER over the dataset; ties go to the cheaper system, then id.
pub fn single_best(ds: &Dataset) -> Result<String, MetricsError> {
    let mut best: Option<(f64, f64, &str)> = None;
    for p in ds.systems.all() {
        let (mut e, mut n) = (0.0, 0usize);
        for r in &ds.records {
            let (ei, ni) = segment_errors(r, &p.id)?;
            e += ei;
            n += ni;
        }
        let w = if n > 0 { e / n as f64 } else { 0.0 };
        let key = (w, p.cost_rate, p.id.as_str());
        if best.is_none_or(|b| key.partial_cmp(&b) == Some(std::cmp::Ordering::Less)) {
            best = Some(key);
        }
    }
    Ok(best.map(|b| b.2.to_string()).unwrap_or_default())
}

/// Decides every record in parallel; output order follows `records`.
pub fn route_records(
    router: &RouterModel,
    records: &[SegmentRecord],
    threshold: f64,
) -> Result<Vec<Decision>, EnsembleError> {
    records
        .par_iter()
        .map(|r| router.decide_record(r, threshold))
        .collect()
}

/// Hypothesis texts of a record by system id.
pub fn transcriptions(record: &SegmentRecord) -> BTreeMap<String, String> {
    record
        .outcomes
        .iter()
        .filter_map(|(id, o)| o.hypothesis.clone().map(|h| (id.clone(), h)))
        .collect()
}

pub fn rescore_all(
    router: &RouterModel,
    decisions: &[Decision],
    ds: &Dataset,
    qe: &dyn QualityEstimator,
    mode: RescoreMode,
) -> Result<Vec<Decision>, EnsembleError> {
    decisions
        .par_iter()
        .map(|d| {
            let record = ds.get(&d.segment_id).ok_or_else(|| {
                EnsembleError::Invalid(format!("segment '{}' not in dataset", d.segment_id))
            })?;
            router.rescore(d, &transcriptions(record), qe, mode)
        })
        .collect()
}

/// Fixed QE cost charged for every rescored segment.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Overhead {
    pub cost_per_segment: f64,
    pub runtime_per_segment: f64,
}

/// A labeled list of (segment id, chosen system) pairs plus extra charges.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    pub label: String,
    pub choices: Vec<(String, String)>,
    pub extra_cost: f64,
    pub extra_runtime: f64,
}

impl Policy {
    pub fn fixed(label: impl Into<String>, ds: &Dataset, system: &str) -> Self {
        Self {
            label: label.into(),
            choices: ds
                .records
                .iter()
                .map(|r| (r.segment_id.clone(), system.to_string()))
                .collect(),
            extra_cost: 0.0,
            extra_runtime: 0.0,
        }
    }

    pub fn oracle(ds: &Dataset) -> Result<Self, MetricsError> {
        Ok(Self {
            label: LABEL_ORACLE.into(),
            choices: ds
                .records
                .iter()
                .map(|r| Ok((r.segment_id.clone(), top_system(r, &ds.systems)?)))
                .collect::<Result<_, MetricsError>>()?,
            extra_cost: 0.0,
            extra_runtime: 0.0,
        })
    }

    pub fn from_decisions(label: impl Into<String>, decisions: &[Decision], overhead: Overhead) -> Self {
        let rescored = decisions.iter().filter(|d| d.rescored).count() as f64;
        Self {
            label: label.into(),
            choices: decisions
                .iter()
                .map(|d| (d.segment_id.clone(), d.chosen_id.clone()))
                .collect(),
            extra_cost: rescored * overhead.cost_per_segment,
            extra_runtime: rescored * overhead.runtime_per_segment,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub label: String,
    /// Percent values.
    pub wer: f64,
    pub f1: f64,
    pub cost: f64,
    pub runtime: f64,
    pub report: EvaluationReport,
}

/// Multi-class comparison of selection strategies, baselined on the single-best system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationTable {
    pub schema_version: u32,
    pub single_best: String,
    pub pivot: String,
    pub n_segments: usize,
    pub rows: Vec<TableRow>,
}

fn row(ds: &Dataset, p: &Policy, baseline: &str) -> Result<TableRow, MetricsError> {
    let report = aggregate_report(&p.choices, ds, baseline, p.extra_cost, p.extra_runtime)?;
    Ok(TableRow {
        label: p.label.clone(),
        wer: 100.0 * report.corpus_wer,
        f1: 100.0 * report.weighted_f1,
        cost: report.cost_pct,
        runtime: report.runtime_pct,
        report,
    })
}

/// Rows: single-best, pivot only, each non-pivot system alone, the routed
/// policies in the given order, then the oracle.
pub fn evaluation_table(ds: &Dataset, routed: &[Policy]) -> Result<EvaluationTable, MetricsError> {
    let best = single_best(ds)?;
    let pivot = ds.systems.pivot().id.clone();
    let mut policies = vec![
        Policy::fixed(format!("Single-best ({best})"), ds, &best),
        Policy::fixed(LABEL_PIVOT_ONLY, ds, &pivot),
    ];
    for c in ds.systems.challengers() {
        policies.push(Policy::fixed(format!("{} only", c.id), ds, &c.id));
    }
    policies.extend(routed.iter().cloned());
    policies.push(Policy::oracle(ds)?);
    let rows = policies
        .iter()
        .map(|p| row(ds, p, &best))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(EvaluationTable {
        schema_version: REPORT_SCHEMA_VERSION,
        single_best: best,
        pivot,
        n_segments: ds.len(),
        rows,
    })
}

impl EvaluationTable {
    pub fn row(&self, label: &str) -> Option<&TableRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# schema_version: {}", self.schema_version);
        let _ = writeln!(
            s,
            "# {} segments; baseline (100%) = single-best system {}; pivot {}",
            self.n_segments, self.single_best, self.pivot
        );
        let _ = writeln!(
            s,
            "{:<28} {:>8} {:>8} {:>9} {:>12}",
            "System Selection", "WER [%]", "F1 [%]", "Cost [%]", "Runtime [%]"
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<28} {:>8.2} {:>8.2} {:>9.2} {:>12.2}",
                r.label, r.wer, r.f1, r.cost, r.runtime
            );
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("table serializes") + "\n"
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairCell {
    pub wer: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRow {
    pub label: String,
    /// One cell per challenger, in `PairTable::challengers` order.
    pub cells: Vec<PairCell>,
}

/// Per-pair WER and F1 of each binary classifier used alone against the pivot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairTable {
    pub schema_version: u32,
    pub pivot: String,
    pub challengers: Vec<String>,
    pub n_segments: usize,
    pub rows: Vec<PairRow>,
}

/// One routed row of a pair table.
pub struct PairVariant<'a> {
    pub label: String,
    pub router: &'a RouterModel,
    /// Compare pivot and challenger transcriptions with this estimator when
    /// the classifier fires.
    pub rescore: Option<&'a dyn QualityEstimator>,
}

fn pair_cell(pair_ds: &Dataset, choices: &[(String, String)]) -> Result<PairCell, MetricsError> {
    let pivot = &pair_ds.systems.pivot().id;
    let r = aggregate_report(choices, pair_ds, pivot, 0.0, 0.0)?;
    Ok(PairCell {
        wer: 100.0 * r.corpus_wer,
        f1: 100.0 * r.weighted_f1,
    })
}

pub fn pair_table(
    ds: &Dataset,
    variants: &[PairVariant<'_>],
    threshold: f64,
) -> Result<PairTable, PipelineError> {
    let pivot = ds.systems.pivot().id.clone();
    let challengers: Vec<String> = ds.systems.challengers().map(|c| c.id.clone()).collect();
    let probs: Vec<Vec<BTreeMap<String, f64>>> = variants
        .iter()
        .map(|v| {
            route_records(v.router, &ds.records, threshold)
                .map(|ds| ds.into_iter().map(|d| d.probabilities).collect())
        })
        .collect::<Result<_, _>>()?;
    let mut rows: Vec<PairRow> = [LABEL_NON_PIVOT_ONLY.to_string(), LABEL_PIVOT_ONLY.to_string()]
        .into_iter()
        .chain(variants.iter().map(|v| v.label.clone()))
        .map(|label| PairRow {
            label,
            cells: Vec::new(),
        })
        .collect();
    for c in &challengers {
        let pair_ds = Dataset {
            systems: ds.systems.subset(&[pivot.as_str(), c.as_str()])?,
            schema: ds.schema,
            records: ds.records.clone(),
        };
        let fixed = |id: &str| Policy::fixed("", ds, id).choices;
        rows[0].cells.push(pair_cell(&pair_ds, &fixed(c))?);
        rows[1].cells.push(pair_cell(&pair_ds, &fixed(&pivot))?);
        for (vi, v) in variants.iter().enumerate() {
            let mut choices = Vec::with_capacity(ds.len());
            for (r, p) in ds.records.iter().zip(&probs[vi]) {
                let fired = p.get(c).is_some_and(|&p| p > threshold);
                let mut chosen = if fired { c } else { &pivot };
                if let (true, Some(qe)) = (fired, v.rescore) {
                    let texts = transcriptions(r);
                    let text = |id: &str| {
                        texts.get(id).ok_or_else(|| EnsembleError::MissingTranscription {
                            segment: r.segment_id.clone(),
                            system: id.to_string(),
                        })
                    };
                    let sp = qe.score(&r.segment_id, &pivot, text(&pivot)?).map_err(EnsembleError::from)?;
                    let sc = qe.score(&r.segment_id, c, text(c)?).map_err(EnsembleError::from)?;
                    if sp >= sc {
                        chosen = &pivot;
                    }
                }
                choices.push((r.segment_id.clone(), chosen.clone()));
            }
            rows[2 + vi].cells.push(pair_cell(&pair_ds, &choices)?);
        }
    }
    Ok(PairTable {
        schema_version: REPORT_SCHEMA_VERSION,
        pivot,
        challengers,
        n_segments: ds.len(),
        rows,
    })
}

impl PairTable {
    pub fn row(&self, label: &str) -> Option<&PairRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# schema_version: {}", self.schema_version);
        let _ = writeln!(s, "# {} segments; pivot {}", self.n_segments, self.pivot);
        let _ = write!(s, "{:<20}", "Pivot vs.");
        for c in &self.challengers {
            let _ = write!(s, " {:>17}", c);
        }
        let _ = writeln!(s);
        let _ = write!(s, "{:<20}", "System Selection");
        for _ in &self.challengers {
            let _ = write!(s, " {:>8} {:>8}", "WER [%]", "F1 [%]");
        }
        let _ = writeln!(s);
        for r in &self.rows {
            let _ = write!(s, "{:<20}", r.label);
            for c in &r.cells {
                let _ = write!(s, " {:>8.2} {:>8.2}", c.wer, c.f1);
            }
            let _ = writeln!(s);
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationCombo {
    pub label: String,
    pub toggles: GroupToggles,
}

/// The four feature-group combinations; signal properties follow `signal`.
pub fn standard_combos(signal: bool) -> Vec<AblationCombo> {
    let combo = |label: &str, audio, asr, qe| AblationCombo {
        label: label.into(),
        toggles: GroupToggles {
            audio,
            asr,
            qe,
            signal,
        },
    };
    vec![
        combo("Audio + ASR", true, true, false),
        combo("Audio + QE", true, false, true),
        combo("ASR + QE", false, true, true),
        combo("Audio + ASR + QE (all)", true, true, true),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    pub toggles: GroupToggles,
    pub schema_hash: String,
    pub wer: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub schema_version: u32,
    pub n_segments: usize,
    pub rows: Vec<AblationRow>,
}

/// Trains and evaluates one router per combination. When `rescore` is given,
/// a final row applies QE rescoring to the last combination.
pub fn ablation_table(
    train: &Dataset,
    test: &Dataset,
    combos: &[AblationCombo],
    info: &TrainingInfo,
    threshold: f64,
    rescore: Option<(&dyn QualityEstimator, RescoreMode)>,
) -> Result<(AblationTable, Vec<RouterModel>), PipelineError> {
    let mut rows = Vec::new();
    let mut routers = Vec::new();
    for combo in combos {
        let schema = FeatureSchema::for_records(&train.schema, &train.records, combo.toggles);
        let router = train_router(train, &schema, info)?;
        let decisions = route_records(&router, &test.records, threshold)?;
        let r = aggregate_report(
            &Policy::from_decisions("", &decisions, Overhead::default()).choices,
            test,
            &test.systems.pivot().id,
            0.0,
            0.0,
        )?;
        rows.push(AblationRow {
            label: combo.label.clone(),
            toggles: combo.toggles,
            schema_hash: router.schema_hash.clone(),
            wer: 100.0 * r.corpus_wer,
            f1: 100.0 * r.weighted_f1,
        });
        if let (Some((qe, mode)), true) = (rescore, std::ptr::eq(combo, combos.last().unwrap())) {
            let rescored = rescore_all(&router, &decisions, test, qe, mode)?;
            let r = aggregate_report(
                &Policy::from_decisions("", &rescored, Overhead::default()).choices,
                test,
                &test.systems.pivot().id,
                0.0,
                0.0,
            )?;
            rows.push(AblationRow {
                label: LABEL_RESCORING.into(),
                toggles: combo.toggles,
                schema_hash: router.schema_hash.clone(),
                wer: 100.0 * r.corpus_wer,
                f1: 100.0 * r.weighted_f1,
            });
        }
        routers.push(router);
    }
    Ok((
        AblationTable {
            schema_version: REPORT_SCHEMA_VERSION,
            n_segments: test.len(),
            rows,
        },
        routers,
    ))
}

impl AblationTable {
    pub fn row(&self, label: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# schema_version: {}", self.schema_version);
        let _ = writeln!(s, "# {} segments; language feature always on", self.n_segments);
        let _ = writeln!(s, "{:<28} {:>8} {:>8}", "Feature Groups", "WER [%]", "F1 [%]");
        for r in &self.rows {
            let _ = writeln!(s, "{:<28} {:>8.2} {:>8.2}", r.label, r.wer, r.f1);
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureImportance {
    pub name: String,
    pub group: FeatureGroup,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceReport {
    pub schema_version: u32,
    /// Sorted descending; ties by feature index.
    pub features: Vec<FeatureImportance>,
    pub groups: Vec<(FeatureGroup, f64)>,
    pub families: Vec<(FeatureFamily, f64)>,
}

/// Mean normalized gain importance over the router's classifiers.
pub fn importance_report(router: &RouterModel) -> Result<ImportanceReport, GbmError> {
    let imp = mean_importance(router.classifiers.iter().map(|c| &c.booster))?;
    let schema = &router.feature_schema;
    let ranges = schema.group_ranges();
    let mut features: Vec<(usize, FeatureImportance)> = imp
        .iter()
        .enumerate()
        .map(|(i, &value)| {
            let group = schema.locate(i).map(|(g, _)| g).unwrap_or(FeatureGroup::Language);
            (
                i,
                FeatureImportance {
                    name: schema.feature_name(i),
                    group,
                    value,
                },
            )
        })
        .collect();
    features.sort_by(|a, b| b.1.value.total_cmp(&a.1.value).then(a.0.cmp(&b.0)));
    let groups = sorted(group_importance(&imp, &ranges));
    let fam_ranges: Vec<_> = ranges.iter().map(|(g, r)| (g.family(), r.clone())).collect();
    let families = sorted(group_importance(&imp, &fam_ranges));
    Ok(ImportanceReport {
        schema_version: REPORT_SCHEMA_VERSION,
        features: features.into_iter().map(|(_, f)| f).collect(),
        groups,
        families,
    })
}

fn sorted<K: Ord>(m: BTreeMap<K, f64>) -> Vec<(K, f64)> {
    let mut v: Vec<_> = m.into_iter().collect();
    v.sort_by(|a, b| b.1.total_cmp(&a.1));
    v
}

const BAR_WIDTH: f64 = 50.0;

fn bar(value: f64) -> String {
    "#".repeat((value * BAR_WIDTH).round().max(0.0) as usize)
}

impl ImportanceReport {
    /// Text bar chart: groups first, then the top `top_features` features.
    pub fn render(&self, top_features: usize) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# schema_version: {}", self.schema_version);
        let _ = writeln!(s, "# mean normalized gain importance; bars: 50 chars = 1.0");
        let _ = writeln!(s, "[groups]");
        for (g, v) in &self.groups {
            let _ = writeln!(s, "{:<24} {:>7.4} {}", g.name(), v, bar(*v));
        }
        let _ = writeln!(s, "[features]");
        for f in self.features.iter().take(top_features) {
            let _ = writeln!(s, "{:<24} {:>7.4} {}", f.name, f.value, bar(f.value));
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("# schema_version: 1\nfeature,group,importance\n");
        for f in &self.features {
            let _ = writeln!(s, "{},{},{}", f.name, f.group.name(), f.value);
        }
        s
    }
}
