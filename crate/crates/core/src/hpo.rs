//! Budgeted hyperparameter search scored by k-fold cross-validated WER
//! reduction over the best single system.

use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datamodel::{Dataset, SegmentRecord};
use crate::ensemble::{select, TrainingInfo, DEFAULT_THRESHOLD};
use crate::features::FeatureSchema;
use crate::gbm::{Hyperparams, Matrix};
use crate::labeling::{make_pair_labels, Weighting};
use crate::metrics::{segment_errors, MetricsError};
use crate::training::{assemble_matrix, train_pair, train_router_on, TrainError};

#[derive(Debug, Error)]
pub enum HpoError {
    #[error("k must be >= 2, got {0}")]
    BadK(usize),
    #[error("fold too small to stratify: {detail}")]
    FoldTooSmall { detail: String },
    #[error("invalid search space: {0}")]
    Space(String),
    #[error("budget must be > 0")]
    Budget,
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("cannot write trial log: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    Linear,
    Log,
    Integer,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamRange {
    pub low: f64,
    pub high: f64,
    pub scale: Scale,
}

impl ParamRange {
    pub const fn new(low: f64, high: f64, scale: Scale) -> Self {
        Self { low, high, scale }
    }

    fn check(&self, name: &str) -> Result<(), HpoError> {
        if !(self.low.is_finite() && self.high.is_finite() && self.low <= self.high) {
            return Err(HpoError::Space(format!("{name}: need finite low <= high")));
        }
        if self.scale == Scale::Log && self.low <= 0.0 {
            return Err(HpoError::Space(format!("{name}: log scale needs low > 0")));
        }
        Ok(())
    }

    /// Maps a value to [0, 1].
    fn to_unit(&self, v: f64) -> f64 {
        if self.high == self.low {
            return 0.0;
        }
        let v = v.clamp(self.low, self.high);
        match self.scale {
            Scale::Log => (v / self.low).ln() / (self.high / self.low).ln(),
            _ => (v - self.low) / (self.high - self.low),
        }
    }

    fn from_unit(&self, u: f64) -> f64 {
        let u = u.clamp(0.0, 1.0);
        match self.scale {
            Scale::Log => self.low * (self.high / self.low).powf(u),
            Scale::Linear => self.low + u * (self.high - self.low),
            Scale::Integer => (self.low + u * (self.high - self.low)).round(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub n_rounds: ParamRange,
    pub max_depth: ParamRange,
    pub learning_rate: ParamRange,
    pub l2_leaf: ParamRange,
    pub min_child_hessian: ParamRange,
    pub feature_subsample: ParamRange,
    pub row_subsample: ParamRange,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            n_rounds: ParamRange::new(10.0, 200.0, Scale::Integer),
            max_depth: ParamRange::new(1.0, 8.0, Scale::Integer),
            learning_rate: ParamRange::new(0.02, 0.5, Scale::Log),
            l2_leaf: ParamRange::new(0.01, 10.0, Scale::Log),
            min_child_hessian: ParamRange::new(0.01, 10.0, Scale::Log),
            feature_subsample: ParamRange::new(0.3, 1.0, Scale::Linear),
            row_subsample: ParamRange::new(0.5, 1.0, Scale::Linear),
        }
    }
}

const DIMS: usize = 7;
/// Dimensions whose increase makes training more expensive.
const COST_DIMS: [usize; 2] = [0, 1];

impl SearchSpace {
    fn ranges(&self) -> [(&'static str, ParamRange); DIMS] {
        [
            ("n_rounds", self.n_rounds),
            ("max_depth", self.max_depth),
            ("learning_rate", self.learning_rate),
            ("l2_leaf", self.l2_leaf),
            ("min_child_hessian", self.min_child_hessian),
            ("feature_subsample", self.feature_subsample),
            ("row_subsample", self.row_subsample),
        ]
    }

    pub fn validate(&self) -> Result<(), HpoError> {
        for (name, r) in self.ranges() {
            r.check(name)?;
        }
        if self.n_rounds.low < 1.0 || self.max_depth.low < 1.0 {
            return Err(HpoError::Space("n_rounds and max_depth must be >= 1".into()));
        }
        let subsample_ok = |r: ParamRange| r.low > 0.0 && r.high <= 1.0;
        if !subsample_ok(self.feature_subsample) || !subsample_ok(self.row_subsample) {
            return Err(HpoError::Space("subsample ratios must lie in (0, 1]".into()));
        }
        if self.learning_rate.low <= 0.0 || self.learning_rate.high > 1.0 {
            return Err(HpoError::Space("learning_rate must lie in (0, 1]".into()));
        }
        Ok(())
    }

    fn decode(&self, u: &[f64; DIMS]) -> Hyperparams {
        let r = self.ranges();
        let v = |i: usize| r[i].1.from_unit(u[i]);
        Hyperparams {
            n_rounds: v(0) as usize,
            max_depth: v(1) as usize,
            learning_rate: v(2),
            l2_leaf: v(3),
            min_child_hessian: v(4),
            feature_subsample: v(5),
            row_subsample: v(6),
        }
    }

    fn encode(&self, hp: &Hyperparams) -> [f64; DIMS] {
        let vals = [
            hp.n_rounds as f64,
            hp.max_depth as f64,
            hp.learning_rate,
            hp.l2_leaf,
            hp.min_child_hessian,
            hp.feature_subsample,
            hp.row_subsample,
        ];
        let r = self.ranges();
        std::array::from_fn(|i| r[i].1.to_unit(vals[i]))
    }

    /// Library defaults clamped into the space.
    pub fn defaults(&self) -> Hyperparams {
        self.decode(&self.encode(&Hyperparams::default()))
    }

    /// Defaults with the cost dimensions at their lower bounds.
    pub fn cheapest(&self) -> Hyperparams {
        let mut u = self.encode(&Hyperparams::default());
        for d in COST_DIMS {
            u[d] = 0.0;
        }
        self.decode(&u)
    }
}

/// Whether the objective scores the full ensemble or averages per-pair gains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    #[default]
    Ensemble,
    PerPair,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvConfig {
    pub k: usize,
    pub weighting: Weighting,
    pub objective: Objective,
    pub seed: u64,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self {
            k: 5,
            weighting: Weighting::default(),
            objective: Objective::Ensemble,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    /// Mean of `fold_scores`, in WER percentage points.
    pub objective: f64,
    pub fold_scores: Vec<f64>,
}

/// Fold index per record, stratified on the labels of the most imbalanced
/// challenger-vs-pivot pair that has both labels. When every pair is
/// single-class the folds are a plain seeded shuffle.
pub fn stratified_folds(ds: &Dataset, k: usize, seed: u64) -> Result<Vec<usize>, HpoError> {
    if k < 2 {
        return Err(HpoError::BadK(k));
    }
    let pivot = ds.systems.pivot();
    let mut chosen: Option<(usize, Vec<bool>, String)> = None;
    for c in ds.systems.challengers() {
        let l = make_pair_labels(&ds.records, c, pivot).map_err(TrainError::from)?;
        let minority = l.positives.min(l.negatives);
        if minority > 0 && chosen.as_ref().is_none_or(|(m, _, _)| minority < *m) {
            chosen = Some((minority, l.labels, c.id.clone()));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let Some((minority, labels, id)) = chosen else {
        if ds.records.len() < k {
            return Err(HpoError::FoldTooSmall {
                detail: format!("{} records for k = {k}", ds.records.len()),
            });
        }
        let mut idx: Vec<usize> = (0..ds.records.len()).collect();
        idx.shuffle(&mut rng);
        let mut folds = vec![0; idx.len()];
        for (j, i) in idx.into_iter().enumerate() {
            folds[i] = j % k;
        }
        return Ok(folds);
    };
    if minority < k {
        return Err(HpoError::FoldTooSmall {
            detail: format!("pair {id} vs {} has {minority} minority samples for k = {k}", pivot.id),
        });
    }
    let mut folds = vec![0; labels.len()];
    let mut offset = 0;
    for class in [true, false] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        idx.shuffle(&mut rng);
        let len = idx.len();
        for (j, i) in idx.into_iter().enumerate() {
            folds[i] = (offset + j) % k;
        }
        offset += len;
    }
    Ok(folds)
}

fn pooled_wer(records: &[&SegmentRecord], chosen: &[&str]) -> Result<f64, MetricsError> {
    let (mut e, mut n) = (0.0, 0usize);
    for (r, c) in records.iter().zip(chosen) {
        let (ei, ni) = segment_errors(r, c)?;
        e += ei;
        n += ni;
    }
    Ok(if n > 0 { e / n as f64 } else { 0.0 })
}

/// Lowest pooled WER among fixed single-system policies over `ids`.
fn best_single(records: &[&SegmentRecord], ids: &[&str]) -> Result<f64, MetricsError> {
    let mut best = f64::INFINITY;
    for id in ids {
        best = best.min(pooled_wer(records, &vec![*id; records.len()])?);
    }
    Ok(best)
}

fn fold_score(
    ds: &Dataset,
    x: &Matrix,
    folds: &[usize],
    fold: usize,
    schema: &FeatureSchema,
    info: &TrainingInfo,
    objective: Objective,
) -> Result<f64, HpoError> {
    let train_idx: Vec<usize> = (0..folds.len()).filter(|&i| folds[i] != fold).collect();
    let test_idx: Vec<usize> = (0..folds.len()).filter(|&i| folds[i] == fold).collect();
    let train = ds.with_records(train_idx.iter().map(|&i| ds.records[i].clone()).collect());
    let xt = x.select_rows(&train_idx);
    let held: Vec<&SegmentRecord> = test_idx.iter().map(|&i| &ds.records[i]).collect();
    let pivot = ds.systems.pivot();
    match objective {
        Objective::Ensemble => {
            let router = train_router_on(&train, &xt, schema, info)?;
            let mut chosen = Vec::with_capacity(held.len());
            for &i in &test_idx {
                let probs = router.probabilities(x.row(i)).map_err(TrainError::from)?;
                chosen.push(select(&probs, &ds.systems, DEFAULT_THRESHOLD));
            }
            let chosen: Vec<&str> = chosen.iter().map(String::as_str).collect();
            let ids = ds.systems.ids();
            let ids: Vec<&str> = ids.iter().map(String::as_str).collect();
            Ok(100.0 * (best_single(&held, &ids)? - pooled_wer(&held, &chosen)?))
        }
        Objective::PerPair => {
            let hash = schema.hash();
            let mut total = 0.0;
            let challengers: Vec<_> = ds.systems.challengers().collect();
            for c in &challengers {
                let clf = train_pair(&train.records, &xt, c, pivot, &hash, info)?;
                let mut chosen = Vec::with_capacity(held.len());
                for &i in &test_idx {
                    let p = clf
                        .predict_proba(x.row(i))
                        .map_err(|source| TrainError::Gbm {
                            challenger: c.id.clone(),
                            pivot: pivot.id.clone(),
                            source,
                        })?;
                    chosen.push(if p > DEFAULT_THRESHOLD { c.id.as_str() } else { pivot.id.as_str() });
                }
                let pair = [pivot.id.as_str(), c.id.as_str()];
                total += 100.0 * (best_single(&held, &pair)? - pooled_wer(&held, &chosen)?);
            }
            Ok(total / challengers.len().max(1) as f64)
        }
    }
}

/// Cross-validated WER reduction (percentage points) of routed selections
/// over the best single system on each held-out fold.
pub fn cross_validate(
    train: &Dataset,
    hp: &Hyperparams,
    schema: &FeatureSchema,
    cv: &CvConfig,
) -> Result<CvResult, HpoError> {
    let x = assemble_matrix(&train.records, schema).map_err(TrainError::from)?;
    let folds = stratified_folds(train, cv.k, cv.seed)?;
    cross_validate_on(train, &x, &folds, hp, schema, cv)
}

fn cross_validate_on(
    train: &Dataset,
    x: &Matrix,
    folds: &[usize],
    hp: &Hyperparams,
    schema: &FeatureSchema,
    cv: &CvConfig,
) -> Result<CvResult, HpoError> {
    hp.validate()
        .map_err(|source| TrainError::Gbm {
            challenger: String::new(),
            pivot: train.systems.pivot().id.clone(),
            source,
        })?;
    let info = TrainingInfo {
        hyperparams: *hp,
        weighting: cv.weighting,
        seed: cv.seed,
    };
    let fold_scores = (0..cv.k)
        .into_par_iter()
        .map(|f| fold_score(train, x, folds, f, schema, &info, cv.objective))
        .collect::<Result<Vec<_>, _>>()?;
    let objective = fold_scores.iter().sum::<f64>() / fold_scores.len() as f64;
    Ok(CvResult {
        objective,
        fold_scores,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", content = "value", rename_all = "snake_case")]
pub enum Budget {
    /// Reproducible: exactly this many trials.
    Trials(usize),
    /// Stop starting trials once this many seconds have elapsed.
    WallClock(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Move {
    Start,
    Neighbor,
    Escalate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub index: usize,
    pub hyperparams: Hyperparams,
    pub objective: f64,
    pub fold_scores: Vec<f64>,
    pub wall_seconds: f64,
    #[serde(rename = "move")]
    pub kind: Move,
    pub accepted: bool,
    /// Objective of the incumbent after this trial.
    pub incumbent_objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub best: Hyperparams,
    pub best_objective: Option<f64>,
    pub trials: Vec<Trial>,
    pub warning: Option<String>,
}

/// Non-improving neighbor proposals tolerated before a cost dimension grows.
const PATIENCE: usize = 3;
const STEP: f64 = 0.2;

/// Cost-ascending local search. Starts at the cheapest configuration,
/// perturbs the cheap dimensions with seeded Gaussian steps, and only grows
/// `n_rounds` or `max_depth` after `PATIENCE` proposals fail to improve.
pub fn search(
    train: &Dataset,
    space: &SearchSpace,
    schema: &FeatureSchema,
    cv: &CvConfig,
    budget: Budget,
) -> Result<SearchResult, HpoError> {
    space.validate()?;
    match budget {
        Budget::Trials(0) => {
            return Ok(SearchResult {
                best: space.defaults(),
                best_objective: None,
                trials: Vec::new(),
                warning: Some("budget allows no trials; using defaults".into()),
            })
        }
        Budget::WallClock(s) if !(s > 0.0) => return Err(HpoError::Budget),
        _ => {}
    }
    let x = assemble_matrix(&train.records, schema).map_err(TrainError::from)?;
    let folds = stratified_folds(train, cv.k, cv.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cv.seed ^ 0x5eed_0f_5ea4c4);
    let start = Instant::now();

    let mut incumbent = space.encode(&space.cheapest());
    let mut best_obj = f64::NEG_INFINITY;
    let mut trials: Vec<Trial> = Vec::new();
    let mut stall = 0usize;
    let mut proposal = incumbent;
    let mut kind = Move::Start;
    loop {
        let more = match budget {
            Budget::Trials(n) => trials.len() < n,
            Budget::WallClock(s) => start.elapsed().as_secs_f64() < s,
        };
        if !more {
            break;
        }
        let hp = space.decode(&proposal);
        let t0 = Instant::now();
        let res = cross_validate_on(train, &x, &folds, &hp, schema, cv)?;
        let accepted = res.objective > best_obj;
        if accepted {
            best_obj = res.objective;
            incumbent = proposal;
            stall = 0;
        } else {
            stall += 1;
        }
        trials.push(Trial {
            index: trials.len(),
            hyperparams: hp,
            objective: res.objective,
            fold_scores: res.fold_scores,
            wall_seconds: t0.elapsed().as_secs_f64(),
            kind,
            accepted,
            incumbent_objective: best_obj,
        });

        let cost_room: Vec<usize> = COST_DIMS
            .into_iter()
            .filter(|&d| incumbent[d] < 1.0)
            .collect();
        if stall >= PATIENCE && !cost_room.is_empty() {
            kind = Move::Escalate;
            stall = 0;
            proposal = incumbent;
            let d = cost_room[rng.gen_range(0..cost_room.len())];
            let (_, r) = space.ranges()[d];
            // At least one integer step up.
            let min_step = if r.scale == Scale::Integer && r.high > r.low {
                1.0 / (r.high - r.low)
            } else {
                0.0
            };
            proposal[d] = (incumbent[d] + STEP.max(min_step)).min(1.0);
        } else {
            kind = Move::Neighbor;
            proposal = incumbent;
            for (d, p) in proposal.iter_mut().enumerate() {
                // Cost dimensions only move on escalation.
                if !COST_DIMS.contains(&d) {
                    let z: f64 = rng.sample(StandardNormal);
                    *p = (*p + STEP * z).clamp(0.0, 1.0);
                }
            }
        }
    }

    let first_secs = trials.first().map(|t| t.wall_seconds);
    if let (Budget::WallClock(s), Some(first)) = (budget, first_secs) {
        if first > s {
            return Ok(SearchResult {
                best: space.defaults(),
                best_objective: None,
                trials,
                warning: Some(format!(
                    "first trial took {first:.1}s, over the {s}s budget; using defaults"
                )),
            });
        }
    }
    Ok(SearchResult {
        best: space.decode(&incumbent),
        best_objective: Some(best_obj),
        trials,
        warning: None,
    })
}

/// Writes the trial log as line-delimited JSON with a versioned header.
pub fn write_trial_log<W: Write>(result: &SearchResult, mut out: W) -> Result<(), HpoError> {
    let header = serde_json::json!({
        "schema_version": 1,
        "kind": "trial_log",
        "warning": result.warning,
    });
    writeln!(out, "{header}")?;
    for t in &result.trials {
        writeln!(out, "{}", serde_json::to_string(t).expect("trial serializes"))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_mapping_round_trips() {
        let r = ParamRange::new(0.01, 10.0, Scale::Log);
        for v in [0.01, 0.1, 1.0, 10.0] {
            assert!((r.from_unit(r.to_unit(v)) - v).abs() < 1e-12);
        }
        let i = ParamRange::new(1.0, 8.0, Scale::Integer);
        assert_eq!(i.from_unit(0.5), 5.0);
        assert_eq!(i.from_unit(0.0), 1.0);
    }

    #[test]
    fn cheapest_sits_at_lower_cost_bounds() {
        let s = SearchSpace::default();
        let c = s.cheapest();
        assert_eq!((c.n_rounds, c.max_depth), (10, 1));
        assert!((c.learning_rate - 0.1).abs() < 1e-12);
        let d = s.defaults();
        assert_eq!((d.n_rounds, d.max_depth), (100, 4));
    }

    #[test]
    fn bad_space_rejected() {
        let mut s = SearchSpace::default();
        s.learning_rate = ParamRange::new(0.5, 0.1, Scale::Log);
        assert!(s.validate().is_err());
        s.learning_rate = ParamRange::new(0.0, 0.1, Scale::Log);
        assert!(s.validate().is_err());
    }
}
