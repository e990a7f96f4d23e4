//! Gradient-boosted regression trees for binary logistic loss.
//!
//! Each round fits one depth-limited tree to the per-sample gradients
//! `g = w (p - y)` and hessians `h = w p (1 - p)` with exact greedy split
//! search; leaves hold the Newton step `-G / (H + lambda)` clamped to
//! `±LEAF_CLAMP` and are shrunk by the learning rate at prediction time.

mod train;

use std::collections::BTreeMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use train::{train_binary, train_binary_traced, weighted_logloss};

/// Leaf values are clamped to this many logits.
pub const LEAF_CLAMP: f64 = 15.0;
/// Total margin is clamped so probabilities stay strictly inside (0, 1).
pub const MARGIN_CLAMP: f64 = 30.0;

#[derive(Debug, Error, PartialEq)]
pub enum GbmError {
    #[error("training data contains only one label among positively weighted samples")]
    SingleClass,
    #[error("all sample weights are zero")]
    ZeroWeights,
    #[error("non-finite feature value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("invalid sample weight {weight} at row {row}")]
    BadWeight { row: usize, weight: f64 },
    #[error("bad training shape: {0}")]
    Shape(String),
    #[error("invalid hyperparameters: {0}")]
    Hyperparams(String),
    #[error("feature vector has {found} values, model expects {expected}")]
    Dimension { expected: usize, found: usize },
    #[error("model has no trees or no splits")]
    Untrained,
    #[error("malformed tree {tree}: {message}")]
    Malformed { tree: usize, message: String },
}

/// Dense row-major feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, GbmError> {
        if data.len() != rows * cols {
            return Err(GbmError::Shape(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, GbmError> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(GbmError::Shape("ragged rows".into()));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    /// Copies the given rows into a new matrix.
    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub n_rounds: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub min_child_hessian: f64,
    /// L2 penalty on leaf weights (lambda).
    pub l2_leaf: f64,
    pub feature_subsample: f64,
    pub row_subsample: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            n_rounds: 100,
            max_depth: 4,
            learning_rate: 0.1,
            min_child_hessian: 1.0,
            l2_leaf: 1.0,
            feature_subsample: 1.0,
            row_subsample: 1.0,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<(), GbmError> {
        let bad = |m: &str| Err(GbmError::Hyperparams(m.to_string()));
        if self.n_rounds < 1 {
            return bad("n_rounds must be >= 1");
        }
        if self.max_depth < 1 {
            return bad("max_depth must be >= 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return bad("learning_rate must be in (0, 1]");
        }
        if !(self.min_child_hessian.is_finite() && self.min_child_hessian >= 0.0) {
            return bad("min_child_hessian must be >= 0");
        }
        if !(self.l2_leaf.is_finite() && self.l2_leaf >= 0.0) {
            return bad("l2_leaf must be >= 0");
        }
        for (name, v) in [
            ("feature_subsample", self.feature_subsample),
            ("row_subsample", self.row_subsample),
        ] {
            if !(v > 0.0 && v <= 1.0) {
                return bad(&format!("{name} must be in (0, 1]"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Node {
    /// `x[feature] <= threshold` goes left; NaN follows `default_left`.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
        default_left: bool,
        gain: f64,
        cover: f64,
    },
    Leaf { weight: f64, cover: f64 },
}

/// Nodes in creation order; the root is node 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn leaf(weight: f64) -> Self {
        Self {
            nodes: vec![Node::Leaf { weight, cover: 0.0 }],
        }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { weight, .. } => return *weight,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    default_left,
                    ..
                } => {
                    let v = x[*feature];
                    let go_left = if v.is_nan() { *default_left } else { v <= *threshold };
                    i = if go_left { *left } else { *right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(t: &Tree, i: usize) -> usize {
            match &t.nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(t, *left).max(walk(t, *right)),
            }
        }
        walk(self, 0)
    }

    fn check(&self, n_features: usize) -> Result<(), String> {
        if self.nodes.is_empty() {
            return Err("no nodes".into());
        }
        let mut parents = vec![0usize; self.nodes.len()];
        for (i, n) in self.nodes.iter().enumerate() {
            match n {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => {
                    if *feature >= n_features {
                        return Err(format!("node {i}: feature {feature} out of range"));
                    }
                    if !threshold.is_finite() {
                        return Err(format!("node {i}: non-finite threshold"));
                    }
                    for c in [*left, *right] {
                        if c <= i || c >= self.nodes.len() {
                            return Err(format!("node {i}: bad child index {c}"));
                        }
                        parents[c] += 1;
                    }
                }
                Node::Leaf { weight, .. } => {
                    if !weight.is_finite() {
                        return Err(format!("node {i}: non-finite leaf"));
                    }
                }
            }
        }
        if parents[0] != 0 || parents[1..].iter().any(|&p| p != 1) {
            return Err("nodes do not form a tree".into());
        }
        Ok(())
    }
}

/// A trained additive tree ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Booster {
    pub n_features: usize,
    pub base_logit: f64,
    pub learning_rate: f64,
    pub hyperparams: Hyperparams,
    pub trees: Vec<Tree>,
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

impl Booster {
    /// A model with no trees predicting `sigmoid(base_logit)` everywhere.
    pub fn constant(n_features: usize, base_logit: f64, hyperparams: Hyperparams) -> Self {
        Self {
            n_features,
            base_logit: base_logit.clamp(-LEAF_CLAMP, LEAF_CLAMP),
            learning_rate: hyperparams.learning_rate,
            hyperparams,
            trees: Vec::new(),
        }
    }

    pub fn predict_margin(&self, x: &[f64]) -> Result<f64, GbmError> {
        if x.len() != self.n_features {
            return Err(GbmError::Dimension {
                expected: self.n_features,
                found: x.len(),
            });
        }
        let sum: f64 = self.trees.iter().map(|t| t.predict(x)).sum();
        Ok((self.base_logit + self.learning_rate * sum).clamp(-MARGIN_CLAMP, MARGIN_CLAMP))
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<f64, GbmError> {
        self.predict_margin(x).map(sigmoid)
    }

    pub fn predict_batch(&self, x: &Matrix) -> Result<Vec<f64>, GbmError> {
        (0..x.rows()).map(|i| self.predict_proba(x.row(i))).collect()
    }

    /// Total split gain per feature, normalized to sum to one.
    pub fn feature_importance(&self) -> Result<Vec<f64>, GbmError> {
        let mut gain = vec![0.0; self.n_features];
        for t in &self.trees {
            for n in &t.nodes {
                if let Node::Split { feature, gain: g, .. } = n {
                    gain[*feature] += g;
                }
            }
        }
        let total: f64 = gain.iter().sum();
        if !(total > 0.0) {
            return Err(GbmError::Untrained);
        }
        Ok(gain.into_iter().map(|g| g / total).collect())
    }

    pub fn validate(&self) -> Result<(), GbmError> {
        self.hyperparams.validate()?;
        for (i, t) in self.trees.iter().enumerate() {
            t.check(self.n_features)
                .map_err(|message| GbmError::Malformed { tree: i, message })?;
            if t.depth() > self.hyperparams.max_depth {
                return Err(GbmError::Malformed {
                    tree: i,
                    message: "deeper than max_depth".into(),
                });
            }
        }
        if !self.base_logit.is_finite() {
            return Err(GbmError::Malformed {
                tree: 0,
                message: "non-finite base_logit".into(),
            });
        }
        Ok(())
    }
}

/// Booster comparing one challenger system against the pivot; the positive
/// class means the challenger wins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinaryClassifier {
    pub challenger_id: String,
    pub pivot_id: String,
    pub schema_hash: String,
    pub booster: Booster,
}

impl BinaryClassifier {
    /// Probability that the challenger beats the pivot.
    pub fn predict_proba(&self, x: &[f64]) -> Result<f64, GbmError> {
        self.booster.predict_proba(x)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), crate::modelio::ModelIoError> {
        crate::modelio::write_versioned(path, crate::modelio::KIND_CLASSIFIER, self)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, crate::modelio::ModelIoError> {
        let m: Self = crate::modelio::read_versioned(path, crate::modelio::KIND_CLASSIFIER)?;
        m.booster.validate()?;
        Ok(m)
    }
}

/// Averages normalized importances over several boosters; boosters without
/// any split are skipped.
pub fn mean_importance<'a>(
    boosters: impl IntoIterator<Item = &'a Booster>,
) -> Result<Vec<f64>, GbmError> {
    let mut acc: Option<Vec<f64>> = None;
    let mut n = 0usize;
    for b in boosters {
        let Ok(imp) = b.feature_importance() else {
            continue;
        };
        match &mut acc {
            None => acc = Some(imp),
            Some(a) => {
                if a.len() != imp.len() {
                    return Err(GbmError::Dimension {
                        expected: a.len(),
                        found: imp.len(),
                    });
                }
                a.iter_mut().zip(&imp).for_each(|(x, y)| *x += y);
            }
        }
        n += 1;
    }
    let acc = acc.ok_or(GbmError::Untrained)?;
    Ok(acc.into_iter().map(|x| x / n as f64).collect())
}

/// Sums a per-feature importance vector over named index ranges.
pub fn group_importance<K: Ord + Clone>(
    importance: &[f64],
    groups: &[(K, Range<usize>)],
) -> BTreeMap<K, f64> {
    let mut out = BTreeMap::new();
    for (k, r) in groups {
        *out.entry(k.clone()).or_insert(0.0) += importance[r.clone()].iter().sum::<f64>();
    }
    out
}
