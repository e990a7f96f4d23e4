use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{Booster, GbmError, Hyperparams, Matrix, Node, Tree, LEAF_CLAMP};

const NO_SLOT: u32 = u32::MAX;
/// A candidate must beat the incumbent by this relative margin, so gains
/// that tie up to rounding go to the earlier feature and threshold.
const TIE_EPS: f64 = 1e-10;

fn beats(gain: f64, incumbent: Option<&Candidate>) -> bool {
    incumbent.is_none_or(|b| gain > b.gain * (1.0 + TIE_EPS))
}

/// Weighted mean binary log-loss of margins `f` against labels `y`.
pub fn weighted_logloss(margins: &[f64], y: &[bool], w: &[f64]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for ((f, y), w) in margins.iter().zip(y).zip(w) {
        // log(1 + exp(-z)) with z signed by the label.
        let z = if *y { *f } else { -*f };
        let l = if z > 0.0 {
            (-z).exp().ln_1p()
        } else {
            -z + z.exp().ln_1p()
        };
        num += w * l;
        den += w;
    }
    num / den
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Trains a booster on `x` with boolean labels and non-negative sample weights.
/// Samples with zero weight are dropped before anything else happens, so they
/// cannot influence split thresholds.
pub fn train_binary(
    x: &Matrix,
    y: &[bool],
    w: &[f64],
    hp: &Hyperparams,
    seed: u64,
) -> Result<Booster, GbmError> {
    train_binary_traced(x, y, w, hp, seed).map(|(b, _)| b)
}

/// As [`train_binary`], also returning the weighted training log-loss before
/// the first round and after every round.
pub fn train_binary_traced(
    x: &Matrix,
    y: &[bool],
    w: &[f64],
    hp: &Hyperparams,
    seed: u64,
) -> Result<(Booster, Vec<f64>), GbmError> {
    hp.validate()?;
    let n = x.rows();
    let d = x.cols();
    if y.len() != n || w.len() != n {
        return Err(GbmError::Shape(format!(
            "{n} rows, {} labels, {} weights",
            y.len(),
            w.len()
        )));
    }
    if n < 2 {
        return Err(GbmError::Shape("need at least two samples".into()));
    }
    if d < 1 {
        return Err(GbmError::Shape("need at least one feature".into()));
    }
    for (row, &weight) in w.iter().enumerate() {
        if !(weight.is_finite() && weight >= 0.0) {
            return Err(GbmError::BadWeight { row, weight });
        }
    }
    for row in 0..n {
        if let Some(col) = x.row(row).iter().position(|v| !v.is_finite()) {
            return Err(GbmError::NonFinite { row, col });
        }
    }
    let active: Vec<usize> = (0..n).filter(|&i| w[i] > 0.0).collect();
    if active.is_empty() {
        return Err(GbmError::ZeroWeights);
    }
    let ya: Vec<bool> = active.iter().map(|&i| y[i]).collect();
    let wa: Vec<f64> = active.iter().map(|&i| w[i]).collect();
    if ya.iter().all(|&v| v) || ya.iter().all(|&v| !v) {
        return Err(GbmError::SingleClass);
    }
    let xa = x.select_rows(&active);
    let m = active.len();

    let w_sum: f64 = wa.iter().sum();
    let pos: f64 = ya.iter().zip(&wa).filter(|(y, _)| **y).map(|(_, w)| w).sum();
    let rate = pos / w_sum;
    let base_logit = (rate / (1.0 - rate)).ln().clamp(-LEAF_CLAMP, LEAF_CLAMP);

    let columns = Columns::build(&xa);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut margins = vec![base_logit; m];
    let mut trace = vec![weighted_logloss(&margins, &ya, &wa)];
    let mut trees = Vec::with_capacity(hp.n_rounds);
    let mut g = vec![0.0; m];
    let mut h = vec![0.0; m];

    let n_feat = ((hp.feature_subsample * d as f64).round() as usize).clamp(1, d);
    let n_rows = ((hp.row_subsample * m as f64).round() as usize).clamp(1, m);
    let mut feat_order: Vec<usize> = (0..d).collect();
    let mut row_order: Vec<u32> = (0..m as u32).collect();

    for _ in 0..hp.n_rounds {
        for i in 0..m {
            let p = sigmoid(margins[i]);
            let target = if ya[i] { 1.0 } else { 0.0 };
            g[i] = wa[i] * (p - target);
            h[i] = wa[i] * p * (1.0 - p);
        }
        let features: Vec<usize> = if n_feat < d {
            feat_order.shuffle(&mut rng);
            let mut f = feat_order[..n_feat].to_vec();
            f.sort_unstable();
            f
        } else {
            (0..d).collect()
        };
        let rows: Option<Vec<u32>> = (n_rows < m).then(|| {
            row_order.shuffle(&mut rng);
            row_order[..n_rows].to_vec()
        });
        let tree = grow_tree(&columns, &g, &h, hp, &features, rows.as_deref());
        for (i, margin) in margins.iter_mut().enumerate() {
            *margin += hp.learning_rate * tree.predict(xa.row(i));
        }
        trace.push(weighted_logloss(&margins, &ya, &wa));
        trees.push(tree);
    }
    Ok((
        Booster {
            n_features: d,
            base_logit,
            learning_rate: hp.learning_rate,
            hyperparams: *hp,
            trees,
        },
        trace,
    ))
}

/// Column-major copy of the data plus, per feature, the row order sorted by
/// value (ties by row index).
struct Columns {
    values: Vec<Vec<f64>>,
    sorted_rows: Vec<Vec<u32>>,
    sorted_vals: Vec<Vec<f64>>,
}

impl Columns {
    fn build(x: &Matrix) -> Self {
        let (n, d) = (x.rows(), x.cols());
        let values: Vec<Vec<f64>> = (0..d).map(|j| (0..n).map(|i| x.get(i, j)).collect()).collect();
        let (sorted_rows, sorted_vals) = values
            .par_iter()
            .map(|col| {
                let mut idx: Vec<u32> = (0..n as u32).collect();
                idx.sort_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]).then(a.cmp(&b)));
                let vals = idx.iter().map(|&i| col[i as usize]).collect();
                (idx, vals)
            })
            .unzip();
        Self {
            values,
            sorted_rows,
            sorted_vals,
        }
    }
}

#[derive(Clone, Copy)]
struct Candidate {
    gain: f64,
    feature: usize,
    threshold: f64,
    left_g: f64,
    left_h: f64,
}

struct Open {
    node: usize,
    g: f64,
    h: f64,
}

fn leaf_weight(g: f64, h: f64, lambda: f64) -> f64 {
    let denom = h + lambda;
    if denom > 0.0 {
        (-g / denom).clamp(-LEAF_CLAMP, LEAF_CLAMP)
    } else {
        0.0
    }
}

fn score(g: f64, h: f64, lambda: f64) -> f64 {
    let denom = h + lambda;
    if denom > 0.0 {
        g * g / denom
    } else {
        0.0
    }
}

/// Midpoint of two distinct values, kept strictly below `hi`.
fn midpoint(lo: f64, hi: f64) -> f64 {
    let t = lo / 2.0 + hi / 2.0;
    if t < hi && t >= lo {
        t
    } else {
        lo
    }
}

/// Level-wise exact greedy growth. `rows` restricts the sample for this tree.
fn grow_tree(
    cols: &Columns,
    g: &[f64],
    h: &[f64],
    hp: &Hyperparams,
    features: &[usize],
    rows: Option<&[u32]>,
) -> Tree {
    let m = g.len();
    let lambda = hp.l2_leaf;
    let mut slot = vec![NO_SLOT; m];
    let (mut g0, mut h0) = (0.0, 0.0);
    match rows {
        Some(rows) => {
            let mut sorted = rows.to_vec();
            sorted.sort_unstable();
            for &i in &sorted {
                slot[i as usize] = 0;
                g0 += g[i as usize];
                h0 += h[i as usize];
            }
        }
        None => {
            slot.fill(0);
            for i in 0..m {
                g0 += g[i];
                h0 += h[i];
            }
        }
    }
    let mut nodes = vec![Node::Leaf {
        weight: leaf_weight(g0, h0, lambda),
        cover: h0,
    }];
    let mut level = vec![Open { node: 0, g: g0, h: h0 }];

    for _depth in 0..hp.max_depth {
        if level.is_empty() {
            break;
        }
        let per_feature: Vec<Vec<Option<Candidate>>> = features
            .par_iter()
            .map(|&f| scan_feature(cols, f, &slot, g, h, &level, hp))
            .collect();
        let mut best: Vec<Option<Candidate>> = vec![None; level.len()];
        for cands in &per_feature {
            for (b, c) in best.iter_mut().zip(cands) {
                if let Some(c) = c {
                    if beats(c.gain, b.as_ref()) {
                        *b = Some(*c);
                    }
                }
            }
        }

        // Children get slots in the next level; unsplit nodes stay leaves.
        let mut next = Vec::new();
        let mut child_slots: Vec<Option<(u32, u32, usize, f64)>> = vec![None; level.len()];
        for (s, open) in level.iter().enumerate() {
            let Some(c) = best[s] else { continue };
            let (lg, lh) = (c.left_g, c.left_h);
            let (rg, rh) = (open.g - lg, open.h - lh);
            let left = nodes.len();
            nodes.push(Node::Leaf {
                weight: leaf_weight(lg, lh, lambda),
                cover: lh,
            });
            nodes.push(Node::Leaf {
                weight: leaf_weight(rg, rh, lambda),
                cover: rh,
            });
            nodes[open.node] = Node::Split {
                feature: c.feature,
                threshold: c.threshold,
                left,
                right: left + 1,
                // No missing values at training time: send NaN to the heavier side.
                default_left: lh >= rh,
                gain: c.gain,
                cover: open.h,
            };
            child_slots[s] = Some((next.len() as u32, next.len() as u32 + 1, c.feature, c.threshold));
            next.push(Open { node: left, g: lg, h: lh });
            next.push(Open {
                node: left + 1,
                g: rg,
                h: rh,
            });
        }
        for (i, s) in slot.iter_mut().enumerate() {
            if *s == NO_SLOT {
                continue;
            }
            *s = match child_slots[*s as usize] {
                None => NO_SLOT,
                Some((l, r, f, t)) => {
                    if cols.values[f][i] <= t {
                        l
                    } else {
                        r
                    }
                }
            };
        }
        level = next;
    }
    Tree { nodes }
}

fn scan_feature(
    cols: &Columns,
    f: usize,
    slot: &[u32],
    g: &[f64],
    h: &[f64],
    level: &[Open],
    hp: &Hyperparams,
) -> Vec<Option<Candidate>> {
    let k = level.len();
    let lambda = hp.l2_leaf;
    let mut gl = vec![0.0; k];
    let mut hl = vec![0.0; k];
    let mut last = vec![f64::NAN; k];
    let mut best: Vec<Option<Candidate>> = vec![None; k];
    let parent: Vec<f64> = level.iter().map(|o| score(o.g, o.h, lambda)).collect();
    let rows = &cols.sorted_rows[f];
    let vals = &cols.sorted_vals[f];
    for (&i, &v) in rows.iter().zip(vals) {
        let s = slot[i as usize];
        if s == NO_SLOT {
            continue;
        }
        let s = s as usize;
        if v > last[s] {
            let (lg, lh) = (gl[s], hl[s]);
            let (rg, rh) = (level[s].g - lg, level[s].h - lh);
            if lh > 0.0 && rh > 0.0 && lh >= hp.min_child_hessian && rh >= hp.min_child_hessian {
                let gain = 0.5 * (score(lg, lh, lambda) + score(rg, rh, lambda) - parent[s]);
                // Relative floor keeps rounding noise from creating splits.
                let floor = 1e-12 * parent[s] + f64::MIN_POSITIVE;
                if gain > floor && beats(gain, best[s].as_ref()) {
                    best[s] = Some(Candidate {
                        gain,
                        feature: f,
                        threshold: midpoint(last[s], v),
                        left_g: lg,
                        left_h: lh,
                    });
                }
            }
        }
        gl[s] += g[i as usize];
        hl[s] += h[i as usize];
        last[s] = v;
    }
    best
}
