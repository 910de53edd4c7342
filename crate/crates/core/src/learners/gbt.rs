//! Histogram-based gradient-boosted trees.
//!
//! Each feature is pre-binned into at most 256 quantile buckets; split
//! search scans bin histograms of first- and second-order statistics,
//! so one boosting stage costs O(features * rows) per tree level. Leaf
//! values are Newton steps (mean residual for squared error, gradient
//! over hessian for logistic), with the learning rate folded into the
//! stored value. Split predicates are `x <= threshold`, where every
//! threshold is one of the training-time bin cuts, so binned training
//! and raw-value prediction route rows identically.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{sigmoid, DenseMatrix};

const MAX_BINS: usize = 256;
const MIN_GAIN: f64 = 1e-12;
const MIN_HESSIAN: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GbtObjective {
    SquaredError,
    /// Binary cross-entropy on {0,1} targets; predictions go through a
    /// sigmoid.
    Logistic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GbtParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    /// Minimum number of training rows on each side of a split.
    pub min_leaf: usize,
    /// Row fraction drawn (without replacement) per tree; 1.0 disables
    /// subsampling.
    pub subsample: f64,
    pub seed: u64,
}

impl Default for GbtParams {
    fn default() -> Self {
        Self {
            n_trees: 300,
            max_depth: 4,
            learning_rate: 0.1,
            min_leaf: 20,
            subsample: 1.0,
            seed: 0,
        }
    }
}

impl GbtParams {
    pub fn validate(&self) -> Result<()> {
        if self.max_depth < 1 {
            return Err(Error::Parameter(format!(
                "max_depth must be >= 1, got {}",
                self.max_depth
            )));
        }
        if self.min_leaf < 1 {
            return Err(Error::Parameter("min_leaf must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(Error::Parameter(format!(
                "learning_rate must be in (0, 1], got {}",
                self.learning_rate
            )));
        }
        if !(self.subsample > 0.0 && self.subsample <= 1.0) {
            return Err(Error::Parameter(format!(
                "subsample must be in (0, 1], got {}",
                self.subsample
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TreeNode {
    Leaf {
        value: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
}

impl TreeNode {
    fn evaluate(&self, row: &[f64]) -> f64 {
        let mut node = self;
        loop {
            match node {
                TreeNode::Leaf { value } => return *value,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    node = if row[*feature] <= *threshold {
                        left
                    } else {
                        right
                    };
                }
            }
        }
    }

    fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtModel {
    pub objective: GbtObjective,
    /// Raw-score offset: mean target for squared error, log-odds of the
    /// base rate for logistic.
    pub base_score: f64,
    /// Leaf values already include the learning rate.
    pub trees: Vec<TreeNode>,
    pub learning_rate: f64,
    pub n_features: usize,
    /// Training objective after stage t; index 0 is the null model.
    pub train_loss: Vec<f64>,
}

impl GbtModel {
    /// Tree-free model predicting `base_score` (after link inversion)
    /// everywhere.
    pub fn null_model(objective: GbtObjective, base_score: f64, n_features: usize) -> Self {
        Self {
            objective,
            base_score,
            trees: Vec::new(),
            learning_rate: 0.0,
            n_features,
            train_loss: Vec::new(),
        }
    }

    #[inline]
    pub fn raw_score_row(&self, row: &[f64]) -> f64 {
        debug_assert_eq!(row.len(), self.n_features);
        let mut score = self.base_score;
        for tree in &self.trees {
            score += tree.evaluate(row);
        }
        score
    }

    #[inline]
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let raw = self.raw_score_row(row);
        match self.objective {
            GbtObjective::SquaredError => raw,
            GbtObjective::Logistic => sigmoid(raw),
        }
    }

    pub fn predict(&self, x: &DenseMatrix) -> Result<Vec<f64>> {
        if x.n_cols() != self.n_features {
            return Err(Error::Shape {
                expected: self.n_features,
                actual: x.n_cols(),
            });
        }
        Ok(x.iter_rows().map(|row| self.predict_row(row)).collect())
    }

    pub fn max_tree_depth(&self) -> usize {
        self.trees.iter().map(|t| t.depth()).max().unwrap_or(0)
    }
}

/// Per-feature quantile cuts. At most 255 cut values, each an actual
/// training value; bin(x) = number of cuts strictly below x.
fn quantile_cuts(x: &DenseMatrix, feature: usize) -> Vec<f64> {
    let n = x.n_rows();
    let mut sorted: Vec<f64> = (0..n).map(|i| x.get(i, feature)).collect();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut cuts: Vec<f64> = (1..MAX_BINS).map(|b| sorted[b * n / MAX_BINS]).collect();
    cuts.dedup();
    // The largest value cannot act as a split boundary (nothing falls
    // strictly above it), so it is dropped from the candidate set.
    if let Some(&last) = cuts.last() {
        if last == sorted[n - 1] {
            cuts.pop();
        }
    }
    cuts
}

#[inline]
fn bin_of(cuts: &[f64], value: f64) -> u8 {
    cuts.partition_point(|c| *c < value) as u8
}

struct TreeBuilder<'a> {
    binned: &'a [Vec<u8>],
    cuts: &'a [Vec<f64>],
    neg_grad: &'a [f64],
    hess: &'a [f64],
    max_depth: usize,
    min_leaf: usize,
    shrinkage: f64,
}

impl TreeBuilder<'_> {
    fn grow(&self, rows: Vec<u32>, depth: usize) -> TreeNode {
        let mut g_total = 0.0;
        let mut h_total = 0.0;
        for &i in &rows {
            g_total += self.neg_grad[i as usize];
            h_total += self.hess[i as usize];
        }
        let leaf = |g: f64, h: f64| TreeNode::Leaf {
            value: self.shrinkage * g / h.max(MIN_HESSIAN),
        };

        if depth >= self.max_depth || rows.len() < 2 * self.min_leaf {
            return leaf(g_total, h_total);
        }

        let parent_score = g_total * g_total / h_total.max(MIN_HESSIAN);
        let mut best_gain = MIN_GAIN;
        let mut best: Option<(usize, usize)> = None; // (feature, cut index)

        for f in 0..self.binned.len() {
            let cuts = &self.cuts[f];
            if cuts.is_empty() {
                continue;
            }
            let codes = &self.binned[f];
            let mut hist_g = [0.0f64; MAX_BINS];
            let mut hist_h = [0.0f64; MAX_BINS];
            let mut hist_c = [0u32; MAX_BINS];
            for &i in &rows {
                let b = codes[i as usize] as usize;
                hist_g[b] += self.neg_grad[i as usize];
                hist_h[b] += self.hess[i as usize];
                hist_c[b] += 1;
            }

            let total_count = rows.len() as u32;
            let mut gl = 0.0;
            let mut hl = 0.0;
            let mut cl = 0u32;
            for b in 0..cuts.len() {
                gl += hist_g[b];
                hl += hist_h[b];
                cl += hist_c[b];
                let cr = total_count - cl;
                if (cl as usize) < self.min_leaf || (cr as usize) < self.min_leaf {
                    continue;
                }
                let gr = g_total - gl;
                let hr = h_total - hl;
                if hl <= MIN_HESSIAN || hr <= MIN_HESSIAN {
                    continue;
                }
                let gain = gl * gl / hl + gr * gr / hr - parent_score;
                // Strict comparison: ties keep the earliest candidate in
                // (feature, bin) order, which keeps trees deterministic.
                if gain > best_gain {
                    best_gain = gain;
                    best = Some((f, b));
                }
            }
        }

        let Some((feature, cut_idx)) = best else {
            return leaf(g_total, h_total);
        };

        let codes = &self.binned[feature];
        let boundary = cut_idx as u8;
        let (left_rows, right_rows): (Vec<u32>, Vec<u32>) = rows
            .into_iter()
            .partition(|&i| codes[i as usize] <= boundary);

        TreeNode::Split {
            feature,
            threshold: self.cuts[feature][cut_idx],
            left: Box::new(self.grow(left_rows, depth + 1)),
            right: Box::new(self.grow(right_rows, depth + 1)),
        }
    }
}

fn train_objective(objective: GbtObjective, y: &[f64], scores: &[f64]) -> f64 {
    let n = y.len() as f64;
    match objective {
        GbtObjective::SquaredError => {
            let ss: f64 = y
                .iter()
                .zip(scores)
                .map(|(yi, s)| {
                    let d = yi - s;
                    d * d
                })
                .sum();
            0.5 * ss / n
        }
        GbtObjective::Logistic => {
            // Numerically stable log(1 + e^f) - y*f.
            let total: f64 = y
                .iter()
                .zip(scores)
                .map(|(yi, f)| f.max(0.0) - yi * f + (-f.abs()).exp().ln_1p())
                .sum();
            total / n
        }
    }
}

/// Fits a boosted tree ensemble.
///
/// `n_trees = 0` is allowed and returns the null model (base score
/// only). Logistic targets must all be exactly 0 or 1.
pub fn fit_gbt(
    x: &DenseMatrix,
    y: &[f64],
    objective: GbtObjective,
    params: &GbtParams,
) -> Result<GbtModel> {
    params.validate()?;
    if x.n_rows() != y.len() {
        return Err(Error::Shape {
            expected: x.n_rows(),
            actual: y.len(),
        });
    }
    if y.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if !x.all_finite() || y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("training data contains non-finite values".into()));
    }
    if objective == GbtObjective::Logistic && y.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::Parameter(
            "logistic objective requires targets in {0, 1}".into(),
        ));
    }

    let n = x.n_rows();
    let p = x.n_cols();
    let y_mean = y.iter().sum::<f64>() / n as f64;
    let base_score = match objective {
        GbtObjective::SquaredError => y_mean,
        GbtObjective::Logistic => {
            let clipped = y_mean.clamp(1e-6, 1.0 - 1e-6);
            (clipped / (1.0 - clipped)).ln()
        }
    };

    let mut model = GbtModel {
        objective,
        base_score,
        trees: Vec::with_capacity(params.n_trees),
        learning_rate: params.learning_rate,
        n_features: p,
        train_loss: Vec::with_capacity(params.n_trees + 1),
    };
    if params.n_trees == 0 {
        return Ok(model);
    }

    let cuts: Vec<Vec<f64>> = (0..p).map(|f| quantile_cuts(x, f)).collect();
    let binned: Vec<Vec<u8>> = (0..p)
        .map(|f| (0..n).map(|i| bin_of(&cuts[f], x.get(i, f))).collect())
        .collect();

    let mut scores = vec![base_score; n];
    let mut neg_grad = vec![0.0f64; n];
    let mut hess = vec![0.0f64; n];
    model.train_loss.push(train_objective(objective, y, &scores));

    let subsample_count = ((n as f64) * params.subsample).floor().max(1.0) as usize;
    let mut all_rows: Vec<u32> = (0..n as u32).collect();

    for tree_idx in 0..params.n_trees {
        match objective {
            GbtObjective::SquaredError => {
                for i in 0..n {
                    neg_grad[i] = y[i] - scores[i];
                    hess[i] = 1.0;
                }
            }
            GbtObjective::Logistic => {
                for i in 0..n {
                    let prob = sigmoid(scores[i]);
                    neg_grad[i] = y[i] - prob;
                    hess[i] = (prob * (1.0 - prob)).max(MIN_HESSIAN);
                }
            }
        }

        let rows: Vec<u32> = if subsample_count < n {
            // Fresh stream per tree so tree t is identical no matter how
            // many trees the ensemble has.
            let mut rng = ChaCha8Rng::seed_from_u64(
                params
                    .seed
                    .wrapping_add((tree_idx as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)),
            );
            let (sampled, _) = all_rows.partial_shuffle(&mut rng, subsample_count);
            let mut sampled = sampled.to_vec();
            sampled.sort_unstable();
            sampled
        } else {
            all_rows.clone()
        };

        let builder = TreeBuilder {
            binned: &binned,
            cuts: &cuts,
            neg_grad: &neg_grad,
            hess: &hess,
            max_depth: params.max_depth,
            min_leaf: params.min_leaf,
            shrinkage: params.learning_rate,
        };
        let tree = builder.grow(rows, 0);

        for i in 0..n {
            scores[i] += tree.evaluate(x.row(i));
        }
        model.trees.push(tree);
        model.train_loss.push(train_objective(objective, y, &scores));
    }

    Ok(model)
}
