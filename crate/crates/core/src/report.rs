//! Evaluation metrics and cross-run comparison artifacts.
//!
//! Everything here is a pure function over score tables: per-arm
//! fit metrics, rank correlations, GATE rank tables, CATE quantile
//! curves, lift curves with area ratios, and aligned histograms for
//! external plotting. [`compare_runs`] assembles the full comparison
//! bundle between two runs over the same units (typically one per
//! covariate modality).
//!
//! Sign conventions: effects are outcome reductions, so more-negative
//! values are better. Rank 1 in the GATE table is the most negative
//! estimate, and lift curves take already-oriented gains where larger
//! means better; callers pass the negated effect.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::crossfit::CrossfitResult;
use crate::dr::{Estimand, Estimate, ScoreRow};
use crate::error::{Error, Result};
use crate::numeric::{kahan_sum, KahanSum};

/// Outcomes below this are excluded from the percentage error, with the
/// exclusion count reported: a relative error against a zero rate is
/// undefined.
pub const MAPE_FLOOR: f64 = 1e-6;

/// Per-arm fit quality of out-of-fold nuisance predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Pearson correlation of treated units' predicted vs actual
    /// outcomes; `None` when undefined (under 2 units or no variance).
    pub corr_t: Option<f64>,
    /// Same for control units.
    pub corr_c: Option<f64>,
    /// Mean absolute percentage error of the taken-arm prediction over
    /// units whose outcome clears [`MAPE_FLOOR`].
    pub mape: f64,
    pub n_t: usize,
    pub n_c: usize,
    /// Units excluded from the MAPE by the outcome floor.
    pub mape_excluded: usize,
}

/// Pearson product-moment correlation.
///
/// Requires equal lengths of at least 2 and positive variance on both
/// sides; the result is clamped into [-1, 1] against rounding spill.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Shape {
            expected: x.len(),
            actual: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(Error::Parameter(format!(
            "correlation needs at least 2 points, got {}",
            x.len()
        )));
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Numeric("correlation inputs must be finite".into()));
    }
    let n = x.len() as f64;
    let mean_x = kahan_sum(x.iter().copied()) / n;
    let mean_y = kahan_sum(y.iter().copied()) / n;
    let mut cov = KahanSum::default();
    let mut var_x = KahanSum::default();
    let mut var_y = KahanSum::default();
    for (&a, &b) in x.iter().zip(y) {
        let da = a - mean_x;
        let db = b - mean_y;
        cov.add(da * db);
        var_x.add(da * da);
        var_y.add(db * db);
    }
    // Rounding in the mean leaves a constant vector with a variance
    // around 1e-33 rather than exactly zero, so the degeneracy check
    // has to be relative to the input's scale.
    let degenerate =
        |var: f64, mean: f64| var / n <= 1e-20 * (1.0 + mean * mean) || var <= 0.0;
    if degenerate(var_x.value(), mean_x) || degenerate(var_y.value(), mean_y) {
        return Err(Error::Numeric(
            "correlation undefined: an input has (numerically) zero variance".into(),
        ));
    }
    Ok((cov.value() / (var_x.value() * var_y.value()).sqrt()).clamp(-1.0, 1.0))
}

/// 1-based ranks with ties assigned their average rank.
fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| {
        xs[a]
            .partial_cmp(&xs[b])
            .expect("rank inputs are finite")
            .then(a.cmp(&b))
    });
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        // Positions i..=j (0-based) share the mean of ranks i+1..=j+1.
        let mean_rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = mean_rank;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation: Pearson over average-ranked data.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Shape {
            expected: x.len(),
            actual: y.len(),
        });
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Numeric("correlation inputs must be finite".into()));
    }
    pearson(&average_ranks(x), &average_ranks(y))
}

/// Computes the per-arm fit metrics from a score table.
///
/// Correlations compare each arm's own-model prediction against the
/// observed outcome; the percentage error uses whichever arm the unit
/// took. An arm too small or too flat for a correlation reports `None`
/// rather than a made-up zero.
pub fn compute_metrics(rows: &[ScoreRow]) -> Result<MetricsReport> {
    if rows.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let (mut pred_t, mut act_t) = (Vec::new(), Vec::new());
    let (mut pred_c, mut act_c) = (Vec::new(), Vec::new());
    for r in rows {
        if r.treatment {
            pred_t.push(r.g1_hat);
            act_t.push(r.outcome);
        } else {
            pred_c.push(r.g0_hat);
            act_c.push(r.outcome);
        }
    }
    let corr_of = |pred: &[f64], act: &[f64]| -> Result<Option<f64>> {
        match pearson(pred, act) {
            Ok(v) => Ok(Some(v)),
            Err(Error::Parameter(_)) | Err(Error::Numeric(_)) => Ok(None),
            Err(other) => Err(other),
        }
    };
    let corr_t = corr_of(&pred_t, &act_t)?;
    let corr_c = corr_of(&pred_c, &act_c)?;

    let mut err = KahanSum::default();
    let mut included = 0usize;
    for r in rows {
        if r.outcome.abs() < MAPE_FLOOR {
            continue;
        }
        err.add((r.g_taken() - r.outcome).abs() / r.outcome.abs());
        included += 1;
    }
    if included == 0 {
        return Err(Error::Estimation(
            "every outcome sits below the percentage-error floor".into(),
        ));
    }
    Ok(MetricsReport {
        corr_t,
        corr_c,
        mape: err.value() / included as f64,
        n_t: pred_t.len(),
        n_c: pred_c.len(),
        mape_excluded: rows.len() - included,
    })
}

/// One group's entry in the side-by-side rank table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankRow {
    pub group: String,
    pub point_a: f64,
    /// Rank of the group under run A; 1 = most negative estimate
    /// (largest reduction). Ties share their average rank.
    pub rank_a: f64,
    pub point_b: f64,
    pub rank_b: f64,
}

/// GATE points of two runs ranked side by side, with correlations over
/// the raw points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateRankTable {
    /// Rows sorted by run A's rank.
    pub rows: Vec<RankRow>,
    pub pearson: f64,
    pub spearman: f64,
}

/// Builds the rank table from two group -> point maps over the same
/// keys. A key mismatch is a comparison error naming the difference.
pub fn gate_rank_table(
    a: &BTreeMap<String, f64>,
    b: &BTreeMap<String, f64>,
) -> Result<GateRankTable> {
    let keys_a: BTreeSet<&String> = a.keys().collect();
    let keys_b: BTreeSet<&String> = b.keys().collect();
    if keys_a != keys_b {
        let only_a: Vec<&str> = keys_a.difference(&keys_b).map(|s| s.as_str()).collect();
        let only_b: Vec<&str> = keys_b.difference(&keys_a).map(|s| s.as_str()).collect();
        return Err(Error::Comparison(format!(
            "group keys differ: only in a = {only_a:?}, only in b = {only_b:?}"
        )));
    }
    let groups: Vec<&String> = a.keys().collect();
    let points_a: Vec<f64> = groups.iter().map(|g| a[*g]).collect();
    let points_b: Vec<f64> = groups.iter().map(|g| b[*g]).collect();
    // Ascending ranks put the most negative point at rank 1, which is
    // the largest reduction under the outcome-reduction convention.
    let ranks_a = average_ranks(&points_a);
    let ranks_b = average_ranks(&points_b);

    let mut rows: Vec<RankRow> = groups
        .iter()
        .enumerate()
        .map(|(i, g)| RankRow {
            group: (*g).clone(),
            point_a: points_a[i],
            rank_a: ranks_a[i],
            point_b: points_b[i],
            rank_b: ranks_b[i],
        })
        .collect();
    rows.sort_by(|x, y| {
        x.rank_a
            .partial_cmp(&y.rank_a)
            .expect("ranks are finite")
            .then_with(|| x.group.cmp(&y.group))
    });

    Ok(GateRankTable {
        rows,
        pearson: pearson(&points_a, &points_b)?,
        spearman: spearman(&points_a, &points_b)?,
    })
}

/// A point on the effect quantile curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantilePoint {
    pub quantile: f64,
    pub value: f64,
}

/// Nearest-rank quantile curve of a vector of effects.
///
/// Sorts ascending and samples `n_points` evenly spaced quantiles with
/// inclusive endpoints. Nearest rank means no interpolation: the curve
/// is a subsequence of the sorted data, hence non-decreasing.
pub fn cate_quantile_curve(cates: &[f64], n_points: usize) -> Result<Vec<QuantilePoint>> {
    if cates.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if n_points < 2 {
        return Err(Error::Parameter(format!(
            "quantile curve needs at least 2 points, got {n_points}"
        )));
    }
    if cates.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("quantile inputs must be finite".into()));
    }
    let mut sorted = cates.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let n = sorted.len();
    let points = (0..n_points)
        .map(|j| {
            let q = j as f64 / (n_points - 1) as f64;
            let rank = ((q * n as f64).ceil() as usize).max(1).min(n);
            QuantilePoint {
                quantile: q,
                value: sorted[rank - 1],
            }
        })
        .collect();
    Ok(points)
}

/// A point on a lift curve: cumulative gain after targeting the top
/// `fraction_targeted` of units under the curve's sort key.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LiftPoint {
    pub fraction_targeted: f64,
    pub cumulative_gain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiftCurve {
    /// Starts at (0, 0) and ends at (1, total gain).
    pub points: Vec<LiftPoint>,
    /// Trapezoidal integral of the sampled curve.
    pub area: f64,
}

impl LiftCurve {
    /// Cumulative gain at full targeting; identical across sort keys
    /// over the same gains (up to summation order).
    pub fn total_gain(&self) -> f64 {
        self.points.last().map_or(0.0, |p| p.cumulative_gain)
    }
}

/// Builds a lift curve: sorts units by `sort_scores` descending (ties
/// broken by position), accumulates `gain_scores` in that order, and
/// samples about `n_points` evenly spaced fractions.
///
/// Gains must already be oriented so larger is better.
pub fn lift_curve(sort_scores: &[f64], gain_scores: &[f64], n_points: usize) -> Result<LiftCurve> {
    if sort_scores.len() != gain_scores.len() {
        return Err(Error::Shape {
            expected: sort_scores.len(),
            actual: gain_scores.len(),
        });
    }
    if sort_scores.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if n_points < 2 {
        return Err(Error::Parameter(format!(
            "lift curve needs at least 2 points, got {n_points}"
        )));
    }
    if sort_scores
        .iter()
        .chain(gain_scores.iter())
        .any(|v| !v.is_finite())
    {
        return Err(Error::Numeric("lift curve inputs must be finite".into()));
    }

    let n = sort_scores.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        sort_scores[b]
            .partial_cmp(&sort_scores[a])
            .expect("finite")
            .then(a.cmp(&b))
    });

    // prefix[m] = gain of the top m units.
    let mut prefix = Vec::with_capacity(n + 1);
    let mut acc = KahanSum::default();
    prefix.push(0.0);
    for &i in &order {
        acc.add(gain_scores[i]);
        prefix.push(acc.value());
    }

    // Sample positions depend only on n and n_points, so curves over
    // the same population align point-for-point.
    let mut points = Vec::with_capacity(n_points);
    let mut last_m = usize::MAX;
    for j in 0..n_points {
        let m = (j * n) / (n_points - 1);
        if m == last_m {
            continue;
        }
        last_m = m;
        points.push(LiftPoint {
            fraction_targeted: m as f64 / n as f64,
            cumulative_gain: prefix[m],
        });
    }

    let mut area = KahanSum::default();
    for pair in points.windows(2) {
        let dx = pair[1].fraction_targeted - pair[0].fraction_targeted;
        area.add(dx * (pair[0].cumulative_gain + pair[1].cumulative_gain) / 2.0);
    }
    Ok(LiftCurve {
        points,
        area: area.value(),
    })
}

/// Baseline subtracted before taking the area ratio.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AreaBaseline {
    /// Raw ratio of areas.
    None,
    /// Areas measured above the random-targeting diagonal from (0, 0)
    /// to (1, total gain). The default: raw ratios are inflated by the
    /// baseline both curves share.
    Diagonal,
}

/// Ratio of a cross-sorted curve's area to the optimally sorted one's,
/// both over the same gain vector.
pub fn area_ratio(cross: &LiftCurve, optimal: &LiftCurve, baseline: AreaBaseline) -> Result<f64> {
    let total_cross = cross.total_gain();
    let total_opt = optimal.total_gain();
    if (total_cross - total_opt).abs() > 1e-10 * (1.0 + total_opt.abs()) {
        return Err(Error::Comparison(format!(
            "curves end at different totals ({total_cross} vs {total_opt}); \
             they must share the gain vector"
        )));
    }
    let (num, den) = match baseline {
        AreaBaseline::None => (cross.area, optimal.area),
        AreaBaseline::Diagonal => {
            let diag = total_opt / 2.0;
            (cross.area - diag, optimal.area - diag)
        }
    };
    if den.abs() <= 1e-12 * (1.0 + total_opt.abs()) {
        return Err(Error::Numeric(
            "area ratio undefined: optimal curve has no area above the baseline".into(),
        ));
    }
    Ok(num / den)
}

/// Aligned fixed-bin histograms of predictions and actuals, for
/// external plotting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionSummary {
    pub arm: String,
    /// `n_bins + 1` edges over the pooled min-max of both series.
    pub bin_edges: Vec<f64>,
    pub prediction_counts: Vec<usize>,
    pub actual_counts: Vec<usize>,
}

/// Histograms `predictions` and `actuals` over shared bins covering
/// their pooled range. The top edge is inclusive so counts conserve.
pub fn distribution_summary(
    predictions: &[f64],
    actuals: &[f64],
    arm: &str,
    n_bins: usize,
) -> Result<DistributionSummary> {
    if predictions.is_empty() || actuals.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if n_bins == 0 {
        return Err(Error::Parameter("histogram needs at least 1 bin".into()));
    }
    let pooled = predictions.iter().chain(actuals.iter());
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in pooled {
        if !v.is_finite() {
            return Err(Error::Numeric("histogram inputs must be finite".into()));
        }
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let width = (hi - lo) / n_bins as f64;
    let bin_edges: Vec<f64> = (0..=n_bins).map(|i| lo + i as f64 * width).collect();
    let bin_of = |v: f64| -> usize {
        if width == 0.0 {
            0
        } else {
            (((v - lo) / width) as usize).min(n_bins - 1)
        }
    };
    let mut prediction_counts = vec![0usize; n_bins];
    for &v in predictions {
        prediction_counts[bin_of(v)] += 1;
    }
    let mut actual_counts = vec![0usize; n_bins];
    for &v in actuals {
        actual_counts[bin_of(v)] += 1;
    }
    Ok(DistributionSummary {
        arm: arm.to_string(),
        bin_edges,
        prediction_counts,
        actual_counts,
    })
}

/// One estimand's point estimates side by side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatePair {
    pub a: Estimate,
    pub b: Estimate,
    /// Whether the two confidence intervals share any point.
    pub ci_overlap: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareOptions {
    pub label_a: String,
    pub label_b: String,
    /// Samples on quantile and lift curves.
    pub n_curve_points: usize,
    pub n_bins: usize,
}

impl Default for CompareOptions {
    fn default() -> Self {
        Self {
            label_a: "run_a".into(),
            label_b: "run_b".into(),
            n_curve_points: 101,
            n_bins: 50,
        }
    }
}

/// The full comparison bundle between two runs over the same units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunComparison {
    pub label_a: String,
    pub label_b: String,
    pub n_units: usize,
    pub metrics_a: MetricsReport,
    pub metrics_b: MetricsReport,
    pub ate: EstimatePair,
    pub atet: EstimatePair,
    /// Absent when fewer than two groups are estimated in both runs.
    pub gate_table: Option<GateRankTable>,
    /// Correlations of per-unit effects across runs; `None` when a side
    /// has no variance.
    pub cate_pearson: Option<f64>,
    pub cate_spearman: Option<f64>,
    pub cate_curve_a: Vec<QuantilePoint>,
    pub cate_curve_b: Vec<QuantilePoint>,
    /// Units sorted by run A's effect, gains measured by run B's.
    pub lift_cross: LiftCurve,
    /// Units sorted and gained by run B's effect: the best achievable.
    pub lift_optimal: LiftCurve,
    pub area_ratio_raw: Option<f64>,
    pub area_ratio_above_diagonal: Option<f64>,
    pub histograms: Vec<DistributionSummary>,
}

fn find_estimand<'a>(result: &'a CrossfitResult, estimand: &Estimand, label: &str) -> Result<&'a Estimate> {
    result
        .estimates
        .iter()
        .find(|e| &e.estimand == estimand)
        .ok_or_else(|| Error::Comparison(format!("{label} has no {estimand:?} estimate")))
}

fn gates_of(result: &CrossfitResult) -> BTreeMap<String, f64> {
    result
        .estimates
        .iter()
        .filter_map(|e| match &e.estimand {
            Estimand::Gate { group } => Some((group.clone(), e.point)),
            _ => None,
        })
        .collect()
}

/// Aligns run B's rows to run A's unit order, or reports the id
/// difference (first five each way).
fn align_rows<'a>(a: &'a CrossfitResult, b: &'a CrossfitResult) -> Result<Vec<&'a ScoreRow>> {
    let index_b: BTreeMap<&str, &ScoreRow> = b
        .score_rows
        .iter()
        .map(|r| (r.unit_id.as_str(), r))
        .collect();
    let ids_a: BTreeSet<&str> = a.score_rows.iter().map(|r| r.unit_id.as_str()).collect();
    let only_a: Vec<&str> = a
        .score_rows
        .iter()
        .map(|r| r.unit_id.as_str())
        .filter(|id| !index_b.contains_key(id))
        .take(5)
        .collect();
    let only_b: Vec<&str> = b
        .score_rows
        .iter()
        .map(|r| r.unit_id.as_str())
        .filter(|id| !ids_a.contains(id))
        .take(5)
        .collect();
    if !only_a.is_empty() || !only_b.is_empty() {
        return Err(Error::Comparison(format!(
            "unit ids differ between runs; first only-in-a: {only_a:?}, first only-in-b: {only_b:?}"
        )));
    }
    if a.score_rows.len() != b.score_rows.len() {
        // Same id sets but different lengths means duplicates somewhere.
        return Err(Error::Comparison(format!(
            "runs score different row counts over the same ids ({} vs {})",
            a.score_rows.len(),
            b.score_rows.len()
        )));
    }
    Ok(a.score_rows
        .iter()
        .map(|r| index_b[r.unit_id.as_str()])
        .collect())
}

/// Computes the cross-run comparison bundle.
pub fn compare_runs(
    a: &CrossfitResult,
    b: &CrossfitResult,
    options: &CompareOptions,
) -> Result<RunComparison> {
    let b_aligned = align_rows(a, b)?;

    let metrics_a = compute_metrics(&a.score_rows)?;
    let metrics_b = compute_metrics(&b.score_rows)?;

    let pair = |estimand: Estimand| -> Result<EstimatePair> {
        let ea = find_estimand(a, &estimand, &options.label_a)?;
        let eb = find_estimand(b, &estimand, &options.label_b)?;
        Ok(EstimatePair {
            a: ea.clone(),
            b: eb.clone(),
            ci_overlap: ea.ci_overlaps(eb),
        })
    };
    let ate = pair(Estimand::Ate)?;
    let atet = pair(Estimand::Atet)?;

    let gates_a = gates_of(a);
    let gates_b = gates_of(b);
    let shared: Vec<&String> = gates_a.keys().filter(|g| gates_b.contains_key(*g)).collect();
    let gate_table = if shared.len() >= 2 {
        let sub_a: BTreeMap<String, f64> = shared.iter().map(|g| ((**g).clone(), gates_a[*g])).collect();
        let sub_b: BTreeMap<String, f64> = shared.iter().map(|g| ((**g).clone(), gates_b[*g])).collect();
        Some(gate_rank_table(&sub_a, &sub_b)?)
    } else {
        None
    };

    let cate_a: Vec<f64> = a.score_rows.iter().map(|r| r.cate).collect();
    let cate_b: Vec<f64> = b_aligned.iter().map(|r| r.cate).collect();
    let soft = |r: Result<f64>| -> Result<Option<f64>> {
        match r {
            Ok(v) => Ok(Some(v)),
            Err(Error::Numeric(_)) | Err(Error::Parameter(_)) => Ok(None),
            Err(other) => Err(other),
        }
    };
    let cate_pearson = soft(pearson(&cate_a, &cate_b))?;
    let cate_spearman = soft(spearman(&cate_a, &cate_b))?;

    let cate_curve_a = cate_quantile_curve(&cate_a, options.n_curve_points)?;
    let cate_curve_b = cate_quantile_curve(&cate_b, options.n_curve_points)?;

    // Effects are reductions; negate so larger = better, then sort by
    // run A's view of who benefits most and measure run B's gain.
    let gain_b: Vec<f64> = cate_b.iter().map(|v| -v).collect();
    let sort_a: Vec<f64> = cate_a.iter().map(|v| -v).collect();
    let lift_cross = lift_curve(&sort_a, &gain_b, options.n_curve_points)?;
    let lift_optimal = lift_curve(&gain_b, &gain_b, options.n_curve_points)?;
    let area_ratio_raw = soft(area_ratio(&lift_cross, &lift_optimal, AreaBaseline::None))?;
    let area_ratio_above_diagonal =
        soft(area_ratio(&lift_cross, &lift_optimal, AreaBaseline::Diagonal))?;

    let mut histograms = Vec::with_capacity(4);
    for (label, rows) in [
        (&options.label_a, &a.score_rows),
        (&options.label_b, &b.score_rows.to_vec()),
    ] {
        for (arm_name, treated) in [("treated", true), ("control", false)] {
            let (mut preds, mut acts) = (Vec::new(), Vec::new());
            for r in rows.iter().filter(|r| r.treatment == treated) {
                preds.push(r.g_taken());
                acts.push(r.outcome);
            }
            if preds.is_empty() {
                continue;
            }
            histograms.push(distribution_summary(
                &preds,
                &acts,
                &format!("{label}/{arm_name}"),
                options.n_bins,
            )?);
        }
    }

    Ok(RunComparison {
        label_a: options.label_a.clone(),
        label_b: options.label_b.clone(),
        n_units: a.score_rows.len(),
        metrics_a,
        metrics_b,
        ate,
        atet,
        gate_table,
        cate_pearson,
        cate_spearman,
        cate_curve_a,
        cate_curve_b,
        lift_cross,
        lift_optimal,
        area_ratio_raw,
        area_ratio_above_diagonal,
        histograms,
    })
}

/// Writes the comparison as plot-ready files: `metrics.json`,
/// `rank_table.csv`, `cate_curve.csv`, `lift_curve.csv`,
/// `histograms.csv`.
pub fn write_comparison_bundle(comparison: &RunComparison, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;

    let mut file = std::io::BufWriter::new(std::fs::File::create(dir.join("metrics.json"))?);
    serde_json::to_writer_pretty(&mut file, comparison)?;
    file.write_all(b"\n")?;
    file.flush()?;

    let mut writer = csv::Writer::from_path(dir.join("rank_table.csv"))?;
    writer.write_record(["group", "point_a", "rank_a", "point_b", "rank_b"])?;
    if let Some(table) = &comparison.gate_table {
        for row in &table.rows {
            writer.write_record([
                row.group.clone(),
                format!("{}", row.point_a),
                format!("{}", row.rank_a),
                format!("{}", row.point_b),
                format!("{}", row.rank_b),
            ])?;
        }
    }
    writer.flush()?;

    let mut writer = csv::Writer::from_path(dir.join("cate_curve.csv"))?;
    writer.write_record(["quantile", "cate_a", "cate_b"])?;
    for (pa, pb) in comparison.cate_curve_a.iter().zip(&comparison.cate_curve_b) {
        writer.write_record([
            format!("{}", pa.quantile),
            format!("{}", pa.value),
            format!("{}", pb.value),
        ])?;
    }
    writer.flush()?;

    let mut writer = csv::Writer::from_path(dir.join("lift_curve.csv"))?;
    writer.write_record(["fraction_targeted", "cross_gain", "optimal_gain"])?;
    for (pc, po) in comparison
        .lift_cross
        .points
        .iter()
        .zip(&comparison.lift_optimal.points)
    {
        writer.write_record([
            format!("{}", pc.fraction_targeted),
            format!("{}", pc.cumulative_gain),
            format!("{}", po.cumulative_gain),
        ])?;
    }
    writer.flush()?;

    let mut writer = csv::Writer::from_path(dir.join("histograms.csv"))?;
    writer.write_record(["arm", "bin_low", "bin_high", "prediction_count", "actual_count"])?;
    for h in &comparison.histograms {
        for (i, pair) in h.bin_edges.windows(2).enumerate() {
            writer.write_record([
                h.arm.clone(),
                format!("{}", pair[0]),
                format!("{}", pair[1]),
                h.prediction_counts[i].to_string(),
                h.actual_counts[i].to_string(),
            ])?;
        }
    }
    writer.flush()?;
    Ok(())
}
