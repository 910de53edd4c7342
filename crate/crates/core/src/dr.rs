//! Doubly robust scoring and estimation.
//!
//! For a unit with outcome `Y`, treatment `T`, clipped propensity `mu`,
//! and out-of-fold outcome predictions `g1` (treated arm) and `g0`
//! (control arm), the doubly robust label is
//!
//! ```text
//! c = g1 - g0 + (Y - g_T) * H,    H = T/mu - (1-T)/(1-mu)
//! ```
//!
//! where `g_T` is the prediction for the arm the unit actually took.
//! The label is unbiased for the conditional effect when either the
//! outcome models or the propensity model is correct; sample means of
//! `c` (suitably masked and normalized) give ATE, ATET, and GATEs, and
//! a per-fold linear regression of `c` on the centered naive effect
//! `theta = g1 - g0` gives a calibrated CATE predictor.
//!
//! All reductions use compensated summation, so estimates are invariant
//! to row order at the 1e-10 level, and standard errors use the
//! empirical (population) standard deviation over the pooled rows.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{kahan_sum, normal_quantile, population_std, DenseMatrix};

/// One unit's out-of-fold predictions and derived quantities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub unit_id: String,
    /// Fold this unit was held out in.
    pub fold: usize,
    pub outcome: f64,
    pub treatment: bool,
    pub group: Option<String>,
    /// Treated-arm outcome prediction.
    pub g1_hat: f64,
    /// Control-arm outcome prediction.
    pub g0_hat: f64,
    /// Propensity after clipping; always inside (0, 1).
    pub mu_hat: f64,
    /// Inverse-propensity weight `T/mu - (1-T)/(1-mu)`.
    pub h_tilde: f64,
    /// Naive effect `g1_hat - g0_hat`.
    pub theta_tilde: f64,
    /// Doubly robust label.
    pub dr_label: f64,
    /// Calibrated effect from the fold's linear fit; NaN until filled.
    pub cate: f64,
}

impl ScoreRow {
    /// Builds a row from raw predictions: clips the propensity, then
    /// derives the weight, the naive effect, and the DR label.
    #[allow(clippy::too_many_arguments)]
    pub fn build(
        unit_id: String,
        fold: usize,
        outcome: f64,
        treatment: bool,
        group: Option<String>,
        g1_hat: f64,
        g0_hat: f64,
        mu_raw: f64,
        clip_eps: f64,
    ) -> Result<Self> {
        let mu_hat = clip_propensity(mu_raw, clip_eps);
        let label = dr_label(g1_hat, g0_hat, outcome, treatment, mu_hat)?;
        let t = if treatment { 1.0 } else { 0.0 };
        let h_tilde = t / mu_hat - (1.0 - t) / (1.0 - mu_hat);
        Ok(Self {
            unit_id,
            fold,
            outcome,
            treatment,
            group,
            g1_hat,
            g0_hat,
            mu_hat,
            h_tilde,
            theta_tilde: g1_hat - g0_hat,
            dr_label: label,
            cate: f64::NAN,
        })
    }

    #[inline]
    pub fn treatment_f64(&self) -> f64 {
        if self.treatment {
            1.0
        } else {
            0.0
        }
    }

    /// Prediction for the arm the unit actually took.
    #[inline]
    pub fn g_taken(&self) -> f64 {
        if self.treatment {
            self.g1_hat
        } else {
            self.g0_hat
        }
    }
}

/// Clamps a raw propensity score into `[eps, 1 - eps]`.
///
/// `eps` must lie in (0, 0.5); the output is then strictly inside
/// (0, 1) regardless of the input, including non-finite scores, which
/// clamp to the nearer bound (NaN maps to the lower bound).
pub fn clip_propensity(mu_raw: f64, eps: f64) -> f64 {
    assert!(
        eps > 0.0 && eps < 0.5,
        "clip epsilon must be in (0, 0.5), got {eps}"
    );
    if mu_raw.is_nan() {
        return eps;
    }
    mu_raw.clamp(eps, 1.0 - eps)
}

/// The doubly robust label for one unit.
///
/// Requires a clipped propensity strictly inside (0, 1) and finite
/// inputs; both violations are numeric errors rather than silent NaNs.
pub fn dr_label(g1_hat: f64, g0_hat: f64, outcome: f64, treatment: bool, mu_hat: f64) -> Result<f64> {
    if !(g1_hat.is_finite() && g0_hat.is_finite() && outcome.is_finite() && mu_hat.is_finite()) {
        return Err(Error::Numeric(format!(
            "dr_label inputs must be finite: g1={g1_hat}, g0={g0_hat}, y={outcome}, mu={mu_hat}"
        )));
    }
    if !(mu_hat > 0.0 && mu_hat < 1.0) {
        return Err(Error::Numeric(format!(
            "propensity {mu_hat} outside (0, 1); clip before labeling"
        )));
    }
    let t = if treatment { 1.0 } else { 0.0 };
    let h = t / mu_hat - (1.0 - t) / (1.0 - mu_hat);
    let g_taken = if treatment { g1_hat } else { g0_hat };
    Ok(g1_hat - g0_hat + (outcome - g_taken) * h)
}

/// Raw nuisance predictions for one unit, before propensity clipping.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NuisanceValues {
    pub g1: f64,
    pub g0: f64,
    pub mu: f64,
}

/// What an [`Estimate`] measures.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Estimand {
    Ate,
    Atet,
    Gate { group: String },
}

/// A point estimate with its normal-approximation interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub estimand: Estimand,
    pub point: f64,
    pub std_error: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub confidence: f64,
    /// Rows the estimand targets: all units for ATE, treated units for
    /// ATET, group members for a GATE.
    pub n_effective: usize,
}

impl Estimate {
    /// Whether two intervals share at least one point.
    pub fn ci_overlaps(&self, other: &Estimate) -> bool {
        self.ci_low <= other.ci_high && other.ci_low <= self.ci_high
    }
}

fn check_confidence(confidence: f64) -> Result<f64> {
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(Error::Parameter(format!(
            "confidence must be in (0, 1), got {confidence}"
        )));
    }
    Ok(normal_quantile(0.5 + confidence / 2.0))
}

/// Mean / SE / CI of a vector of per-unit contributions.
fn mean_estimate(
    estimand: Estimand,
    contributions: &[f64],
    confidence: f64,
    n_effective: usize,
) -> Result<Estimate> {
    let z = check_confidence(confidence)?;
    let n = contributions.len();
    let point = kahan_sum(contributions.iter().copied()) / n as f64;
    let std_error = population_std(contributions) / (n as f64).sqrt();
    Ok(Estimate {
        estimand,
        point,
        std_error,
        ci_low: point - z * std_error,
        ci_high: point + z * std_error,
        confidence,
        n_effective,
    })
}

/// Average treatment effect: the pooled mean of the DR labels.
pub fn estimate_ate(rows: &[ScoreRow], confidence: f64) -> Result<Estimate> {
    if rows.is_empty() {
        return Err(Error::Estimation("no rows to estimate ATE from".into()));
    }
    let contributions: Vec<f64> = rows.iter().map(|r| r.dr_label).collect();
    mean_estimate(Estimand::Ate, &contributions, confidence, rows.len())
}

/// Average treatment effect on the treated.
///
/// Per-unit contribution `(T*theta + mu*(Y - g_T)*H) / mean(T)`, whose
/// pooled mean weights treated units' effects by their prevalence.
pub fn estimate_atet(rows: &[ScoreRow], confidence: f64) -> Result<Estimate> {
    if rows.is_empty() {
        return Err(Error::Estimation("no rows to estimate ATET from".into()));
    }
    let n_treated = rows.iter().filter(|r| r.treatment).count();
    if n_treated == 0 {
        return Err(Error::Estimation(
            "ATET is undefined without treated units".into(),
        ));
    }
    let treated_share = n_treated as f64 / rows.len() as f64;
    let contributions: Vec<f64> = rows
        .iter()
        .map(|r| {
            let t = r.treatment_f64();
            (t * r.theta_tilde + r.mu_hat * (r.outcome - r.g_taken()) * r.h_tilde) / treated_share
        })
        .collect();
    mean_estimate(Estimand::Atet, &contributions, confidence, n_treated)
}

/// Group average treatment effect for the units where `mask` is true.
///
/// Per-unit contribution `1{in group} * c / mean(1{in group})`; its
/// pooled mean equals the within-group mean of the DR labels.
pub fn estimate_gate(
    rows: &[ScoreRow],
    mask: &[bool],
    confidence: f64,
    group: &str,
) -> Result<Estimate> {
    if rows.len() != mask.len() {
        return Err(Error::Shape {
            expected: rows.len(),
            actual: mask.len(),
        });
    }
    if rows.is_empty() {
        return Err(Error::Estimation("no rows to estimate GATE from".into()));
    }
    let n_in = mask.iter().filter(|&&m| m).count();
    if n_in == 0 {
        return Err(Error::Estimation(format!(
            "group {group:?} has no members among the scored rows"
        )));
    }
    let share = n_in as f64 / rows.len() as f64;
    let contributions: Vec<f64> = rows
        .iter()
        .zip(mask)
        .map(|(r, &m)| if m { r.dr_label / share } else { 0.0 })
        .collect();
    mean_estimate(
        Estimand::Gate {
            group: group.to_string(),
        },
        &contributions,
        confidence,
        n_in,
    )
}

/// Coefficients of one fold's calibration regression.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlpCoefficients {
    pub fold: usize,
    /// Intercept; with centering this is the fold's mean DR label.
    pub a1: f64,
    /// Slope on the (centered) naive effect.
    pub b1: f64,
    /// The value subtracted from `theta_tilde` before regressing; zero
    /// in uncentered mode.
    pub center: f64,
    /// True when the fold fell back to a constant fit because the naive
    /// effect had no variance.
    pub degenerate: bool,
}

/// Regresses the DR label on the naive effect within one fold.
///
/// With `centered` set (the default pipeline mode), the regressor is
/// `theta_tilde - mean(theta_tilde)`, making the intercept interpretable
/// as the fold-level average effect. When the naive effect has
/// (numerically) zero variance the regression is unidentified and this
/// returns [`Error::DegenerateBlp`]; callers that can fall back should
/// use [`BlpCoefficients::degenerate_fallback`].
pub fn fit_blp(rows: &[ScoreRow], centered: bool) -> Result<BlpCoefficients> {
    if rows.len() < 3 {
        return Err(Error::Parameter(format!(
            "calibration regression needs at least 3 rows, got {}",
            rows.len()
        )));
    }
    let fold = rows[0].fold;
    let thetas: Vec<f64> = rows.iter().map(|r| r.theta_tilde).collect();
    let labels: Vec<f64> = rows.iter().map(|r| r.dr_label).collect();

    let theta_mean = kahan_sum(thetas.iter().copied()) / thetas.len() as f64;
    let center = if centered { theta_mean } else { 0.0 };

    let variance = crate::numeric::population_variance(&thetas);
    if variance <= 1e-20 * (1.0 + theta_mean * theta_mean) {
        return Err(Error::DegenerateBlp);
    }

    let x: Vec<f64> = thetas.iter().map(|v| v - center).collect();
    let design = DenseMatrix::column(&x);
    let fit = crate::learners::fit_ols(&design, &labels)?;

    Ok(BlpCoefficients {
        fold,
        a1: fit.intercept,
        b1: fit.weights[0],
        center,
        degenerate: false,
    })
}

impl BlpCoefficients {
    /// Constant-effect fallback used when [`fit_blp`] reports a
    /// degenerate fold: intercept = mean DR label, slope = 0.
    pub fn degenerate_fallback(fold: usize, rows: &[ScoreRow]) -> Self {
        let mean_label = if rows.is_empty() {
            0.0
        } else {
            kahan_sum(rows.iter().map(|r| r.dr_label)) / rows.len() as f64
        };
        Self {
            fold,
            a1: mean_label,
            b1: 0.0,
            center: 0.0,
            degenerate: true,
        }
    }
}

/// CATE for a unit given its fold's coefficients and naive effect.
#[inline]
pub fn cate_predict(coeffs: &BlpCoefficients, theta_tilde: f64) -> f64 {
    coeffs.a1 + coeffs.b1 * (theta_tilde - coeffs.center)
}

/// Per-unit bias terms of the DR label under misspecified nuisances.
///
/// Given true nuisances `(mu, g1, g0)` and fitted ones
/// `(mu_hat, g1_hat, g0_hat)`, the conditional mean of the label
/// decomposes as `theta + bias1 + bias2` with
///
/// ```text
/// bias1 = (mu/mu_hat - 1)                 * (g1 - g1_hat)
/// bias2 = (1 - (1 - mu)/(1 - mu_hat))     * (g0 - g0_hat)
/// ```
///
/// Each term vanishes when either factor is correct, which is the
/// double-robustness property in computable form.
pub fn bias_decomposition(
    true_mu: &[f64],
    true_g1: &[f64],
    true_g0: &[f64],
    mu_hat: &[f64],
    g1_hat: &[f64],
    g0_hat: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = true_mu.len();
    for (name, v) in [
        ("true_g1", true_g1),
        ("true_g0", true_g0),
        ("mu_hat", mu_hat),
        ("g1_hat", g1_hat),
        ("g0_hat", g0_hat),
    ] {
        if v.len() != n {
            return Err(Error::Shape {
                expected: n,
                actual: v.len(),
            });
        }
        debug_assert!(!name.is_empty());
    }
    let mut bias1 = Vec::with_capacity(n);
    let mut bias2 = Vec::with_capacity(n);
    for i in 0..n {
        if !(mu_hat[i] > 0.0 && mu_hat[i] < 1.0) {
            return Err(Error::Numeric(format!(
                "fitted propensity {} at index {i} outside (0, 1)",
                mu_hat[i]
            )));
        }
        bias1.push((true_mu[i] / mu_hat[i] - 1.0) * (true_g1[i] - g1_hat[i]));
        bias2.push((1.0 - (1.0 - true_mu[i]) / (1.0 - mu_hat[i])) * (true_g0[i] - g0_hat[i]));
    }
    Ok((bias1, bias2))
}
