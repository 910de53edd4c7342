//! Cross-fitting orchestration: the fold loop that turns a dataset and
//! a learner choice into scores, calibration fits, and estimates.
//!
//! For each fold k the pipeline trains nuisance models on every other
//! fold, predicts the held-out units, clips the propensity, builds the
//! doubly robust label, fits the fold's calibration regression, and
//! fills per-unit effects. Estimates (ATE, ATET, per-group GATEs) are
//! pooled over the full score table afterwards.
//!
//! Tabular learners follow the two-model route: the treated-arm and
//! control-arm outcome models are trained on their respective arm
//! subsets of the training complement, and the propensity model on all
//! of it. The text route trains one joint three-headed model instead.
//! Both produce the same score-row shape.
//!
//! A fold whose training complement is missing an arm is a hard error;
//! silently borrowing another fold's model would let units influence
//! the models that score them. Out-of-fold purity is auditable after
//! the fact: the manifest records a digest of every fold's sorted
//! training ids.
//!
//! Folds are independent given the assignment and train in parallel;
//! the final reduction is sequential in fold order, so results do not
//! depend on thread count.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{partition_folds, Dataset, FoldAssignment, Modality, Unit};
use crate::dr::{
    cate_predict, estimate_ate, estimate_atet, estimate_gate, fit_blp, BlpCoefficients, Estimate,
    NuisanceValues, ScoreRow,
};
use crate::error::{Error, Result};
use crate::learners::{
    fit_elastic_net, fit_gbt, fit_ols, fit_text_triple_encoded, GbtObjective, GbtParams,
    TextTripleParams,
};
use crate::numeric::{mix64, DenseMatrix};
use crate::textfeat::{SparseVec, TextEncoderConfig};

/// Which nuisance learner the fold loop trains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LearnerSpec {
    /// Ordinary least squares outcome models and a linear probability
    /// propensity model.
    Ols,
    /// Coordinate-descent elastic net for all three models.
    ElasticNet {
        #[serde(default = "default_enet_penalty")]
        l1: f64,
        #[serde(default = "default_enet_penalty")]
        l2: f64,
        #[serde(default = "default_enet_max_iter")]
        max_iter: usize,
        #[serde(default = "default_enet_tol")]
        tol: f64,
    },
    /// Boosted trees: squared error for the outcome arms, logistic for
    /// the propensity.
    Gbt(GbtParams),
    /// Joint three-headed model over encoded text.
    TextTriple {
        #[serde(default)]
        params: TextTripleParams,
        /// Weight of the propensity term in the joint loss.
        #[serde(default = "default_lambda")]
        lambda: f64,
        #[serde(default)]
        encoder: TextEncoderConfig,
    },
}

fn default_enet_penalty() -> f64 {
    1e-3
}

fn default_enet_max_iter() -> usize {
    2000
}

fn default_enet_tol() -> f64 {
    1e-8
}

fn default_lambda() -> f64 {
    1.0
}

impl LearnerSpec {
    /// The modality this learner consumes.
    pub fn required_modality(&self) -> Modality {
        match self {
            LearnerSpec::TextTriple { .. } => Modality::Text,
            _ => Modality::Tabular,
        }
    }

    fn name(&self) -> &'static str {
        match self {
            LearnerSpec::Ols => "ols",
            LearnerSpec::ElasticNet { .. } => "elastic_net",
            LearnerSpec::Gbt(_) => "gbt",
            LearnerSpec::TextTriple { .. } => "text_triple",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CrossfitConfig {
    pub k_folds: usize,
    pub learner: LearnerSpec,
    /// Which covariate modality the run uses. Must agree with the
    /// learner: `text_triple` for text, anything else for tabular.
    pub modality: Modality,
    /// Propensity clip bound; scores end up in [eps, 1 - eps].
    pub propensity_eps: f64,
    pub confidence: f64,
    pub seed: u64,
    /// Center the calibration regressor at its fold mean (the default);
    /// uncentered mode only shifts the intercept's meaning.
    pub blp_centered: bool,
    /// Groups smaller than this are skipped rather than estimated.
    pub min_group_size: usize,
}

impl Default for CrossfitConfig {
    fn default() -> Self {
        Self {
            k_folds: 5,
            learner: LearnerSpec::Gbt(GbtParams::default()),
            modality: Modality::Tabular,
            propensity_eps: 0.01,
            confidence: 0.95,
            seed: 0,
            blp_centered: true,
            min_group_size: 30,
        }
    }
}

impl CrossfitConfig {
    /// Checks the pure-config invariants (no dataset needed).
    pub fn validate(&self) -> Result<()> {
        if self.k_folds < 2 {
            return Err(Error::Parameter(format!(
                "k_folds must be >= 2, got {}",
                self.k_folds
            )));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(Error::Parameter(format!(
                "confidence must be in (0, 1), got {}",
                self.confidence
            )));
        }
        if !(self.propensity_eps > 0.0 && self.propensity_eps < 0.5) {
            return Err(Error::Parameter(format!(
                "propensity_eps must be in (0, 0.5), got {}",
                self.propensity_eps
            )));
        }
        if self.min_group_size < 1 {
            return Err(Error::Parameter("min_group_size must be >= 1".into()));
        }
        match &self.learner {
            LearnerSpec::ElasticNet { l1, l2, max_iter, tol } => {
                if *l1 < 0.0 || *l2 < 0.0 || !l1.is_finite() || !l2.is_finite() {
                    return Err(Error::Parameter(format!(
                        "elastic net penalties must be finite and non-negative, got l1={l1}, l2={l2}"
                    )));
                }
                if *max_iter == 0 || !(*tol > 0.0) {
                    return Err(Error::Parameter(format!(
                        "elastic net needs max_iter >= 1 and tol > 0, got {max_iter} and {tol}"
                    )));
                }
            }
            LearnerSpec::Gbt(params) => params.validate()?,
            LearnerSpec::TextTriple { params, lambda, encoder } => {
                params.validate()?;
                encoder.validate()?;
                if !(*lambda >= 0.0) {
                    return Err(Error::Parameter(format!(
                        "lambda must be >= 0, got {lambda}"
                    )));
                }
            }
            LearnerSpec::Ols => {}
        }
        if self.learner.required_modality() != self.modality {
            return Err(Error::Config(format!(
                "learner {} works on {:?} covariates but modality is {:?}",
                self.learner.name(),
                self.learner.required_modality(),
                self.modality
            )));
        }
        Ok(())
    }

    /// Full validation including dataset compatibility.
    pub fn validate_for(&self, dataset: &Dataset) -> Result<()> {
        self.validate()?;
        match self.modality {
            Modality::Tabular | Modality::Both => {
                if !dataset.modality.has_tabular() || dataset.tabular_width() == 0 {
                    return Err(Error::Config(
                        "tabular modality requested but the dataset has no feature columns".into(),
                    ));
                }
            }
            Modality::Text => {
                if !dataset.modality.has_text() {
                    return Err(Error::Config(
                        "text modality requested but the dataset has no text column".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Where the score table's nuisances came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NuisanceProvenance {
    /// Trained out-of-fold by the fold loop.
    Trained,
    /// Supplied by an external per-unit source (oracle or saved run).
    Injected,
}

/// Per-fold training and scoring bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldDiagnostics {
    pub fold: usize,
    /// Rows the fold's models trained on (0 when injected).
    pub n_train: usize,
    pub n_train_treated: usize,
    /// Rows this fold's models scored (the held-out fold size).
    pub n_score: usize,
    /// Hex digest over the sorted training unit ids; empty when
    /// injected. Lets an auditor confirm out-of-fold purity.
    pub train_ids_sha256: String,
    /// Final training loss per model: keys `g1`/`g0`/`mu` for boosted
    /// trees, `joint` for the text model, absent for closed-form fits.
    pub final_train_losses: BTreeMap<String, f64>,
    /// True when the calibration regression fell back to a constant.
    pub blp_degenerate: bool,
}

/// Skipped GATE groups, with the size that disqualified them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedGroup {
    pub group: String,
    pub size: usize,
}

/// Everything needed to audit or reproduce a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format_version: u32,
    pub config: CrossfitConfig,
    pub dataset_hash: String,
    pub n_units: usize,
    pub fold_assignment_hash: String,
    pub nuisance_source: NuisanceProvenance,
    pub folds: Vec<FoldDiagnostics>,
    pub skipped_groups: Vec<SkippedGroup>,
}

/// Output of one cross-fitted run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossfitResult {
    /// One row per unit, in dataset order.
    pub score_rows: Vec<ScoreRow>,
    /// ATE, then ATET, then GATEs in group order.
    pub estimates: Vec<Estimate>,
    pub blp_per_fold: Vec<BlpCoefficients>,
    pub manifest: RunManifest,
}

/// Format version written into manifests; bump on layout changes.
pub const RESULT_FORMAT_VERSION: u32 = 1;

/// Per-unit supplier of raw nuisance values, bypassing training.
///
/// `index` is the unit's position in dataset order. Returning `None`
/// for any unit aborts the run with a coverage error.
pub trait NuisanceSource: Sync {
    fn nuisances(&self, index: usize, unit: &Unit) -> Option<NuisanceValues>;
}

impl NuisanceSource for [NuisanceValues] {
    fn nuisances(&self, index: usize, _unit: &Unit) -> Option<NuisanceValues> {
        self.get(index).copied()
    }
}

impl NuisanceSource for Vec<NuisanceValues> {
    fn nuisances(&self, index: usize, unit: &Unit) -> Option<NuisanceValues> {
        self.as_slice().nuisances(index, unit)
    }
}

impl<F> NuisanceSource for F
where
    F: Fn(usize, &Unit) -> Option<NuisanceValues> + Sync,
{
    fn nuisances(&self, index: usize, unit: &Unit) -> Option<NuisanceValues> {
        self(index, unit)
    }
}

/// One fold's trained-or-injected scoring payload, before assembly.
struct FoldOutput {
    fold: usize,
    n_train: usize,
    n_train_treated: usize,
    train_ids_sha256: String,
    final_train_losses: BTreeMap<String, f64>,
    /// (unit index, raw nuisance predictions) for the held-out units.
    predictions: Vec<(usize, NuisanceValues)>,
}

/// Derives a per-model training seed from the run seed, the fold, and
/// a role tag, so fold models are independent but reproducible.
fn fold_seed(base: u64, fold: usize, role: u64) -> u64 {
    mix64(base ^ mix64(((fold as u64) << 3) | role))
}

fn digest_train_ids(dataset: &Dataset, indices: &[usize]) -> String {
    let mut ids: Vec<&str> = indices.iter().map(|&i| dataset.units[i].id.as_str()).collect();
    ids.sort_unstable();
    let mut hasher = Sha256::new();
    for id in ids {
        hasher.update(id.as_bytes());
        hasher.update(b"\n");
    }
    hex::encode(hasher.finalize())
}

fn digest_fold_assignment(assignment: &FoldAssignment) -> String {
    let mut hasher = Sha256::new();
    hasher.update(b"folds-v1");
    hasher.update((assignment.k_folds as u64).to_le_bytes());
    hasher.update(assignment.seed.to_le_bytes());
    for &f in &assignment.fold_of {
        hasher.update((f as u64).to_le_bytes());
    }
    hex::encode(hasher.finalize())
}

/// Wraps a learner failure with the fold it happened in.
fn with_fold(fold: usize, context: &str) -> impl FnOnce(Error) -> Error + '_ {
    move |e| match e {
        already @ Error::Orchestration { .. } => already,
        other => Error::Orchestration {
            fold,
            message: format!("{context}: {other}"),
        },
    }
}

fn split_arms(dataset: &Dataset, indices: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let mut treated = Vec::new();
    let mut control = Vec::new();
    for &i in indices {
        if dataset.units[i].treatment {
            treated.push(i);
        } else {
            control.push(i);
        }
    }
    (treated, control)
}

fn require_both_arms(fold: usize, treated: usize, control: usize) -> Result<()> {
    if treated == 0 || control == 0 {
        let missing = if treated == 0 { "treated" } else { "control" };
        return Err(Error::Orchestration {
            fold,
            message: format!("training complement has no {missing} units"),
        });
    }
    Ok(())
}

fn outcomes_at(dataset: &Dataset, indices: &[usize]) -> Vec<f64> {
    indices.iter().map(|&i| dataset.units[i].outcome).collect()
}

fn treatments_at(dataset: &Dataset, indices: &[usize]) -> Vec<f64> {
    indices
        .iter()
        .map(|&i| dataset.units[i].treatment_f64())
        .collect()
}

fn train_fold_tabular(
    dataset: &Dataset,
    x_all: &DenseMatrix,
    assignment: &FoldAssignment,
    fold: usize,
    config: &CrossfitConfig,
) -> Result<FoldOutput> {
    let complement = assignment.complement_indices(fold);
    let held_out = assignment.fold_indices(fold);
    let (treated, control) = split_arms(dataset, &complement);
    require_both_arms(fold, treated.len(), control.len())?;

    let x_treated = x_all.select_rows(&treated);
    let x_control = x_all.select_rows(&control);
    let x_comp = x_all.select_rows(&complement);
    let y_treated = outcomes_at(dataset, &treated);
    let y_control = outcomes_at(dataset, &control);
    let t_comp = treatments_at(dataset, &complement);

    let mut final_train_losses = BTreeMap::new();
    let (g1_model, g0_model, mu_model) = match &config.learner {
        LearnerSpec::Ols => {
            let g1 = fit_ols(&x_treated, &y_treated).map_err(with_fold(fold, "training g1"))?;
            let g0 = fit_ols(&x_control, &y_control).map_err(with_fold(fold, "training g0"))?;
            let mu = fit_ols(&x_comp, &t_comp).map_err(with_fold(fold, "training mu"))?;
            (
                crate::learners::Regressor::Linear(g1),
                crate::learners::Regressor::Linear(g0),
                crate::learners::PropensityModel::LinearProbability(mu),
            )
        }
        LearnerSpec::ElasticNet { l1, l2, max_iter, tol } => {
            let g1 = fit_elastic_net(&x_treated, &y_treated, *l1, *l2, *max_iter, *tol)
                .map_err(with_fold(fold, "training g1"))?;
            let g0 = fit_elastic_net(&x_control, &y_control, *l1, *l2, *max_iter, *tol)
                .map_err(with_fold(fold, "training g0"))?;
            let mu = fit_elastic_net(&x_comp, &t_comp, *l1, *l2, *max_iter, *tol)
                .map_err(with_fold(fold, "training mu"))?;
            (
                crate::learners::Regressor::Linear(g1),
                crate::learners::Regressor::Linear(g0),
                crate::learners::PropensityModel::LinearProbability(mu),
            )
        }
        LearnerSpec::Gbt(params) => {
            let mut p1 = params.clone();
            p1.seed = fold_seed(config.seed ^ params.seed, fold, 1);
            let mut p0 = params.clone();
            p0.seed = fold_seed(config.seed ^ params.seed, fold, 2);
            let mut pm = params.clone();
            pm.seed = fold_seed(config.seed ^ params.seed, fold, 3);

            let g1 = fit_gbt(&x_treated, &y_treated, GbtObjective::SquaredError, &p1)
                .map_err(with_fold(fold, "training g1"))?;
            let g0 = fit_gbt(&x_control, &y_control, GbtObjective::SquaredError, &p0)
                .map_err(with_fold(fold, "training g0"))?;
            let mu = fit_gbt(&x_comp, &t_comp, GbtObjective::Logistic, &pm)
                .map_err(with_fold(fold, "training mu"))?;

            for (key, model) in [("g1", &g1), ("g0", &g0), ("mu", &mu)] {
                if let Some(&loss) = model.train_loss.last() {
                    final_train_losses.insert(key.to_string(), loss);
                }
            }
            (
                crate::learners::Regressor::Gbt(g1),
                crate::learners::Regressor::Gbt(g0),
                crate::learners::PropensityModel::GbtLogistic(mu),
            )
        }
        LearnerSpec::TextTriple { .. } => {
            return Err(Error::Invariant(
                "text learner reached the tabular training path".into(),
            ));
        }
    };

    let x_fold = x_all.select_rows(&held_out);
    let g1_hat = g1_model.predict(&x_fold).map_err(with_fold(fold, "scoring g1"))?;
    let g0_hat = g0_model.predict(&x_fold).map_err(with_fold(fold, "scoring g0"))?;
    let mu_hat = mu_model
        .predict_score(&x_fold)
        .map_err(with_fold(fold, "scoring mu"))?;

    let predictions = held_out
        .iter()
        .enumerate()
        .map(|(j, &i)| {
            (
                i,
                NuisanceValues {
                    g1: g1_hat[j],
                    g0: g0_hat[j],
                    mu: mu_hat[j],
                },
            )
        })
        .collect();

    Ok(FoldOutput {
        fold,
        n_train: complement.len(),
        n_train_treated: treated.len(),
        train_ids_sha256: digest_train_ids(dataset, &complement),
        final_train_losses,
        predictions,
    })
}

fn train_fold_text(
    dataset: &Dataset,
    features: &[SparseVec],
    assignment: &FoldAssignment,
    fold: usize,
    encoder: &TextEncoderConfig,
    params: &TextTripleParams,
    lambda: f64,
    config: &CrossfitConfig,
) -> Result<FoldOutput> {
    let complement = assignment.complement_indices(fold);
    let held_out = assignment.fold_indices(fold);
    let (treated, control) = split_arms(dataset, &complement);
    require_both_arms(fold, treated.len(), control.len())?;

    let train_feats: Vec<SparseVec> = complement.iter().map(|&i| features[i].clone()).collect();
    let outcomes = outcomes_at(dataset, &complement);
    let arms: Vec<bool> = complement.iter().map(|&i| dataset.units[i].treatment).collect();

    let mut fold_params = params.clone();
    fold_params.seed = fold_seed(config.seed ^ params.seed, fold, 4);
    let model = fit_text_triple_encoded(encoder, &train_feats, &outcomes, &arms, lambda, &fold_params)
        .map_err(with_fold(fold, "training joint text model"))?;

    let mut final_train_losses = BTreeMap::new();
    if let Some(&loss) = model.train_loss.last() {
        final_train_losses.insert("joint".to_string(), loss);
    }

    let fold_feats: Vec<SparseVec> = held_out.iter().map(|&i| features[i].clone()).collect();
    let triples = model.predict_encoded(&fold_feats);
    let predictions = held_out
        .iter()
        .zip(&triples)
        .map(|(&i, t)| {
            (
                i,
                NuisanceValues {
                    g1: t.g1,
                    g0: t.g0,
                    mu: t.mu,
                },
            )
        })
        .collect();

    Ok(FoldOutput {
        fold,
        n_train: complement.len(),
        n_train_treated: treated.len(),
        train_ids_sha256: digest_train_ids(dataset, &complement),
        final_train_losses,
        predictions,
    })
}

/// Builds score rows from fold outputs, fits per-fold calibrations,
/// fills effects, and pools the estimates.
fn assemble(
    dataset: &Dataset,
    assignment: &FoldAssignment,
    config: &CrossfitConfig,
    outputs: Vec<FoldOutput>,
    provenance: NuisanceProvenance,
) -> Result<CrossfitResult> {
    let n = dataset.len();
    let mut rows: Vec<Option<ScoreRow>> = vec![None; n];
    for output in &outputs {
        for &(i, nv) in &output.predictions {
            let unit = &dataset.units[i];
            let row = ScoreRow::build(
                unit.id.clone(),
                output.fold,
                unit.outcome,
                unit.treatment,
                unit.group.clone(),
                nv.g1,
                nv.g0,
                nv.mu,
                config.propensity_eps,
            )
            .map_err(with_fold(output.fold, "building score row"))?;
            if rows[i].replace(row).is_some() {
                return Err(Error::Invariant(format!(
                    "unit {} scored twice",
                    dataset.units[i].id
                )));
            }
        }
    }

    let mut blp_per_fold = Vec::with_capacity(assignment.k_folds);
    let mut degenerate_folds = vec![false; assignment.k_folds];
    for fold in 0..assignment.k_folds {
        let members = assignment.fold_indices(fold);
        let fold_rows: Vec<ScoreRow> = members
            .iter()
            .map(|&i| {
                rows[i]
                    .clone()
                    .ok_or_else(|| Error::Invariant(format!("unit index {i} never scored")))
            })
            .collect::<Result<_>>()?;
        let coeffs = match fit_blp(&fold_rows, config.blp_centered) {
            Ok(c) => c,
            Err(Error::DegenerateBlp) => {
                degenerate_folds[fold] = true;
                BlpCoefficients::degenerate_fallback(fold, &fold_rows)
            }
            Err(e) => return Err(with_fold(fold, "calibration regression")(e)),
        };
        for &i in &members {
            let row = rows[i].as_mut().expect("fold member scored");
            row.cate = cate_predict(&coeffs, row.theta_tilde);
        }
        blp_per_fold.push(coeffs);
    }

    let score_rows: Vec<ScoreRow> = rows
        .into_iter()
        .enumerate()
        .map(|(i, r)| r.ok_or_else(|| Error::Invariant(format!("unit index {i} never scored"))))
        .collect::<Result<_>>()?;
    if let Some(bad) = score_rows.iter().find(|r| !r.cate.is_finite()) {
        return Err(Error::Invariant(format!(
            "non-finite effect for unit {}",
            bad.unit_id
        )));
    }

    let mut estimates = vec![
        estimate_ate(&score_rows, config.confidence)?,
        estimate_atet(&score_rows, config.confidence)?,
    ];
    let mut skipped_groups = Vec::new();
    for (group, size) in dataset.group_counts() {
        if size < config.min_group_size {
            skipped_groups.push(SkippedGroup { group, size });
            continue;
        }
        let mask: Vec<bool> = score_rows
            .iter()
            .map(|r| r.group.as_deref() == Some(group.as_str()))
            .collect();
        estimates.push(estimate_gate(&score_rows, &mask, config.confidence, &group)?);
    }

    let folds = outputs
        .into_iter()
        .map(|o| FoldDiagnostics {
            fold: o.fold,
            n_train: o.n_train,
            n_train_treated: o.n_train_treated,
            n_score: o.predictions.len(),
            train_ids_sha256: o.train_ids_sha256,
            final_train_losses: o.final_train_losses,
            blp_degenerate: degenerate_folds[o.fold],
        })
        .collect();

    Ok(CrossfitResult {
        score_rows,
        estimates,
        blp_per_fold,
        manifest: RunManifest {
            format_version: RESULT_FORMAT_VERSION,
            config: config.clone(),
            dataset_hash: dataset.content_hash(),
            n_units: n,
            fold_assignment_hash: digest_fold_assignment(assignment),
            nuisance_source: provenance,
            folds,
            skipped_groups,
        },
    })
}

/// Runs the full cross-fitted pipeline: fold partition, out-of-fold
/// nuisance training, scoring, per-fold calibration, pooled estimates.
pub fn run_crossfit(dataset: &Dataset, config: &CrossfitConfig) -> Result<CrossfitResult> {
    config.validate_for(dataset)?;
    let assignment = partition_folds(dataset, config.k_folds, config.seed)?;

    let outputs: Vec<FoldOutput> = match &config.learner {
        LearnerSpec::TextTriple { params, lambda, encoder } => {
            // Encode every text once; fold training then only slices.
            // For the remote encoder this is the single network pass.
            let texts: Vec<&str> = dataset.units.iter().map(|u| u.text.as_str()).collect();
            let features = encoder.encode_all(&texts)?;
            (0..config.k_folds)
                .into_par_iter()
                .map(|fold| {
                    train_fold_text(
                        dataset,
                        &features,
                        &assignment,
                        fold,
                        encoder,
                        params,
                        *lambda,
                        config,
                    )
                })
                .collect::<Result<_>>()?
        }
        _ => {
            let width = dataset.tabular_width();
            let mut flat = Vec::with_capacity(dataset.len() * width);
            for u in &dataset.units {
                flat.extend_from_slice(&u.tabular);
            }
            let x_all = DenseMatrix::from_vec(dataset.len(), width, flat)?;
            (0..config.k_folds)
                .into_par_iter()
                .map(|fold| train_fold_tabular(dataset, &x_all, &assignment, fold, config))
                .collect::<Result<_>>()?
        }
    };

    assemble(dataset, &assignment, config, outputs, NuisanceProvenance::Trained)
}

/// Runs the scoring, calibration, and estimation path with nuisances
/// supplied per unit instead of trained. Test hook for oracle and
/// robustness suites; also useful for replaying saved predictions.
pub fn inject_nuisances<S: NuisanceSource + ?Sized>(
    dataset: &Dataset,
    source: &S,
    config: &CrossfitConfig,
) -> Result<CrossfitResult> {
    // Learner and modality are irrelevant without training, so only the
    // scoring-side parameters are validated here.
    if !(config.propensity_eps > 0.0 && config.propensity_eps < 0.5) {
        return Err(Error::Parameter(format!(
            "propensity_eps must be in (0, 0.5), got {}",
            config.propensity_eps
        )));
    }
    if !(config.confidence > 0.0 && config.confidence < 1.0) {
        return Err(Error::Parameter(format!(
            "confidence must be in (0, 1), got {}",
            config.confidence
        )));
    }
    if config.min_group_size < 1 {
        return Err(Error::Parameter("min_group_size must be >= 1".into()));
    }
    let assignment = partition_folds(dataset, config.k_folds, config.seed)?;

    let outputs: Vec<FoldOutput> = (0..config.k_folds)
        .map(|fold| {
            let held_out = assignment.fold_indices(fold);
            let predictions: Vec<(usize, NuisanceValues)> = held_out
                .iter()
                .map(|&i| {
                    source
                        .nuisances(i, &dataset.units[i])
                        .map(|nv| (i, nv))
                        .ok_or_else(|| {
                            Error::Coverage(format!(
                                "no nuisances supplied for unit {} (index {i})",
                                dataset.units[i].id
                            ))
                        })
                })
                .collect::<Result<_>>()?;
            Ok(FoldOutput {
                fold,
                n_train: 0,
                n_train_treated: 0,
                train_ids_sha256: String::new(),
                final_train_losses: BTreeMap::new(),
                predictions,
            })
        })
        .collect::<Result<_>>()?;

    assemble(dataset, &assignment, config, outputs, NuisanceProvenance::Injected)
}

impl CrossfitResult {
    /// The first estimate matching `pred`, if any.
    pub fn find_estimate(&self, pred: impl Fn(&Estimate) -> bool) -> Option<&Estimate> {
        self.estimates.iter().find(|e| pred(e))
    }

    /// Writes the result as a directory: `scores.csv`,
    /// `estimates.json`, `blp.json`, `manifest.json`. Floats are
    /// written in shortest-round-trip form, so a reload is exact.
    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;

        let mut writer = csv::Writer::from_path(dir.join("scores.csv"))?;
        writer.write_record([
            "unit_id",
            "fold",
            "outcome",
            "treatment",
            "group",
            "g1_hat",
            "g0_hat",
            "mu_hat",
            "h_tilde",
            "theta_tilde",
            "dr_label",
            "cate",
        ])?;
        for r in &self.score_rows {
            writer.write_record([
                r.unit_id.clone(),
                r.fold.to_string(),
                format!("{}", r.outcome),
                if r.treatment { "1".into() } else { "0".into() },
                r.group.clone().unwrap_or_default(),
                format!("{}", r.g1_hat),
                format!("{}", r.g0_hat),
                format!("{}", r.mu_hat),
                format!("{}", r.h_tilde),
                format!("{}", r.theta_tilde),
                format!("{}", r.dr_label),
                format!("{}", r.cate),
            ])?;
        }
        writer.flush()?;

        write_pretty_json(&dir.join("estimates.json"), &self.estimates)?;
        write_pretty_json(&dir.join("blp.json"), &self.blp_per_fold)?;
        write_pretty_json(&dir.join("manifest.json"), &self.manifest)?;
        Ok(())
    }

    /// Reads a directory written by [`CrossfitResult::save_dir`].
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let mut score_rows = Vec::new();
        let mut reader = csv::Reader::from_path(dir.join("scores.csv"))?;
        for (i, record) in reader.records().enumerate() {
            let record = record?;
            let row_no = i + 2;
            if record.len() != 12 {
                return Err(Error::Validation {
                    row: row_no,
                    message: format!("expected 12 columns in scores.csv, got {}", record.len()),
                });
            }
            let field = |idx: usize| record.get(idx).unwrap_or_default();
            let float = |idx: usize, name: &str| -> Result<f64> {
                f64::from_str(field(idx).trim()).map_err(|_| Error::Validation {
                    row: row_no,
                    message: format!("cannot parse {name} {:?} as a number", field(idx)),
                })
            };
            let treatment = match field(3).trim() {
                "1" => true,
                "0" => false,
                other => {
                    return Err(Error::Validation {
                        row: row_no,
                        message: format!("treatment must be 0 or 1, got {other:?}"),
                    })
                }
            };
            let group = match field(4) {
                "" => None,
                g => Some(g.to_string()),
            };
            score_rows.push(ScoreRow {
                unit_id: field(0).to_string(),
                fold: field(1).trim().parse().map_err(|_| Error::Validation {
                    row: row_no,
                    message: format!("cannot parse fold {:?}", field(1)),
                })?,
                outcome: float(2, "outcome")?,
                treatment,
                group,
                g1_hat: float(5, "g1_hat")?,
                g0_hat: float(6, "g0_hat")?,
                mu_hat: float(7, "mu_hat")?,
                h_tilde: float(8, "h_tilde")?,
                theta_tilde: float(9, "theta_tilde")?,
                dr_label: float(10, "dr_label")?,
                cate: float(11, "cate")?,
            });
        }

        let estimates: Vec<Estimate> = read_json(&dir.join("estimates.json"))?;
        let blp_per_fold: Vec<BlpCoefficients> = read_json(&dir.join("blp.json"))?;
        let manifest: RunManifest = read_json(&dir.join("manifest.json"))?;
        if manifest.format_version != RESULT_FORMAT_VERSION {
            return Err(Error::Config(format!(
                "unsupported result format version {} (this build reads {})",
                manifest.format_version, RESULT_FORMAT_VERSION
            )));
        }
        Ok(CrossfitResult {
            score_rows,
            estimates,
            blp_per_fold,
            manifest,
        })
    }
}

fn write_pretty_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer_pretty(&mut file, value)?;
    file.write_all(b"\n")?;
    file.flush()?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    Ok(serde_json::from_reader(file)?)
}
