//! End-to-end acceptance checks for the estimation pipeline.
//!
//! Each test prints one `acceptance ACn: PASS/FAIL (detail)` line before
//! enforcing its verdict, so running this target with `--nocapture`
//! doubles as a checklist:
//!
//! ```text
//! cargo test -p drcf-core --test acceptance -- --nocapture
//! ```
//!
//! Thresholds and tolerances live in the constants below, next to the
//! criteria they gate. The cross-modality fixture (one dataset scored by
//! both the tabular and the text pipeline) takes a few seconds to build,
//! so it is constructed once and shared by the tests that need it.

use std::collections::{BTreeMap, HashSet};
use std::sync::OnceLock;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use drcf_core::crossfit::{
    inject_nuisances, run_crossfit, CrossfitConfig, CrossfitResult, LearnerSpec,
};
use drcf_core::data::Modality;
use drcf_core::dr::{
    bias_decomposition, clip_propensity, estimate_ate, estimate_atet, estimate_gate, Estimand,
    Estimate, NuisanceValues, ScoreRow,
};
use drcf_core::learners::{
    fit_elastic_net, fit_gbt, fit_ols, triple_loss, GbtObjective, GbtParams, TextTripleParams,
    TriplePrediction,
};
use drcf_core::numeric::{kahan_sum, sigmoid, DenseMatrix};
use drcf_core::report::{
    area_ratio, compare_runs, compute_metrics, lift_curve, pearson, spearman,
    write_comparison_bundle, AreaBaseline, CompareOptions,
};
use drcf_core::synthetic::{
    corrupt_nuisances, generate, oracle_estimands, CorruptionMode, EffectSpec, SyntheticConfig,
};
use drcf_core::textfeat::{FeaturizerConfig, TextEncoderConfig};

/// Sampling checks allow three standard errors.
const SE_FACTOR: f64 = 3.0;
/// Nominal-95% intervals must cover the truth at least this often in
/// the 100-run recovery study.
const MIN_COVERED_RUNS: usize = 90;
const N_RECOVERY_RUNS: usize = 100;
/// Wall-clock ceiling for one recovery run.
const RUN_BUDGET_SECS: f64 = 120.0;
/// Tolerance for identities that hold by algebra, not by sampling.
const EXACT_TOL: f64 = 1e-10;
/// Tolerance for library-vs-brute-force metric comparisons.
const BRUTE_FORCE_TOL: f64 = 1e-10;
/// Floating-point slack when comparing lift-curve areas.
const AREA_SLACK: f64 = 1e-9;
const GATE_SPEARMAN_MIN: f64 = 0.7;
const CATE_SPEARMAN_MIN: f64 = 0.5;
const AREA_RATIO_MIN: f64 = 0.7;
const OOF_CORR_MIN: f64 = 0.95;
const ENET_VS_OLS_TOL: f64 = 1e-6;

/// Prints the criterion verdict, then enforces it.
fn verdict(tag: &str, pass: bool, detail: &str) {
    let word = if pass { "PASS" } else { "FAIL" };
    println!("acceptance {tag}: {word} ({detail})");
    assert!(pass, "{tag} failed: {detail}");
}

fn ate_of(result: &CrossfitResult) -> &Estimate {
    result
        .find_estimate(|e| e.estimand == Estimand::Ate)
        .expect("every run carries an ATE estimate")
}

/// Largest difference across point, standard error, and CI bounds.
fn estimate_deviation(a: &Estimate, b: &Estimate) -> f64 {
    (a.point - b.point)
        .abs()
        .max((a.std_error - b.std_error).abs())
        .max((a.ci_low - b.ci_low).abs())
        .max((a.ci_high - b.ci_high).abs())
}

fn naive_mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Textbook two-pass correlation with plain accumulation; the oracle
/// the library implementation is compared against.
fn naive_pearson(x: &[f64], y: &[f64]) -> f64 {
    let mx = naive_mean(x);
    let my = naive_mean(y);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx * syy).sqrt()
}

/// Rank by counting: 1 + #smaller + half of the remaining equal values.
fn naive_ranks(v: &[f64]) -> Vec<f64> {
    v.iter()
        .map(|&a| {
            let smaller = v.iter().filter(|&&b| b < a).count() as f64;
            let equal = v.iter().filter(|&&b| b == a).count() as f64;
            1.0 + smaller + (equal - 1.0) / 2.0
        })
        .collect()
}

struct ModalityFixture {
    tabular: CrossfitResult,
    text: CrossfitResult,
}

static MODALITY_FIXTURE: OnceLock<ModalityFixture> = OnceLock::new();

/// One group-structured dataset scored by both pipelines.
///
/// Ten groups with effects -0.01 .. -0.10 give the rank correlations
/// room to be meaningful; hyperparameters are sized so the whole
/// fixture builds in a few seconds on one core.
fn modality_fixture() -> &'static ModalityFixture {
    MODALITY_FIXTURE.get_or_init(|| {
        let effects: Vec<f64> = (1..=10).map(|i| -0.01 * i as f64).collect();
        let (dataset, _) = generate(&SyntheticConfig {
            n_units: 20_000,
            n_groups: 10,
            effect: EffectSpec::GroupStructured { effects },
            confounding_strength: 1.0,
            noise_sd: 0.05,
            seed: 42,
            ..SyntheticConfig::default()
        })
        .expect("fixture generation");
        let tabular = run_crossfit(
            &dataset,
            &CrossfitConfig {
                learner: LearnerSpec::Gbt(GbtParams {
                    n_trees: 60,
                    max_depth: 3,
                    min_leaf: 100,
                    ..GbtParams::default()
                }),
                seed: 7,
                ..CrossfitConfig::default()
            },
        )
        .expect("tabular fixture run");
        let text = run_crossfit(
            &dataset,
            &CrossfitConfig {
                modality: Modality::Text,
                learner: LearnerSpec::TextTriple {
                    params: TextTripleParams {
                        epochs: 60,
                        batch_size: 128,
                        learning_rate: 0.03,
                        seed: 0,
                    },
                    lambda: 1.0,
                    encoder: TextEncoderConfig::Hashing(FeaturizerConfig {
                        hash_dim: 1 << 14,
                        ngram_max: 2,
                        ..FeaturizerConfig::default()
                    }),
                },
                seed: 7,
                ..CrossfitConfig::default()
            },
        )
        .expect("text fixture run");
        ModalityFixture { tabular, text }
    })
}

fn gate_points(result: &CrossfitResult) -> BTreeMap<String, f64> {
    result
        .estimates
        .iter()
        .filter_map(|e| match &e.estimand {
            Estimand::Gate { group } => Some((group.clone(), e.point)),
            _ => None,
        })
        .collect()
}

#[test]
fn ac01_oracle_ate_recovery() {
    let tau = -0.01;
    let start = Instant::now();
    let mut covered = 0usize;
    let mut within_band = 0usize;
    let mut both = 0usize;
    let mut first = None;
    for i in 0..N_RECOVERY_RUNS as u64 {
        let (dataset, _) = generate(&SyntheticConfig {
            n_units: 20_000,
            effect: EffectSpec::Constant { tau },
            confounding_strength: 1.0,
            noise_sd: 0.05,
            seed: 1000 + i,
            ..SyntheticConfig::default()
        })
        .expect("synthetic generation");
        let result = run_crossfit(
            &dataset,
            &CrossfitConfig {
                learner: LearnerSpec::Gbt(GbtParams {
                    n_trees: 60,
                    max_depth: 3,
                    min_leaf: 100,
                    ..GbtParams::default()
                }),
                seed: 2000 + i,
                ..CrossfitConfig::default()
            },
        )
        .expect("cross-fit run");
        let ate = ate_of(&result);
        let in_band = (ate.point - tau).abs() <= SE_FACTOR * ate.std_error;
        let covers = ate.ci_low <= tau && tau <= ate.ci_high;
        within_band += usize::from(in_band);
        covered += usize::from(covers);
        both += usize::from(in_band && covers);
        if first.is_none() {
            first = Some((ate.point, ate.std_error));
        }
    }
    let secs_per_run = start.elapsed().as_secs_f64() / N_RECOVERY_RUNS as f64;
    let (point0, se0) = first.expect("at least one run");
    let pass = both >= MIN_COVERED_RUNS && secs_per_run < RUN_BUDGET_SECS;
    verdict(
        "AC1",
        pass,
        &format!(
            "{both}/{N_RECOVERY_RUNS} runs met both checks against tau={tau} \
             (CI covered in {covered}, point within 3 SE in {within_band}); \
             run 0: ate={point0:.5} se={se0:.5}; {secs_per_run:.2}s per run, budget {RUN_BUDGET_SECS:.0}s"
        ),
    );
}

#[test]
fn ac02_double_robustness_under_nuisance_corruption() {
    let start = Instant::now();
    let (dataset, truth) = generate(&SyntheticConfig {
        n_units: 50_000,
        seed: 202,
        ..SyntheticConfig::default()
    })
    .expect("synthetic generation");
    let oracle = oracle_estimands(&dataset, &truth).expect("oracle estimands");
    let config = CrossfitConfig {
        seed: 202,
        ..CrossfitConfig::default()
    };
    let inject = |mode: CorruptionMode| -> Estimate {
        let nuisances = corrupt_nuisances(&truth, mode);
        let result =
            inject_nuisances(&dataset, nuisances.as_slice(), &config).expect("injection run");
        ate_of(&result).clone()
    };

    let prop_only = inject(CorruptionMode::PropensityShift { delta: 0.2 });
    let prop_err = (prop_only.point - oracle.ate).abs();
    let prop_ok = prop_err <= SE_FACTOR * prop_only.std_error;

    let outcome_only = inject(CorruptionMode::OutcomeShift { delta: 0.1 });
    let outcome_err = (outcome_only.point - oracle.ate).abs();
    let outcome_ok = outcome_err <= SE_FACTOR * outcome_only.std_error;

    let joint = inject(CorruptionMode::Both {
        propensity_delta: 0.2,
        outcome_delta: 0.1,
    });
    let measured_bias = joint.point - oracle.ate;
    // The decomposition must see exactly what the scorer saw: the same
    // shifts, with the shifted propensity clipped the same way.
    let mu_hat: Vec<f64> = truth
        .mu
        .iter()
        .map(|&m| clip_propensity(m + 0.2, config.propensity_eps))
        .collect();
    let g1_hat: Vec<f64> = truth.g1.iter().map(|&g| g + 0.1).collect();
    let g0_hat: Vec<f64> = truth.g0.iter().map(|&g| g - 0.1).collect();
    let (bias1, bias2) =
        bias_decomposition(&truth.mu, &truth.g1, &truth.g0, &mu_hat, &g1_hat, &g0_hat)
            .expect("bias decomposition");
    let predicted_bias =
        kahan_sum(bias1.iter().zip(&bias2).map(|(a, b)| a + b)) / bias1.len() as f64;
    let joint_dev = (measured_bias - predicted_bias).abs();
    let joint_ok = joint_dev <= SE_FACTOR * joint.std_error;

    let secs = start.elapsed().as_secs_f64();
    let pass = prop_ok && outcome_ok && joint_ok && secs < 60.0;
    verdict(
        "AC2",
        pass,
        &format!(
            "propensity-shift |err|={prop_err:.5} (3se={:.5}); outcome-shift |err|={outcome_err:.5} (3se={:.5}); \
             joint: measured bias={measured_bias:.4}, predicted={predicted_bias:.4}, |dev|={joint_dev:.5} (3se={:.5}); {secs:.1}s",
            SE_FACTOR * prop_only.std_error,
            SE_FACTOR * outcome_only.std_error,
            SE_FACTOR * joint.std_error
        ),
    );
}

#[test]
fn ac03_injected_truth_calibrates_blp() {
    let (dataset, truth) = generate(&SyntheticConfig {
        n_units: 10_000,
        effect: EffectSpec::Linear {
            base: -0.02,
            weights: vec![0.05, -0.04, 0.03, 0.0],
        },
        seed: 303,
        ..SyntheticConfig::default()
    })
    .expect("synthetic generation");
    let nuisances: Vec<NuisanceValues> = (0..truth.len()).map(|i| truth.nuisances(i)).collect();
    let config = CrossfitConfig {
        seed: 303,
        ..CrossfitConfig::default()
    };
    let result = inject_nuisances(&dataset, nuisances.as_slice(), &config).expect("injection run");

    let mut max_slope_z = 0.0f64;
    let mut max_intercept_z = 0.0f64;
    let mut healthy = true;
    for blp in &result.blp_per_fold {
        healthy &= !blp.degenerate;
        let fold_rows: Vec<(usize, &ScoreRow)> = result
            .score_rows
            .iter()
            .enumerate()
            .filter(|(_, r)| r.fold == blp.fold)
            .collect();
        let n = fold_rows.len() as f64;
        // Classical OLS standard errors, recomputed from scratch.
        let xs: Vec<f64> = fold_rows
            .iter()
            .map(|(_, r)| r.theta_tilde - blp.center)
            .collect();
        let residuals: Vec<f64> = fold_rows
            .iter()
            .map(|(_, r)| r.dr_label - (blp.a1 + blp.b1 * (r.theta_tilde - blp.center)))
            .collect();
        let sxx: f64 = xs.iter().map(|x| x * x).sum();
        let x_bar = naive_mean(&xs);
        let sigma2 = residuals.iter().map(|e| e * e).sum::<f64>() / (n - 2.0);
        let se_b1 = (sigma2 / sxx).sqrt();
        let se_a1 = (sigma2 * (1.0 / n + x_bar * x_bar / sxx)).sqrt();
        let theta_bar = fold_rows.iter().map(|(i, _)| truth.theta[*i]).sum::<f64>() / n;
        max_slope_z = max_slope_z.max((blp.b1 - 1.0).abs() / se_b1);
        max_intercept_z = max_intercept_z.max((blp.a1 - theta_bar).abs() / se_a1);
    }
    let pass = healthy && max_slope_z <= SE_FACTOR && max_intercept_z <= SE_FACTOR;
    verdict(
        "AC3",
        pass,
        &format!(
            "{} folds with true nuisances injected: max |b1 - 1| / se = {max_slope_z:.2}, \
             max |a1 - fold mean effect| / se = {max_intercept_z:.2}, threshold {SE_FACTOR}",
            result.blp_per_fold.len()
        ),
    );
}

#[test]
fn ac04_estimator_identities_exact() {
    let (dataset, truth) = generate(&SyntheticConfig {
        n_units: 5_000,
        n_groups: 5,
        effect: EffectSpec::GroupStructured {
            effects: vec![-0.05, -0.03, -0.01, 0.01, 0.03],
        },
        seed: 404,
        ..SyntheticConfig::default()
    })
    .expect("synthetic generation");
    let nuisances: Vec<NuisanceValues> = (0..truth.len()).map(|i| truth.nuisances(i)).collect();
    let config = CrossfitConfig {
        seed: 404,
        min_group_size: 1,
        ..CrossfitConfig::default()
    };
    let result = inject_nuisances(&dataset, nuisances.as_slice(), &config).expect("injection run");
    let rows = &result.score_rows;
    let ate = ate_of(&result);
    let atet = result
        .find_estimate(|e| e.estimand == Estimand::Atet)
        .expect("ATET estimate");

    // A group containing everyone is just the ATE, interval and all.
    let whole = estimate_gate(rows, &vec![true; rows.len()], config.confidence, "everyone")
        .expect("whole-population gate");
    let whole_dev = estimate_deviation(&whole, ate);

    // Share-weighted group effects over a partition rebuild the ATE.
    let n = rows.len() as f64;
    let mut share_weighted = 0.0;
    let mut members = 0usize;
    for est in &result.estimates {
        if matches!(est.estimand, Estimand::Gate { .. }) {
            share_weighted += est.point * est.n_effective as f64 / n;
            members += est.n_effective;
        }
    }
    let partition_ok = members == rows.len();
    let share_dev = (share_weighted - ate.point).abs();

    // Centered calibration makes each fold's mean CATE its intercept.
    let mut fold_dev = 0.0f64;
    for blp in &result.blp_per_fold {
        let fold_cates: Vec<f64> = rows
            .iter()
            .filter(|r| r.fold == blp.fold)
            .map(|r| r.cate)
            .collect();
        let mean_cate = kahan_sum(fold_cates.iter().copied()) / fold_cates.len() as f64;
        fold_dev = fold_dev.max((mean_cate - blp.a1).abs());
    }

    // Row order must not matter for any estimate.
    let mut shuffled = rows.clone();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(4404));
    let mut perm_dev = estimate_deviation(
        ate,
        &estimate_ate(&shuffled, config.confidence).expect("shuffled ATE"),
    );
    perm_dev = perm_dev.max(estimate_deviation(
        atet,
        &estimate_atet(&shuffled, config.confidence).expect("shuffled ATET"),
    ));
    for est in &result.estimates {
        if let Estimand::Gate { group } = &est.estimand {
            let mask: Vec<bool> = shuffled
                .iter()
                .map(|r| r.group.as_deref() == Some(group.as_str()))
                .collect();
            perm_dev = perm_dev.max(estimate_deviation(
                est,
                &estimate_gate(&shuffled, &mask, config.confidence, group)
                    .expect("shuffled gate"),
            ));
        }
    }

    let worst = whole_dev.max(share_dev).max(fold_dev).max(perm_dev);
    let pass = partition_ok && worst <= EXACT_TOL;
    verdict(
        "AC4",
        pass,
        &format!(
            "max deviation {worst:.1e} vs tol {EXACT_TOL:.0e} \
             (population-as-group {whole_dev:.1e}, share-weighted groups {share_dev:.1e}, \
             fold-mean cate vs intercept {fold_dev:.1e}, row permutation {perm_dev:.1e})"
        ),
    );
}

#[test]
fn ac05_cross_fit_purity_fingerprints() {
    let (dataset, _) = generate(&SyntheticConfig {
        n_units: 1_000,
        seed: 505,
        ..SyntheticConfig::default()
    })
    .expect("synthetic generation");
    let mut problems: Vec<String> = Vec::new();
    let mut checked_folds = 0usize;
    for k in [2usize, 5, 10] {
        let config = CrossfitConfig {
            k_folds: k,
            learner: LearnerSpec::Ols,
            seed: 505,
            ..CrossfitConfig::default()
        };
        let result = run_crossfit(&dataset, &config).expect("cross-fit run");
        let folds: Vec<usize> = result.score_rows.iter().map(|r| r.fold).collect();

        // The manifest's assignment fingerprint must match the folds
        // the delivered rows actually claim.
        let mut hasher = Sha256::new();
        hasher.update(b"folds-v1");
        hasher.update((k as u64).to_le_bytes());
        hasher.update(config.seed.to_le_bytes());
        for &f in &folds {
            hasher.update((f as u64).to_le_bytes());
        }
        if hex::encode(hasher.finalize()) != result.manifest.fold_assignment_hash {
            problems.push(format!("k={k}: assignment fingerprint mismatch"));
        }

        for diag in &result.manifest.folds {
            // Recompute the training-set fingerprint from the complement
            // of the scored fold; a match proves the models for this
            // fold trained on exactly those units and no others.
            let mut train_ids: Vec<&str> = dataset
                .units
                .iter()
                .zip(&folds)
                .filter(|(_, &f)| f != diag.fold)
                .map(|(u, _)| u.id.as_str())
                .collect();
            let scored: HashSet<&str> = dataset
                .units
                .iter()
                .zip(&folds)
                .filter(|(_, &f)| f == diag.fold)
                .map(|(u, _)| u.id.as_str())
                .collect();
            if train_ids.iter().any(|id| scored.contains(id)) {
                problems.push(format!("k={k} fold {}: unit in own training set", diag.fold));
            }
            train_ids.sort_unstable();
            let mut hasher = Sha256::new();
            for id in &train_ids {
                hasher.update(id.as_bytes());
                hasher.update(b"\n");
            }
            if hex::encode(hasher.finalize()) != diag.train_ids_sha256 {
                problems.push(format!(
                    "k={k} fold {}: training-set fingerprint mismatch",
                    diag.fold
                ));
            }
            if diag.n_train != train_ids.len() || diag.n_score != dataset.len() - train_ids.len() {
                problems.push(format!("k={k} fold {}: size bookkeeping wrong", diag.fold));
            }
            checked_folds += 1;
        }
    }
    let pass = problems.is_empty() && checked_folds == 17;
    verdict(
        "AC5",
        pass,
        &format!(
            "recomputed fingerprints for {checked_folds} folds across k=2,5,10 on 1,000 rows; \
             problems: {:?}",
            problems
        ),
    );
}

#[test]
fn ac06_modality_agreement() {
    let fx = modality_fixture();
    let gates_tab = gate_points(&fx.tabular);
    let gates_text = gate_points(&fx.text);
    let keys_match = gates_tab.keys().eq(gates_text.keys());
    let gate_rho = spearman(
        &gates_tab.values().copied().collect::<Vec<f64>>(),
        &gates_text.values().copied().collect::<Vec<f64>>(),
    )
    .expect("gate rank correlation");

    let aligned = fx
        .tabular
        .score_rows
        .iter()
        .zip(&fx.text.score_rows)
        .all(|(a, b)| a.unit_id == b.unit_id);
    let cate_tab: Vec<f64> = fx.tabular.score_rows.iter().map(|r| r.cate).collect();
    let cate_text: Vec<f64> = fx.text.score_rows.iter().map(|r| r.cate).collect();
    let cate_rho = spearman(&cate_tab, &cate_text).expect("cate rank correlation");

    let ate_tab = ate_of(&fx.tabular);
    let ate_text = ate_of(&fx.text);
    let overlap = ate_tab.ci_overlaps(ate_text);

    let pass = keys_match
        && aligned
        && gate_rho >= GATE_SPEARMAN_MIN
        && cate_rho >= CATE_SPEARMAN_MIN
        && overlap;
    verdict(
        "AC6",
        pass,
        &format!(
            "{} groups: gate spearman={gate_rho:.3} (need >= {GATE_SPEARMAN_MIN}), \
             cate spearman={cate_rho:.3} (need >= {CATE_SPEARMAN_MIN}), \
             ate tabular={:.4} [{:.4}, {:.4}] vs text={:.4} [{:.4}, {:.4}], overlap={overlap}",
            gates_tab.len(),
            ate_tab.point,
            ate_tab.ci_low,
            ate_tab.ci_high,
            ate_text.point,
            ate_text.ci_low,
            ate_text.ci_high
        ),
    );
}

#[test]
fn ac07_lift_dominance_and_cross_modality_ratio() {
    let fx = modality_fixture();
    // Effects here are price reductions, so the gain from targeting a
    // unit is the negated effect prediction.
    let gain: Vec<f64> = fx.tabular.score_rows.iter().map(|r| -r.cate).collect();
    let optimal = lift_curve(&gain, &gain, 101).expect("self-sorted curve");

    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let mut max_random_area = f64::NEG_INFINITY;
    let mut endpoint_dev = 0.0f64;
    for _ in 0..100 {
        let random_key: Vec<f64> = (0..gain.len()).map(|_| rng.random()).collect();
        let shuffled = lift_curve(&random_key, &gain, 101).expect("random-order curve");
        max_random_area = max_random_area.max(shuffled.area);
        endpoint_dev = endpoint_dev.max((shuffled.total_gain() - optimal.total_gain()).abs());
    }
    let dominance_ok = optimal.area >= max_random_area - AREA_SLACK;

    let text_key: Vec<f64> = fx.text.score_rows.iter().map(|r| -r.cate).collect();
    let cross = lift_curve(&text_key, &gain, 101).expect("cross-modality curve");
    endpoint_dev = endpoint_dev.max((cross.total_gain() - optimal.total_gain()).abs());
    let endpoint_ok = endpoint_dev <= EXACT_TOL;

    let ratio_diag = area_ratio(&cross, &optimal, AreaBaseline::Diagonal).expect("diagonal ratio");
    let ratio_raw = area_ratio(&cross, &optimal, AreaBaseline::None).expect("raw ratio");
    let ratio_ok = ratio_diag >= AREA_RATIO_MIN;

    let pass = dominance_ok && endpoint_ok && ratio_ok;
    verdict(
        "AC7",
        pass,
        &format!(
            "self-sorted area={:.4} vs max over 100 random orders={:.4}; \
             endpoint gain deviation={endpoint_dev:.1e} (tol {EXACT_TOL:.0e}); \
             cross-modality area ratio above diagonal={ratio_diag:.3} (need >= {AREA_RATIO_MIN}), raw={ratio_raw:.3}",
            optimal.area, max_random_area
        ),
    );
}

#[test]
fn ac08_metrics_match_brute_force() {
    let mut worst = 0.0f64;
    let mut counts_ok = true;
    for i in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(800 + i);
        let rows: Vec<ScoreRow> = (0..50)
            .map(|j| {
                // The first four rows pin two units per arm so the
                // per-arm correlations are always defined.
                let treatment = match j {
                    0 | 1 => true,
                    2 | 3 => false,
                    _ => rng.random_bool(0.5),
                };
                ScoreRow::build(
                    format!("f{i}-u{j:02}"),
                    0,
                    rng.random_range(0.2..0.8),
                    treatment,
                    None,
                    rng.random_range(0.1..0.9),
                    rng.random_range(0.1..0.9),
                    rng.random_range(0.3..0.7),
                    0.01,
                )
                .expect("score row")
            })
            .collect();
        let metrics = compute_metrics(&rows).expect("metrics");

        let (ty, tp): (Vec<f64>, Vec<f64>) = rows
            .iter()
            .filter(|r| r.treatment)
            .map(|r| (r.outcome, r.g1_hat))
            .unzip();
        let (cy, cp): (Vec<f64>, Vec<f64>) = rows
            .iter()
            .filter(|r| !r.treatment)
            .map(|r| (r.outcome, r.g0_hat))
            .unzip();
        worst = worst.max((metrics.corr_t.expect("treated corr") - naive_pearson(&tp, &ty)).abs());
        worst = worst.max((metrics.corr_c.expect("control corr") - naive_pearson(&cp, &cy)).abs());
        let ape: Vec<f64> = rows
            .iter()
            .map(|r| ((r.g_taken() - r.outcome) / r.outcome).abs())
            .collect();
        worst = worst.max((metrics.mape - naive_mean(&ape)).abs());
        counts_ok &=
            metrics.n_t == ty.len() && metrics.n_c == cy.len() && metrics.mape_excluded == 0;

        // Rank and plain correlations against counting-based oracles,
        // with ties forced into the first vector.
        let v: Vec<f64> = (0..50).map(|_| f64::from(rng.random_range(0..10u32)) / 10.0).collect();
        let w: Vec<f64> = (0..50).map(|_| rng.random()).collect();
        worst = worst.max(
            (spearman(&v, &w).expect("spearman")
                - naive_pearson(&naive_ranks(&v), &naive_ranks(&w)))
            .abs(),
        );
        worst = worst.max((pearson(&v, &w).expect("pearson") - naive_pearson(&v, &w)).abs());
    }

    // The out-of-fold quality block lands in metrics.json under the
    // names downstream tooling reads: corr_t / corr_c / mape per run.
    let fx = modality_fixture();
    let comparison = compare_runs(
        &fx.tabular,
        &fx.text,
        &CompareOptions {
            label_a: "tabular".into(),
            label_b: "text".into(),
            ..CompareOptions::default()
        },
    )
    .expect("comparison");
    let dir = tempfile::tempdir().expect("tempdir");
    write_comparison_bundle(&comparison, dir.path()).expect("bundle write");
    let metrics_json: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("metrics.json")).expect("read metrics.json"),
    )
    .expect("parse metrics.json");
    let mut structural_ok = true;
    for side in ["metrics_a", "metrics_b"] {
        for key in ["corr_t", "corr_c", "mape", "n_t", "n_c"] {
            structural_ok &= metrics_json[side].get(key).is_some();
        }
    }

    let pass = worst <= BRUTE_FORCE_TOL && counts_ok && structural_ok;
    verdict(
        "AC8",
        pass,
        &format!(
            "10 random 50-row fixtures: max |library - brute force| = {worst:.1e} \
             (tol {BRUTE_FORCE_TOL:.0e}), arm counts ok={counts_ok}; \
             metrics.json carries corr_t/corr_c/mape for both runs: {structural_ok}"
        ),
    );
}

#[test]
fn ac09_learner_baselines() {
    // Boosted trees on a smooth, high-signal regression surface.
    let n = 2_000usize;
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let features: Vec<[f64; 3]> = (0..n)
        .map(|_| {
            [
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ]
        })
        .collect();
    let signal: Vec<f64> = features
        .iter()
        .map(|z| sigmoid(4.0 * z[0]) + 0.5 * sigmoid(3.0 * z[1]) + 0.25 * z[2])
        .collect();
    // Noise variance set to 1/100 of the realized signal variance.
    let signal_mean = naive_mean(&signal);
    let signal_var =
        signal.iter().map(|s| (s - signal_mean) * (s - signal_mean)).sum::<f64>() / n as f64;
    let noise = Normal::new(0.0, (signal_var / 100.0).sqrt()).expect("noise distribution");
    let targets: Vec<f64> = signal.iter().map(|s| s + noise.sample(&mut rng)).collect();

    let params = GbtParams {
        n_trees: 150,
        max_depth: 3,
        min_leaf: 20,
        ..GbtParams::default()
    };
    let mut oof = vec![0.0f64; n];
    for fold in 0..5usize {
        let train_idx: Vec<usize> = (0..n).filter(|i| i % 5 != fold).collect();
        let train_rows: Vec<&[f64]> = train_idx.iter().map(|&i| features[i].as_slice()).collect();
        let x_train = DenseMatrix::from_rows(&train_rows).expect("train matrix");
        let y_train: Vec<f64> = train_idx.iter().map(|&i| targets[i]).collect();
        let model = fit_gbt(
            &x_train,
            &y_train,
            GbtObjective::SquaredError,
            &GbtParams {
                seed: fold as u64,
                ..params.clone()
            },
        )
        .expect("gbt fit");
        for i in (0..n).filter(|i| i % 5 == fold) {
            oof[i] = model.predict_row(&features[i]);
        }
    }
    let oof_corr = pearson(&oof, &targets).expect("out-of-fold correlation");
    let gbt_ok = oof_corr > OOF_CORR_MIN;

    // Coordinate descent with both penalties off lands on OLS.
    let x2_rows: Vec<[f64; 3]> = (0..200)
        .map(|_| {
            [
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ]
        })
        .collect();
    let x2_refs: Vec<&[f64]> = x2_rows.iter().map(|r| r.as_slice()).collect();
    let x2 = DenseMatrix::from_rows(&x2_refs).expect("design matrix");
    let y2: Vec<f64> = x2_rows
        .iter()
        .map(|r| 1.0 + 2.0 * r[0] - r[1] + 0.5 * r[2] + rng.random_range(-0.05..0.05))
        .collect();
    let ols = fit_ols(&x2, &y2).expect("ols fit");
    let enet = fit_elastic_net(&x2, &y2, 0.0, 0.0, 200_000, 1e-13).expect("elastic net fit");
    let mut enet_dev = (ols.intercept - enet.intercept).abs();
    for (a, b) in ols.weights.iter().zip(&enet.weights) {
        enet_dev = enet_dev.max((a - b).abs());
    }
    let enet_ok = enet_dev <= ENET_VS_OLS_TOL;

    // Two-unit loss arithmetic against closed forms:
    //   treated term   |0.5 - 0.6|  / 0.45 / 2 = 1/9
    //   control term   |0.35 - 0.3| / 0.45 / 2 = 1/18
    //   propensity     2 * (-(ln 0.8 + ln 0.75)) / 2 = ln(5/3)
    let predictions = [
        TriplePrediction {
            g1: 0.5,
            g0: 0.2,
            mu: 0.8,
        },
        TriplePrediction {
            g1: 0.4,
            g0: 0.35,
            mu: 0.25,
        },
    ];
    let loss = triple_loss(&predictions, &[0.6, 0.3], &[true, false], 2.0, 0.45)
        .expect("two-unit loss");
    let mut loss_dev = (loss.regression_treated - 1.0 / 9.0).abs();
    loss_dev = loss_dev.max((loss.regression_control - 1.0 / 18.0).abs());
    loss_dev = loss_dev.max((loss.propensity - (5.0f64 / 3.0).ln()).abs());
    loss_dev = loss_dev.max((loss.total() - (1.0 / 6.0 + (5.0f64 / 3.0).ln())).abs());
    let loss_ok = loss_dev <= BRUTE_FORCE_TOL;

    let pass = gbt_ok && enet_ok && loss_ok;
    verdict(
        "AC9",
        pass,
        &format!(
            "gbt out-of-fold corr={oof_corr:.3} (need > {OOF_CORR_MIN}); \
             elastic net with zero penalties vs ols: max dev={enet_dev:.1e} (tol {ENET_VS_OLS_TOL:.0e}); \
             two-unit loss vs closed forms: max dev={loss_dev:.1e} (tol {BRUTE_FORCE_TOL:.0e})"
        ),
    );
}
