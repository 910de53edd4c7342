//! Synthetic observational data with known ground truth.
//!
//! The generator draws units whose treatment assignment is confounded
//! with their covariates, so the naive treated-minus-control contrast
//! is biased while the true effect of every unit is known exactly:
//!
//! * covariates `z` are uniform on [-1, 1], plus a categorical group;
//! * propensity `mu(z) = 0.05 + 0.90 * sigmoid(2 * strength * u.z)`,
//!   bounded inside [0.05, 0.95] by construction (positivity);
//! * control response `g0(z) = 0.18 + 0.22 * sigmoid(2 * v.z)`;
//! * effect `theta(z)` from a constant, a linear form, or per-group
//!   values; `g1 = g0 + theta`;
//! * potential outcomes add mean-zero Gaussian noise (shared between
//!   arms by default) and clamp to [0, 1];
//! * the observed outcome is the potential outcome of the drawn arm.
//!
//! Each unit also gets a text description that encodes the same signal
//! the tabular columns carry: its group name and the quartile bin of
//! every `z` column, phrased through a small vocabulary. The encoding
//! is lossless at the bin level; [`TextTemplates::decode`] recovers
//! group and bins from the rendered string.
//!
//! Randomness is counter-based: unit `i` draws from its own ChaCha8
//! stream keyed by (seed, i), so output is reproducible and unchanged
//! by generation order.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{ColumnSchema, Dataset, Modality, OutcomeBounds, Unit};
use crate::dr::NuisanceValues;
use crate::error::{Error, Result};
use crate::numeric::{kahan_sum, mix64, sigmoid};

/// Treatment-effect structure of a synthetic population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EffectSpec {
    /// Same effect for every unit.
    Constant { tau: f64 },
    /// `theta(z) = base + weights . z`.
    Linear { base: f64, weights: Vec<f64> },
    /// One effect level per group, indexed by group id.
    GroupStructured { effects: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub n_units: usize,
    /// Number of continuous covariates (the group id is appended as one
    /// extra tabular column on top of these).
    pub n_features: usize,
    pub n_groups: usize,
    pub effect: EffectSpec,
    /// Scales how strongly covariates drive treatment assignment; zero
    /// gives a randomized trial with propensity exactly 0.5.
    pub confounding_strength: f64,
    /// Standard deviation of the outcome noise.
    pub noise_sd: f64,
    /// Use one noise draw for both potential outcomes (default). When
    /// false the arms get independent draws.
    pub shared_noise: bool,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_units: 1000,
            n_features: 4,
            n_groups: 5,
            effect: EffectSpec::Constant { tau: -0.02 },
            confounding_strength: 1.0,
            noise_sd: 0.02,
            shared_noise: true,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_units < 2 {
            return Err(Error::Parameter("n_units must be >= 2".into()));
        }
        if self.n_features < 1 {
            return Err(Error::Parameter("n_features must be >= 1".into()));
        }
        if self.n_groups < 1 {
            return Err(Error::Parameter("n_groups must be >= 1".into()));
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return Err(Error::Parameter(format!(
                "noise_sd must be finite and >= 0, got {}",
                self.noise_sd
            )));
        }
        if !self.confounding_strength.is_finite() {
            return Err(Error::Parameter("confounding_strength must be finite".into()));
        }
        match &self.effect {
            EffectSpec::Constant { tau } => {
                if !tau.is_finite() {
                    return Err(Error::Parameter("effect tau must be finite".into()));
                }
            }
            EffectSpec::Linear { base, weights } => {
                if weights.len() != self.n_features {
                    return Err(Error::Parameter(format!(
                        "linear effect needs {} weights (one per feature), got {}",
                        self.n_features,
                        weights.len()
                    )));
                }
                if !base.is_finite() || weights.iter().any(|w| !w.is_finite()) {
                    return Err(Error::Parameter("linear effect must be finite".into()));
                }
            }
            EffectSpec::GroupStructured { effects } => {
                if effects.len() != self.n_groups {
                    return Err(Error::Parameter(format!(
                        "group effects need {} entries (one per group), got {}",
                        self.n_groups,
                        effects.len()
                    )));
                }
                if effects.iter().any(|e| !e.is_finite()) {
                    return Err(Error::Parameter("group effects must be finite".into()));
                }
            }
        }
        Ok(())
    }
}

/// Per-unit ground truth, aligned with the generated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTruth {
    /// True treated-arm conditional mean.
    pub g1: Vec<f64>,
    /// True control-arm conditional mean.
    pub g0: Vec<f64>,
    /// True propensity.
    pub mu: Vec<f64>,
    /// True unit-level effect `g1 - g0`.
    pub theta: Vec<f64>,
    /// Realized treated-arm potential outcome.
    pub y1: Vec<f64>,
    /// Realized control-arm potential outcome.
    pub y0: Vec<f64>,
}

impl SyntheticTruth {
    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    /// The true nuisance triple of unit `i`.
    pub fn nuisances(&self, i: usize) -> NuisanceValues {
        NuisanceValues {
            g1: self.g1[i],
            g0: self.g0[i],
            mu: self.mu[i],
        }
    }
}

const GROUP_NAMES: [&str; 20] = [
    "alpha", "beta", "gamma", "delta", "epsilon", "zeta", "eta", "theta", "iota", "kappa",
    "lambda", "omicron", "sigma", "tau", "upsilon", "phi", "chi", "psi", "omega", "nu",
];

const QUALITY_WORDS: [&str; 4] = ["poor", "fair", "good", "excellent"];

const ASPECT_WORDS: [&str; 12] = [
    "finish", "battery", "fabric", "grip", "display", "strap", "seal", "motor", "coating",
    "hinge", "lining", "casing",
];

/// Filler openers; deliberately free of every vocabulary word above so
/// they can never confuse the decoder.
const INTRO_SENTENCES: [&str; 6] = [
    "Everyday essential for the home",
    "Ships in recyclable packaging",
    "A dependable pick for most households",
    "Updated version of a longtime favorite",
    "Simple setup and familiar controls",
    "Stocked regularly at partner retailers",
];

/// Renders and decodes product-style descriptions that carry the group
/// id and the quartile bin of each continuous covariate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TextTemplates {
    pub n_features: usize,
    pub n_groups: usize,
}

impl TextTemplates {
    pub fn new(n_features: usize, n_groups: usize) -> Self {
        Self {
            n_features,
            n_groups,
        }
    }

    /// Group label for a group id; doubles as the text token.
    pub fn group_name(idx: usize) -> String {
        if idx < GROUP_NAMES.len() {
            GROUP_NAMES[idx].to_string()
        } else {
            format!("grp{idx}")
        }
    }

    fn parse_group_name(token: &str) -> Option<usize> {
        if let Some(pos) = GROUP_NAMES.iter().position(|n| *n == token) {
            return Some(pos);
        }
        token.strip_prefix("grp").and_then(|d| d.parse().ok())
    }

    /// Aspect noun for feature `j`.
    pub fn aspect_name(j: usize) -> String {
        let base = ASPECT_WORDS[j % ASPECT_WORDS.len()];
        let round = j / ASPECT_WORDS.len();
        if round == 0 {
            base.to_string()
        } else {
            format!("{base}{round}")
        }
    }

    fn parse_aspect_name(token: &str) -> Option<usize> {
        let stripped = token.trim_end_matches(|c: char| c.is_ascii_digit());
        let base_idx = ASPECT_WORDS.iter().position(|a| *a == stripped)?;
        let digits = &token[stripped.len()..];
        let round: usize = if digits.is_empty() {
            0
        } else {
            digits.parse().ok()?
        };
        Some(round * ASPECT_WORDS.len() + base_idx)
    }

    /// Quartile bin of a covariate drawn from [-1, 1].
    pub fn bin_of(z: f64) -> usize {
        if z <= -0.5 {
            0
        } else if z <= 0.0 {
            1
        } else if z <= 0.5 {
            2
        } else {
            3
        }
    }

    /// Produces a description like
    /// `"Ships in recyclable packaging. category gamma. good finish. poor battery."`.
    /// Feature sentences appear in a random order; decoding does not
    /// depend on it.
    pub fn render(&self, group_idx: usize, z: &[f64], rng: &mut impl Rng) -> String {
        debug_assert_eq!(z.len(), self.n_features);
        let intro = INTRO_SENTENCES[rng.random_range(0..INTRO_SENTENCES.len())];
        let mut sentences = Vec::with_capacity(self.n_features + 2);
        sentences.push(intro.to_string());
        sentences.push(format!("category {}", Self::group_name(group_idx)));
        let mut feature_sentences: Vec<String> = z
            .iter()
            .enumerate()
            .map(|(j, &v)| format!("{} {}", QUALITY_WORDS[Self::bin_of(v)], Self::aspect_name(j)))
            .collect();
        feature_sentences.shuffle(rng);
        sentences.extend(feature_sentences);
        let mut text = sentences.join(". ");
        text.push('.');
        text
    }

    /// Recovers `(group_idx, bins)` from a rendered description.
    /// Returns None when the group or any feature bin is missing.
    pub fn decode(&self, text: &str) -> Option<(usize, Vec<usize>)> {
        let lowered = text.to_lowercase();
        let tokens: Vec<&str> = lowered
            .split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
            .collect();

        let mut group = None;
        let mut bins = vec![usize::MAX; self.n_features];
        for pair in tokens.windows(2) {
            if pair[0] == "category" {
                if let Some(idx) = Self::parse_group_name(pair[1]) {
                    group = Some(idx);
                }
            }
            if let Some(q) = QUALITY_WORDS.iter().position(|w| *w == pair[0]) {
                if let Some(j) = Self::parse_aspect_name(pair[1]) {
                    if j < self.n_features {
                        bins[j] = q;
                    }
                }
            }
        }

        let group = group.filter(|&g| g < self.n_groups)?;
        if bins.iter().any(|&b| b == usize::MAX) {
            return None;
        }
        Some((group, bins))
    }
}

fn unit_rng(seed: u64, unit_index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix64(seed ^ mix64(unit_index as u64)))
}

/// Generates a dataset and its ground truth.
///
/// The dataset carries both modalities: tabular columns `z0..z{p-1}`
/// plus `group_idx`, and a text description encoding the same signal.
pub fn generate(config: &SyntheticConfig) -> Result<(Dataset, SyntheticTruth)> {
    config.validate()?;
    let p = config.n_features;
    let n = config.n_units;
    let templates = TextTemplates::new(p, config.n_groups);

    // Population-level directions: a unit-norm outcome direction and a
    // propensity direction over the first few covariates.
    let mut master = ChaCha8Rng::seed_from_u64(mix64(config.seed));
    let mut v: Vec<f64> = (0..p).map(|_| master.random_range(-1.0..1.0)).collect();
    let v_norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-9);
    for x in &mut v {
        *x /= v_norm;
    }
    let n_conf = p.min(3);
    let mut u = vec![0.0; p];
    for item in u.iter_mut().take(n_conf) {
        *item = master.random_range(0.4..1.0);
    }
    let u_norm = u.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-9);
    for x in &mut u {
        *x /= u_norm;
    }

    let noise = Normal::new(0.0, config.noise_sd.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::Parameter(format!("invalid noise distribution: {e}")))?;

    let mut units = Vec::with_capacity(n);
    let mut truth = SyntheticTruth {
        g1: Vec::with_capacity(n),
        g0: Vec::with_capacity(n),
        mu: Vec::with_capacity(n),
        theta: Vec::with_capacity(n),
        y1: Vec::with_capacity(n),
        y0: Vec::with_capacity(n),
    };

    for i in 0..n {
        let mut rng = unit_rng(config.seed, i);
        let z: Vec<f64> = (0..p).map(|_| rng.random_range(-1.0..1.0)).collect();
        let group_idx = rng.random_range(0..config.n_groups);

        let u_dot: f64 = u.iter().zip(&z).map(|(a, b)| a * b).sum();
        let mu = 0.05 + 0.90 * sigmoid(2.0 * config.confounding_strength * u_dot);
        let treatment = rng.random::<f64>() < mu;

        let v_dot: f64 = v.iter().zip(&z).map(|(a, b)| a * b).sum();
        let g0 = 0.18 + 0.22 * sigmoid(2.0 * v_dot);
        let theta_raw = match &config.effect {
            EffectSpec::Constant { tau } => *tau,
            EffectSpec::Linear { base, weights } => {
                base + weights.iter().zip(&z).map(|(a, b)| a * b).sum::<f64>()
            }
            EffectSpec::GroupStructured { effects } => effects[group_idx],
        };
        // Keep the treated mean inside (0, 1); with sane effect sizes
        // the clamp never binds, and truth reflects the bound if it does.
        let g1 = (g0 + theta_raw).clamp(1e-3, 1.0 - 1e-3);
        let theta = g1 - g0;

        let noise1 = if config.noise_sd > 0.0 {
            noise.sample(&mut rng)
        } else {
            0.0
        };
        let noise0 = if config.noise_sd == 0.0 {
            0.0
        } else if config.shared_noise {
            noise1
        } else {
            noise.sample(&mut rng)
        };
        let y1 = (g1 + noise1).clamp(0.0, 1.0);
        let y0 = (g0 + noise0).clamp(0.0, 1.0);
        let outcome = if treatment { y1 } else { y0 };

        let text = templates.render(group_idx, &z, &mut rng);
        let mut tabular = z.clone();
        tabular.push(group_idx as f64);

        units.push(Unit {
            id: format!("u{i:06}"),
            outcome,
            treatment,
            group: Some(TextTemplates::group_name(group_idx)),
            tabular,
            text,
        });
        truth.g1.push(g1);
        truth.g0.push(g0);
        truth.mu.push(mu);
        truth.theta.push(theta);
        truth.y1.push(y1);
        truth.y0.push(y0);
    }

    let mut feature_names: Vec<String> = (0..p).map(|j| format!("z{j}")).collect();
    feature_names.push("group_idx".to_string());
    let dataset = Dataset::new(units, feature_names, Modality::Both)?;
    Ok((dataset, truth))
}

/// True values of every estimand the pipeline reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleEstimands {
    pub ate: f64,
    pub atet: f64,
    /// Group label -> true GATE, over the groups present.
    pub gate: BTreeMap<String, f64>,
    /// True per-unit effects aligned with the dataset.
    pub cate: Vec<f64>,
}

/// Computes the finite-population estimands from ground truth.
pub fn oracle_estimands(dataset: &Dataset, truth: &SyntheticTruth) -> Result<OracleEstimands> {
    if dataset.len() != truth.len() {
        return Err(Error::Shape {
            expected: dataset.len(),
            actual: truth.len(),
        });
    }
    let n = dataset.len() as f64;
    let ate = kahan_sum(truth.theta.iter().copied()) / n;

    let treated: Vec<f64> = dataset
        .units
        .iter()
        .zip(&truth.theta)
        .filter(|(u, _)| u.treatment)
        .map(|(_, &t)| t)
        .collect();
    if treated.is_empty() {
        return Err(Error::Estimation("no treated units in dataset".into()));
    }
    let atet = kahan_sum(treated.iter().copied()) / treated.len() as f64;

    let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for (u, &t) in dataset.units.iter().zip(&truth.theta) {
        if let Some(g) = &u.group {
            let entry = sums.entry(g.clone()).or_insert((0.0, 0));
            entry.0 += t;
            entry.1 += 1;
        }
    }
    let gate = sums
        .into_iter()
        .map(|(g, (sum, count))| (g, sum / count as f64))
        .collect();

    Ok(OracleEstimands {
        ate,
        atet,
        gate,
        cate: truth.theta.clone(),
    })
}

/// Ways to damage the true nuisances before injection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CorruptionMode {
    /// Shift only the propensity; outcome models stay correct.
    PropensityShift { delta: f64 },
    /// Shift only the outcome models; the propensity stays correct.
    OutcomeShift { delta: f64 },
    /// Shift both: propensity by `propensity_delta`, treated-arm mean
    /// by `+outcome_delta`, control-arm mean by `-outcome_delta`.
    Both {
        propensity_delta: f64,
        outcome_delta: f64,
    },
}

/// Returns per-unit nuisances corrupted according to `mode`.
///
/// Shifted propensities may leave (0, 1); the scoring pipeline's clip
/// is expected to pull them back in.
pub fn corrupt_nuisances(truth: &SyntheticTruth, mode: CorruptionMode) -> Vec<NuisanceValues> {
    (0..truth.len())
        .map(|i| {
            let base = truth.nuisances(i);
            match mode {
                CorruptionMode::PropensityShift { delta } => NuisanceValues {
                    mu: base.mu + delta,
                    ..base
                },
                CorruptionMode::OutcomeShift { delta } => NuisanceValues {
                    g1: base.g1 + delta,
                    g0: base.g0 + delta,
                    mu: base.mu,
                },
                CorruptionMode::Both {
                    propensity_delta,
                    outcome_delta,
                } => NuisanceValues {
                    g1: base.g1 + outcome_delta,
                    g0: base.g0 - outcome_delta,
                    mu: base.mu + propensity_delta,
                },
            }
        })
        .collect()
}

/// The column schema matching [`write_dataset_csv`] / `_jsonl` output.
pub fn generated_schema(n_features: usize) -> ColumnSchema {
    let mut feature_cols: Vec<String> = (0..n_features).map(|j| format!("z{j}")).collect();
    feature_cols.push("group_idx".to_string());
    ColumnSchema {
        id_col: Some("id".into()),
        outcome_col: "y".into(),
        treatment_col: "t".into(),
        group_col: Some("grp".into()),
        text_col: Some("desc".into()),
        feature_cols: Some(feature_cols),
        outcome_bounds: OutcomeBounds::Unit,
    }
}

/// Writes the dataset as CSV with header
/// `id,y,t,grp,z0..,group_idx,desc`. Floats use the shortest
/// representation that parses back to the identical bit pattern.
pub fn write_dataset_csv(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    let mut header = vec!["id".to_string(), "y".to_string(), "t".to_string(), "grp".to_string()];
    header.extend(dataset.feature_names.iter().cloned());
    header.push("desc".to_string());
    writer.write_record(&header)?;
    for u in &dataset.units {
        let mut record = vec![
            u.id.clone(),
            format!("{}", u.outcome),
            if u.treatment { "1".into() } else { "0".into() },
            u.group.clone().unwrap_or_default(),
        ];
        record.extend(u.tabular.iter().map(|v| format!("{v}")));
        record.push(u.text.clone());
        writer.write_record(&record)?;
    }
    writer.flush()?;
    Ok(())
}

/// Writes the dataset as JSON Lines with the same keys as the CSV.
pub fn write_dataset_jsonl(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    for u in &dataset.units {
        let mut obj = serde_json::Map::new();
        obj.insert("id".into(), serde_json::Value::String(u.id.clone()));
        obj.insert("y".into(), number(u.outcome)?);
        obj.insert(
            "t".into(),
            serde_json::Value::Number(serde_json::Number::from(u.treatment as u8)),
        );
        obj.insert(
            "grp".into(),
            match &u.group {
                Some(g) => serde_json::Value::String(g.clone()),
                None => serde_json::Value::Null,
            },
        );
        for (name, &v) in dataset.feature_names.iter().zip(&u.tabular) {
            obj.insert(name.clone(), number(v)?);
        }
        obj.insert("desc".into(), serde_json::Value::String(u.text.clone()));
        serde_json::to_writer(&mut file, &serde_json::Value::Object(obj))?;
        file.write_all(b"\n")?;
    }
    file.flush()?;
    Ok(())
}

fn number(v: f64) -> Result<serde_json::Value> {
    serde_json::Number::from_f64(v)
        .map(serde_json::Value::Number)
        .ok_or_else(|| Error::Numeric(format!("cannot encode {v} as JSON")))
}

/// Writes per-unit ground truth:
/// `unit_id,true_g1,true_g0,true_mu,true_theta,y1,y0`.
pub fn write_truth_csv(dataset: &Dataset, truth: &SyntheticTruth, path: &Path) -> Result<()> {
    if dataset.len() != truth.len() {
        return Err(Error::Shape {
            expected: dataset.len(),
            actual: truth.len(),
        });
    }
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(["unit_id", "true_g1", "true_g0", "true_mu", "true_theta", "y1", "y0"])?;
    for (i, u) in dataset.units.iter().enumerate() {
        writer.write_record([
            u.id.clone(),
            format!("{}", truth.g1[i]),
            format!("{}", truth.g0[i]),
            format!("{}", truth.mu[i]),
            format!("{}", truth.theta[i]),
            format!("{}", truth.y1[i]),
            format!("{}", truth.y0[i]),
        ])?;
    }
    writer.flush()?;
    Ok(())
}
