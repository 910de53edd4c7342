//! Joint text model: three linear heads over a shared text encoding.
//!
//! One model predicts the treated-arm outcome, the control-arm outcome,
//! and the propensity from the same encoded text. Training minimizes a
//! per-unit multi-task objective
//!
//! ```text
//! T * |g1(z) - y| / y_norm              (treated regression)
//! + (1 - T) * |g0(z) - y| / y_norm      (control regression)
//! + lambda * bce(mu(z), T)              (propensity)
//! ```
//!
//! where `y_norm` is the mean outcome of the training slice, computed
//! once before training. Each unit contributes to exactly one of the
//! two regression terms, so a head only ever sees gradients from its
//! own arm. Optimization is minibatch subgradient descent with a
//! seeded shuffle per epoch and a 1/sqrt(1 + epoch) step decay; the
//! decay matters because the absolute-error subgradient keeps constant
//! magnitude near the optimum, so a fixed step would orbit instead of
//! settling.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{kahan_sum, sigmoid};
use crate::textfeat::{SparseVec, TextEncoderConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TextTripleParams {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TextTripleParams {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 64,
            learning_rate: 0.1,
            seed: 0,
        }
    }
}

impl TextTripleParams {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Parameter("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Parameter("batch_size must be >= 1".into()));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::Parameter("learning_rate must be positive".into()));
        }
        Ok(())
    }
}

/// One linear head: weights over the encoding plus a bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearHead {
    pub weights: Vec<f64>,
    pub bias: f64,
    /// False when the training slice had no units in this head's arm;
    /// such a head predicts its initialization and should be treated
    /// with suspicion downstream.
    pub trained: bool,
}

impl LinearHead {
    fn zeros(dim: usize) -> Self {
        Self {
            weights: vec![0.0; dim],
            bias: 0.0,
            trained: false,
        }
    }

    #[inline]
    pub fn score(&self, x: &SparseVec) -> f64 {
        self.bias + x.dot(&self.weights)
    }
}

/// Predictions for one unit: both potential-outcome regressions and
/// the propensity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TriplePrediction {
    pub g1: f64,
    pub g0: f64,
    /// Probability after the sigmoid; always in (0, 1).
    pub mu: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextTripleModel {
    pub encoder: TextEncoderConfig,
    pub head_g1: LinearHead,
    pub head_g0: LinearHead,
    pub head_mu: LinearHead,
    pub lambda: f64,
    /// Mean training outcome used to scale the regression terms.
    pub outcome_norm: f64,
    /// Mean training loss per epoch (pre-update batch losses averaged).
    pub train_loss: Vec<f64>,
}

impl TextTripleModel {
    /// Predicts from pre-encoded features.
    pub fn predict_encoded(&self, features: &[SparseVec]) -> Vec<TriplePrediction> {
        features
            .iter()
            .map(|x| TriplePrediction {
                g1: self.head_g1.score(x),
                g0: self.head_g0.score(x),
                mu: sigmoid(self.head_mu.score(x)),
            })
            .collect()
    }

    /// Encodes texts with the model's own encoder, then predicts.
    pub fn predict_triple(&self, texts: &[&str]) -> Result<Vec<TriplePrediction>> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        let encoded = self.encoder.encode_all(texts)?;
        Ok(self.predict_encoded(&encoded))
    }
}

/// Loss components of the multi-task objective, each averaged over all
/// units in the slice.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossComponents {
    pub regression_treated: f64,
    pub regression_control: f64,
    pub propensity: f64,
}

impl LossComponents {
    pub fn total(&self) -> f64 {
        self.regression_treated + self.regression_control + self.propensity
    }
}

/// Evaluates the multi-task loss for given predictions.
///
/// `mu` entries must already be probabilities. They are clipped to
/// [1e-12, 1 - 1e-12] inside the cross-entropy so the loss is finite.
pub fn triple_loss(
    predictions: &[TriplePrediction],
    outcomes: &[f64],
    treatments: &[bool],
    lambda: f64,
    outcome_norm: f64,
) -> Result<LossComponents> {
    if predictions.len() != outcomes.len() || outcomes.len() != treatments.len() {
        return Err(Error::Shape {
            expected: predictions.len(),
            actual: outcomes.len().min(treatments.len()),
        });
    }
    if predictions.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if !(outcome_norm > 0.0) || !outcome_norm.is_finite() {
        return Err(Error::Numeric(format!(
            "outcome normalizer must be positive and finite, got {outcome_norm}"
        )));
    }

    let n = predictions.len() as f64;
    let mut treated = 0.0;
    let mut control = 0.0;
    let mut bce = 0.0;
    for ((pred, &y), &t) in predictions.iter().zip(outcomes).zip(treatments) {
        if t {
            treated += (pred.g1 - y).abs() / outcome_norm;
        } else {
            control += (pred.g0 - y).abs() / outcome_norm;
        }
        let mu = pred.mu.clamp(1e-12, 1.0 - 1e-12);
        let t_f = if t { 1.0 } else { 0.0 };
        bce += -(t_f * mu.ln() + (1.0 - t_f) * (1.0 - mu).ln());
    }
    Ok(LossComponents {
        regression_treated: treated / n,
        regression_control: control / n,
        propensity: lambda * bce / n,
    })
}

/// Fits the three heads on pre-encoded features.
///
/// All features must share the encoder's dimension. Fails when the mean
/// outcome of the slice is zero (the regression terms would divide by
/// zero) or when lambda is negative.
pub fn fit_text_triple_encoded(
    encoder: &TextEncoderConfig,
    features: &[SparseVec],
    outcomes: &[f64],
    treatments: &[bool],
    lambda: f64,
    params: &TextTripleParams,
) -> Result<TextTripleModel> {
    params.validate()?;
    encoder.validate()?;
    if lambda < 0.0 {
        return Err(Error::Parameter(format!(
            "lambda must be non-negative, got {lambda}"
        )));
    }
    if features.len() != outcomes.len() || outcomes.len() != treatments.len() {
        return Err(Error::Shape {
            expected: features.len(),
            actual: outcomes.len().min(treatments.len()),
        });
    }
    if features.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let dim = encoder.dim();
    for f in features {
        if f.dim != dim {
            return Err(Error::Shape {
                expected: dim,
                actual: f.dim,
            });
        }
    }
    if outcomes.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("outcomes contain non-finite values".into()));
    }

    let n = features.len();
    let outcome_norm = kahan_sum(outcomes.iter().copied()) / n as f64;
    if !(outcome_norm > 0.0) {
        return Err(Error::Numeric(format!(
            "mean outcome of the training slice is {outcome_norm}; the scaled \
             regression loss is undefined"
        )));
    }

    let mut head_g1 = LinearHead::zeros(dim);
    let mut head_g0 = LinearHead::zeros(dim);
    let mut head_mu = LinearHead::zeros(dim);
    head_g1.trained = treatments.iter().any(|&t| t);
    head_g0.trained = treatments.iter().any(|&t| !t);
    head_mu.trained = true;

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut train_loss = Vec::with_capacity(params.epochs);

    // Sparse gradient accumulators, reused across batches. `touched`
    // tracks which coordinates to reset so a batch costs O(nnz).
    let mut grad_g1 = vec![0.0f64; dim];
    let mut grad_g0 = vec![0.0f64; dim];
    let mut grad_mu = vec![0.0f64; dim];
    let mut touched_g1: Vec<u32> = Vec::new();
    let mut touched_g0: Vec<u32> = Vec::new();
    let mut touched_mu: Vec<u32> = Vec::new();

    for epoch in 0..params.epochs {
        order.shuffle(&mut rng);
        let epoch_lr = params.learning_rate / (1.0 + epoch as f64).sqrt();
        let mut epoch_loss = KahanEpochLoss::default();

        for batch in order.chunks(params.batch_size) {
            let mut bias_g1 = 0.0;
            let mut bias_g0 = 0.0;
            let mut bias_mu = 0.0;
            let mut batch_loss = 0.0;

            for &i in batch {
                let x = &features[i];
                let y = outcomes[i];
                if treatments[i] {
                    let err = head_g1.score(x) - y;
                    batch_loss += err.abs() / outcome_norm;
                    let d = err.signum() / outcome_norm;
                    if d != 0.0 {
                        bias_g1 += d;
                        for (&idx, &v) in x.indices.iter().zip(&x.values) {
                            let slot = &mut grad_g1[idx as usize];
                            if *slot == 0.0 {
                                touched_g1.push(idx);
                            }
                            *slot += d * v;
                        }
                    }
                } else {
                    let err = head_g0.score(x) - y;
                    batch_loss += err.abs() / outcome_norm;
                    let d = err.signum() / outcome_norm;
                    if d != 0.0 {
                        bias_g0 += d;
                        for (&idx, &v) in x.indices.iter().zip(&x.values) {
                            let slot = &mut grad_g0[idx as usize];
                            if *slot == 0.0 {
                                touched_g0.push(idx);
                            }
                            *slot += d * v;
                        }
                    }
                }
                if lambda > 0.0 {
                    let t_f = if treatments[i] { 1.0 } else { 0.0 };
                    let prob = sigmoid(head_mu.score(x));
                    let clipped = prob.clamp(1e-12, 1.0 - 1e-12);
                    batch_loss +=
                        lambda * -(t_f * clipped.ln() + (1.0 - t_f) * (1.0 - clipped).ln());
                    let d = lambda * (prob - t_f);
                    if d != 0.0 {
                        bias_mu += d;
                        for (&idx, &v) in x.indices.iter().zip(&x.values) {
                            let slot = &mut grad_mu[idx as usize];
                            if *slot == 0.0 {
                                touched_mu.push(idx);
                            }
                            *slot += d * v;
                        }
                    }
                }
            }

            let scale = epoch_lr / batch.len() as f64;
            head_g1.bias -= scale * bias_g1;
            head_g0.bias -= scale * bias_g0;
            head_mu.bias -= scale * bias_mu;
            for &idx in &touched_g1 {
                head_g1.weights[idx as usize] -= scale * grad_g1[idx as usize];
                grad_g1[idx as usize] = 0.0;
            }
            for &idx in &touched_g0 {
                head_g0.weights[idx as usize] -= scale * grad_g0[idx as usize];
                grad_g0[idx as usize] = 0.0;
            }
            for &idx in &touched_mu {
                head_mu.weights[idx as usize] -= scale * grad_mu[idx as usize];
                grad_mu[idx as usize] = 0.0;
            }
            touched_g1.clear();
            touched_g0.clear();
            touched_mu.clear();

            epoch_loss.add(batch_loss, batch.len());
        }
        train_loss.push(epoch_loss.mean());
    }

    Ok(TextTripleModel {
        encoder: encoder.clone(),
        head_g1,
        head_g0,
        head_mu,
        lambda,
        outcome_norm,
        train_loss,
    })
}

/// Fits the model from raw texts by encoding them first.
pub fn fit_text_triple(
    encoder: &TextEncoderConfig,
    texts: &[&str],
    outcomes: &[f64],
    treatments: &[bool],
    lambda: f64,
    params: &TextTripleParams,
) -> Result<TextTripleModel> {
    let features = encoder.encode_all(texts)?;
    fit_text_triple_encoded(encoder, &features, outcomes, treatments, lambda, params)
}

#[derive(Default)]
struct KahanEpochLoss {
    total: f64,
    count: usize,
}

impl KahanEpochLoss {
    fn add(&mut self, batch_loss: f64, batch_len: usize) {
        self.total += batch_loss;
        self.count += batch_len;
    }

    fn mean(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.total / self.count as f64
        }
    }
}
