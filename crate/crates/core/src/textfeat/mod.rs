//! Text covariate encoders.
//!
//! Two routes produce numeric features from free text:
//!
//! * hashed n-grams ([`featurize`]): deterministic, offline, no
//!   vocabulary state;
//! * a remote embedding service ([`provider::embed_remote`]): batched
//!   HTTP calls against a fixed JSON wire format.
//!
//! [`TextEncoderConfig`] unifies the two so downstream models do not
//! care where their vectors came from.

pub mod provider;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
pub use provider::{embed_remote, EmbeddingProviderConfig, EMBED_TOKEN_ENV};

/// Term-frequency weighting for hashed n-gram features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TfWeighting {
    /// 1.0 for any present n-gram.
    Binary,
    /// Raw occurrence count.
    #[default]
    Count,
    /// 1 + ln(count).
    LogCount,
}

/// Configuration of the hashing featurizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeaturizerConfig {
    /// Smallest n-gram length, in words.
    pub ngram_min: usize,
    /// Largest n-gram length, in words.
    pub ngram_max: usize,
    /// Output dimension; must be a power of two, at least 256.
    pub hash_dim: usize,
    pub lowercase: bool,
    pub tf_weighting: TfWeighting,
}

impl Default for FeaturizerConfig {
    fn default() -> Self {
        Self {
            ngram_min: 1,
            ngram_max: 2,
            hash_dim: 1 << 16,
            lowercase: true,
            tf_weighting: TfWeighting::Count,
        }
    }
}

impl FeaturizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ngram_min < 1 || self.ngram_min > self.ngram_max || self.ngram_max > 3 {
            return Err(Error::Parameter(format!(
                "ngram range [{}, {}] must satisfy 1 <= min <= max <= 3",
                self.ngram_min, self.ngram_max
            )));
        }
        if !self.hash_dim.is_power_of_two() || self.hash_dim < 256 {
            return Err(Error::Parameter(format!(
                "hash_dim {} must be a power of two >= 256",
                self.hash_dim
            )));
        }
        Ok(())
    }
}

/// Sparse vector with strictly increasing indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseVec {
    pub dim: usize,
    pub indices: Vec<u32>,
    pub values: Vec<f64>,
}

impl SparseVec {
    pub fn empty(dim: usize) -> Self {
        Self {
            dim,
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Wraps a dense row; zero entries are kept out.
    pub fn from_dense(row: &[f64]) -> Self {
        let mut indices = Vec::new();
        let mut values = Vec::new();
        for (i, &v) in row.iter().enumerate() {
            if v != 0.0 {
                indices.push(i as u32);
                values.push(v);
            }
        }
        Self {
            dim: row.len(),
            indices,
            values,
        }
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    /// Dot product against a dense weight vector of length `dim`.
    #[inline]
    pub fn dot(&self, dense: &[f64]) -> f64 {
        debug_assert_eq!(dense.len(), self.dim);
        let mut acc = 0.0;
        for (&i, &v) in self.indices.iter().zip(&self.values) {
            acc += dense[i as usize] * v;
        }
        acc
    }

    pub fn l2_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// FNV-1a 64-bit over raw bytes, then a splitmix-style finalizer for
/// avalanche in the low bits. This is the crate's one text hash; it is
/// fixed so that feature indices are stable across platforms and runs.
#[inline]
fn hash_token(bytes: &[u8]) -> u64 {
    const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = FNV_OFFSET;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h = (h ^ (h >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h = (h ^ (h >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^ (h >> 31)
}

/// Splits text into maximal alphanumeric runs.
fn tokenize(text: &str) -> Vec<&str> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .collect()
}

/// Hashes a text into a sparse feature vector.
///
/// Pipeline: optional lowercasing, alphanumeric tokenization, word
/// n-grams of lengths `ngram_min..=ngram_max`, 64-bit token hashing.
/// The hash's low bits pick the bucket; bit 63 picks a sign of +-1
/// (the signed hashing trick), so colliding n-grams partially cancel
/// instead of always inflating a bucket. Weights follow
/// `tf_weighting` over per-n-gram occurrence counts.
///
/// Deterministic and stateless: equal (config, text) pairs produce
/// equal vectors, and no call mutates anything.
pub fn featurize(config: &FeaturizerConfig, text: &str) -> SparseVec {
    debug_assert!(config.validate().is_ok());
    let lowered;
    let source = if config.lowercase {
        lowered = text.to_lowercase();
        lowered.as_str()
    } else {
        text
    };
    let tokens = tokenize(source);
    if tokens.is_empty() {
        return SparseVec::empty(config.hash_dim);
    }

    // Count occurrences per distinct n-gram. BTreeMap keeps iteration
    // deterministic without depending on hash-map order.
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for n in config.ngram_min..=config.ngram_max {
        if tokens.len() < n {
            break;
        }
        for window in tokens.windows(n) {
            *counts.entry(window.join(" ")).or_insert(0) += 1;
        }
    }

    let mask = (config.hash_dim - 1) as u64;
    let mut buckets: BTreeMap<u32, f64> = BTreeMap::new();
    for (ngram, count) in counts {
        let h = hash_token(ngram.as_bytes());
        let bucket = (h & mask) as u32;
        let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
        let weight = match config.tf_weighting {
            TfWeighting::Binary => 1.0,
            TfWeighting::Count => count as f64,
            TfWeighting::LogCount => 1.0 + (count as f64).ln(),
        };
        *buckets.entry(bucket).or_insert(0.0) += sign * weight;
    }

    let mut indices = Vec::with_capacity(buckets.len());
    let mut values = Vec::with_capacity(buckets.len());
    for (i, v) in buckets {
        if v != 0.0 {
            indices.push(i);
            values.push(v);
        }
    }
    SparseVec {
        dim: config.hash_dim,
        indices,
        values,
    }
}

/// Where text vectors come from: local hashing or a remote service.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TextEncoderConfig {
    Hashing(FeaturizerConfig),
    Remote(EmbeddingProviderConfig),
}

impl Default for TextEncoderConfig {
    fn default() -> Self {
        TextEncoderConfig::Hashing(FeaturizerConfig::default())
    }
}

impl TextEncoderConfig {
    pub fn dim(&self) -> usize {
        match self {
            TextEncoderConfig::Hashing(c) => c.hash_dim,
            TextEncoderConfig::Remote(c) => c.dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            TextEncoderConfig::Hashing(c) => c.validate(),
            TextEncoderConfig::Remote(c) => c.validate(),
        }
    }

    /// Encodes every text, in order. The remote route batches requests;
    /// the hashing route is a pure per-text computation.
    pub fn encode_all(&self, texts: &[&str]) -> Result<Vec<SparseVec>> {
        match self {
            TextEncoderConfig::Hashing(c) => {
                c.validate()?;
                Ok(texts.iter().map(|t| featurize(c, t)).collect())
            }
            TextEncoderConfig::Remote(c) => {
                let dense = embed_remote(c, texts)?;
                Ok(dense.iter().map(|row| SparseVec::from_dense(row)).collect())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn cfg() -> FeaturizerConfig {
        FeaturizerConfig::default()
    }

    #[test]
    fn empty_text_gives_empty_vector() {
        let v = featurize(&cfg(), "");
        assert_eq!(v.dim, 1 << 16);
        assert_eq!(v.nnz(), 0);
        // Punctuation-only text has no tokens either.
        assert_eq!(featurize(&cfg(), " ... !!! ").nnz(), 0);
    }

    #[test]
    fn casefold_collapses_case_variants() {
        let a = featurize(&cfg(), "Great Battery Life");
        let b = featurize(&cfg(), "great battery life");
        assert_eq!(a, b);

        let mut no_fold = cfg();
        no_fold.lowercase = false;
        let c = featurize(&no_fold, "Great Battery Life");
        let d = featurize(&no_fold, "great battery life");
        assert_ne!(c, d);
    }

    #[test]
    fn tokenization_splits_on_non_alphanumeric() {
        let a = featurize(&cfg(), "good-grip, solid!seal");
        let b = featurize(&cfg(), "good grip solid seal");
        assert_eq!(a, b);
    }

    #[test]
    fn unigram_count_weighting_counts_repeats() {
        let mut config = cfg();
        config.ngram_min = 1;
        config.ngram_max = 1;
        let v1 = featurize(&config, "seal");
        let v3 = featurize(&config, "seal seal seal");
        assert_eq!(v1.indices, v3.indices);
        assert_abs_diff_eq!(v3.values[0], 3.0 * v1.values[0], epsilon = 1e-12);

        config.tf_weighting = TfWeighting::Binary;
        let b3 = featurize(&config, "seal seal seal");
        assert_abs_diff_eq!(b3.values[0].abs(), 1.0, epsilon = 1e-12);

        config.tf_weighting = TfWeighting::LogCount;
        let l3 = featurize(&config, "seal seal seal");
        assert_abs_diff_eq!(l3.values[0].abs(), 1.0 + 3f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn bigrams_are_order_sensitive() {
        let mut config = cfg();
        config.ngram_min = 2;
        config.ngram_max = 2;
        let ab = featurize(&config, "loose hinge");
        let ba = featurize(&config, "hinge loose");
        assert_ne!(ab, ba);
    }

    #[test]
    fn ngram_range_produces_expected_term_count() {
        // 3 tokens with ngram 1..=2 give 3 unigrams + 2 bigrams, all
        // distinct, so at most 5 buckets (fewer only under collision).
        let v = featurize(&cfg(), "weak strap seam");
        assert_eq!(v.nnz(), 5);
    }

    #[test]
    fn bucket_collision_rate_stays_low() {
        // 1000 distinct tokens into 2^18 buckets: expected collisions
        // are about 1000*999/2 / 2^18, i.e. roughly 2 tokens affected.
        let mut config = cfg();
        config.ngram_min = 1;
        config.ngram_max = 1;
        config.hash_dim = 1 << 18;
        let mut buckets = std::collections::BTreeSet::new();
        let n = 1000;
        for i in 0..n {
            let v = featurize(&config, &format!("token{i}"));
            assert_eq!(v.nnz(), 1);
            buckets.insert(v.indices[0]);
        }
        let collided = n - buckets.len();
        assert!(
            (collided as f64) < 0.01 * n as f64,
            "{collided} of {n} tokens collided"
        );
    }

    #[test]
    fn signs_split_roughly_evenly() {
        let mut config = cfg();
        config.ngram_min = 1;
        config.ngram_max = 1;
        let mut neg = 0usize;
        let n = 2000;
        for i in 0..n {
            let v = featurize(&config, &format!("w{i}"));
            if v.values.first().copied().unwrap_or(1.0) < 0.0 {
                neg += 1;
            }
        }
        let frac = neg as f64 / n as f64;
        assert!((0.4..=0.6).contains(&frac), "negative fraction {frac}");
    }

    #[test]
    fn sparse_dot_matches_dense_dot() {
        let v = SparseVec {
            dim: 8,
            indices: vec![1, 4, 7],
            values: vec![2.0, -0.5, 3.0],
        };
        let w = [0.0, 1.0, 9.0, 9.0, 4.0, 9.0, 9.0, -1.0];
        assert_abs_diff_eq!(v.dot(&w), 2.0 - 2.0 - 3.0, epsilon = 1e-12);
    }

    #[test]
    fn from_dense_drops_zeros() {
        let v = SparseVec::from_dense(&[0.0, 1.5, 0.0, -2.0]);
        assert_eq!(v.indices, vec![1, 3]);
        assert_eq!(v.values, vec![1.5, -2.0]);
        assert_eq!(v.dim, 4);
    }

    #[test]
    fn config_validation_catches_bad_dims() {
        let mut c = cfg();
        c.hash_dim = 1000;
        assert!(c.validate().is_err());
        c.hash_dim = 128;
        assert!(c.validate().is_err());
        c.hash_dim = 256;
        assert!(c.validate().is_ok());

        let mut c = cfg();
        c.ngram_min = 2;
        c.ngram_max = 1;
        assert!(c.validate().is_err());
        let mut c = cfg();
        c.ngram_max = 4;
        assert!(c.validate().is_err());
    }

    proptest! {
        // Purity: featurize is a function of (config, text) alone, and
        // indices come out strictly increasing within dimension bounds.
        #[test]
        fn featurize_is_pure_and_well_formed(text in "\\PC{0,120}") {
            let config = cfg();
            let a = featurize(&config, &text);
            let b = featurize(&config, &text);
            prop_assert_eq!(&a, &b);
            for w in a.indices.windows(2) {
                prop_assert!(w[0] < w[1]);
            }
            for &i in &a.indices {
                prop_assert!((i as usize) < config.hash_dim);
            }
            prop_assert_eq!(a.indices.len(), a.values.len());
        }

        // Token content outside alphanumerics never changes the vector.
        #[test]
        fn separators_are_equivalent(words in proptest::collection::vec("[a-z]{1,8}", 1..6)) {
            let config = cfg();
            let spaced = words.join(" ");
            let comma = words.join(", ");
            prop_assert_eq!(featurize(&config, &spaced), featurize(&config, &comma));
        }
    }
}
