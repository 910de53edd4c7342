//! HTTP client for a remote embedding service.
//!
//! Wire format, fixed by contract with the service:
//!
//! * request: `POST endpoint_url` with JSON body `{"texts": ["...", ...]}`
//! * response: `200 OK` with JSON body `{"embeddings": [[f64, ...], ...]}`
//!
//! Rows come back aligned with the request order, one per text, each of
//! width `dim`. Texts are sent in batches of `batch_size`; batches run
//! sequentially unless the config marks the provider concurrent-safe.
//! Any transport, status, shape, or parse failure is reported with the
//! index of the batch that caused it.

use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Connection settings for the embedding service.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingProviderConfig {
    pub endpoint_url: String,
    /// Expected embedding width; responses are validated against it.
    pub dim: usize,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    /// Whether batches may be issued in parallel. Results are stitched
    /// back in request order either way.
    #[serde(default)]
    pub concurrent: bool,
}

fn default_timeout_ms() -> u64 {
    10_000
}

fn default_batch_size() -> usize {
    64
}

impl EmbeddingProviderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.endpoint_url.is_empty() {
            return Err(Error::Parameter("endpoint_url is empty".into()));
        }
        if self.dim == 0 {
            return Err(Error::Parameter("embedding dim must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Parameter("batch_size must be >= 1".into()));
        }
        if self.timeout_ms == 0 {
            return Err(Error::Parameter("timeout_ms must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [&'a str],
}

#[derive(Deserialize)]
struct EmbedResponse {
    embeddings: Vec<Vec<f64>>,
}

fn provider_err(batch: usize, message: impl Into<String>) -> Error {
    Error::Provider {
        batch,
        message: message.into(),
    }
}

fn fetch_batch(
    agent: &ureq::Agent,
    config: &EmbeddingProviderConfig,
    token: Option<&str>,
    batch_idx: usize,
    texts: &[&str],
) -> Result<Vec<Vec<f64>>> {
    let request = EmbedRequest { texts };
    let mut post = agent.post(&config.endpoint_url);
    if let Some(token) = token {
        post = post.header("authorization", &format!("Bearer {token}"));
    }
    let mut response = post
        .send_json(&request)
        .map_err(|e| provider_err(batch_idx, e.to_string()))?;
    let parsed: EmbedResponse = response
        .body_mut()
        .read_json()
        .map_err(|e| provider_err(batch_idx, format!("invalid response body: {e}")))?;

    if parsed.embeddings.len() != texts.len() {
        return Err(provider_err(
            batch_idx,
            format!(
                "row count: expected {}, got {}",
                texts.len(),
                parsed.embeddings.len()
            ),
        ));
    }
    for (row_idx, row) in parsed.embeddings.iter().enumerate() {
        if row.len() != config.dim {
            return Err(provider_err(
                batch_idx,
                format!(
                    "embedding width at row {row_idx}: expected {}, got {}",
                    config.dim,
                    row.len()
                ),
            ));
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(provider_err(
                batch_idx,
                format!("non-finite embedding value at row {row_idx}"),
            ));
        }
    }
    Ok(parsed.embeddings)
}

/// Name of the environment variable holding the bearer token sent to
/// the embedding service. Credentials stay out of config files; unset
/// means requests go out without an `Authorization` header.
pub const EMBED_TOKEN_ENV: &str = "DRCF_EMBED_TOKEN";

/// Embeds `texts` through the remote service, preserving order.
///
/// An empty input returns an empty output without any network call.
pub fn embed_remote(config: &EmbeddingProviderConfig, texts: &[&str]) -> Result<Vec<Vec<f64>>> {
    config.validate()?;
    if texts.is_empty() {
        return Ok(Vec::new());
    }

    let agent_config = ureq::Agent::config_builder()
        .timeout_global(Some(Duration::from_millis(config.timeout_ms)))
        .build();
    let agent: ureq::Agent = agent_config.into();
    let token = std::env::var(EMBED_TOKEN_ENV).ok();
    let token = token.as_deref();

    let batches: Vec<&[&str]> = texts.chunks(config.batch_size).collect();

    let per_batch: Vec<Result<Vec<Vec<f64>>>> = if config.concurrent {
        batches
            .par_iter()
            .enumerate()
            .map(|(i, chunk)| fetch_batch(&agent, config, token, i, chunk))
            .collect()
    } else {
        batches
            .iter()
            .enumerate()
            .map(|(i, chunk)| fetch_batch(&agent, config, token, i, chunk))
            .collect()
    };

    let mut out = Vec::with_capacity(texts.len());
    for result in per_batch {
        out.extend(result?);
    }
    Ok(out)
}
