//! Nuisance learners: linear models, boosted trees, and the joint text
//! model, plus a versioned JSON container for saving any of them.

pub mod gbt;
pub mod linear;
pub mod text_triple;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::DenseMatrix;
pub use gbt::{fit_gbt, GbtModel, GbtObjective, GbtParams, TreeNode};
pub use linear::{fit_elastic_net, fit_ols, LinearModel, Regularization};
pub use text_triple::{
    fit_text_triple, fit_text_triple_encoded, triple_loss, LinearHead, LossComponents,
    TextTripleModel, TextTripleParams, TriplePrediction,
};

/// Either tabular regressor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Regressor {
    Linear(LinearModel),
    Gbt(GbtModel),
}

impl Regressor {
    pub fn predict(&self, x: &DenseMatrix) -> Result<Vec<f64>> {
        match self {
            Regressor::Linear(m) => m.predict(x),
            Regressor::Gbt(m) => m.predict(x),
        }
    }
}

/// Tabular propensity model. The linear route is a linear probability
/// model: raw scores can leave [0, 1] and rely on downstream clipping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PropensityModel {
    LinearProbability(LinearModel),
    GbtLogistic(GbtModel),
}

impl PropensityModel {
    pub fn predict_score(&self, x: &DenseMatrix) -> Result<Vec<f64>> {
        match self {
            PropensityModel::LinearProbability(m) => m.predict(x),
            PropensityModel::GbtLogistic(m) => m.predict(x),
        }
    }
}

/// Which fold's complement a nuisance set was trained on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainedOn {
    /// The held-out fold; training used every other fold.
    pub excluded_fold: usize,
    pub n_train: usize,
}

/// The three nuisance models for one fold: treated-arm outcome,
/// control-arm outcome, and propensity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NuisanceTriple {
    /// Separate per-arm models over tabular features.
    Tabular {
        g1: Regressor,
        g0: Regressor,
        mu: PropensityModel,
        trained_on: TrainedOn,
    },
    /// One joint model over text.
    TextJoint {
        model: TextTripleModel,
        trained_on: TrainedOn,
    },
}

impl NuisanceTriple {
    pub fn trained_on(&self) -> TrainedOn {
        match self {
            NuisanceTriple::Tabular { trained_on, .. } => *trained_on,
            NuisanceTriple::TextJoint { trained_on, .. } => *trained_on,
        }
    }
}

/// Format version for saved models; bump on breaking layout changes.
pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SavedModel {
    Linear(LinearModel),
    Gbt(GbtModel),
    TextTriple(TextTripleModel),
    Nuisances(Vec<NuisanceTriple>),
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    version: u32,
    model: SavedModel,
}

/// Writes a model as versioned JSON.
pub fn save_model_json<W: std::io::Write>(model: &SavedModel, writer: W) -> Result<()> {
    let file = ModelFile {
        version: MODEL_FORMAT_VERSION,
        model: model.clone(),
    };
    serde_json::to_writer_pretty(writer, &file)?;
    Ok(())
}

/// Reads a model written by [`save_model_json`], rejecting unknown
/// format versions.
pub fn load_model_json<R: std::io::Read>(reader: R) -> Result<SavedModel> {
    let file: ModelFile = serde_json::from_reader(reader)?;
    if file.version != MODEL_FORMAT_VERSION {
        return Err(Error::Config(format!(
            "unsupported model format version {} (this build reads {})",
            file.version, MODEL_FORMAT_VERSION
        )));
    }
    Ok(file.model)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn model_file_round_trip() {
        let model = SavedModel::Linear(LinearModel {
            intercept: 0.25,
            weights: vec![1.0, -2.5],
            regularization: Regularization::L1 { l1: 0.1 },
            converged: true,
        });
        let mut buf = Vec::new();
        save_model_json(&model, &mut buf).unwrap();
        let back = load_model_json(buf.as_slice()).unwrap();
        assert_eq!(model, back);
    }

    #[test]
    fn unknown_version_is_rejected() {
        let json = r#"{"version": 999, "model": {"kind": "linear",
            "intercept": 0.0, "weights": [],
            "regularization": {"kind": "none"}, "converged": true}}"#;
        let err = load_model_json(json.as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err:?}");
    }

    #[test]
    fn malformed_model_json_is_a_json_error() {
        let err = load_model_json("{".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Json(_)));
    }
}
