//! Doubly robust cross-fitting for treatment-effect estimation.
//!
//! The crate estimates average, on-treated, group-level, and
//! unit-level treatment effects (ATE, ATET, GATE, CATE) from
//! observational data whose covariates are tabular columns, free text,
//! or both. The pipeline:
//!
//! 1. split units into folds, stratified by treatment ([`data`]);
//! 2. per fold, train outcome and propensity models on the other folds
//!    ([`learners`], [`textfeat`]);
//! 3. score each held-out unit with a doubly robust label and calibrate
//!    a per-fold linear effect predictor ([`dr`], [`crossfit`]);
//! 4. aggregate labels into estimates with confidence intervals and
//!    compare runs across covariate modalities ([`report`]).
//!
//! [`synthetic`] generates datasets with known ground truth for
//! validating the estimators end to end.

pub mod crossfit;
pub mod data;
pub mod dr;
pub mod error;
pub mod learners;
pub mod numeric;
pub mod report;
pub mod synthetic;
pub mod textfeat;

pub use error::{Error, Result};
