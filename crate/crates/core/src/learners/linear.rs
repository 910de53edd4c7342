//! Linear regression: ordinary least squares via the normal equations,
//! and elastic net via cyclic coordinate descent.
//!
//! The elastic-net objective is
//!
//! ```text
//! 0.5 * sum_i (y_i - b - x_i.w)^2 + l1 * |w|_1 + 0.5 * l2 * |w|_2^2
//! ```
//!
//! Features and targets are centered before the descent (no variance
//! scaling), the intercept is recovered afterwards and never penalized.
//! With a single feature this reduces to the textbook soft-threshold
//! solution `w = soft(x_c . y_c, l1) / (|x_c|^2 + l2)`, which the tests
//! pin down numerically.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{kahan_sum, mean, solve_linear_system, DenseMatrix};

/// Penalty recorded on a fitted linear model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Regularization {
    None,
    L1 { l1: f64 },
    ElasticNet { l1: f64, l2: f64 },
}

/// Fitted linear predictor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub intercept: f64,
    pub weights: Vec<f64>,
    pub regularization: Regularization,
    /// False when coordinate descent hit its iteration cap before the
    /// update norm fell under tolerance. The model is still usable.
    pub converged: bool,
}

impl LinearModel {
    #[inline]
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.weights.len());
        let mut acc = self.intercept;
        for (w, v) in self.weights.iter().zip(x) {
            acc += w * v;
        }
        acc
    }

    pub fn predict(&self, x: &DenseMatrix) -> Result<Vec<f64>> {
        if x.n_cols() != self.weights.len() {
            return Err(Error::Shape {
                expected: self.weights.len(),
                actual: x.n_cols(),
            });
        }
        Ok(x.iter_rows().map(|row| self.predict_row(row)).collect())
    }
}

fn check_training_inputs(x: &DenseMatrix, y: &[f64]) -> Result<()> {
    if x.n_rows() != y.len() {
        return Err(Error::Shape {
            expected: x.n_rows(),
            actual: y.len(),
        });
    }
    if y.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if !x.all_finite() || y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("training data contains non-finite values".into()));
    }
    Ok(())
}

/// Ordinary least squares with an implicit intercept.
///
/// Solves the normal equations by Gaussian elimination with partial
/// pivoting. A collinear design first gets one retry with a small ridge
/// jitter on the diagonal; if the system is still degenerate the fit
/// fails with a singularity error.
pub fn fit_ols(x: &DenseMatrix, y: &[f64]) -> Result<LinearModel> {
    check_training_inputs(x, y)?;
    let n = x.n_rows();
    let p = x.n_cols();
    if n < p + 1 {
        return Err(Error::Parameter(format!(
            "OLS needs at least {} rows for {} features, got {n}",
            p + 1,
            p
        )));
    }

    let d = p + 1; // intercept + features
    let mut xtx = vec![0.0f64; d * d];
    let mut xty = vec![0.0f64; d];

    // Augmented design [1, x]; accumulate upper triangle then mirror.
    xtx[0] = n as f64;
    for j in 0..p {
        let mut s = 0.0;
        for i in 0..n {
            s += x.get(i, j);
        }
        xtx[j + 1] = s;
        xtx[(j + 1) * d] = s;
    }
    for a in 0..p {
        for b in a..p {
            let mut s = 0.0;
            for i in 0..n {
                s += x.get(i, a) * x.get(i, b);
            }
            xtx[(a + 1) * d + (b + 1)] = s;
            xtx[(b + 1) * d + (a + 1)] = s;
        }
    }
    xty[0] = kahan_sum(y.iter().copied());
    for j in 0..p {
        let mut s = 0.0;
        for i in 0..n {
            s += x.get(i, j) * y[i];
        }
        xty[j + 1] = s;
    }

    let solution = {
        let mut a = xtx.clone();
        let mut b = xty.clone();
        match solve_linear_system(&mut a, &mut b, d) {
            Ok(sol) => sol,
            Err(Error::Singular(_)) => {
                // Retry once with ridge jitter scaled to the diagonal.
                let trace: f64 = (0..d).map(|i| xtx[i * d + i]).sum();
                let jitter = 1e-8 * (trace / d as f64).max(1.0);
                let mut a = xtx;
                for i in 0..d {
                    a[i * d + i] += jitter;
                }
                let mut b = xty;
                solve_linear_system(&mut a, &mut b, d).map_err(|_| {
                    Error::Singular("design matrix is rank deficient even after jitter".into())
                })?
            }
            Err(e) => return Err(e),
        }
    };

    Ok(LinearModel {
        intercept: solution[0],
        weights: solution[1..].to_vec(),
        regularization: Regularization::None,
        converged: true,
    })
}

/// Elastic net by cyclic coordinate descent on centered data.
///
/// Stops when the largest absolute coordinate update in a sweep falls
/// below `tol`, or after `max_iter` sweeps (then `converged = false`).
pub fn fit_elastic_net(
    x: &DenseMatrix,
    y: &[f64],
    l1: f64,
    l2: f64,
    max_iter: usize,
    tol: f64,
) -> Result<LinearModel> {
    check_training_inputs(x, y)?;
    if l1 < 0.0 || l2 < 0.0 {
        return Err(Error::Parameter(format!(
            "penalties must be non-negative, got l1={l1}, l2={l2}"
        )));
    }
    if max_iter == 0 {
        return Err(Error::Parameter("max_iter must be >= 1".into()));
    }
    if tol <= 0.0 {
        return Err(Error::Parameter("tol must be positive".into()));
    }

    let n = x.n_rows();
    let p = x.n_cols();

    let mut x_means = vec![0.0f64; p];
    for j in 0..p {
        let mut s = 0.0;
        for i in 0..n {
            s += x.get(i, j);
        }
        x_means[j] = s / n as f64;
    }
    let y_mean = mean(y);

    // Centered copies; column-major so coordinate sweeps stay local.
    let mut xc = vec![0.0f64; p * n];
    for j in 0..p {
        for i in 0..n {
            xc[j * n + i] = x.get(i, j) - x_means[j];
        }
    }
    let yc: Vec<f64> = y.iter().map(|v| v - y_mean).collect();

    let col_norm2: Vec<f64> = (0..p)
        .map(|j| xc[j * n..(j + 1) * n].iter().map(|v| v * v).sum())
        .collect();

    let mut w = vec![0.0f64; p];
    let mut residual = yc.clone();
    let mut converged = false;

    for _sweep in 0..max_iter {
        let mut max_delta = 0.0f64;
        for j in 0..p {
            // Constant columns carry no signal once centered.
            if col_norm2[j] <= f64::EPSILON * n as f64 {
                continue;
            }
            let col = &xc[j * n..(j + 1) * n];
            let mut rho = 0.0;
            for i in 0..n {
                rho += col[i] * residual[i];
            }
            rho += col_norm2[j] * w[j];

            let new_w = soft_threshold(rho, l1) / (col_norm2[j] + l2);
            let delta = new_w - w[j];
            if delta != 0.0 {
                for i in 0..n {
                    residual[i] -= col[i] * delta;
                }
                w[j] = new_w;
            }
            max_delta = max_delta.max(delta.abs());
        }
        if max_delta < tol {
            converged = true;
            break;
        }
    }

    let intercept = y_mean
        - w.iter()
            .zip(&x_means)
            .map(|(wj, mj)| wj * mj)
            .sum::<f64>();

    let regularization = if l1 == 0.0 && l2 == 0.0 {
        Regularization::None
    } else if l2 == 0.0 {
        Regularization::L1 { l1 }
    } else {
        Regularization::ElasticNet { l1, l2 }
    };

    Ok(LinearModel {
        intercept,
        weights: w,
        regularization,
        converged,
    })
}

#[inline]
fn soft_threshold(z: f64, gamma: f64) -> f64 {
    if z > gamma {
        z - gamma
    } else if z < -gamma {
        z + gamma
    } else {
        0.0
    }
}
