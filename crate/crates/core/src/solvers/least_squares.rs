use crate::error::{Error, Result};
use crate::model::{CoefficientVector, Design, ObservedData};

use super::newton::{minimize, SmoothLoss};
use super::{check_lambda, check_weights, FitDiagnostics, SolverSettings};

/// `½ c_i (r_i − η)²` over the rows that carry weight.
struct WeightedSquares {
    c: Vec<f64>,
    r: Vec<f64>,
}

impl SmoothLoss for WeightedSquares {
    fn term(&self, i: usize, eta: f64) -> (f64, f64, f64) {
        let e = self.r[i] - eta;
        let c = self.c[i];
        (0.5 * c * e * e, -c * e, c)
    }

    fn intercept_shift(&self, eta: &[f64]) -> Option<f64> {
        let total: f64 = self.c.iter().sum();
        let s: f64 = self.c.iter().zip(&self.r).zip(eta).map(|((c, r), e)| c * (r - e)).sum();
        Some(s / total)
    }
}

/// Rows with positive `T_i w_i`, and the corresponding weights.
pub(crate) fn weighted_rows(data: &ObservedData, weights: &[f64]) -> (Vec<usize>, Vec<f64>) {
    let mut rows = Vec::new();
    let mut c = Vec::new();
    for (i, (&t, &w)) in data.t().iter().zip(weights).enumerate() {
        if t == 1.0 && w > 0.0 {
            rows.push(i);
            c.push(w);
        }
    }
    (rows, c)
}

pub(crate) fn wls_path_step(
    data: &ObservedData,
    weights: &[f64],
    response: &[f64],
    lambda: f64,
    settings: &SolverSettings,
    init: Option<&CoefficientVector>,
) -> Result<(CoefficientVector, FitDiagnostics)> {
    let n = data.n() as f64;
    let (rows, c) = weighted_rows(data, weights);
    if rows.is_empty() {
        return Err(Error::ZeroTotalWeight);
    }
    let x: Design = data.f().select_rows(&rows);
    let loss = WeightedSquares {
        c: c.iter().map(|c| c / n).collect(),
        r: rows.iter().map(|&i| response[i]).collect(),
    };
    let mask: Vec<bool> = (0..x.ncols()).map(|j| j > 0).collect();
    let (b, diag) = minimize(&x, &loss, lambda, &mask, init.map(|c| c.values()), settings);
    Ok((CoefficientVector::new(b), diag))
}

/// Weighted least-squares Lasso over the treated group:
/// `(1/2n) Σ T_i w_i (r_i − f_i'α)² + λ‖α_{1:p}‖₁`.
pub fn fit_wls_lasso(
    data: &ObservedData,
    weights: &[f64],
    response: &[f64],
    lambda_alpha: f64,
    settings: &SolverSettings,
) -> Result<(CoefficientVector, FitDiagnostics)> {
    check_lambda(lambda_alpha)?;
    check_weights(weights, data.n())?;
    settings.validate()?;
    if response.len() != data.n() {
        return Err(Error::InvalidArgument("response length differs from sample size".into()));
    }
    let out = wls_path_step(data, weights, response, lambda_alpha, settings, None)?;
    if !out.1.converged {
        return Err(Error::NotConverged {
            solver: "weighted least squares",
            diagnostics: out.1,
        });
    }
    Ok(out)
}

/// Unpenalized weighted least-squares loss.
pub fn wls_loss(data: &ObservedData, weights: &[f64], response: &[f64], alpha: &CoefficientVector) -> f64 {
    let fit = data.f().mul_vec(alpha.values());
    let s: f64 = (0..data.n())
        .filter(|&i| data.t()[i] == 1.0)
        .map(|i| {
            let e = response[i] - fit[i];
            weights[i] * e * e
        })
        .sum();
    0.5 * s / data.n() as f64
}
