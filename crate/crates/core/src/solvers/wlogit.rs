use crate::error::{Error, Result};
use crate::model::{check_loss, logistic, BoundSide, CoefficientVector, ObservedData, SensitivityLevel};

use super::least_squares::weighted_rows;
use super::newton::{minimize, SmoothLoss};
use super::propensity::softplus;
use super::{check_lambda, check_weights, FitDiagnostics, SolverSettings};

struct WeightedLogistic {
    c: Vec<f64>,
    y: Vec<f64>,
}

impl SmoothLoss for WeightedLogistic {
    fn term(&self, i: usize, eta: f64) -> (f64, f64, f64) {
        let p = logistic(eta);
        let c = self.c[i];
        (c * (softplus(eta) - self.y[i] * eta), c * (p - self.y[i]), c * p * (1.0 - p))
    }

    fn objective_floor(&self) -> f64 {
        f64::MIN_POSITIVE
    }
}

/// Derivative of the induced mean of the transformed binary outcome with
/// respect to `P(Y=1)`: `1 ± span{ρ(1, q) − ρ(0, q)}` at the side's level.
/// On the upper side this is `Λ − span{(q)_+ − (q − 1)_+}`.
pub fn binary_mean_weight(q: f64, s: &SensitivityLevel, side: BoundSide) -> f64 {
    let lvl = s.level(side);
    1.0 + side.sign() * s.span() * (check_loss(1.0, q, lvl) - check_loss(0.0, q, lvl))
}

pub(crate) fn wlogit_path_step(
    data: &ObservedData,
    weights: &[f64],
    lambda: f64,
    settings: &SolverSettings,
    init: Option<&CoefficientVector>,
) -> Result<(CoefficientVector, FitDiagnostics)> {
    let n = data.n() as f64;
    let (rows, c) = weighted_rows(data, weights);
    if rows.is_empty() {
        return Err(Error::ZeroTotalWeight);
    }
    if let Some(&i) = rows.iter().find(|&&i| data.y()[i] != 0.0 && data.y()[i] != 1.0) {
        return Err(Error::NonBinaryOutcome(data.y()[i]));
    }
    let x = data.f().select_rows(&rows);
    let loss = WeightedLogistic {
        c: c.iter().map(|c| c / n).collect(),
        y: rows.iter().map(|&i| data.y()[i]).collect(),
    };
    let mask: Vec<bool> = (0..x.ncols()).map(|j| j > 0).collect();
    let (b, diag) = minimize(&x, &loss, lambda, &mask, init.map(|c| c.values()), settings);
    Ok((CoefficientVector::new(b), diag))
}

/// Weighted logistic Lasso over the treated group:
/// `Ẽ[T c {log(1 + e^{f'α}) − Y f'α}] + λ‖α_{1:p}‖₁`.
pub fn fit_wlogit_lasso(
    data: &ObservedData,
    weights: &[f64],
    lambda_alpha: f64,
    settings: &SolverSettings,
) -> Result<(CoefficientVector, FitDiagnostics)> {
    check_lambda(lambda_alpha)?;
    check_weights(weights, data.n())?;
    settings.validate()?;
    let out = wlogit_path_step(data, weights, lambda_alpha, settings, None)?;
    if !out.1.converged {
        return Err(Error::NotConverged {
            solver: "weighted logistic",
            diagnostics: out.1,
        });
    }
    Ok(out)
}

/// Unpenalized weighted logistic loss.
pub fn wlogit_loss(data: &ObservedData, weights: &[f64], alpha: &CoefficientVector) -> f64 {
    let eta = data.f().mul_vec(alpha.values());
    let s: f64 = (0..data.n())
        .filter(|&i| data.t()[i] == 1.0)
        .map(|i| weights[i] * (softplus(eta[i]) - data.y()[i] * eta[i]))
        .sum();
    s / data.n() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Design;
    use approx::assert_abs_diff_eq;

    #[test]
    fn mean_weight_values() {
        let s = SensitivityLevel::new(2.0).unwrap();
        assert_abs_diff_eq!(binary_mean_weight(0.5, &s, BoundSide::Upper), 1.25, epsilon = 1e-12);
        assert_abs_diff_eq!(binary_mean_weight(2.0, &s, BoundSide::Upper), 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(binary_mean_weight(-1.0, &s, BoundSide::Upper), 2.0, epsilon = 1e-12);
        // lower side mirrors: small at q <= 0, large at q >= 1
        assert_abs_diff_eq!(binary_mean_weight(-1.0, &s, BoundSide::Lower), 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(binary_mean_weight(2.0, &s, BoundSide::Lower), 2.0, epsilon = 1e-12);
    }

    #[test]
    fn intercept_only_gives_weighted_mean() {
        let design = Design::from_columns(5, 1, vec![1.0; 5]).unwrap();
        let data = ObservedData::with_shared_design(
            vec![1.0, 0.0, 1.0, 0.0, 1.0],
            vec![1.0, 1.0, 1.0, 1.0, 0.0],
            design,
        )
        .unwrap();
        let w = [1.0, 3.0, 2.0, 1.0, 5.0];
        let (a, _) = fit_wlogit_lasso(&data, &w, 0.0, &SolverSettings::default()).unwrap();
        assert_abs_diff_eq!(logistic(a.values()[0]), 3.0 / 7.0, epsilon = 1e-9);
    }

    #[test]
    fn rejects_non_binary() {
        let design = Design::from_columns(3, 1, vec![1.0; 3]).unwrap();
        let data =
            ObservedData::with_shared_design(vec![0.5, 1.0, 0.0], vec![1.0, 1.0, 0.0], design).unwrap();
        let err = fit_wlogit_lasso(&data, &[1.0; 3], 0.0, &SolverSettings::default()).unwrap_err();
        assert!(matches!(err, Error::NonBinaryOutcome(_)));
    }
}
