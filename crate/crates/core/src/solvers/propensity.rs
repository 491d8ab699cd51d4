use crate::error::{Error, Result};
use crate::model::{CoefficientVector, ObservedData};

use super::newton::{minimize, SmoothLoss};
use super::{check_lambda, FitDiagnostics, SolverSettings};

/// `T e^{−η} + (1 − T) η`, averaged.
struct Calibration<'a> {
    t: &'a [f64],
    scale: f64,
    n_untreated: f64,
}

impl SmoothLoss for Calibration<'_> {
    fn term(&self, i: usize, eta: f64) -> (f64, f64, f64) {
        if self.t[i] == 1.0 {
            let e = (-eta).exp() * self.scale;
            (e, -e, e)
        } else {
            (eta * self.scale, self.scale, 0.0)
        }
    }

    fn intercept_shift(&self, eta: &[f64]) -> Option<f64> {
        // log Σ_T e^{−η} − log n0, computed stably
        let m = eta
            .iter()
            .zip(self.t)
            .filter(|(_, &t)| t == 1.0)
            .map(|(&e, _)| -e)
            .fold(f64::NEG_INFINITY, f64::max);
        if !m.is_finite() {
            return None;
        }
        let s: f64 = eta
            .iter()
            .zip(self.t)
            .filter(|(_, &t)| t == 1.0)
            .map(|(&e, _)| (-e - m).exp())
            .sum();
        Some(m + s.ln() - self.n_untreated.ln())
    }
}

/// `log(1 + e^η) − T η`, averaged.
struct Likelihood<'a> {
    t: &'a [f64],
    scale: f64,
}

pub(crate) fn softplus(eta: f64) -> f64 {
    if eta > 0.0 {
        eta + (-eta).exp().ln_1p()
    } else {
        eta.exp().ln_1p()
    }
}

impl SmoothLoss for Likelihood<'_> {
    fn term(&self, i: usize, eta: f64) -> (f64, f64, f64) {
        let p = crate::model::logistic(eta);
        (
            (softplus(eta) - self.t[i] * eta) * self.scale,
            (p - self.t[i]) * self.scale,
            p * (1.0 - p) * self.scale,
        )
    }

    fn objective_floor(&self) -> f64 {
        f64::MIN_POSITIVE
    }
}

fn mask_for(data: &ObservedData) -> Vec<bool> {
    (0..data.f().ncols()).map(|j| j > 0).collect()
}

pub(crate) fn rcal_gamma_path_step(
    data: &ObservedData,
    lambda: f64,
    settings: &SolverSettings,
    init: Option<&CoefficientVector>,
) -> (CoefficientVector, FitDiagnostics) {
    let n = data.n() as f64;
    let loss = Calibration {
        t: data.t(),
        scale: 1.0 / n,
        n_untreated: n - data.n_treated() as f64,
    };
    let (b, diag) = minimize(
        data.f(),
        &loss,
        lambda,
        &mask_for(data),
        init.map(|c| c.values()),
        settings,
    );
    (CoefficientVector::new(b), diag)
}

pub(crate) fn ml_gamma_path_step(
    data: &ObservedData,
    lambda: f64,
    settings: &SolverSettings,
    init: Option<&CoefficientVector>,
) -> (CoefficientVector, FitDiagnostics) {
    let loss = Likelihood {
        t: data.t(),
        scale: 1.0 / data.n() as f64,
    };
    let (b, diag) = minimize(
        data.f(),
        &loss,
        lambda,
        &mask_for(data),
        init.map(|c| c.values()),
        settings,
    );
    (CoefficientVector::new(b), diag)
}

fn surface(
    solver: &'static str,
    out: (CoefficientVector, FitDiagnostics),
) -> Result<(CoefficientVector, FitDiagnostics)> {
    if out.1.converged {
        Ok(out)
    } else {
        Err(Error::NotConverged {
            solver,
            diagnostics: out.1,
        })
    }
}

/// Calibrated propensity fit: minimizes `Ẽ{T e^{−f'γ} + (1−T) f'γ} + λ‖γ_{1:p}‖₁`.
pub fn fit_rcal_gamma(
    data: &ObservedData,
    lambda_gamma: f64,
    settings: &SolverSettings,
) -> Result<(CoefficientVector, FitDiagnostics)> {
    check_lambda(lambda_gamma)?;
    settings.validate()?;
    surface("calibrated propensity", rcal_gamma_path_step(data, lambda_gamma, settings, None))
}

/// Penalized logistic likelihood fit of the propensity score.
pub fn fit_ml_gamma(
    data: &ObservedData,
    lambda_gamma: f64,
    settings: &SolverSettings,
) -> Result<(CoefficientVector, FitDiagnostics)> {
    check_lambda(lambda_gamma)?;
    settings.validate()?;
    surface("logistic propensity", ml_gamma_path_step(data, lambda_gamma, settings, None))
}

/// Unpenalized calibration loss of `gamma` on `data`.
pub fn cal_loss(data: &ObservedData, gamma: &CoefficientVector) -> f64 {
    let eta = data.f().mul_vec(gamma.values());
    let n = data.n() as f64;
    eta.iter()
        .zip(data.t())
        .map(|(&e, &t)| if t == 1.0 { (-e).exp() } else { e })
        .sum::<f64>()
        / n
}

/// Unpenalized negative log-likelihood of `gamma` on `data`.
pub fn ml_loss(data: &ObservedData, gamma: &CoefficientVector) -> f64 {
    let eta = data.f().mul_vec(gamma.values());
    eta.iter()
        .zip(data.t())
        .map(|(&e, &t)| softplus(e) - t * e)
        .sum::<f64>()
        / data.n() as f64
}
