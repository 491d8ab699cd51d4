//! Penalized convex solvers for the nuisance models.
//!
//! Smooth losses (calibrated and likelihood propensity losses, weighted least
//! squares, weighted logistic) share a proximal Newton driver with a
//! coordinate-descent inner solver. The check loss is solved exactly as a
//! linear program.

mod least_squares;
mod newton;
mod propensity;
mod quantile;
mod wlogit;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use least_squares::{fit_wls_lasso, wls_loss};
pub use propensity::{cal_loss, fit_ml_gamma, fit_rcal_gamma, ml_loss};
pub use quantile::{
    fit_uqr_lasso, fit_wqr_lasso, fit_wqr_lasso_warm, weighted_check_loss, QuantileFit,
};
pub use wlogit::{binary_mean_weight, fit_wlogit_lasso, wlogit_loss};

pub(crate) use least_squares::wls_path_step as least_squares_step;
pub(crate) use quantile::quantile_zero_threshold;
pub(crate) use wlogit::wlogit_path_step as wlogit_step;

use crate::model::{CoefficientVector, ObservedData};

#[derive(Clone, Copy, Debug)]
pub(crate) enum GammaLoss {
    Calibration,
    Likelihood,
}

pub(crate) fn gamma_step(
    loss: GammaLoss,
    data: &ObservedData,
    lambda: f64,
    settings: &SolverSettings,
    init: Option<&CoefficientVector>,
) -> (CoefficientVector, FitDiagnostics) {
    match loss {
        GammaLoss::Calibration => propensity::rcal_gamma_path_step(data, lambda, settings, init),
        GammaLoss::Likelihood => propensity::ml_gamma_path_step(data, lambda, settings, init),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    pub max_iterations: usize,
    /// Relative objective change at which an iterative solver stops.
    pub tolerance: f64,
    pub lp_feasibility_tol: f64,
    pub step_shrink: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            max_iterations: 500,
            tolerance: 1e-8,
            lp_feasibility_tol: 1e-9,
            step_shrink: 0.5,
        }
    }
}

impl SolverSettings {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0
            || !(self.tolerance > 0.0)
            || !(self.lp_feasibility_tol > 0.0)
            || !(self.step_shrink > 0.0 && self.step_shrink < 1.0)
        {
            return Err(Error::InvalidArgument(format!("invalid solver settings {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub iterations_used: usize,
    pub final_objective: f64,
    pub kkt_max_violation: f64,
    pub converged: bool,
    pub clamp_events: usize,
}

pub(crate) fn soft_threshold(u: f64, t: f64) -> f64 {
    if u > t {
        u - t
    } else if u < -t {
        u + t
    } else {
        0.0
    }
}

/// Largest violation of the Lasso optimality conditions given the gradient of
/// the smooth part.
pub(crate) fn lasso_kkt(grad: &[f64], coef: &[f64], mask: &[bool], lambda: f64) -> f64 {
    grad.iter()
        .zip(coef)
        .zip(mask)
        .map(|((&g, &b), &pen)| {
            if !pen {
                g.abs()
            } else if b != 0.0 {
                (g + lambda * b.signum()).abs()
            } else {
                (g.abs() - lambda).max(0.0)
            }
        })
        .fold(0.0, f64::max)
}

pub(crate) fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidArgument(format!("penalty must be finite and >= 0, got {lambda}")));
    }
    Ok(())
}

pub(crate) fn check_weights(weights: &[f64], n: usize) -> Result<()> {
    if weights.len() != n {
        return Err(Error::InvalidArgument(format!(
            "{} weights for {} observations",
            weights.len(),
            n
        )));
    }
    if let Some(w) = weights.iter().find(|w| !(**w >= 0.0) || !w.is_finite()) {
        return Err(Error::InvalidArgument(format!("weight {w} is not a finite nonnegative value")));
    }
    Ok(())
}
