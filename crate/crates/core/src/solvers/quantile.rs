use crate::error::{Error, Result};
use crate::lp::{self, Basis, LinearProgram, SimplexOptions};
use crate::model::{check_loss, CoefficientVector, ObservedData};

use super::least_squares::weighted_rows;
use super::{check_lambda, check_weights, FitDiagnostics, SolverSettings};

/// Quantile fit with its LP certificate.
#[derive(Clone, Debug)]
pub struct QuantileFit {
    pub coef: CoefficientVector,
    pub diagnostics: FitDiagnostics,
    /// Optimal dual point `d` of the check-loss problem, one entry per unit
    /// (zero for units without weight).
    pub dual: Vec<f64>,
    pub basis: Option<Basis>,
}

/// `(1/n) Σ T_i w_i ρ_τ(y_i, h_i'β)`.
pub fn weighted_check_loss(data: &ObservedData, weights: &[f64], tau: f64, coef: &CoefficientVector) -> f64 {
    let fit = data.h().mul_vec(coef.values());
    let s: f64 = (0..data.n())
        .filter(|&i| data.t()[i] == 1.0)
        .map(|i| weights[i] * check_loss(data.y()[i], fit[i], tau))
        .sum();
    s / data.n() as f64
}

fn check_tau(tau: f64) -> Result<()> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::InvalidArgument(format!("quantile level must lie in (0, 1), got {tau}")));
    }
    Ok(())
}

/// Solves the check-loss Lasso through its dual:
///
/// ```text
/// max  Σ y_i d_i
/// s.t. Σ d_i h_i0 = 0,  Σ d_i h_ij = s_j (j ≥ 1),
///      −(1−τ) c_i ≤ d_i ≤ τ c_i,  |s_j| ≤ λ,   c_i = T_i w_i / n.
/// ```
///
/// The coefficients are the negated row multipliers.
pub fn fit_wqr_lasso_warm(
    data: &ObservedData,
    weights: &[f64],
    tau: f64,
    lambda_beta: f64,
    settings: &SolverSettings,
    warm: Option<&Basis>,
) -> Result<QuantileFit> {
    check_tau(tau)?;
    check_lambda(lambda_beta)?;
    check_weights(weights, data.n())?;
    let n = data.n() as f64;
    let (rows, c) = weighted_rows(data, weights);
    if rows.is_empty() {
        return Err(Error::ZeroTotalWeight);
    }
    let h = data.h();
    let m = h.ncols();
    let cmax = c.iter().fold(0.0f64, |a, &v| a.max(v));
    // work with d' = d n / cmax for conditioning; row multipliers are unaffected
    let k = n / cmax;

    let mut prog = LinearProgram::new(m);
    let mut col = vec![0.0; m];
    for (&i, &ci) in rows.iter().zip(&c) {
        for (j, v) in col.iter_mut().enumerate() {
            *v = h.get(i, j);
        }
        let b = ci / cmax;
        prog.add_column(-data.y()[i], -(1.0 - tau) * b, tau * b, &col);
    }
    let box_half = lambda_beta * k;
    for j in 1..m {
        col.iter_mut().for_each(|v| *v = 0.0);
        col[j] = -1.0;
        prog.add_column(0.0, -box_half, box_half, &col);
    }
    let opts = SimplexOptions {
        feasibility_tol: settings.lp_feasibility_tol,
        ..Default::default()
    };
    let sol = match warm {
        Some(b) => lp::solve_warm(&prog, b, &opts)?,
        None => lp::solve(&prog, &opts)?,
    };
    let beta: Vec<f64> = sol.duals.iter().map(|v| -v).collect();
    let coef = CoefficientVector::new(beta);

    let primal = weighted_check_loss(data, weights, tau, &coef) + lambda_beta * coef.penalized_l1();
    let dual_value = -sol.objective / k;
    let gap = (primal - dual_value).abs();
    let allowed = 10.0 * settings.lp_feasibility_tol.max(1e-12) * primal.abs().max(1.0);
    let mut dual = vec![0.0; data.n()];
    for (idx, &i) in rows.iter().enumerate() {
        dual[i] = sol.x[idx] / k;
    }
    Ok(QuantileFit {
        coef,
        diagnostics: FitDiagnostics {
            iterations_used: sol.iterations,
            final_objective: primal,
            kkt_max_violation: gap,
            converged: gap <= allowed,
            clamp_events: 0,
        },
        dual,
        basis: sol.basis,
    })
}

/// Weighted check-loss Lasso over the treated group:
/// `(1/n) Σ T_i w_i ρ_τ(y_i, h_i'β) + λ‖β_{1:m}‖₁`, solved exactly.
pub fn fit_wqr_lasso(
    data: &ObservedData,
    weights: &[f64],
    tau: f64,
    lambda_beta: f64,
    settings: &SolverSettings,
) -> Result<(CoefficientVector, FitDiagnostics)> {
    settings.validate()?;
    let fit = fit_wqr_lasso_warm(data, weights, tau, lambda_beta, settings, None)?;
    if !fit.diagnostics.converged {
        return Err(Error::NotConverged {
            solver: "quantile linear program",
            diagnostics: fit.diagnostics,
        });
    }
    Ok((fit.coef, fit.diagnostics))
}

/// Check-loss Lasso with unit weights on the treated group.
pub fn fit_uqr_lasso(
    data: &ObservedData,
    tau: f64,
    lambda_beta: f64,
    settings: &SolverSettings,
) -> Result<(CoefficientVector, FitDiagnostics)> {
    let ones = vec![1.0; data.n()];
    fit_wqr_lasso(data, &ones, tau, lambda_beta, settings)
}

/// Weighted `τ`-quantile of treated outcomes and the smallest penalty at which
/// every slope is zero.
pub(crate) fn quantile_zero_threshold(data: &ObservedData, weights: &[f64], tau: f64) -> Result<(f64, f64)> {
    check_tau(tau)?;
    let n = data.n() as f64;
    let (rows, c) = weighted_rows(data, weights);
    if rows.is_empty() {
        return Err(Error::ZeroTotalWeight);
    }
    let y = data.y();
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.sort_by(|&a, &b| y[rows[a]].total_cmp(&y[rows[b]]));
    let total: f64 = c.iter().sum();
    let mut acc = 0.0;
    let mut q = y[rows[order[order.len() - 1]]];
    for &k in &order {
        acc += c[k];
        if acc >= tau * total * (1.0 - 1e-14) {
            q = y[rows[k]];
            break;
        }
    }
    let mut d = vec![0.0; rows.len()];
    let mut others = 0.0;
    let mut tied = 0.0;
    for k in 0..rows.len() {
        let yi = y[rows[k]];
        if yi > q {
            d[k] = tau * c[k] / n;
            others += d[k];
        } else if yi < q {
            d[k] = -(1.0 - tau) * c[k] / n;
            others += d[k];
        } else {
            tied += c[k] / n;
        }
    }
    let u = if tied > 0.0 { -others / tied } else { 0.0 };
    for k in 0..rows.len() {
        if y[rows[k]] == q {
            d[k] = u * c[k] / n;
        }
    }
    let h = data.h();
    let mut lam = 0.0f64;
    for j in 1..h.ncols() {
        let col = h.col(j);
        let s: f64 = rows.iter().zip(&d).map(|(&i, di)| di * col[i]).sum();
        lam = lam.max(s.abs());
    }
    Ok((q, lam))
}
