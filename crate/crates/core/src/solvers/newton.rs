use crate::model::{Design, LINEAR_PREDICTOR_CLAMP};

use super::{lasso_kkt, soft_threshold, FitDiagnostics, SolverSettings};

/// A separable smooth loss `Σ_i ℓ_i(η_i)` in the linear predictor.
pub(crate) trait SmoothLoss {
    /// `(ℓ_i, ℓ_i', ℓ_i'')` at `eta`, already scaled by the sample normalization.
    fn term(&self, i: usize, eta: f64) -> (f64, f64, f64);

    fn value(&self, i: usize, eta: f64) -> f64 {
        self.term(i, eta).0
    }

    /// Exact minimizing shift of the intercept given the current predictors.
    fn intercept_shift(&self, _eta: &[f64]) -> Option<f64> {
        None
    }

    /// Floor on the objective magnitude in the relative-change test. Losses
    /// bounded below by zero use a tiny floor so a vanishing infimum (perfect
    /// separation) is not mistaken for convergence.
    fn objective_floor(&self) -> f64 {
        1.0
    }
}

fn penalty(beta: &[f64], mask: &[bool], lambda: f64) -> f64 {
    if lambda == 0.0 {
        return 0.0;
    }
    lambda
        * beta
            .iter()
            .zip(mask)
            .filter(|(_, &m)| m)
            .map(|(b, _)| b.abs())
            .sum::<f64>()
}

fn smooth_value<L: SmoothLoss>(loss: &L, eta: &[f64]) -> f64 {
    eta.iter().enumerate().map(|(i, &e)| loss.value(i, e)).sum()
}

fn apply_shift<L: SmoothLoss>(loss: &L, beta: &mut [f64], eta: &mut [f64]) {
    if let Some(shift) = loss.intercept_shift(eta) {
        if shift.is_finite() && shift != 0.0 {
            beta[0] += shift;
            for e in eta.iter_mut() {
                *e += shift;
            }
        }
    }
}

/// Minimizes `Σ ℓ_i(x_i'β) + λ Σ_{mask} |β_j|` by proximal Newton steps with a
/// coordinate-descent inner solver and backtracking on the full objective.
/// Column 0 of `x` must be the intercept.
pub(crate) fn minimize<L: SmoothLoss>(
    x: &Design,
    loss: &L,
    lambda: f64,
    mask: &[bool],
    init: Option<&[f64]>,
    settings: &SolverSettings,
) -> (Vec<f64>, FitDiagnostics) {
    let n = x.nrows();
    let p = x.ncols();
    let mut beta = match init {
        Some(b) if b.len() == p && b.iter().all(|v| v.is_finite()) => b.to_vec(),
        _ => vec![0.0; p],
    };
    let mut eta = x.mul_vec(&beta);
    apply_shift(loss, &mut beta, &mut eta);
    let mut fval = smooth_value(loss, &eta) + penalty(&beta, mask, lambda);
    let tol = settings.tolerance;

    let mut g = vec![0.0; n];
    let mut h = vec![0.0; n];
    let mut rel = f64::INFINITY;
    let mut iterations = 0;
    let mut kkt;
    let mut converged = false;
    loop {
        for i in 0..n {
            let (_, gi, hi) = loss.term(i, eta[i]);
            g[i] = gi;
            h[i] = hi;
        }
        let grad = x.tmul_vec(&g);
        kkt = lasso_kkt(&grad, &beta, mask, lambda);
        if kkt < 10.0 * tol && rel < tol {
            converged = true;
            break;
        }
        if iterations >= settings.max_iterations || !fval.is_finite() {
            break;
        }
        if eta.iter().any(|e| e.abs() > 3.0 * LINEAR_PREDICTOR_CLAMP) {
            // coefficients running off to infinity
            break;
        }
        iterations += 1;

        let curv: Vec<f64> = (0..p)
            .map(|j| {
                let c: f64 = x.col(j).iter().zip(&h).map(|(v, hi)| hi * v * v).sum();
                c + 1e-12
            })
            .collect();
        let d = newton_direction(x, &beta, &grad, &h, &curv, mask, lambda, kkt);
        let new_pen = |t: f64| -> f64 {
            let b: Vec<f64> = beta.iter().zip(&d).map(|(b, d)| b + t * d).collect();
            penalty(&b, mask, lambda)
        };
        let base_pen = penalty(&beta, mask, lambda);
        let delta: f64 = grad.iter().zip(&d).map(|(g, d)| g * d).sum::<f64>() + new_pen(1.0) - base_pen;
        if !(delta < -1e-17 * fval.abs().max(loss.objective_floor())) {
            if kkt < 10.0 * tol {
                converged = true;
                break;
            }
            // no descent available at working precision
            break;
        }
        let deta = x.mul_vec(&d);
        let mut t = 1.0;
        let mut accepted = false;
        let mut trial_eta = vec![0.0; n];
        while t > 1e-12 {
            for i in 0..n {
                trial_eta[i] = eta[i] + t * deta[i];
            }
            let trial = smooth_value(loss, &trial_eta) + new_pen(t);
            if trial.is_finite() && trial <= fval + 1e-4 * t * delta {
                accepted = true;
                break;
            }
            t *= settings.step_shrink;
        }
        if !accepted {
            break;
        }
        for (b, dj) in beta.iter_mut().zip(&d) {
            *b += t * dj;
        }
        eta.copy_from_slice(&trial_eta);
        apply_shift(loss, &mut beta, &mut eta);
        let new_f = smooth_value(loss, &eta) + penalty(&beta, mask, lambda);
        rel = (fval - new_f).abs() / new_f.abs().max(loss.objective_floor());
        fval = new_f;
    }
    let clamp_events = eta.iter().filter(|e| e.abs() > LINEAR_PREDICTOR_CLAMP).count();
    (
        beta,
        FitDiagnostics {
            iterations_used: iterations,
            final_objective: fval,
            kkt_max_violation: kkt,
            converged,
            clamp_events,
        },
    )
}

/// Minimizes the local quadratic model plus penalty by cyclic coordinate
/// descent with active-set sweeps.
#[allow(clippy::too_many_arguments)]
fn newton_direction(
    x: &Design,
    beta: &[f64],
    grad: &[f64],
    h: &[f64],
    curv: &[f64],
    mask: &[bool],
    lambda: f64,
    kkt: f64,
) -> Vec<f64> {
    let n = x.nrows();
    let p = x.ncols();
    let mut d = vec![0.0; p];
    let mut r = vec![0.0; n];
    let scale = curv.iter().fold(1.0f64, |a, &c| a.max(c));
    // inexact inner solve: accuracy tightens as the outer iterate converges
    let thr = (1e-24 * scale).max((0.1f64.min(kkt.sqrt()) * kkt).powi(2) / scale);

    let sweep = |j: usize, d: &mut [f64], r: &mut [f64]| -> f64 {
        let col = x.col(j);
        let mut b = grad[j];
        for i in 0..n {
            if h[i] != 0.0 && r[i] != 0.0 {
                b += h[i] * col[i] * r[i];
            }
        }
        let a = curv[j];
        let z = beta[j] + d[j];
        let z_new = if mask[j] {
            soft_threshold(a * z - b, lambda) / a
        } else {
            z - b / a
        };
        let step = z_new - z;
        if step != 0.0 {
            d[j] += step;
            for i in 0..n {
                r[i] += step * col[i];
            }
        }
        a * step * step
    };

    // a step moving some predictor past twice the clamp is left to the line search
    let far = |r: &[f64]| r.iter().any(|v| v.abs() > 2.0 * LINEAR_PREDICTOR_CLAMP);

    for _ in 0..30 {
        let mut full = 0.0f64;
        for j in 0..p {
            full = full.max(sweep(j, &mut d, &mut r));
        }
        if full <= thr || far(&r) {
            break;
        }
        let active: Vec<usize> = (0..p).filter(|&j| !mask[j] || beta[j] + d[j] != 0.0).collect();
        for _ in 0..100 {
            let mut worst = 0.0f64;
            for &j in &active {
                worst = worst.max(sweep(j, &mut d, &mut r));
            }
            if worst <= thr {
                break;
            }
            if far(&r) {
                return d;
            }
        }
    }
    d
}
