#![allow(clippy::needless_range_loop)]

mod common;

use approx::assert_abs_diff_eq;
use common::{dot, logistic, random_data};
use msm_bounds::bounds::{att_report, phi_plus, phi_values, point_bound, ReportSide};
use msm_bounds::model::{check_loss, propensities, tilde_y};
use msm_bounds::oracle::{
    bound_integrand, dual_bound_value, solve_primal_bound, McEstimate, PopulationSample, PrimalBoundProblem,
};
use msm_bounds::pipeline::{fit_nuisance, FitPlan, PenaltyChoice, StageLoss, WarmStart};
use msm_bounds::simulation::{generate, Configuration, DgpSpec, SIGNAL};
use msm_bounds::solvers::{fit_rcal_gamma, fit_uqr_lasso, fit_wqr_lasso, weighted_check_loss, SolverSettings};
use msm_bounds::{BoundSide, CoefficientVector, Design, NuisanceMethod, ObservedData, SensitivityLevel};
use nalgebra::{DMatrix, DVector};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

fn settings() -> SolverSettings {
    SolverSettings::default()
}

fn unpenalized() -> FitPlan {
    FitPlan {
        penalty: PenaltyChoice::Fixed(0.0),
        ..Default::default()
    }
}

fn rows(d: &Design) -> Vec<Vec<f64>> {
    (0..d.nrows()).map(|i| d.row(i)).collect()
}

/// Newton on `Ẽ[(T e^{−f'γ} − (1 − T)) f] = 0`, written from scratch.
fn calibration_root(data: &ObservedData) -> Vec<f64> {
    let f = rows(data.f());
    let k = f[0].len();
    let mut g = vec![0.0; k];
    for _ in 0..200 {
        let mut score = DVector::<f64>::zeros(k);
        let mut jac = DMatrix::<f64>::zeros(k, k);
        for (i, fi) in f.iter().enumerate() {
            let e = (-dot(fi, &g)).exp();
            let t = data.t()[i];
            for a in 0..k {
                score[a] += (t * e - (1.0 - t)) * fi[a];
                for b in 0..k {
                    jac[(a, b)] -= t * e * fi[a] * fi[b];
                }
            }
        }
        if score.amax() < 1e-13 {
            break;
        }
        let step = jac.lu().solve(&score).unwrap();
        for a in 0..k {
            g[a] -= step[a];
        }
    }
    g
}

#[test]
fn unpenalized_calibrated_fit_solves_calibration_equations() {
    let data = random_data(5, 200, 4);
    let s = SensitivityLevel::new(1.5).unwrap();
    let report = fit_nuisance(&data, NuisanceMethod::Rcal, &s, &unpenalized()).unwrap();
    let fit = &report.fit;

    let gamma = calibration_root(&data);
    for (a, b) in fit.gamma.values().iter().zip(&gamma) {
        assert_abs_diff_eq!(a, b, epsilon = 1e-5);
    }

    // quantile: the LP optimum cannot be improved by coordinate perturbations
    let w: Vec<f64> = data.f().mul_vec(fit.gamma.values()).iter().map(|e| (-e).exp()).collect();
    let base = weighted_check_loss(&data, &w, s.tau(), &fit.beta_plus);
    for j in 0..fit.beta_plus.len() {
        for delta in [1e-4, -1e-4] {
            let mut b = fit.beta_plus.values().to_vec();
            b[j] += delta;
            assert!(weighted_check_loss(&data, &w, s.tau(), &CoefficientVector::new(b)) >= base - 1e-12);
        }
    }

    // mean: weighted normal equations for the transformed outcome
    let f = rows(data.f());
    let q = data.h().mul_vec(fit.beta_plus.values());
    let k = f[0].len();
    let mut xtx = DMatrix::<f64>::zeros(k, k);
    let mut xty = DVector::<f64>::zeros(k);
    for i in data.treated_indices() {
        let yt = tilde_y(data.y()[i], q[i], &s, BoundSide::Upper);
        for a in 0..k {
            xty[a] += w[i] * f[i][a] * yt;
            for b in 0..k {
                xtx[(a, b)] += w[i] * f[i][a] * f[i][b];
            }
        }
    }
    let alpha = xtx.lu().solve(&xty).unwrap();
    for (a, b) in fit.alpha_plus.values().iter().zip(alpha.iter()) {
        assert_abs_diff_eq!(a, b, epsilon = 1e-5);
    }
}

#[test]
fn intercept_only_fits_match_closed_forms() {
    let design = Design::from_columns(10, 1, vec![1.0; 10]).unwrap();
    let y = vec![1.0, 4.0, 2.0, 8.0, 5.0, 7.0, 3.0, 6.0, 0.0, 9.0];
    let t = vec![1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0];
    let data = ObservedData::with_shared_design(y.clone(), t, design).unwrap();
    let s = SensitivityLevel::new(2.0).unwrap();
    let fit = fit_nuisance(&data, NuisanceMethod::Rcal, &s, &unpenalized()).unwrap().fit;
    assert_abs_diff_eq!(fit.gamma.values()[0], (0.6f64 / 0.4).ln(), epsilon = 1e-10);
    // treated outcomes 1, 2, 4, 5, 7, 8 at τ = 2/3: the 4th order statistic
    assert_abs_diff_eq!(fit.beta_plus.values()[0], 5.0, epsilon = 1e-9);
    let mean_tilde: f64 = [1.0, 4.0, 2.0, 8.0, 5.0, 7.0]
        .iter()
        .map(|&v| tilde_y(v, 5.0, &s, BoundSide::Upper))
        .sum::<f64>()
        / 6.0;
    assert_abs_diff_eq!(fit.alpha_plus.values()[0], mean_tilde, epsilon = 1e-9);
}

/// Best vertex of the least-absolute-deviation problem through pairs of points.
fn lad_brute_force(x: &[f64], y: &[f64]) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..x.len() {
        for j in 0..x.len() {
            if x[i] == x[j] {
                continue;
            }
            let b1 = (y[j] - y[i]) / (x[j] - x[i]);
            let b0 = y[i] - b1 * x[i];
            let loss: f64 = x.iter().zip(y).map(|(xv, yv)| (yv - b0 - b1 * xv).abs()).sum();
            best = best.min(loss);
        }
    }
    best
}

#[test]
fn median_regression_matches_vertex_enumeration() {
    for seed in 0..5 {
        let data = random_data(100 + seed, 8, 1);
        let (coef, _) = fit_uqr_lasso(&data, 0.5, 0.0, &settings()).unwrap();
        let treated = data.treated_indices();
        let x: Vec<f64> = treated.iter().map(|&i| data.f().get(i, 1)).collect();
        let y: Vec<f64> = treated.iter().map(|&i| data.y()[i]).collect();
        let got: f64 = x
            .iter()
            .zip(&y)
            .map(|(xv, yv)| (yv - coef.values()[0] - coef.values()[1] * xv).abs())
            .sum();
        if x.len() >= 2 {
            assert_abs_diff_eq!(got, lad_brute_force(&x, &y), epsilon = 1e-9);
        }
    }
}

#[test]
fn penalty_above_zero_threshold_gives_null_fits() {
    let data = random_data(9, 80, 3);
    let settings = settings();
    for loss in [StageLoss::Calibration, StageLoss::Likelihood] {
        let star = loss.lambda_star(&data).unwrap();
        let (coef, _) = loss.fit(&data, 1.01 * star, &settings, &mut WarmStart::default()).unwrap();
        assert_eq!(coef.nonzero_penalized(), 0, "{}", loss.label());
        let (coef, _) = loss.fit(&data, 0.9 * star, &settings, &mut WarmStart::default()).unwrap();
        assert!(coef.nonzero_penalized() > 0, "{}", loss.label());
    }
    let (gamma, _) = fit_rcal_gamma(&data, 0.0, &settings).unwrap();
    let w: Vec<f64> = data.f().mul_vec(gamma.values()).iter().map(|e| (-e).exp()).collect();
    let q = StageLoss::Quantile { weights: w.clone(), tau: 0.6 };
    let star = q.lambda_star(&data).unwrap();
    let (coef, _) = fit_wqr_lasso(&data, &w, 0.6, 1.01 * star, &settings).unwrap();
    assert_eq!(coef.nonzero_penalized(), 0);
}

#[test]
fn primal_program_matches_dual_formula() {
    let s = SensitivityLevel::new(1.5).unwrap();
    for (seed, lambda_beta) in [(1u64, 0.0), (2, 0.05), (3, 0.2)] {
        let data = random_data(seed, 40, 3);
        let (gamma, _) = fit_rcal_gamma(&data, 0.0, &settings()).unwrap();
        let (ps, _) = propensities(data.f(), &gamma);
        let w: Vec<f64> = ps.iter().map(|p| p.weight).collect();
        for side in [BoundSide::Upper, BoundSide::Lower] {
            let (beta, _) = fit_wqr_lasso(&data, &w, s.level(side), lambda_beta, &settings()).unwrap();
            let dual = dual_bound_value(&data, &gamma, &beta, &s, lambda_beta, side);
            let primal = solve_primal_bound(&PrimalBoundProblem::from_fit(&data, &gamma, &s, lambda_beta), side).unwrap();
            assert_abs_diff_eq!(primal.value, dual, epsilon = 1e-8);
        }
    }
}

#[test]
fn imputation_and_transfer_identities() {
    let data = random_data(21, 150, 4);
    let s = SensitivityLevel::new(2.0).unwrap();
    let fit = fit_nuisance(&data, NuisanceMethod::Rcal, &s, &FitPlan::default()).unwrap().fit;
    for side in [BoundSide::Upper, BoundSide::Lower] {
        let eta = data.f().mul_vec(fit.alpha(side).values());
        let imputed: f64 = (0..data.n())
            .map(|i| data.t()[i] * data.y()[i] + (1.0 - data.t()[i]) * eta[i])
            .sum::<f64>()
            / data.n() as f64;
        assert_abs_diff_eq!(point_bound(&data, &fit, side), imputed, epsilon = 1e-8);
    }

    let flipped = data.flipped();
    let fit0 = fit_nuisance(&flipped, NuisanceMethod::Rcal, &s, &FitPlan::default()).unwrap().fit;
    let report = att_report(&data, &fit0, ReportSide::TwoSided, 0.9, false).unwrap();
    let n = data.n() as f64;
    let tbar = data.t().iter().sum::<f64>() / n;
    let nu1 = (0..data.n()).map(|i| data.t()[i] * data.y()[i]).sum::<f64>() / n / tbar;
    // the upper counterfactual mean from the fitted means of the treated
    let eta0 = flipped.f().mul_vec(fit0.alpha_plus.values());
    let nu0_plus = (0..data.n()).map(|i| data.t()[i] * eta0[i]).sum::<f64>() / n / tbar;
    assert_abs_diff_eq!(report.lower.unwrap().point, nu1 - nu0_plus, epsilon = 1e-8);
}

#[test]
fn single_unit_hand_case() {
    let s = SensitivityLevel::new(2.0).unwrap();
    let yt = 3.0 + 1.5 * check_loss(3.0, 1.0, s.tau());
    assert_abs_diff_eq!(yt, 5.0, epsilon = 1e-12);
    let direct = (3.0 - yt) + yt / 0.5 - (1.0 / 0.5 - 1.0) * 2.0;
    assert_abs_diff_eq!(phi_plus(3.0, 1.0, 0.5, 1.0, 2.0, &s), direct, epsilon = 1e-12);
}

/// `P(T = 1)` for the linear-logit designs by quadrature over the index
/// `b'X ~ N(0, b'Σb)`.
fn treated_probability_by_quadrature() -> f64 {
    let mut v = 0.0;
    for j in 0..4 {
        for k in 0..4 {
            v += SIGNAL[j] * SIGNAL[k] * 0.5f64.powi((j as i32 - k as i32).abs());
        }
    }
    let sd = v.sqrt();
    let nd = Normal::standard();
    let h = 1e-3;
    let mut acc = 0.0;
    let mut z = -10.0;
    while z < 10.0 {
        let mid = z + h / 2.0;
        acc += logistic(1.0 + sd * mid) * nd.pdf(mid) * h;
        z += h;
    }
    acc
}

#[test]
fn treated_share_matches_quadrature() {
    let data = generate(&DgpSpec {
        config: Configuration::C1,
        n: 100_000,
        p: 4,
        seed: 3,
    })
    .unwrap();
    let share = McEstimate::from_values(data.t());
    let target = treated_probability_by_quadrature();
    assert!((share.value - target).abs() < 3.0 * share.se, "{} vs {target}", share.value);
}

#[test]
fn sharp_bound_matches_quadrature_for_linear_design() {
    // linear design: the mean of m is 0 and the sharp upper bound is
    // span φ(z_τ) E(1 − π)
    let s = SensitivityLevel::new(1.5).unwrap();
    let nd = Normal::standard();
    let closed = s.span() * nd.pdf(nd.inverse_cdf(s.tau())) * (1.0 - treated_probability_by_quadrature());
    let dgp = DgpSpec {
        config: Configuration::C1,
        n: 10,
        p: 4,
        seed: 0,
    };
    let b = msm_bounds::simulation::true_sharp_bounds(&dgp, &s, 1_000_000, 77).unwrap();
    assert!((b.upper.value - closed).abs() < 4.0 * b.upper.se, "{} vs {closed}", b.upper.value);
}

#[test]
fn estimating_function_is_unbiased_with_true_propensity() {
    // true propensity, deliberately wrong mean and quantile models
    let s = SensitivityLevel::new(1.5).unwrap();
    let n = 1_000_000;
    let data = generate(&DgpSpec {
        config: Configuration::C1,
        n,
        p: 4,
        seed: 17,
    })
    .unwrap();
    let x = |i: usize| -> Vec<f64> { (1..5).map(|j| data.f().get(i, j)).collect() };
    let q_model = |xi: &[f64]| 0.3 + 0.5 * xi[0];
    let eta_model = |xi: &[f64]| -0.2 + xi[1];
    let phis: Vec<f64> = (0..n)
        .map(|i| {
            let xi = x(i);
            let pi = Configuration::C1.propensity(&xi);
            phi_plus(data.y()[i], data.t()[i], pi, q_model(&xi), eta_model(&xi), &s)
        })
        .collect();
    let est = McEstimate::from_values(&phis);

    let pop = PopulationSample::draw(Configuration::C1, 4, n, 18).unwrap();
    let q: Vec<f64> = (0..n)
        .map(|i| q_model(&[pop.h.get(i, 1), pop.h.get(i, 2), pop.h.get(i, 3), pop.h.get(i, 4)]))
        .collect();
    let oracle = McEstimate::from_values(&bound_integrand(&pop, &s, &q, BoundSide::Upper));
    let se = (est.se.powi(2) + oracle.se.powi(2)).sqrt();
    assert!((est.value - oracle.value).abs() < 4.0 * se, "{} vs {}", est.value, oracle.value);
}

#[test]
fn unit_level_bounds_equal_direct_aipw() {
    let data = random_data(31, 120, 3);
    let s = SensitivityLevel::unconfounded();
    let fit = fit_nuisance(&data, NuisanceMethod::Rml, &s, &FitPlan::default()).unwrap().fit;
    let f = rows(data.f());
    let direct: f64 = (0..data.n())
        .map(|i| {
            let pi = logistic(dot(&f[i], fit.gamma.values()));
            let m = dot(&f[i], fit.alpha_plus.values());
            let t = data.t()[i];
            t * data.y()[i] / pi - (t / pi - 1.0) * m
        })
        .sum::<f64>()
        / data.n() as f64;
    let up = phi_values(&data, &fit, BoundSide::Upper);
    let lo = phi_values(&data, &fit, BoundSide::Lower);
    assert_eq!(up, lo);
    assert_abs_diff_eq!(point_bound(&data, &fit, BoundSide::Upper), direct, epsilon = 1e-10);
}
