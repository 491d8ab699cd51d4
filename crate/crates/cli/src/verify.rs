use msm_bounds::bounds::point_bound;
use msm_bounds::model::propensities;
use msm_bounds::oracle::{
    dual_bound_value, population_integrand, solve_primal_bound, McEstimate, PopulationSample, PrimalBoundProblem,
    QuantileChoice,
};
use msm_bounds::pipeline::{fit_nuisance, FitPlan};
use msm_bounds::simulation::{generate, standard_normal, stream, Configuration, DgpSpec};
use msm_bounds::solvers::{fit_wqr_lasso, SolverSettings};
use msm_bounds::{BoundSide, CoefficientVector, NuisanceMethod, SensitivityLevel};
use rand::Rng;
use serde::Serialize;

use crate::failure::Failure;

#[derive(Clone, Debug)]
pub struct VerifyOptions {
    pub instances: usize,
    pub nmax: usize,
    pub fits: usize,
    pub draws: usize,
    /// Relative perturbation applied to the primal weights; nonzero values
    /// must make the duality suite fail.
    pub perturb_weights: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, Serialize)]
pub struct SuiteResult {
    pub suite: &'static str,
    pub checks: usize,
    pub worst: f64,
    pub tolerance: f64,
    pub passed: bool,
}

fn duality(opts: &VerifyOptions) -> Result<SuiteResult, Failure> {
    if opts.nmax < 12 {
        return Err(Failure::input(format!("--nmax {} must be at least 12", opts.nmax)));
    }
    let settings = SolverSettings::default();
    let mut rng = stream(opts.seed, 1);
    let mut worst = 0.0f64;
    let mut checks = 0;
    for k in 0..opts.instances {
        let n = rng.random_range(12..=opts.nmax);
        // small samples can miss an arm; redraw with the next seed
        let data = (0..100u64)
            .find_map(|attempt| {
                generate(&DgpSpec {
                    config: Configuration::ALL[k % 3],
                    n,
                    p: 4,
                    seed: opts.seed.wrapping_add(((k as u64) << 8) + attempt),
                })
                .ok()
            })
            .ok_or_else(|| Failure::input(format!("instance {k}: no sample with both arms")))?;
        let gamma = CoefficientVector::new((0..5).map(|_| 0.4 * standard_normal(&mut rng)).collect());
        let s = SensitivityLevel::new([1.2, 1.5, 2.0][k % 3])?;
        let lambda_beta = [0.0, 0.05, 0.2][(k / 3) % 3];
        let (ps, _) = propensities(data.f(), &gamma);
        let w: Vec<f64> = ps.iter().map(|p| p.weight).collect();
        let mut problem = PrimalBoundProblem::from_fit(&data, &gamma, &s, lambda_beta);
        for wt in problem.weights.iter_mut() {
            *wt *= 1.0 + opts.perturb_weights;
        }
        for side in [BoundSide::Upper, BoundSide::Lower] {
            let (beta, _) = fit_wqr_lasso(&data, &w, s.level(side), lambda_beta, &settings)?;
            let primal = solve_primal_bound(&problem, side)?;
            let dual = dual_bound_value(&data, &gamma, &beta, &s, lambda_beta, side);
            worst = worst.max((primal.value - dual).abs());
            checks += 1;
        }
    }
    Ok(SuiteResult {
        suite: "duality",
        checks,
        worst,
        tolerance: 1e-6,
        passed: worst <= 1e-6,
    })
}

fn kkt(opts: &VerifyOptions) -> Result<SuiteResult, Failure> {
    let s = SensitivityLevel::new(1.5)?;
    let mut worst = 0.0f64;
    let mut checks = 0;
    for k in 0..opts.fits {
        let data = generate(&DgpSpec {
            config: Configuration::ALL[k % 3],
            n: 200,
            p: 10,
            seed: opts.seed.wrapping_add(10_000 + k as u64),
        })?;
        let mut plan = FitPlan::default();
        plan.grid.fold_seed = opts.seed.wrapping_add(k as u64);
        let fit = fit_nuisance(&data, NuisanceMethod::Rcal, &s, &plan)?.fit;
        let n = data.n() as f64;
        let (ps, _) = propensities(data.f(), &fit.gamma);
        let ratio = (0..data.n()).map(|i| data.t()[i] / ps[i].pi).sum::<f64>() / n;
        worst = worst.max((ratio - 1.0).abs());
        for j in 1..data.f().ncols() {
            let g = (0..data.n()).map(|i| (data.t()[i] / ps[i].pi - 1.0) * data.f().get(i, j)).sum::<f64>() / n;
            worst = worst.max(g.abs() - fit.lambda_gamma);
        }
        for side in [BoundSide::Upper, BoundSide::Lower] {
            let eta = data.f().mul_vec(fit.alpha(side).values());
            let imputed = (0..data.n())
                .map(|i| data.t()[i] * data.y()[i] + (1.0 - data.t()[i]) * eta[i])
                .sum::<f64>()
                / n;
            worst = worst.max((point_bound(&data, &fit, side) - imputed).abs());
        }
        checks += 1;
    }
    Ok(SuiteResult {
        suite: "kkt",
        checks,
        worst,
        tolerance: 1e-6,
        passed: worst <= 1e-6,
    })
}

/// Largest standardized violation of the population orderings.
fn orderings(opts: &VerifyOptions) -> Result<SuiteResult, Failure> {
    let mut worst = f64::NEG_INFINITY;
    let mut checks = 0;
    for config in [Configuration::C1, Configuration::C2] {
        let sample = PopulationSample::draw(config, 4, opts.draws, opts.seed.wrapping_add(77))?;
        let mut previous: Option<Vec<f64>> = None;
        for lam in [1.5, 2.0] {
            let s = SensitivityLevel::new(lam)?;
            let sharp = population_integrand(&sample, &s, QuantileChoice::Sharp, BoundSide::Upper)?;
            let weighted = population_integrand(&sample, &s, QuantileChoice::Weighted, BoundSide::Upper)?;
            let unweighted = population_integrand(&sample, &s, QuantileChoice::Unweighted, BoundSide::Upper)?;
            let mut pairs = vec![(&weighted, &sharp), (&unweighted, &weighted)];
            if let Some(prev) = &previous {
                pairs.push((&sharp, prev));
            }
            for (larger, smaller) in pairs {
                let d = McEstimate::paired(larger, smaller);
                // standardized shortfall, rounding-level differences ignored
                let z = if d.value >= -1e-12 { 0.0 } else { -d.value / d.se.max(1e-300) };
                worst = worst.max(z);
                checks += 1;
            }
            previous = Some(sharp);
        }
    }
    Ok(SuiteResult {
        suite: "orderings",
        checks,
        worst,
        tolerance: 4.0,
        passed: worst <= 4.0,
    })
}

pub fn run(opts: &VerifyOptions) -> Result<Vec<SuiteResult>, Failure> {
    Ok(vec![duality(opts)?, kkt(opts)?, orderings(opts)?])
}

pub fn print_table(results: &[SuiteResult]) {
    println!("{:<10} {:>7} {:>12} {:>10}  status", "suite", "checks", "worst", "tolerance");
    for r in results {
        println!(
            "{:<10} {:>7} {:>12.3e} {:>10.1e}  {}",
            r.suite,
            r.checks,
            r.worst,
            r.tolerance,
            if r.passed { "PASS" } else { "FAIL" }
        );
    }
}
