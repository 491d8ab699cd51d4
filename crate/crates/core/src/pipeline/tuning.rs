use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lp::Basis;
use crate::model::{logistic, CoefficientVector, ObservedData};
use crate::solvers::{
    cal_loss, ml_loss, weighted_check_loss, wlogit_loss, wls_loss, FitDiagnostics, SolverSettings,
};

/// Geometric penalty grid `{λ*/2^{j·step} : j = 0..n_points}` plus the fold setup.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TuningGrid {
    pub n_points: usize,
    pub divisor_exponent_step: f64,
    pub n_folds: usize,
    pub fold_seed: u64,
}

impl Default for TuningGrid {
    fn default() -> Self {
        TuningGrid {
            n_points: 11,
            divisor_exponent_step: 1.0,
            n_folds: 5,
            fold_seed: 0,
        }
    }
}

impl TuningGrid {
    /// The finer 25-point grid with quarter-power steps.
    pub fn fine(fold_seed: u64) -> Self {
        TuningGrid {
            n_points: 25,
            divisor_exponent_step: 0.25,
            n_folds: 5,
            fold_seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_points == 0 || !(self.divisor_exponent_step > 0.0) || self.n_folds < 2 {
            return Err(Error::InvalidArgument(format!("invalid tuning grid {self:?}")));
        }
        Ok(())
    }

    pub fn lambdas(&self, lambda_star: f64) -> Vec<f64> {
        if !(lambda_star > 0.0) {
            return vec![0.0];
        }
        (0..self.n_points)
            .map(|j| lambda_star / 2f64.powf(j as f64 * self.divisor_exponent_step))
            .collect()
    }
}

/// Assignment of units to cross-validation folds.
#[derive(Clone, Debug, PartialEq)]
pub struct FoldPartition {
    assignment: Vec<usize>,
    n_folds: usize,
    seed_used: u64,
}

impl FoldPartition {
    /// Seeded permutation split into near-equal folds. A split where some fold
    /// lacks treated units in its held-out part, or either arm in its training
    /// part, is redrawn once with `seed + 1`.
    pub fn new(data: &ObservedData, n_folds: usize, seed: u64) -> Result<Self> {
        if n_folds < 2 || n_folds > data.n() {
            return Err(Error::InvalidArgument(format!(
                "{} folds for {} observations",
                n_folds,
                data.n()
            )));
        }
        let first = Self::draw(data.n(), n_folds, seed);
        match first.degenerate_fold(data) {
            None => Ok(first),
            Some(_) => {
                let second = Self::draw(data.n(), n_folds, seed.wrapping_add(1));
                match second.degenerate_fold(data) {
                    None => Ok(second),
                    Some(fold) => Err(Error::DegenerateFold { fold }),
                }
            }
        }
    }

    fn draw(n: usize, n_folds: usize, seed: u64) -> Self {
        let mut perm: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        perm.shuffle(&mut rng);
        let mut assignment = vec![0; n];
        for (pos, &i) in perm.iter().enumerate() {
            assignment[i] = pos % n_folds;
        }
        FoldPartition {
            assignment,
            n_folds,
            seed_used: seed,
        }
    }

    fn degenerate_fold(&self, data: &ObservedData) -> Option<usize> {
        let t = data.t();
        (0..self.n_folds).find(|&k| {
            let test_treated = self.test_rows(k).iter().any(|&i| t[i] == 1.0);
            let train = self.train_rows(k);
            let train_treated = train.iter().any(|&i| t[i] == 1.0);
            let train_untreated = train.iter().any(|&i| t[i] == 0.0);
            !(test_treated && train_treated && train_untreated)
        })
    }

    pub fn n_folds(&self) -> usize {
        self.n_folds
    }

    pub fn seed_used(&self) -> u64 {
        self.seed_used
    }

    pub fn fold_of(&self, i: usize) -> usize {
        self.assignment[i]
    }

    pub fn test_rows(&self, k: usize) -> Vec<usize> {
        (0..self.assignment.len()).filter(|&i| self.assignment[i] == k).collect()
    }

    pub fn train_rows(&self, k: usize) -> Vec<usize> {
        (0..self.assignment.len()).filter(|&i| self.assignment[i] != k).collect()
    }
}

/// A penalized loss together with everything it depends on from upstream
/// stages (weights, quantile level, response).
#[derive(Clone, Debug)]
pub enum StageLoss {
    /// `T e^{−f'γ} + (1 − T) f'γ`
    Calibration,
    /// logistic negative log-likelihood of `T`
    Likelihood,
    /// `T w ρ_τ(Y, h'β)`
    Quantile { weights: Vec<f64>, tau: f64 },
    /// `½ T w (r − f'α)²`
    LeastSquares { weights: Vec<f64>, response: Vec<f64> },
    /// `T w {log(1 + e^{f'α}) − Y f'α}`
    Logistic { weights: Vec<f64> },
}

/// Warm-start state carried along a penalty path.
#[derive(Clone, Debug, Default)]
pub struct WarmStart {
    pub coef: Option<CoefficientVector>,
    pub basis: Option<Basis>,
}

impl StageLoss {
    pub fn label(&self) -> &'static str {
        match self {
            StageLoss::Calibration => "calibration",
            StageLoss::Likelihood => "likelihood",
            StageLoss::Quantile { .. } => "quantile",
            StageLoss::LeastSquares { .. } => "least-squares",
            StageLoss::Logistic { .. } => "logistic",
        }
    }

    fn restrict(&self, rows: &[usize]) -> StageLoss {
        let pick = |v: &[f64]| rows.iter().map(|&i| v[i]).collect::<Vec<f64>>();
        match self {
            StageLoss::Calibration => StageLoss::Calibration,
            StageLoss::Likelihood => StageLoss::Likelihood,
            StageLoss::Quantile { weights, tau } => StageLoss::Quantile {
                weights: pick(weights),
                tau: *tau,
            },
            StageLoss::LeastSquares { weights, response } => StageLoss::LeastSquares {
                weights: pick(weights),
                response: pick(response),
            },
            StageLoss::Logistic { weights } => StageLoss::Logistic {
                weights: pick(weights),
            },
        }
    }

    /// Unpenalized loss of `coef` on `data`.
    pub fn loss(&self, data: &ObservedData, coef: &CoefficientVector) -> f64 {
        match self {
            StageLoss::Calibration => cal_loss(data, coef),
            StageLoss::Likelihood => ml_loss(data, coef),
            StageLoss::Quantile { weights, tau } => weighted_check_loss(data, weights, *tau, coef),
            StageLoss::LeastSquares { weights, response } => wls_loss(data, weights, response, coef),
            StageLoss::Logistic { weights } => wlogit_loss(data, weights, coef),
        }
    }

    /// One fit at `lambda`, updating the warm start. Non-convergence is
    /// reported in the diagnostics, not as an error.
    pub fn fit(
        &self,
        data: &ObservedData,
        lambda: f64,
        settings: &SolverSettings,
        warm: &mut WarmStart,
    ) -> Result<(CoefficientVector, FitDiagnostics)> {
        use crate::solvers::least_squares_step as ls;
        use crate::solvers::{gamma_step, wlogit_step, GammaLoss};
        let init_owned = warm.coef.clone();
        let init = init_owned.as_ref();
        let out = match self {
            StageLoss::Calibration => gamma_step(GammaLoss::Calibration, data, lambda, settings, init),
            StageLoss::Likelihood => gamma_step(GammaLoss::Likelihood, data, lambda, settings, init),
            StageLoss::Quantile { weights, tau } => {
                let fit = crate::solvers::fit_wqr_lasso_warm(
                    data,
                    weights,
                    *tau,
                    lambda,
                    settings,
                    warm.basis.as_ref(),
                )?;
                warm.basis = fit.basis;
                (fit.coef, fit.diagnostics)
            }
            StageLoss::LeastSquares { weights, response } => ls(data, weights, response, lambda, settings, init)?,
            StageLoss::Logistic { weights } => wlogit_step(data, weights, lambda, settings, init)?,
        };
        warm.coef = Some(out.0.clone());
        Ok(out)
    }

    /// Smallest penalty at which all penalized coefficients vanish: the largest
    /// absolute gradient coordinate at the intercept-only optimum.
    pub fn lambda_star(&self, data: &ObservedData) -> Result<f64> {
        let n = data.n() as f64;
        let t = data.t();
        // per-unit derivative of the loss in the linear predictor at the intercept-only fit
        let score: Vec<f64> = match self {
            StageLoss::Calibration => {
                let n1 = data.n_treated() as f64;
                let e = (n - n1) / n1; // e^{−γ0} with γ0 = log(n1/n0)
                t.iter().map(|&ti| if ti == 1.0 { -e } else { 1.0 }).collect()
            }
            StageLoss::Likelihood => {
                let pbar = data.n_treated() as f64 / n;
                let p0 = logistic((pbar / (1.0 - pbar)).ln());
                t.iter().map(|&ti| p0 - ti).collect()
            }
            StageLoss::Quantile { weights, tau } => {
                let (_, lam) = crate::solvers::quantile_zero_threshold(data, weights, *tau)?;
                return Ok(lam);
            }
            StageLoss::LeastSquares { weights, response } => {
                let (sw, swr) = (0..data.n())
                    .filter(|&i| t[i] == 1.0)
                    .fold((0.0, 0.0), |(a, b), i| (a + weights[i], b + weights[i] * response[i]));
                if !(sw > 0.0) {
                    return Err(Error::ZeroTotalWeight);
                }
                let mean = swr / sw;
                (0..data.n())
                    .map(|i| if t[i] == 1.0 { -weights[i] * (response[i] - mean) } else { 0.0 })
                    .collect()
            }
            StageLoss::Logistic { weights } => {
                let (sw, swy) = (0..data.n())
                    .filter(|&i| t[i] == 1.0)
                    .fold((0.0, 0.0), |(a, b), i| (a + weights[i], b + weights[i] * data.y()[i]));
                if !(sw > 0.0) {
                    return Err(Error::ZeroTotalWeight);
                }
                let mean = swy / sw;
                (0..data.n())
                    .map(|i| if t[i] == 1.0 { weights[i] * (mean - data.y()[i]) } else { 0.0 })
                    .collect()
            }
        };
        let grad = data.f().tmul_vec(&score);
        Ok(grad.iter().skip(1).fold(0.0f64, |a, g| a.max(g.abs() / n)))
    }
}

/// Cross-validation outcome for one stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub lambda_star: f64,
    pub lambdas: Vec<f64>,
    pub curve: Vec<f64>,
    pub selected: f64,
    pub unconverged_fits: usize,
}

/// Index of the smallest value; ties go to the earliest (largest penalty).
pub(crate) fn argmin_prefer_first(curve: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in curve.iter().enumerate().skip(1) {
        if v < curve[best] {
            best = k;
        }
    }
    best
}

/// K-fold cross-validation of `loss` over the penalty grid. Each fold walks the
/// grid from the largest penalty down with warm starts.
pub fn cross_validate(
    loss: &StageLoss,
    data: &ObservedData,
    grid: &TuningGrid,
    partition: &FoldPartition,
    settings: &SolverSettings,
) -> Result<CvResult> {
    grid.validate()?;
    let lambda_star = loss.lambda_star(data)?;
    let lambdas = grid.lambdas(lambda_star);
    let per_fold: Vec<Result<(Vec<f64>, usize)>> = (0..partition.n_folds())
        .into_par_iter()
        .map(|k| {
            let train_rows = partition.train_rows(k);
            let test_rows = partition.test_rows(k);
            let train = data.subset(&train_rows).map_err(|_| Error::DegenerateFold { fold: k })?;
            let test = data.evaluation_subset(&test_rows);
            let train_loss = loss.restrict(&train_rows);
            let test_loss = loss.restrict(&test_rows);
            let mut warm = WarmStart::default();
            let mut out = Vec::with_capacity(lambdas.len());
            let mut unconverged = 0;
            for &lam in &lambdas {
                let (coef, diag) = train_loss.fit(&train, lam, settings, &mut warm)?;
                if !diag.converged {
                    unconverged += 1;
                    log::debug!("{} fit at lambda {lam:.3e} in fold {k} did not converge", loss.label());
                }
                out.push(test_loss.loss(&test, &coef));
            }
            Ok((out, unconverged))
        })
        .collect();
    let mut curve = vec![0.0; lambdas.len()];
    let mut unconverged_fits = 0;
    for r in per_fold {
        let (v, u) = r?;
        unconverged_fits += u;
        for (c, x) in curve.iter_mut().zip(v) {
            *c += x / partition.n_folds() as f64;
        }
    }
    // a non-finite held-out loss never wins
    let cleaned: Vec<f64> = curve.iter().map(|v| if v.is_finite() { *v } else { f64::INFINITY }).collect();
    let selected = lambdas[argmin_prefer_first(&cleaned)];
    Ok(CvResult {
        lambda_star,
        lambdas,
        curve,
        selected,
        unconverged_fits,
    })
}
