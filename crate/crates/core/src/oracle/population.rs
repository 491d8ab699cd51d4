//! Monte Carlo population bounds for the simulation designs, using the
//! closed-form expected check loss of a unit-variance normal outcome.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::model::{BoundSide, Design, SensitivityLevel};
use crate::simulation::{draw_covariates, stream, Configuration};

const BATCH: usize = 1 << 16;

/// Below this many draws a report carries a warning.
pub const MIN_RECOMMENDED_DRAWS: usize = 10_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub value: f64,
    pub se: f64,
    pub n_mc: usize,
    pub warning: Option<String>,
}

impl McEstimate {
    pub fn from_values(values: &[f64]) -> Self {
        let n = values.len();
        let nf = n as f64;
        let mean = values.iter().sum::<f64>() / nf;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (nf - 1.0).max(1.0);
        let warning = (n < MIN_RECOMMENDED_DRAWS)
            .then(|| format!("only {n} Monte Carlo draws; at least {MIN_RECOMMENDED_DRAWS} recommended"));
        if let Some(w) = &warning {
            log::warn!("{w}");
        }
        McEstimate {
            value: mean,
            se: (var / nf).sqrt(),
            n_mc: n,
            warning,
        }
    }

    /// Mean and standard error of `a − b` from draws on the same covariates.
    pub fn paired(a: &[f64], b: &[f64]) -> Self {
        let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        Self::from_values(&d)
    }
}

/// Covariate draws with the true outcome mean and propensity of each draw.
/// The design is `(1, X_1, …, X_p)`.
#[derive(Clone, Debug)]
pub struct PopulationSample {
    pub mean: Vec<f64>,
    pub propensity: Vec<f64>,
    pub h: Design,
}

impl PopulationSample {
    /// Draws are produced in fixed-size batches with their own streams, so the
    /// result does not depend on the thread count.
    pub fn draw(config: Configuration, p: usize, n_mc: usize, seed: u64) -> Result<Self> {
        if p < 4 {
            return Err(Error::InvalidArgument(format!("need at least 4 covariates, got {p}")));
        }
        if n_mc < 2 {
            return Err(Error::InvalidArgument("need at least 2 draws".into()));
        }
        let n_batches = n_mc.div_ceil(BATCH);
        let batches: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = (0..n_batches)
            .into_par_iter()
            .map(|b| {
                let size = BATCH.min(n_mc - b * BATCH);
                let mut rng = stream(seed, b as u64 + 1);
                let mut x = vec![0.0; p];
                let mut rows = Vec::with_capacity(size * p);
                let mut m = Vec::with_capacity(size);
                let mut pi = Vec::with_capacity(size);
                for _ in 0..size {
                    draw_covariates(&mut rng, p, &mut x);
                    m.push(config.outcome_mean(&x));
                    pi.push(config.propensity(&x));
                    rows.extend_from_slice(&x);
                }
                (m, pi, rows)
            })
            .collect();
        let mut data = vec![0.0; n_mc * (p + 1)];
        data[..n_mc].iter_mut().for_each(|v| *v = 1.0);
        let mut mean = Vec::with_capacity(n_mc);
        let mut propensity = Vec::with_capacity(n_mc);
        let mut i = 0;
        for (m, pi, rows) in batches {
            for (k, row) in rows.chunks(p).enumerate() {
                for (j, &v) in row.iter().enumerate() {
                    data[(j + 1) * n_mc + i + k] = v;
                }
            }
            i += m.len();
            mean.extend(m);
            propensity.extend(pi);
        }
        Ok(PopulationSample {
            mean,
            propensity,
            h: Design::from_columns(n_mc, p + 1, data)?,
        })
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }
}

/// Sharp lower and upper population bounds from streamed draws, without
/// storing the covariates. Batch statistics are merged in batch order.
pub fn sharp_bounds_streaming(
    config: Configuration,
    s: &SensitivityLevel,
    n_mc: usize,
    seed: u64,
) -> Result<(McEstimate, McEstimate)> {
    if n_mc < 2 {
        return Err(Error::InvalidArgument("need at least 2 draws".into()));
    }
    let nd = Normal::standard();
    let z = nd.inverse_cdf(s.tau());
    let adj = s.span() * nd.pdf(z);
    let n_batches = n_mc.div_ceil(BATCH);
    // per batch: count, mean and centered sum of squares for each side
    let stats: Vec<[(f64, f64, f64); 2]> = (0..n_batches)
        .into_par_iter()
        .map(|b| {
            let size = BATCH.min(n_mc - b * BATCH);
            let mut rng = stream(seed, b as u64 + 1);
            let mut x = [0.0; 4];
            let mut out = [(0.0, 0.0, 0.0); 2];
            for k in 0..size {
                draw_covariates(&mut rng, 4, &mut x);
                let m = config.outcome_mean(&x);
                let odds = 1.0 - config.propensity(&x);
                for (side, v) in [m - adj * odds, m + adj * odds].into_iter().enumerate() {
                    let (cnt, mean, m2) = &mut out[side];
                    *cnt = (k + 1) as f64;
                    let delta = v - *mean;
                    *mean += delta / *cnt;
                    *m2 += delta * (v - *mean);
                }
            }
            out
        })
        .collect();
    let mut total = [(0.0f64, 0.0f64, 0.0f64); 2];
    for batch in stats {
        for side in 0..2 {
            let (na, ma, qa) = total[side];
            let (nb, mb, qb) = batch[side];
            let nn = na + nb;
            let delta = mb - ma;
            total[side] = (nn, ma + delta * nb / nn, qa + qb + delta * delta * na * nb / nn);
        }
    }
    let finish = |(cnt, mean, m2): (f64, f64, f64)| {
        let var = m2 / (cnt - 1.0);
        McEstimate {
            value: mean,
            se: (var / cnt).sqrt(),
            n_mc,
            warning: (n_mc < MIN_RECOMMENDED_DRAWS)
                .then(|| format!("only {n_mc} Monte Carlo draws; at least {MIN_RECOMMENDED_DRAWS} recommended")),
        }
    };
    Ok((finish(total[0]), finish(total[1])))
}

/// `E ρ_τ(ε, z)` for `ε ~ N(0, 1)`.
pub fn expected_check_loss(z: f64, tau: f64) -> f64 {
    let nd = Normal::standard();
    let (pdf, cdf) = (nd.pdf(z), nd.cdf(z));
    tau * (pdf - z * (1.0 - cdf)) + (1.0 - tau) * (pdf + z * cdf)
}

/// Per-draw integrand of the population bound with conditional quantile
/// model `q`: `m + sign · span · (1 − π) E ρ(ε, q − m)`.
pub fn bound_integrand(sample: &PopulationSample, s: &SensitivityLevel, q: &[f64], side: BoundSide) -> Vec<f64> {
    let lvl = s.level(side);
    (0..sample.len())
        .map(|i| {
            let m = sample.mean[i];
            m + side.sign() * s.span() * (1.0 - sample.propensity[i]) * expected_check_loss(q[i] - m, lvl)
        })
        .collect()
}

/// Integrand at the true conditional quantile `m + z_level`.
pub fn sharp_integrand(sample: &PopulationSample, s: &SensitivityLevel, side: BoundSide) -> Vec<f64> {
    let nd = Normal::standard();
    let z = nd.inverse_cdf(s.level(side));
    let adj = side.sign() * s.span() * nd.pdf(z);
    (0..sample.len())
        .map(|i| sample.mean[i] + adj * (1.0 - sample.propensity[i]))
        .collect()
}

/// Population counterparts of the quantile fits: propensity-weighted uses the
/// true inverse-odds weights, unweighted uses none.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum QuantileWeighting {
    Weighted,
    Unweighted,
}

/// Minimizer over linear `h'β` of the population (weighted) check loss,
/// `E[a(X) E ρ(ε, h'β − m(X))]` with `a = 1 − π` (weighted) or `π` (unweighted).
pub fn population_quantile_coef(
    sample: &PopulationSample,
    s: &SensitivityLevel,
    side: BoundSide,
    weighting: QuantileWeighting,
) -> Result<Vec<f64>> {
    let nd = Normal::standard();
    let lvl = s.level(side);
    let k = sample.h.ncols();
    let n = sample.len();
    let nf = n as f64;
    let a: Vec<f64> = match weighting {
        QuantileWeighting::Weighted => sample.propensity.iter().map(|p| 1.0 - p).collect(),
        QuantileWeighting::Unweighted => sample.propensity.clone(),
    };
    let objective = |beta: &[f64]| -> f64 {
        let q = sample.h.mul_vec(beta);
        (0..n).map(|i| a[i] * expected_check_loss(q[i] - sample.mean[i], lvl)).sum::<f64>() / nf
    };
    let mean_m = sample.mean.iter().sum::<f64>() / nf;
    let mut beta = vec![0.0; k];
    beta[0] = mean_m + nd.inverse_cdf(lvl);
    let mut f = objective(&beta);
    for _ in 0..100 {
        let q = sample.h.mul_vec(&beta);
        let mut grad = DVector::zeros(k);
        let mut hess = DMatrix::zeros(k, k);
        let mut row = vec![0.0; k];
        for i in 0..n {
            let z = q[i] - sample.mean[i];
            let g = a[i] * (nd.cdf(z) - lvl);
            let c = a[i] * nd.pdf(z);
            for (j, r) in row.iter_mut().enumerate() {
                *r = sample.h.get(i, j);
            }
            for j in 0..k {
                grad[j] += g * row[j];
                for l in 0..=j {
                    hess[(j, l)] += c * row[j] * row[l];
                }
            }
        }
        for j in 0..k {
            for l in 0..j {
                hess[(l, j)] = hess[(j, l)];
            }
        }
        grad /= nf;
        hess /= nf;
        if grad.amax() < 1e-11 {
            return Ok(beta);
        }
        let step = hess
            .cholesky()
            .ok_or_else(|| Error::LpNumerical("population quantile Hessian is singular".into()))?
            .solve(&grad);
        // the objective is a mean of many terms; stop once the predicted
        // decrease falls below its rounding error
        if grad.dot(&step) <= 1e-15 * (1.0 + f.abs()) {
            return Ok(beta);
        }
        let mut t = 1.0;
        loop {
            let trial: Vec<f64> = beta.iter().zip(step.iter()).map(|(b, d)| b - t * d).collect();
            let ft = objective(&trial);
            if ft <= f - 1e-4 * t * grad.dot(&step) || t < 1e-10 {
                beta = trial;
                f = ft;
                break;
            }
            t *= 0.5;
        }
    }
    Err(Error::NotConverged {
        solver: "population quantile Newton",
        diagnostics: Default::default(),
    })
}

/// Which conditional quantile model the population bound is evaluated at.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum QuantileChoice {
    /// True conditional quantile: the sharp bound.
    Sharp,
    /// Best linear fit under the weighted population check loss.
    Weighted,
    /// Best linear fit under the unweighted population check loss.
    Unweighted,
}

/// Population bound on the treated mean with its Monte Carlo standard error.
pub fn population_bound_oracle(
    config: Configuration,
    s: &SensitivityLevel,
    choice: QuantileChoice,
    side: BoundSide,
    p: usize,
    n_mc: usize,
    seed: u64,
) -> Result<McEstimate> {
    let sample = PopulationSample::draw(config, p, n_mc, seed)?;
    Ok(McEstimate::from_values(&population_integrand(&sample, s, choice, side)?))
}

/// Per-draw integrand for a quantile choice on an existing sample.
pub fn population_integrand(
    sample: &PopulationSample,
    s: &SensitivityLevel,
    choice: QuantileChoice,
    side: BoundSide,
) -> Result<Vec<f64>> {
    let weighting = match choice {
        QuantileChoice::Sharp => return Ok(sharp_integrand(sample, s, side)),
        QuantileChoice::Weighted => QuantileWeighting::Weighted,
        QuantileChoice::Unweighted => QuantileWeighting::Unweighted,
    };
    let beta = population_quantile_coef(sample, s, side, weighting)?;
    Ok(bound_integrand(sample, s, &sample.h.mul_vec(&beta), side))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn expected_check_loss_matches_quadrature() {
        let nd = Normal::standard();
        for &(z, tau) in &[(0.3, 0.6), (-1.2, 0.8), (2.0, 0.5)] {
            let mut acc = 0.0;
            let h = 1e-3;
            let mut e = -10.0;
            while e < 10.0 {
                let mid = e + h / 2.0;
                acc += crate::model::check_loss(mid, z, tau) * nd.pdf(mid) * h;
                e += h;
            }
            assert_abs_diff_eq!(expected_check_loss(z, tau), acc, epsilon = 1e-6);
        }
        // at the true quantile the expected loss is the density there
        let z = nd.inverse_cdf(0.7);
        assert_abs_diff_eq!(expected_check_loss(z, 0.7), nd.pdf(z), epsilon = 1e-14);
    }

    #[test]
    fn sample_is_thread_independent_and_deterministic() {
        let a = PopulationSample::draw(Configuration::C1, 4, 70_000, 5).unwrap();
        let b = PopulationSample::draw(Configuration::C1, 4, 70_000, 5).unwrap();
        assert_eq!(a.mean, b.mean);
        assert_eq!(a.h.col(2), b.h.col(2));
        assert!(a.h.col(0).iter().all(|&v| v == 1.0));
    }

    #[test]
    fn unit_level_gives_mean() {
        let sample = PopulationSample::draw(Configuration::C1, 4, 20_000, 1).unwrap();
        let s = SensitivityLevel::unconfounded();
        let up = McEstimate::from_values(&sharp_integrand(&sample, &s, BoundSide::Upper));
        let lo = McEstimate::from_values(&sharp_integrand(&sample, &s, BoundSide::Lower));
        assert_eq!(up.value, lo.value);
        assert!(up.value.abs() < 4.0 * up.se);
    }

    #[test]
    fn weighted_fit_is_exact_when_quantile_is_linear() {
        // C1 quantiles are linear in X, so the population fit recovers them
        let sample = PopulationSample::draw(Configuration::C1, 4, 20_000, 2).unwrap();
        let s = SensitivityLevel::new(1.5).unwrap();
        let beta = population_quantile_coef(&sample, &s, BoundSide::Upper, QuantileWeighting::Weighted).unwrap();
        let z = Normal::standard().inverse_cdf(s.tau());
        assert_abs_diff_eq!(beta[0], z, epsilon = 1e-6);
        assert_abs_diff_eq!(beta[1], 1.0, epsilon = 1e-6);
        assert_abs_diff_eq!(beta[4], 0.125, epsilon = 1e-6);
    }

    #[test]
    fn streaming_matches_stored_sample() {
        let s = SensitivityLevel::new(1.5).unwrap();
        let sample = PopulationSample::draw(Configuration::C2, 4, 100_000, 8).unwrap();
        let stored = McEstimate::from_values(&sharp_integrand(&sample, &s, BoundSide::Upper));
        let (_, up) = sharp_bounds_streaming(Configuration::C2, &s, 100_000, 8).unwrap();
        assert_abs_diff_eq!(stored.value, up.value, epsilon = 1e-12);
        assert_abs_diff_eq!(stored.se, up.se, epsilon = 1e-12);
    }

    #[test]
    fn small_draw_counts_warn() {
        let e = McEstimate::from_values(&[1.0, 2.0, 3.0]);
        assert!(e.warning.is_some());
        assert_abs_diff_eq!(e.value, 2.0);
    }
}
