use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand::distr::Open01;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::model::{logistic, Design, ObservedData};

/// Slopes of the first four covariates in both the outcome mean and the logit.
pub const SIGNAL: [f64; 4] = [1.0, 0.5, 0.25, 0.125];

/// AR(1) coefficient giving `cov(X_j, X_k) = 2^{−|j−k|}`.
const AR: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Configuration {
    /// Both working models correct.
    C1,
    /// Outcome mean nonlinear in the covariates.
    C2,
    /// Propensity logit nonlinear in the covariates.
    C3,
}

impl Configuration {
    pub const ALL: [Configuration; 3] = [Configuration::C1, Configuration::C2, Configuration::C3];

    /// Conditional mean of the outcome given covariates (both arms).
    pub fn outcome_mean(self, x: &[f64]) -> f64 {
        match self {
            Configuration::C2 => linear_signal(x, true),
            _ => linear_signal(x, false),
        }
    }

    pub fn propensity(self, x: &[f64]) -> f64 {
        let eta = 1.0
            + match self {
                Configuration::C3 => linear_signal(x, true),
                _ => linear_signal(x, false),
            };
        logistic(eta)
    }
}

impl fmt::Display for Configuration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Configuration::C1 => "C1",
            Configuration::C2 => "C2",
            Configuration::C3 => "C3",
        };
        f.write_str(s)
    }
}

impl FromStr for Configuration {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "C1" => Ok(Configuration::C1),
            "C2" => Ok(Configuration::C2),
            "C3" => Ok(Configuration::C3),
            _ => Err(Error::InvalidArgument(format!("unknown configuration {s:?}"))),
        }
    }
}

/// `x + {(x + 1)_+}²`.
pub fn dagger(x: f64) -> f64 {
    let a = (x + 1.0).max(0.0);
    x + a * a
}

fn linear_signal(x: &[f64], transformed: bool) -> f64 {
    SIGNAL
        .iter()
        .zip(x)
        .map(|(b, &v)| b * if transformed { dagger(v) } else { v })
        .sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DgpSpec {
    pub config: Configuration,
    pub n: usize,
    pub p: usize,
    pub seed: u64,
}

impl DgpSpec {
    pub fn validate(&self) -> Result<()> {
        if self.p < SIGNAL.len() {
            return Err(Error::InvalidArgument(format!("need at least 4 covariates, got {}", self.p)));
        }
        if self.n < 2 {
            return Err(Error::InvalidArgument(format!("need at least 2 observations, got {}", self.n)));
        }
        Ok(())
    }
}

/// Standard normal draw by inversion of the normal distribution function.
pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u: f64 = rng.sample(Open01);
    Normal::standard().inverse_cdf(u)
}

/// Gaussian vector with `cov(X_j, X_k) = 2^{−|j−k|}`, built from the AR(1)
/// factor of that Toeplitz matrix.
pub fn draw_covariates<R: Rng + ?Sized>(rng: &mut R, p: usize, out: &mut [f64]) {
    let innovation = (1.0 - AR * AR).sqrt();
    for j in 0..p {
        let z = standard_normal(rng);
        out[j] = if j == 0 { z } else { AR * out[j - 1] + innovation * z };
    }
}

/// Random stream for a seed and a stream index.
pub fn stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// One sample: covariates, then treatment, then outcome, unit by unit.
/// Both designs are `(1, X_1, …, X_p)`.
pub fn generate(spec: &DgpSpec) -> Result<ObservedData> {
    spec.validate()?;
    let mut rng = stream(spec.seed, 0);
    let mut cols = vec![vec![0.0; spec.n]; spec.p];
    let mut x = vec![0.0; spec.p];
    let mut y = Vec::with_capacity(spec.n);
    let mut t = Vec::with_capacity(spec.n);
    for i in 0..spec.n {
        draw_covariates(&mut rng, spec.p, &mut x);
        for (c, &v) in cols.iter_mut().zip(&x) {
            c[i] = v;
        }
        let pi = spec.config.propensity(&x);
        let u: f64 = rng.random();
        t.push(if u < pi { 1.0 } else { 0.0 });
        y.push(spec.config.outcome_mean(&x) + standard_normal(&mut rng));
    }
    let design = Design::with_intercept(&cols, spec.n)?;
    ObservedData::with_shared_design(y, t, design)
}
