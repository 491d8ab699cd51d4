#![allow(dead_code)]

use msm_bounds::{Design, ObservedData};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller keeps the test generator independent of the library's sampler
    let u1: f64 = rng.random::<f64>().max(1e-300);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Logistic-propensity sample with `m` Gaussian covariates and a linear outcome.
pub fn random_data(seed: u64, n: usize, m: usize) -> ObservedData {
    let mut r = rng(seed);
    loop {
        let cols: Vec<Vec<f64>> = (0..m).map(|_| (0..n).map(|_| normal(&mut r)).collect()).collect();
        let mut t = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n);
        for i in 0..n {
            let lin: f64 = cols.iter().enumerate().map(|(j, c)| c[i] * 0.5 / (j + 1) as f64).sum();
            let pi = 1.0 / (1.0 + (-(0.3 + lin)).exp());
            t.push(if r.random::<f64>() < pi { 1.0 } else { 0.0 });
            y.push(lin + normal(&mut r));
        }
        let n1 = t.iter().filter(|&&v| v == 1.0).count();
        if n1 >= 3 && n - n1 >= 3 {
            let design = Design::with_intercept(&cols, n).unwrap();
            return ObservedData::with_shared_design(y, t, design).unwrap();
        }
    }
}

pub fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
