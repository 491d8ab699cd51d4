//! Data containers, the sensitivity parameter and the scalar primitives
//! (check loss, transformed outcomes, propensity) shared by every module.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bound on the magnitude of a linear predictor before exponentiation.
pub const LINEAR_PREDICTOR_CLAMP: f64 = 30.0;

/// Dense column-major design matrix. Column 0 is the constant 1.
#[derive(Clone, Debug, PartialEq)]
pub struct Design {
    nrows: usize,
    ncols: usize,
    data: Vec<f64>,
}

impl Design {
    /// Builds from column-major storage.
    pub fn from_columns(nrows: usize, ncols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != nrows * ncols {
            return Err(Error::InvalidData(format!(
                "design storage has {} entries, expected {}x{}",
                data.len(),
                nrows,
                ncols
            )));
        }
        if ncols == 0 {
            return Err(Error::InvalidData("design has no columns".into()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidData("design contains non-finite values".into()));
        }
        let d = Design { nrows, ncols, data };
        if d.col(0).iter().any(|&v| v != 1.0) {
            return Err(Error::InvalidData("design column 0 must be identically 1".into()));
        }
        Ok(d)
    }

    /// Prepends the intercept column to covariate columns.
    pub fn with_intercept(covariates: &[Vec<f64>], nrows: usize) -> Result<Self> {
        let mut data = Vec::with_capacity(nrows * (covariates.len() + 1));
        data.extend(std::iter::repeat_n(1.0, nrows));
        for (j, c) in covariates.iter().enumerate() {
            if c.len() != nrows {
                return Err(Error::InvalidData(format!(
                    "covariate {} has length {}, expected {}",
                    j + 1,
                    c.len(),
                    nrows
                )));
            }
            data.extend_from_slice(c);
        }
        Design::from_columns(nrows, covariates.len() + 1, data)
    }

    /// Builds from a row-major slice of covariate rows (intercept added).
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let p = rows.first().map_or(0, |r| r.len());
        let mut cols = vec![Vec::with_capacity(n); p];
        for r in rows {
            if r.len() != p {
                return Err(Error::InvalidData("ragged covariate rows".into()));
            }
            for (j, v) in r.iter().enumerate() {
                cols[j].push(*v);
            }
        }
        Design::with_intercept(&cols, n)
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn col(&self, j: usize) -> &[f64] {
        &self.data[j * self.nrows..(j + 1) * self.nrows]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[j * self.nrows + i]
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        (0..self.ncols).map(|j| self.get(i, j)).collect()
    }

    /// `X b` for a coefficient slice of length `ncols`.
    pub fn mul_vec(&self, coef: &[f64]) -> Vec<f64> {
        debug_assert_eq!(coef.len(), self.ncols);
        let mut out = vec![0.0; self.nrows];
        for (j, &b) in coef.iter().enumerate() {
            if b != 0.0 {
                for (o, x) in out.iter_mut().zip(self.col(j)) {
                    *o += b * x;
                }
            }
        }
        out
    }

    /// `X^T v`.
    pub fn tmul_vec(&self, v: &[f64]) -> Vec<f64> {
        (0..self.ncols)
            .map(|j| self.col(j).iter().zip(v).map(|(x, v)| x * v).sum())
            .collect()
    }

    pub fn row_dot(&self, i: usize, coef: &[f64]) -> f64 {
        coef.iter()
            .enumerate()
            .map(|(j, b)| b * self.data[j * self.nrows + i])
            .sum()
    }

    pub fn select_rows(&self, rows: &[usize]) -> Design {
        let mut data = Vec::with_capacity(rows.len() * self.ncols);
        for j in 0..self.ncols {
            let c = self.col(j);
            data.extend(rows.iter().map(|&i| c[i]));
        }
        Design {
            nrows: rows.len(),
            ncols: self.ncols,
            data,
        }
    }

    /// Standardizes non-intercept columns to mean 0 and variance 1 (divisor n).
    /// Constant columns are centered but left unscaled.
    pub fn standardize(&self) -> (Design, Standardization) {
        let n = self.nrows as f64;
        let mut data = self.data.clone();
        let mut means = vec![0.0; self.ncols];
        let mut scales = vec![1.0; self.ncols];
        for j in 1..self.ncols {
            let c = &mut data[j * self.nrows..(j + 1) * self.nrows];
            let mean = c.iter().sum::<f64>() / n;
            let var = c.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
            for v in c.iter_mut() {
                *v = (*v - mean) / sd;
            }
            means[j] = mean;
            scales[j] = sd;
        }
        (
            Design {
                nrows: self.nrows,
                ncols: self.ncols,
                data,
            },
            Standardization { means, scales },
        )
    }
}

/// Column means and scales removed by [`Design::standardize`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
}

impl Standardization {
    /// Maps coefficients fitted on the standardized design back to the original columns.
    pub fn to_original(&self, coef: &[f64]) -> Vec<f64> {
        let mut out = coef.to_vec();
        let mut shift = 0.0;
        for j in 1..coef.len() {
            out[j] = coef[j] / self.scales[j];
            shift += out[j] * self.means[j];
        }
        out[0] = coef[0] - shift;
        out
    }
}

/// Observed sample `(Y_i, T_i, X_i)` with the two design matrices.
#[derive(Clone, Debug)]
pub struct ObservedData {
    y: Vec<f64>,
    t: Vec<f64>,
    f: Arc<Design>,
    h: Arc<Design>,
}

impl ObservedData {
    pub fn new(y: Vec<f64>, t: Vec<f64>, f: Design, h: Design) -> Result<Self> {
        Self::from_shared(y, t, Arc::new(f), Arc::new(h))
    }

    /// Uses the same design for the propensity/mean models and the quantile model.
    pub fn with_shared_design(y: Vec<f64>, t: Vec<f64>, design: Design) -> Result<Self> {
        let d = Arc::new(design);
        Self::from_shared(y, t, d.clone(), d)
    }

    fn from_shared(y: Vec<f64>, t: Vec<f64>, f: Arc<Design>, h: Arc<Design>) -> Result<Self> {
        let n = y.len();
        if t.len() != n || f.nrows() != n || h.nrows() != n {
            return Err(Error::InvalidData(format!(
                "length mismatch: y={}, t={}, f rows={}, h rows={}",
                n,
                t.len(),
                f.nrows(),
                h.nrows()
            )));
        }
        if let Some(v) = t.iter().find(|&&v| v != 0.0 && v != 1.0) {
            return Err(Error::InvalidData(format!("treatment value {v} is not 0 or 1")));
        }
        if let Some(v) = y.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidData(format!("non-finite outcome {v}")));
        }
        let n1 = t.iter().filter(|&&v| v == 1.0).count();
        if n1 == 0 {
            return Err(Error::EmptyTreatedGroup);
        }
        if n1 == n {
            return Err(Error::InvalidData("no untreated units".into()));
        }
        Ok(ObservedData { y, t, f, h })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn t(&self) -> &[f64] {
        &self.t
    }

    pub fn f(&self) -> &Design {
        &self.f
    }

    pub fn h(&self) -> &Design {
        &self.h
    }

    pub fn shares_design(&self) -> bool {
        Arc::ptr_eq(&self.f, &self.h)
    }

    pub fn n_treated(&self) -> usize {
        self.t.iter().filter(|&&v| v == 1.0).count()
    }

    pub fn treated_indices(&self) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.t[i] == 1.0).collect()
    }

    pub fn is_binary_outcome(&self) -> bool {
        self.y.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    /// Rows in the given order; fails if the subset loses either arm.
    pub fn subset(&self, rows: &[usize]) -> Result<ObservedData> {
        let y = rows.iter().map(|&i| self.y[i]).collect();
        let t = rows.iter().map(|&i| self.t[i]).collect();
        let f = Arc::new(self.f.select_rows(rows));
        let h = if self.shares_design() {
            f.clone()
        } else {
            Arc::new(self.h.select_rows(rows))
        };
        ObservedData::from_shared(y, t, f, h)
    }

    /// Rows in the given order without the two-arm requirement; used for
    /// held-out evaluation where one arm may be missing.
    pub(crate) fn evaluation_subset(&self, rows: &[usize]) -> ObservedData {
        let f = Arc::new(self.f.select_rows(rows));
        let h = if self.shares_design() {
            f.clone()
        } else {
            Arc::new(self.h.select_rows(rows))
        };
        ObservedData {
            y: rows.iter().map(|&i| self.y[i]).collect(),
            t: rows.iter().map(|&i| self.t[i]).collect(),
            f,
            h,
        }
    }

    /// Replaces `t` by `1 - t`; the untreated arm becomes the target arm.
    pub fn flipped(&self) -> ObservedData {
        ObservedData {
            y: self.y.clone(),
            t: self.t.iter().map(|v| 1.0 - v).collect(),
            f: self.f.clone(),
            h: self.h.clone(),
        }
    }

    /// Standardized copy of both designs.
    pub fn standardized(&self) -> (ObservedData, Standardization, Standardization) {
        let (fs, sf) = self.f.standardize();
        let fs = Arc::new(fs);
        let (hs, sh) = if self.shares_design() {
            (fs.clone(), sf.clone())
        } else {
            let (h, s) = self.h.standardize();
            (Arc::new(h), s)
        };
        (
            ObservedData {
                y: self.y.clone(),
                t: self.t.clone(),
                f: fs,
                h: hs,
            },
            sf,
            sh,
        )
    }
}

/// Sensitivity parameter `Λ ≥ 1` with `τ = Λ/(Λ+1)` and `span = Λ − 1/Λ`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensitivityLevel {
    lambda: f64,
    tau: f64,
    span: f64,
}

impl SensitivityLevel {
    pub fn new(lambda: f64) -> Result<Self> {
        if !(lambda >= 1.0) || !lambda.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "sensitivity parameter must be a finite value >= 1, got {lambda}"
            )));
        }
        Ok(SensitivityLevel {
            lambda,
            tau: lambda / (lambda + 1.0),
            span: lambda - 1.0 / lambda,
        })
    }

    pub fn unconfounded() -> Self {
        SensitivityLevel {
            lambda: 1.0,
            tau: 0.5,
            span: 0.0,
        }
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn span(&self) -> f64 {
        self.span
    }

    /// Quantile level used by the given side: `τ` for upper, `1 − τ` for lower.
    pub fn level(&self, side: BoundSide) -> f64 {
        match side {
            BoundSide::Upper => self.tau,
            BoundSide::Lower => 1.0 - self.tau,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BoundSide {
    Lower,
    Upper,
}

impl BoundSide {
    pub fn sign(self) -> f64 {
        match self {
            BoundSide::Upper => 1.0,
            BoundSide::Lower => -1.0,
        }
    }
}

/// Coefficients with index 0 the unpenalized intercept.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoefficientVector {
    values: Vec<f64>,
    penalized_mask: Vec<bool>,
}

impl CoefficientVector {
    /// All non-intercept entries penalized.
    pub fn new(values: Vec<f64>) -> Self {
        let penalized_mask = (0..values.len()).map(|j| j > 0).collect();
        CoefficientVector {
            values,
            penalized_mask,
        }
    }

    pub fn zeros(len: usize) -> Self {
        Self::new(vec![0.0; len])
    }

    pub fn with_mask(values: Vec<f64>, mut penalized_mask: Vec<bool>) -> Result<Self> {
        if values.len() != penalized_mask.len() {
            return Err(Error::InvalidArgument("mask length differs from coefficients".into()));
        }
        if let Some(m) = penalized_mask.first_mut() {
            *m = false;
        }
        Ok(CoefficientVector {
            values,
            penalized_mask,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn mask(&self) -> &[bool] {
        &self.penalized_mask
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn intercept(&self) -> f64 {
        self.values[0]
    }

    /// L1 norm over the penalized coordinates.
    pub fn penalized_l1(&self) -> f64 {
        self.values
            .iter()
            .zip(&self.penalized_mask)
            .filter(|(_, &m)| m)
            .map(|(v, _)| v.abs())
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn nonzero_penalized(&self) -> usize {
        self.values
            .iter()
            .zip(&self.penalized_mask)
            .filter(|(v, &m)| m && **v != 0.0)
            .count()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NuisanceMethod {
    #[serde(rename = "RCAL")]
    Rcal,
    #[serde(rename = "RML")]
    Rml,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OutcomeFamily {
    Linear,
    Logistic,
}

/// Fitted `(γ, β±, α±)` plus the tuning parameters that produced them.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FittedNuisance {
    pub gamma: CoefficientVector,
    pub beta_plus: CoefficientVector,
    pub beta_minus: CoefficientVector,
    pub alpha_plus: CoefficientVector,
    pub alpha_minus: CoefficientVector,
    pub lambda_gamma: f64,
    pub lambda_beta_plus: f64,
    pub lambda_beta_minus: f64,
    pub lambda_alpha_plus: f64,
    pub lambda_alpha_minus: f64,
    pub method: NuisanceMethod,
    pub outcome_mean_family: OutcomeFamily,
    pub sensitivity: SensitivityLevel,
    pub clamp_events: usize,
}

impl FittedNuisance {
    pub fn beta(&self, side: BoundSide) -> &CoefficientVector {
        match side {
            BoundSide::Upper => &self.beta_plus,
            BoundSide::Lower => &self.beta_minus,
        }
    }

    pub fn alpha(&self, side: BoundSide) -> &CoefficientVector {
        match side {
            BoundSide::Upper => &self.alpha_plus,
            BoundSide::Lower => &self.alpha_minus,
        }
    }

    pub fn lambda_beta(&self, side: BoundSide) -> f64 {
        match side {
            BoundSide::Upper => self.lambda_beta_plus,
            BoundSide::Lower => self.lambda_beta_minus,
        }
    }

    pub fn lambda_alpha(&self, side: BoundSide) -> f64 {
        match side {
            BoundSide::Upper => self.lambda_alpha_plus,
            BoundSide::Lower => self.lambda_alpha_minus,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.gamma.is_finite()
            && self.beta_plus.is_finite()
            && self.beta_minus.is_finite()
            && self.alpha_plus.is_finite()
            && self.alpha_minus.is_finite()
    }
}

/// `ρ_τ(y, u) = τ (y − u)_+ + (1 − τ)(u − y)_+`.
#[inline]
pub fn check_loss(y: f64, u: f64, tau: f64) -> f64 {
    let r = y - u;
    if r >= 0.0 {
        tau * r
    } else {
        (tau - 1.0) * r
    }
}

/// `y + span · ρ_τ(y, q)`.
#[inline]
pub fn tilde_y_plus(y: f64, q: f64, s: &SensitivityLevel) -> f64 {
    y + s.span * check_loss(y, q, s.tau)
}

/// `y − span · ρ_{1−τ}(y, q)`.
#[inline]
pub fn tilde_y_minus(y: f64, q: f64, s: &SensitivityLevel) -> f64 {
    y - s.span * check_loss(y, q, 1.0 - s.tau)
}

#[inline]
pub fn tilde_y(y: f64, q: f64, s: &SensitivityLevel, side: BoundSide) -> f64 {
    match side {
        BoundSide::Upper => tilde_y_plus(y, q, s),
        BoundSide::Lower => tilde_y_minus(y, q, s),
    }
}

/// Clamps a linear predictor to the overflow guard; the flag reports a clamp.
#[inline]
pub fn clamp_predictor(eta: f64) -> (f64, bool) {
    if eta > LINEAR_PREDICTOR_CLAMP {
        (LINEAR_PREDICTOR_CLAMP, true)
    } else if eta < -LINEAR_PREDICTOR_CLAMP {
        (-LINEAR_PREDICTOR_CLAMP, true)
    } else {
        (eta, false)
    }
}

#[inline]
pub fn logistic(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// Propensity score and inverse weight `w = (1 − π)/π = exp(−η)` for one row.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Propensity {
    pub pi: f64,
    pub weight: f64,
    pub clamped: bool,
}

pub fn propensity_from_predictor(eta: f64) -> Propensity {
    let (eta, clamped) = clamp_predictor(eta);
    Propensity {
        pi: logistic(eta),
        weight: (-eta).exp(),
        clamped,
    }
}

pub fn propensity(f_row: &[f64], gamma: &CoefficientVector) -> Result<Propensity> {
    if f_row.len() != gamma.len() {
        return Err(Error::InvalidArgument(format!(
            "row has {} entries, coefficients {}",
            f_row.len(),
            gamma.len()
        )));
    }
    let eta: f64 = f_row.iter().zip(gamma.values()).map(|(a, b)| a * b).sum();
    Ok(propensity_from_predictor(eta))
}

/// Propensities for every row of `f`, plus the number of clamped predictors.
pub fn propensities(f: &Design, gamma: &CoefficientVector) -> (Vec<Propensity>, usize) {
    let eta = f.mul_vec(gamma.values());
    let ps: Vec<Propensity> = eta.into_iter().map(propensity_from_predictor).collect();
    let clamps = ps.iter().filter(|p| p.clamped).count();
    (ps, clamps)
}
