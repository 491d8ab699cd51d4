//! Doubly robust point bounds, variances and Wald intervals for the treated
//! mean, the untreated mean, the average effect and the effect on the treated.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::model::{
    check_loss, logistic, propensities, tilde_y, BoundSide, FittedNuisance, NuisanceMethod, ObservedData,
    OutcomeFamily, SensitivityLevel,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Estimand {
    Mu1,
    Mu0,
    Ate,
    Att,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ReportSide {
    Lower,
    Upper,
    TwoSided,
}

/// Point estimate of one side with its variance (of the influence values, not
/// divided by `n`).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SideEstimate {
    pub point: f64,
    pub variance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub estimand: Estimand,
    pub side: ReportSide,
    pub lambda: f64,
    pub lower: Option<SideEstimate>,
    pub upper: Option<SideEstimate>,
    /// `None` stands for an unbounded end.
    pub ci_lower: Option<f64>,
    pub ci_upper: Option<f64>,
    pub relaxed: bool,
    pub method: NuisanceMethod,
    pub n: usize,
    pub confidence: f64,
}

impl BoundReport {
    pub fn covers(&self, value: f64) -> bool {
        self.ci_lower.is_none_or(|l| l <= value) && self.ci_upper.is_none_or(|u| value <= u)
    }

    /// Covers the whole interval `[lo, hi]`.
    pub fn covers_interval(&self, lo: f64, hi: f64) -> bool {
        self.ci_lower.is_none_or(|l| l <= lo) && self.ci_upper.is_none_or(|u| hi <= u)
    }
}

/// Upper `c` quantile of the standard normal.
pub fn normal_upper_quantile(c: f64) -> f64 {
    Normal::standard().inverse_cdf(1.0 - c)
}

fn check_confidence(confidence: f64) -> Result<()> {
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(Error::InvalidArgument(format!("confidence must lie in (0, 1), got {confidence}")));
    }
    Ok(())
}

/// Single-observation estimating function:
/// `T(y − ỹ) + (T/π) ỹ − (T/π − 1) η̂` with `ỹ` the side's transformed outcome at `q`.
pub fn phi_value(y: f64, t: f64, pi: f64, q: f64, eta: f64, s: &SensitivityLevel, side: BoundSide) -> f64 {
    let yt = tilde_y(y, q, s, side);
    t * (y - yt) + (t / pi) * yt - (t / pi - 1.0) * eta
}

pub fn phi_plus(y: f64, t: f64, pi: f64, q: f64, eta: f64, s: &SensitivityLevel) -> f64 {
    phi_value(y, t, pi, q, eta, s, BoundSide::Upper)
}

pub fn phi_minus(y: f64, t: f64, pi: f64, q: f64, eta: f64, s: &SensitivityLevel) -> f64 {
    phi_value(y, t, pi, q, eta, s, BoundSide::Lower)
}

/// Fitted conditional mean of the transformed outcome for each unit.
pub fn fitted_mean(data: &ObservedData, fit: &FittedNuisance, side: BoundSide) -> Vec<f64> {
    let lin = data.f().mul_vec(fit.alpha(side).values());
    match fit.outcome_mean_family {
        OutcomeFamily::Linear => lin,
        OutcomeFamily::Logistic => {
            let s = &fit.sensitivity;
            let lvl = s.level(side);
            let q = data.h().mul_vec(fit.beta(side).values());
            lin.iter()
                .zip(&q)
                .map(|(&e, &qi)| {
                    let m = logistic(e);
                    m + side.sign() * s.span() * (m * check_loss(1.0, qi, lvl) + (1.0 - m) * check_loss(0.0, qi, lvl))
                })
                .collect()
        }
    }
}

/// Estimating-function values for every unit.
pub fn phi_values(data: &ObservedData, fit: &FittedNuisance, side: BoundSide) -> Vec<f64> {
    let (ps, _) = propensities(data.f(), &fit.gamma);
    let q = data.h().mul_vec(fit.beta(side).values());
    let eta = fitted_mean(data, fit, side);
    (0..data.n())
        .map(|i| phi_value(data.y()[i], data.t()[i], ps[i].pi, q[i], eta[i], &fit.sensitivity, side))
        .collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn centered_second_moment(v: &[f64], center: f64) -> f64 {
    v.iter().map(|x| (x - center) * (x - center)).sum::<f64>() / v.len() as f64
}

pub fn point_bound(data: &ObservedData, fit: &FittedNuisance, side: BoundSide) -> f64 {
    mean(&phi_values(data, fit, side))
}

/// Size of the relaxation adjustment `span · λ_β · ‖β_{1:m}‖₁` for a side.
pub fn relaxation_adjustment(fit: &FittedNuisance, side: BoundSide) -> f64 {
    fit.sensitivity.span() * fit.lambda_beta(side) * fit.beta(side).penalized_l1()
}

/// Point bound widened by the penalty slack of the quantile fit.
pub fn relaxed_point_bound(data: &ObservedData, fit: &FittedNuisance, side: BoundSide) -> Result<f64> {
    if fit.method != NuisanceMethod::Rcal {
        return Err(Error::InvalidArgument("relaxed bounds require calibrated fits".into()));
    }
    Ok(point_bound(data, fit, side) + side.sign() * relaxation_adjustment(fit, side))
}

fn side_estimate(values: &[f64], shift: f64) -> SideEstimate {
    let point = mean(values);
    SideEstimate {
        point: point + shift,
        variance: centered_second_moment(values, point),
    }
}

#[allow(clippy::too_many_arguments)]
fn assemble(
    estimand: Estimand,
    side: ReportSide,
    lower: Option<SideEstimate>,
    upper: Option<SideEstimate>,
    fit: &FittedNuisance,
    n: usize,
    confidence: f64,
    relaxed: bool,
) -> BoundReport {
    let c = 1.0 - confidence;
    let z = match side {
        ReportSide::TwoSided => normal_upper_quantile(c / 2.0),
        _ => normal_upper_quantile(c),
    };
    let nf = n as f64;
    BoundReport {
        estimand,
        side,
        lambda: fit.sensitivity.lambda(),
        ci_lower: lower.map(|e| e.point - z * (e.variance / nf).sqrt()),
        ci_upper: upper.map(|e| e.point + z * (e.variance / nf).sqrt()),
        lower,
        upper,
        relaxed,
        method: fit.method,
        n,
        confidence,
    }
}

fn wanted(side: ReportSide) -> (bool, bool) {
    match side {
        ReportSide::Lower => (true, false),
        ReportSide::Upper => (false, true),
        ReportSide::TwoSided => (true, true),
    }
}

fn check_relaxed(fit: &FittedNuisance, relaxed: bool) -> Result<()> {
    if relaxed && fit.method != NuisanceMethod::Rcal {
        return Err(Error::InvalidArgument("relaxed bounds require calibrated fits".into()));
    }
    Ok(())
}

/// Bounds on the target-arm mean of `data` (the arm coded `t = 1`).
pub fn arm_mean_report(
    estimand: Estimand,
    data: &ObservedData,
    fit: &FittedNuisance,
    side: ReportSide,
    confidence: f64,
    relaxed: bool,
) -> Result<BoundReport> {
    check_confidence(confidence)?;
    check_relaxed(fit, relaxed)?;
    if data.n() < 2 {
        return Err(Error::InvalidData("at least two observations are needed".into()));
    }
    let (want_lo, want_hi) = wanted(side);
    let est = |b: BoundSide| {
        let shift = if relaxed { b.sign() * relaxation_adjustment(fit, b) } else { 0.0 };
        side_estimate(&phi_values(data, fit, b), shift)
    };
    let lower = want_lo.then(|| est(BoundSide::Lower));
    let upper = want_hi.then(|| est(BoundSide::Upper));
    Ok(assemble(estimand, side, lower, upper, fit, data.n(), confidence, relaxed))
}

/// Bounds on the treated-arm mean with one- or two-sided intervals. For relaxed
/// reports the points move by the relaxation adjustment and the variances stay.
pub fn variance_and_ci(
    data: &ObservedData,
    fit: &FittedNuisance,
    side: ReportSide,
    confidence: f64,
    relaxed: bool,
) -> Result<BoundReport> {
    arm_mean_report(Estimand::Mu1, data, fit, side, confidence, relaxed)
}

/// Swaps the arms so the untreated mean is estimated by the treated-mean machinery.
pub fn flip_for_mu0(data: &ObservedData) -> ObservedData {
    data.flipped()
}

/// Bounds on the untreated-arm mean; `fit0` must be fitted on `flip_for_mu0(data)`.
pub fn mu0_report(
    data: &ObservedData,
    fit0: &FittedNuisance,
    side: ReportSide,
    confidence: f64,
    relaxed: bool,
) -> Result<BoundReport> {
    arm_mean_report(Estimand::Mu0, &data.flipped(), fit0, side, confidence, relaxed)
}

fn check_pair(fit1: &FittedNuisance, fit0: &FittedNuisance) -> Result<()> {
    if fit1.sensitivity != fit0.sensitivity {
        return Err(Error::InvalidArgument("arm fits use different sensitivity levels".into()));
    }
    Ok(())
}

/// Average effect bounds: lower `μ¹⁻ − μ⁰⁺`, upper `μ¹⁺ − μ⁰⁻`, with variances
/// from the differenced estimating functions.
pub fn ate_report(
    data: &ObservedData,
    fit1: &FittedNuisance,
    fit0: &FittedNuisance,
    side: ReportSide,
    confidence: f64,
    relaxed: bool,
) -> Result<BoundReport> {
    check_confidence(confidence)?;
    check_relaxed(fit1, relaxed)?;
    check_relaxed(fit0, relaxed)?;
    check_pair(fit1, fit0)?;
    let flipped = data.flipped();
    let (want_lo, want_hi) = wanted(side);
    let est = |b1: BoundSide| {
        let b0 = match b1 {
            BoundSide::Lower => BoundSide::Upper,
            BoundSide::Upper => BoundSide::Lower,
        };
        let p1 = phi_values(data, fit1, b1);
        let p0 = phi_values(&flipped, fit0, b0);
        let diff: Vec<f64> = p1.iter().zip(&p0).map(|(a, b)| a - b).collect();
        let shift = if relaxed {
            b1.sign() * (relaxation_adjustment(fit1, b1) + relaxation_adjustment(fit0, b0))
        } else {
            0.0
        };
        side_estimate(&diff, shift)
    };
    let lower = want_lo.then(|| est(BoundSide::Lower));
    let upper = want_hi.then(|| est(BoundSide::Upper));
    Ok(assemble(Estimand::Ate, side, lower, upper, fit1, data.n(), confidence, relaxed))
}

/// Effect-on-the-treated bounds from the untreated-arm fit (on flipped data).
/// The treated mean is `Ẽ(TY)/Ẽ(T)`; the counterfactual mean transfers from the
/// untreated-mean bound as `{μ̂⁰ − Ẽ((1−T)Y)}/Ẽ(T)`. Variances use the joint
/// influence values of both ratios.
pub fn att_report(
    data: &ObservedData,
    fit0: &FittedNuisance,
    side: ReportSide,
    confidence: f64,
    relaxed: bool,
) -> Result<BoundReport> {
    check_confidence(confidence)?;
    check_relaxed(fit0, relaxed)?;
    let n = data.n();
    let t = data.t();
    let y = data.y();
    let tbar = mean(t);
    if !(tbar > 0.0) {
        return Err(Error::EmptyTreatedGroup);
    }
    let nu1 = (0..n).map(|i| t[i] * y[i]).sum::<f64>() / n as f64 / tbar;
    let untreated_sum = (0..n).map(|i| (1.0 - t[i]) * y[i]).sum::<f64>() / n as f64;
    let flipped = data.flipped();
    let (want_lo, want_hi) = wanted(side);
    let est = |b: BoundSide| {
        // the lower effect bound uses the upper counterfactual mean
        let b0 = match b {
            BoundSide::Lower => BoundSide::Upper,
            BoundSide::Upper => BoundSide::Lower,
        };
        let p0 = phi_values(&flipped, fit0, b0);
        let nu0 = (mean(&p0) - untreated_sum) / tbar;
        let infl: Vec<f64> = (0..n)
            .map(|i| {
                let treated_part = t[i] * (y[i] - nu1);
                let control_part = p0[i] - (1.0 - t[i]) * y[i] - t[i] * nu0;
                (treated_part - control_part) / tbar
            })
            .collect();
        let shift = if relaxed { b.sign() * relaxation_adjustment(fit0, b0) / tbar } else { 0.0 };
        SideEstimate {
            point: nu1 - nu0 + shift,
            variance: infl.iter().map(|v| v * v).sum::<f64>() / n as f64,
        }
    };
    let lower = want_lo.then(|| est(BoundSide::Lower));
    let upper = want_hi.then(|| est(BoundSide::Upper));
    Ok(assemble(Estimand::Att, side, lower, upper, fit0, n, confidence, relaxed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CoefficientVector, Design};
    use approx::assert_abs_diff_eq;

    fn s2() -> SensitivityLevel {
        SensitivityLevel::new(2.0).unwrap()
    }

    #[test]
    fn hand_case_value() {
        assert_abs_diff_eq!(phi_plus(3.0, 1.0, 0.5, 1.0, 2.0, &s2()), 6.0, epsilon = 1e-12);
        // minus: ỹ₋ = 2, φ = (3 − 2) + 2/0.5 − (2 − 1)·2 = 3
        assert_abs_diff_eq!(phi_minus(3.0, 1.0, 0.5, 1.0, 2.0, &s2()), 3.0, epsilon = 1e-12);
    }

    #[test]
    fn untreated_units_return_fitted_mean() {
        assert_eq!(phi_plus(3.0, 0.0, 0.3, 1.0, 2.5, &s2()), 2.5);
        assert_eq!(phi_minus(-1.0, 0.0, 0.8, 0.0, -0.5, &s2()), -0.5);
    }

    #[test]
    fn unit_level_reduces_to_aipw() {
        let s = SensitivityLevel::unconfounded();
        let (y, pi, eta) = (1.7, 0.4, 0.9);
        let aipw = y / pi - (1.0 / pi - 1.0) * eta;
        assert_abs_diff_eq!(phi_plus(y, 1.0, pi, 0.2, eta, &s), aipw, epsilon = 1e-14);
        assert_abs_diff_eq!(phi_minus(y, 1.0, pi, 0.2, eta, &s), aipw, epsilon = 1e-14);
    }

    #[test]
    fn normal_quantiles() {
        assert_abs_diff_eq!(normal_upper_quantile(0.05), 1.6449, epsilon = 1e-4);
        assert_abs_diff_eq!(normal_upper_quantile(0.025), 1.9600, epsilon = 1e-4);
    }

    fn constant_fit() -> (ObservedData, FittedNuisance) {
        // every unit has φ = 2: treated y = 2 with π = 1/2 and η = 2
        let design = Design::from_columns(4, 1, vec![1.0; 4]).unwrap();
        let data = ObservedData::with_shared_design(vec![2.0, 2.0, 5.0, -1.0], vec![1.0, 1.0, 0.0, 0.0], design).unwrap();
        let c = |v: f64| CoefficientVector::new(vec![v]);
        let fit = FittedNuisance {
            gamma: c(0.0),
            beta_plus: c(2.0),
            beta_minus: c(2.0),
            alpha_plus: c(2.0),
            alpha_minus: c(2.0),
            lambda_gamma: 0.0,
            lambda_beta_plus: 0.1,
            lambda_beta_minus: 0.1,
            lambda_alpha_plus: 0.0,
            lambda_alpha_minus: 0.0,
            method: NuisanceMethod::Rcal,
            outcome_mean_family: OutcomeFamily::Linear,
            sensitivity: s2(),
            clamp_events: 0,
        };
        (data, fit)
    }

    #[test]
    fn constant_phi_has_zero_variance() {
        let (data, fit) = constant_fit();
        let r = variance_and_ci(&data, &fit, ReportSide::TwoSided, 0.9, false).unwrap();
        let lo = r.lower.unwrap();
        let hi = r.upper.unwrap();
        assert_abs_diff_eq!(lo.point, 2.0, epsilon = 1e-14);
        assert_abs_diff_eq!(hi.variance, 0.0, epsilon = 1e-14);
        assert_eq!(r.ci_lower, Some(lo.point));
        assert_eq!(r.ci_upper, Some(hi.point));
        assert!(r.covers(2.0));
    }

    #[test]
    fn one_sided_interval_is_open_on_one_end() {
        let (data, fit) = constant_fit();
        let r = variance_and_ci(&data, &fit, ReportSide::Upper, 0.95, false).unwrap();
        assert!(r.ci_lower.is_none() && r.lower.is_none());
        assert!(r.covers(-1e9));
        assert!(variance_and_ci(&data, &fit, ReportSide::Upper, 1.0, false).is_err());
    }

    #[test]
    fn relaxed_points_move_outward() {
        let (data, mut fit) = constant_fit();
        fit.beta_plus = CoefficientVector::new(vec![2.0]);
        let plain = point_bound(&data, &fit, BoundSide::Upper);
        // intercept-only quantile model: no penalized coefficients, no adjustment
        assert_eq!(relaxed_point_bound(&data, &fit, BoundSide::Upper).unwrap(), plain);
        fit.method = NuisanceMethod::Rml;
        assert!(relaxed_point_bound(&data, &fit, BoundSide::Upper).is_err());
    }

    #[test]
    fn logistic_mean_composite() {
        let (data, mut fit) = constant_fit();
        fit.outcome_mean_family = OutcomeFamily::Logistic;
        fit.alpha_plus = CoefficientVector::new(vec![0.0]);
        fit.beta_plus = CoefficientVector::new(vec![0.5]);
        // m = 1/2, τ = 2/3: ρ(1, .5) = 1/3, ρ(0, .5) = 1/6, η = 1/2 + 1.5·(1/6 + 1/12)
        let eta = fitted_mean(&data, &fit, BoundSide::Upper);
        assert_abs_diff_eq!(eta[0], 0.5 + 1.5 * 0.25, epsilon = 1e-14);
    }
}
