use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    propensities, tilde_y, BoundSide, CoefficientVector, FittedNuisance, NuisanceMethod, ObservedData,
    OutcomeFamily, SensitivityLevel,
};
use crate::solvers::{binary_mean_weight, FitDiagnostics, SolverSettings};

use super::tuning::{cross_validate, CvResult, FoldPartition, StageLoss, TuningGrid, WarmStart};

/// How each stage's penalty is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum PenaltyChoice {
    CrossValidated,
    /// The same fixed penalty in every stage (0 gives the unpenalized fits).
    Fixed(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitPlan {
    pub grid: TuningGrid,
    pub settings: SolverSettings,
    pub family: OutcomeFamily,
    pub penalty: PenaltyChoice,
}

impl Default for FitPlan {
    fn default() -> Self {
        FitPlan {
            grid: TuningGrid::default(),
            settings: SolverSettings::default(),
            family: OutcomeFamily::Linear,
            penalty: PenaltyChoice::CrossValidated,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub stage: String,
    pub lambda: f64,
    pub cv: Option<CvResult>,
    pub diagnostics: FitDiagnostics,
}

/// Fitted propensity model and the inverse weights `w = e^{−f'γ}` it implies.
#[derive(Clone, Debug)]
pub struct PropensityFit {
    pub method: NuisanceMethod,
    pub gamma: CoefficientVector,
    pub lambda: f64,
    pub weights: Vec<f64>,
    pub clamp_events: usize,
    pub summary: StageSummary,
}

#[derive(Clone, Debug)]
pub struct NuisanceReport {
    pub fit: FittedNuisance,
    pub stages: Vec<StageSummary>,
}

/// Fold partition shared by all stages of one fit; `None` for fixed penalties.
pub fn partition_for(data: &ObservedData, plan: &FitPlan) -> Result<Option<FoldPartition>> {
    match plan.penalty {
        PenaltyChoice::CrossValidated => {
            plan.grid.validate()?;
            Ok(Some(FoldPartition::new(data, plan.grid.n_folds, plan.grid.fold_seed)?))
        }
        PenaltyChoice::Fixed(l) => {
            if !(l >= 0.0) || !l.is_finite() {
                return Err(Error::InvalidArgument(format!("fixed penalty {l} must be finite and >= 0")));
            }
            Ok(None)
        }
    }
}

fn run_stage(
    name: &str,
    loss: &StageLoss,
    data: &ObservedData,
    plan: &FitPlan,
    partition: Option<&FoldPartition>,
) -> Result<(CoefficientVector, StageSummary)> {
    let (lambda, cv) = match (plan.penalty, partition) {
        (PenaltyChoice::Fixed(l), _) => (l, None),
        (PenaltyChoice::CrossValidated, Some(part)) => {
            let cv = cross_validate(loss, data, &plan.grid, part, &plan.settings).map_err(|e| e.at_stage(name))?;
            (cv.selected, Some(cv))
        }
        (PenaltyChoice::CrossValidated, None) => {
            return Err(Error::InvalidArgument("cross-validation requires a fold partition".into()))
        }
    };
    let (coef, diagnostics) = loss
        .fit(data, lambda, &plan.settings, &mut WarmStart::default())
        .map_err(|e| e.at_stage(name))?;
    if !diagnostics.converged || !coef.is_finite() {
        return Err(Error::NotConverged {
            solver: loss.label(),
            diagnostics,
        }
        .at_stage(name));
    }
    Ok((
        coef,
        StageSummary {
            stage: name.to_string(),
            lambda,
            cv,
            diagnostics,
        },
    ))
}

/// Fits the propensity score by the calibrated loss (RCAL) or by likelihood (RML).
pub fn fit_propensity(
    data: &ObservedData,
    method: NuisanceMethod,
    plan: &FitPlan,
    partition: Option<&FoldPartition>,
) -> Result<PropensityFit> {
    plan.settings.validate()?;
    let owned;
    let partition = match partition {
        Some(p) => Some(p),
        None => {
            owned = partition_for(data, plan)?;
            owned.as_ref()
        }
    };
    let loss = match method {
        NuisanceMethod::Rcal => StageLoss::Calibration,
        NuisanceMethod::Rml => StageLoss::Likelihood,
    };
    let (gamma, summary) = run_stage("propensity", &loss, data, plan, partition)?;
    let (ps, clamp_events) = propensities(data.f(), &gamma);
    Ok(PropensityFit {
        method,
        lambda: summary.lambda,
        gamma,
        weights: ps.iter().map(|p| p.weight).collect(),
        clamp_events,
        summary,
    })
}

struct SideFit {
    beta: CoefficientVector,
    alpha: CoefficientVector,
    stages: Vec<StageSummary>,
}

fn fit_side(
    data: &ObservedData,
    prop: &PropensityFit,
    s: &SensitivityLevel,
    side: BoundSide,
    plan: &FitPlan,
    partition: Option<&FoldPartition>,
) -> Result<SideFit> {
    let n = data.n();
    let weights = match prop.method {
        NuisanceMethod::Rcal => prop.weights.clone(),
        NuisanceMethod::Rml => vec![1.0; n],
    };
    let tag = match side {
        BoundSide::Upper => "upper",
        BoundSide::Lower => "lower",
    };
    let q_loss = StageLoss::Quantile {
        weights: weights.clone(),
        tau: s.level(side),
    };
    let (beta, q_summary) = run_stage(&format!("quantile {tag}"), &q_loss, data, plan, partition)?;
    let q = data.h().mul_vec(beta.values());
    let m_loss = match plan.family {
        OutcomeFamily::Linear => StageLoss::LeastSquares {
            weights,
            response: (0..n).map(|i| tilde_y(data.y()[i], q[i], s, side)).collect(),
        },
        OutcomeFamily::Logistic => {
            let weights = match prop.method {
                NuisanceMethod::Rcal => (0..n)
                    .map(|i| weights[i] * binary_mean_weight(q[i], s, side))
                    .collect(),
                NuisanceMethod::Rml => weights,
            };
            StageLoss::Logistic { weights }
        }
    };
    let (alpha, m_summary) = run_stage(&format!("mean {tag}"), &m_loss, data, plan, partition)?;
    Ok(SideFit {
        beta,
        alpha,
        stages: vec![q_summary, m_summary],
    })
}

/// Fits the quantile and mean models for both sides given a propensity fit.
/// The weights and the fold partition are shared by all stages.
pub fn fit_outcome_models(
    data: &ObservedData,
    prop: &PropensityFit,
    s: &SensitivityLevel,
    plan: &FitPlan,
    partition: Option<&FoldPartition>,
) -> Result<NuisanceReport> {
    plan.settings.validate()?;
    if plan.family == OutcomeFamily::Logistic {
        if let Some(&v) = data.y().iter().find(|&&v| v != 0.0 && v != 1.0) {
            return Err(Error::NonBinaryOutcome(v));
        }
    }
    let owned;
    let partition = match partition {
        Some(p) => Some(p),
        None => {
            owned = partition_for(data, plan)?;
            owned.as_ref()
        }
    };
    let upper = fit_side(data, prop, s, BoundSide::Upper, plan, partition)?;
    // at Λ = 1 both sides solve identical problems
    let lower = if s.span() == 0.0 {
        SideFit {
            beta: upper.beta.clone(),
            alpha: upper.alpha.clone(),
            stages: upper
                .stages
                .iter()
                .map(|st| StageSummary {
                    stage: st.stage.replace("upper", "lower"),
                    ..st.clone()
                })
                .collect(),
        }
    } else {
        fit_side(data, prop, s, BoundSide::Lower, plan, partition)?
    };
    let mut stages = vec![prop.summary.clone()];
    stages.extend(upper.stages.iter().cloned());
    stages.extend(lower.stages.iter().cloned());
    let fit = FittedNuisance {
        gamma: prop.gamma.clone(),
        lambda_gamma: prop.lambda,
        lambda_beta_plus: upper.stages[0].lambda,
        lambda_alpha_plus: upper.stages[1].lambda,
        lambda_beta_minus: lower.stages[0].lambda,
        lambda_alpha_minus: lower.stages[1].lambda,
        beta_plus: upper.beta,
        alpha_plus: upper.alpha,
        beta_minus: lower.beta,
        alpha_minus: lower.alpha,
        method: prop.method,
        outcome_mean_family: plan.family,
        sensitivity: *s,
        clamp_events: prop.clamp_events,
    };
    Ok(NuisanceReport { fit, stages })
}

/// Propensity, quantile and mean stages in sequence, each tuned with upstream
/// estimates frozen.
pub fn fit_nuisance(
    data: &ObservedData,
    method: NuisanceMethod,
    s: &SensitivityLevel,
    plan: &FitPlan,
) -> Result<NuisanceReport> {
    let partition = partition_for(data, plan)?;
    let prop = fit_propensity(data, method, plan, partition.as_ref())?;
    fit_outcome_models(data, &prop, s, plan, partition.as_ref())
}

/// Regularized calibrated estimation with cross-validated penalties.
pub fn fit_rcal(
    data: &ObservedData,
    s: &SensitivityLevel,
    grid: &TuningGrid,
    settings: &SolverSettings,
    family: OutcomeFamily,
) -> Result<NuisanceReport> {
    let plan = FitPlan {
        grid: grid.clone(),
        settings: settings.clone(),
        family,
        penalty: PenaltyChoice::CrossValidated,
    };
    fit_nuisance(data, NuisanceMethod::Rcal, s, &plan)
}

/// Likelihood propensity with unweighted quantile and mean fits, cross-validated.
pub fn fit_rml(
    data: &ObservedData,
    s: &SensitivityLevel,
    grid: &TuningGrid,
    settings: &SolverSettings,
    family: OutcomeFamily,
) -> Result<NuisanceReport> {
    let plan = FitPlan {
        grid: grid.clone(),
        settings: settings.clone(),
        family,
        penalty: PenaltyChoice::CrossValidated,
    };
    fit_nuisance(data, NuisanceMethod::Rml, s, &plan)
}
