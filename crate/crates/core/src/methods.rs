//! Estimation strategies selectable by name.
//!
//! A strategy fixes the propensity loss, the weighting of the outcome fits,
//! how penalties are chosen and whether bounds are relaxed. Designs are
//! standardized before fitting unless disabled; bounds are evaluated on the
//! standardized data and coefficients are mapped back only for reporting.

use std::fmt::Debug;

use serde::{Deserialize, Serialize};

use crate::bounds::{ate_report, att_report, arm_mean_report, BoundReport, Estimand, ReportSide};
use crate::error::{Error, Result};
use crate::model::{CoefficientVector, FittedNuisance, NuisanceMethod, ObservedData, SensitivityLevel, Standardization};
use crate::pipeline::{
    fit_outcome_models, fit_propensity, partition_for, FitPlan, FoldPartition, NuisanceReport, PenaltyChoice,
    PropensityFit,
};

pub trait Strategy: Send + Sync + Debug {
    fn name(&self) -> &'static str;

    fn nuisance_method(&self) -> NuisanceMethod;

    fn relaxed(&self) -> bool {
        false
    }

    /// Penalty rule given the one requested by the caller.
    fn penalty(&self, requested: PenaltyChoice) -> PenaltyChoice {
        requested
    }

    fn plan(&self, base: &FitPlan) -> FitPlan {
        FitPlan {
            penalty: self.penalty(base.penalty),
            ..base.clone()
        }
    }
}

#[derive(Debug)]
struct Rcal;

impl Strategy for Rcal {
    fn name(&self) -> &'static str {
        "rcal"
    }
    fn nuisance_method(&self) -> NuisanceMethod {
        NuisanceMethod::Rcal
    }
}

#[derive(Debug)]
struct RcalRelaxed;

impl Strategy for RcalRelaxed {
    fn name(&self) -> &'static str {
        "rcal-relaxed"
    }
    fn nuisance_method(&self) -> NuisanceMethod {
        NuisanceMethod::Rcal
    }
    fn relaxed(&self) -> bool {
        true
    }
}

#[derive(Debug)]
struct Rml;

impl Strategy for Rml {
    fn name(&self) -> &'static str {
        "rml"
    }
    fn nuisance_method(&self) -> NuisanceMethod {
        NuisanceMethod::Rml
    }
}

/// Unpenalized calibrated fits.
#[derive(Debug)]
struct Cal;

impl Strategy for Cal {
    fn name(&self) -> &'static str {
        "cal"
    }
    fn nuisance_method(&self) -> NuisanceMethod {
        NuisanceMethod::Rcal
    }
    fn penalty(&self, _: PenaltyChoice) -> PenaltyChoice {
        PenaltyChoice::Fixed(0.0)
    }
}

/// Unpenalized likelihood fits.
#[derive(Debug)]
struct Ml;

impl Strategy for Ml {
    fn name(&self) -> &'static str {
        "ml"
    }
    fn nuisance_method(&self) -> NuisanceMethod {
        NuisanceMethod::Rml
    }
    fn penalty(&self, _: PenaltyChoice) -> PenaltyChoice {
        PenaltyChoice::Fixed(0.0)
    }
}

static REGISTRY: [&dyn Strategy; 5] = [&Rcal, &RcalRelaxed, &Rml, &Cal, &Ml];

pub fn registry() -> &'static [&'static dyn Strategy] {
    &REGISTRY
}

pub fn names() -> Vec<&'static str> {
    REGISTRY.iter().map(|s| s.name()).collect()
}

pub fn lookup(name: &str) -> Result<&'static dyn Strategy> {
    REGISTRY
        .iter()
        .copied()
        .find(|s| s.name().eq_ignore_ascii_case(name))
        .ok_or_else(|| Error::InvalidArgument(format!("unknown method {name:?}; expected one of {:?}", names())))
}

/// One arm's data with its propensity fit, ready for outcome fits at any Λ.
#[derive(Clone, Debug)]
pub struct PreparedArm {
    data: ObservedData,
    plan: FitPlan,
    partition: Option<FoldPartition>,
    propensity: PropensityFit,
    scaling: Option<(Standardization, Standardization)>,
}

impl PreparedArm {
    /// `data` must already have the target arm coded as `t = 1`.
    pub fn new(strategy: &dyn Strategy, data: &ObservedData, plan: &FitPlan, standardize: bool) -> Result<Self> {
        let plan = strategy.plan(plan);
        let (data, scaling) = if standardize {
            let (d, sf, sh) = data.standardized();
            (d, Some((sf, sh)))
        } else {
            (data.clone(), None)
        };
        let partition = partition_for(&data, &plan)?;
        let propensity = fit_propensity(&data, strategy.nuisance_method(), &plan, partition.as_ref())?;
        Ok(PreparedArm {
            data,
            plan,
            partition,
            propensity,
            scaling,
        })
    }

    /// Data the fits live on (standardized if requested).
    pub fn data(&self) -> &ObservedData {
        &self.data
    }

    pub fn propensity(&self) -> &PropensityFit {
        &self.propensity
    }

    pub fn fit_level(&self, s: &SensitivityLevel) -> Result<NuisanceReport> {
        fit_outcome_models(&self.data, &self.propensity, s, &self.plan, self.partition.as_ref())
    }

    /// Coefficients expressed on the original covariate scale.
    pub fn to_original(&self, fit: &FittedNuisance) -> FittedNuisance {
        let Some((sf, sh)) = &self.scaling else {
            return fit.clone();
        };
        let map = |st: &Standardization, c: &CoefficientVector| {
            CoefficientVector::with_mask(st.to_original(c.values()), c.mask().to_vec()).expect("mask length unchanged")
        };
        FittedNuisance {
            gamma: map(sf, &fit.gamma),
            alpha_plus: map(sf, &fit.alpha_plus),
            alpha_minus: map(sf, &fit.alpha_minus),
            beta_plus: map(sh, &fit.beta_plus),
            beta_minus: map(sh, &fit.beta_minus),
            ..fit.clone()
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ArmSummary {
    /// Coefficients on the original covariate scale.
    pub fit: FittedNuisance,
    pub stages: Vec<crate::pipeline::StageSummary>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LevelAnalysis {
    pub lambda: f64,
    pub reports: Vec<BoundReport>,
    pub treated_arm: ArmSummary,
    pub control_arm: ArmSummary,
}

/// Both arms prepared once, evaluated at any number of sensitivity levels.
#[derive(Debug)]
pub struct Analysis {
    strategy: &'static dyn Strategy,
    treated: PreparedArm,
    control: PreparedArm,
}

impl Analysis {
    pub fn new(strategy: &'static dyn Strategy, data: &ObservedData, plan: &FitPlan, standardize: bool) -> Result<Self> {
        let treated = PreparedArm::new(strategy, data, plan, standardize).map_err(|e| e.at_stage("treated arm"))?;
        let control =
            PreparedArm::new(strategy, &data.flipped(), plan, standardize).map_err(|e| e.at_stage("control arm"))?;
        Ok(Analysis {
            strategy,
            treated,
            control,
        })
    }

    pub fn strategy(&self) -> &'static dyn Strategy {
        self.strategy
    }

    /// Reports for every estimand and side at one level.
    pub fn at_level(&self, s: &SensitivityLevel, confidence: f64) -> Result<LevelAnalysis> {
        let fit1 = self.treated.fit_level(s).map_err(|e| e.at_stage("treated arm"))?;
        let fit0 = self.control.fit_level(s).map_err(|e| e.at_stage("control arm"))?;
        let data = self.treated.data();
        let relaxed = self.strategy.relaxed();
        let mut reports = Vec::new();
        for side in [ReportSide::Lower, ReportSide::Upper, ReportSide::TwoSided] {
            reports.push(arm_mean_report(Estimand::Mu1, data, &fit1.fit, side, confidence, relaxed)?);
            reports.push(arm_mean_report(Estimand::Mu0, self.control.data(), &fit0.fit, side, confidence, relaxed)?);
            reports.push(ate_report(data, &fit1.fit, &fit0.fit, side, confidence, relaxed)?);
            reports.push(att_report(data, &fit0.fit, side, confidence, relaxed)?);
        }
        Ok(LevelAnalysis {
            lambda: s.lambda(),
            reports,
            treated_arm: ArmSummary {
                fit: self.treated.to_original(&fit1.fit),
                stages: fit1.stages,
            },
            control_arm: ArmSummary {
                fit: self.control.to_original(&fit0.fit),
                stages: fit0.stages,
            },
        })
    }
}
