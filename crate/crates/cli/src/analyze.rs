use std::path::PathBuf;

use msm_bounds::methods::{lookup, Analysis, LevelAnalysis};
use msm_bounds::pipeline::{FitPlan, PenaltyChoice, TuningGrid};
use msm_bounds::{OutcomeFamily, SensitivityLevel};
use serde::{Deserialize, Serialize};

use crate::failure::Failure;
use crate::input::{load, ColumnSelection};

pub const ANALYSIS_SCHEMA: &str = "msmb.analysis.v1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalysisConfig {
    pub data: PathBuf,
    pub columns: ColumnSelection,
    pub lambdas: Vec<f64>,
    pub confidence: f64,
    pub method: String,
    pub family: OutcomeFamily,
    pub grid: TuningGrid,
    /// `None` selects every penalty by cross-validation.
    pub fixed_penalty: Option<f64>,
    pub standardize: bool,
    pub seed: u64,
}

impl AnalysisConfig {
    pub fn validate(&self) -> Result<(), Failure> {
        if self.lambdas.is_empty() {
            return Err(Failure::input("at least one sensitivity level is required".into()));
        }
        for &l in &self.lambdas {
            SensitivityLevel::new(l).map_err(Failure::from)?;
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(Failure::input(format!("confidence {} must lie in (0, 1)", self.confidence)));
        }
        if let Some(p) = self.fixed_penalty {
            if !(p >= 0.0 && p.is_finite()) {
                return Err(Failure::input(format!("fixed penalty {p} must be finite and >= 0")));
            }
        }
        self.grid.validate().map_err(Failure::from)?;
        lookup(&self.method).map_err(Failure::from)?;
        Ok(())
    }

    fn plan(&self) -> FitPlan {
        FitPlan {
            grid: TuningGrid {
                fold_seed: self.seed,
                ..self.grid.clone()
            },
            family: self.family,
            penalty: self.fixed_penalty.map_or(PenaltyChoice::CrossValidated, PenaltyChoice::Fixed),
            ..Default::default()
        }
    }
}

#[derive(Debug, Serialize)]
pub struct AnalysisReport {
    pub schema: &'static str,
    pub config: AnalysisConfig,
    pub n: usize,
    pub n_treated: usize,
    pub covariates: Vec<String>,
    pub dropped_covariates: Vec<String>,
    pub levels: Vec<LevelAnalysis>,
}

pub fn run(config: AnalysisConfig) -> Result<AnalysisReport, Failure> {
    config.validate()?;
    let loaded = load(&config.data, &config.columns)?;
    let data = &loaded.data;
    log::info!(
        "{} rows, {} treated, {} design columns",
        data.n(),
        data.n_treated(),
        loaded.columns.len()
    );
    let strategy = lookup(&config.method).map_err(Failure::from)?;
    let analysis = Analysis::new(strategy, data, &config.plan(), config.standardize)?;
    let mut levels = Vec::with_capacity(config.lambdas.len());
    for &l in &config.lambdas {
        let s = SensitivityLevel::new(l).map_err(Failure::from)?;
        let level = analysis
            .at_level(&s, config.confidence)
            .map_err(|e| Failure::from(e.at_stage(format!("lambda {l}"))))?;
        levels.push(level);
    }
    Ok(AnalysisReport {
        schema: ANALYSIS_SCHEMA,
        n: data.n(),
        n_treated: data.n_treated(),
        covariates: loaded.columns,
        dropped_covariates: loaded.dropped,
        levels,
        config,
    })
}
