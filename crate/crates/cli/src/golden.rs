use std::fs;
use std::path::{Path, PathBuf};

use msm_bounds::oracle::{sharp_bounds_streaming, McEstimate};
use msm_bounds::pipeline::TuningGrid;
use msm_bounds::simulation::Configuration;
use msm_bounds::{OutcomeFamily, SensitivityLevel};
use serde::{Deserialize, Serialize};

use crate::analyze::{self, AnalysisConfig};
use crate::failure::Failure;
use crate::input::ColumnSelection;

pub const GOLDEN_SCHEMA: &str = "msmb.golden.v1";
pub const GOLDEN_LAMBDA: f64 = 1.5;
pub const GOLDEN_SEED: u64 = 20_240_101;
pub const SMALL_DATA: &str = "small.csv";
pub const SMALL_REPORT: &str = "small_report.json";
pub const SHARP_BOUNDS: &str = "sharp_bounds.json";

#[derive(Debug, Serialize, Deserialize)]
pub struct SharpGolden {
    pub schema: String,
    pub config: Configuration,
    pub lambda: f64,
    pub seed: u64,
    pub lower: McEstimate,
    pub upper: McEstimate,
}

/// Analysis settings frozen for the bundled small dataset.
pub fn small_config(data: PathBuf) -> AnalysisConfig {
    AnalysisConfig {
        data,
        columns: ColumnSelection {
            outcome: "y".into(),
            treatment: "t".into(),
            covariates: vec![],
            interactions: false,
            min_nonzero: 0,
        },
        lambdas: vec![1.0, 1.5, 2.0],
        confidence: 0.95,
        method: "rcal".into(),
        family: OutcomeFamily::Linear,
        grid: TuningGrid::default(),
        fixed_penalty: Some(0.05),
        standardize: true,
        seed: 0,
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Failure::io("json", e))?;
    fs::write(path, text + "\n").map_err(|e| Failure::io(&path.display().to_string(), e))
}

/// Rewrites the golden files in `dir`; the small dataset must already be there.
pub fn regenerate(dir: &Path, draws: usize) -> Result<(), Failure> {
    let s = SensitivityLevel::new(GOLDEN_LAMBDA)?;
    let (lower, upper) = sharp_bounds_streaming(Configuration::C1, &s, draws, GOLDEN_SEED)?;
    write_json(
        &dir.join(SHARP_BOUNDS),
        &SharpGolden {
            schema: GOLDEN_SCHEMA.into(),
            config: Configuration::C1,
            lambda: GOLDEN_LAMBDA,
            seed: GOLDEN_SEED,
            lower,
            upper,
        },
    )?;
    let data = dir.join(SMALL_DATA);
    if !data.exists() {
        return Err(Failure::input(format!("{} not found", data.display())));
    }
    let report = analyze::run(small_config(data))?;
    let mut report = serde_json::to_value(report).map_err(|e| Failure::io("json", e))?;
    // the stored config names the file relative to the fixture directory
    report["config"]["data"] = serde_json::Value::String(SMALL_DATA.into());
    write_json(&dir.join(SMALL_REPORT), &report)
}
