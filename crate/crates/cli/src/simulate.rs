use std::fs;
use std::path::{Path, PathBuf};

use msm_bounds::methods::{lookup, Strategy};
use msm_bounds::pipeline::{FitPlan, TuningGrid};
use msm_bounds::simulation::{run_replications, Configuration, DgpSpec, ReplicationOptions, ReplicationReport};
use serde::{Deserialize, Serialize};

use crate::failure::Failure;

pub const SIMULATION_SCHEMA: &str = "msmb.simulation.v1";

/// Offset separating the truth stream from the replicate seeds.
const TRUTH_STREAM: u64 = 1 << 40;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub config: Configuration,
    pub n: usize,
    pub p: usize,
    pub reps: usize,
    pub methods: Vec<String>,
    pub lambdas: Vec<f64>,
    pub truth_draws: usize,
    pub grid: TuningGrid,
    pub seed: u64,
    pub out_dir: PathBuf,
}

#[derive(Debug, Serialize)]
struct Summary<'a> {
    schema: &'static str,
    config: &'a SimulationConfig,
    report: &'a ReplicationReport,
}

pub fn run(cfg: &SimulationConfig) -> Result<ReplicationReport, Failure> {
    let strategies: Vec<&'static dyn Strategy> =
        cfg.methods.iter().map(|m| lookup(m)).collect::<Result<_, _>>().map_err(Failure::from)?;
    let dgp = DgpSpec {
        config: cfg.config,
        n: cfg.n,
        p: cfg.p,
        seed: cfg.seed,
    };
    let opts = ReplicationOptions {
        n_reps: cfg.reps,
        base_seed: cfg.seed,
        truth_draws: cfg.truth_draws,
        truth_seed: cfg.seed.wrapping_add(TRUTH_STREAM),
        ..Default::default()
    };
    let plan = FitPlan {
        grid: cfg.grid.clone(),
        ..Default::default()
    };
    let report = run_replications(&dgp, &strategies, &cfg.lambdas, &plan, &opts)?;
    write_outputs(cfg, &report)?;
    Ok(report)
}

fn write_outputs(cfg: &SimulationConfig, report: &ReplicationReport) -> Result<(), Failure> {
    let dir = &cfg.out_dir;
    fs::create_dir_all(dir).map_err(|e| Failure::io(&dir.display().to_string(), e))?;
    write_coverage(&dir.join("coverage.csv"), report)?;
    write_replicates(&dir.join("replicates.csv"), cfg.config, report)?;
    let summary = Summary {
        schema: SIMULATION_SCHEMA,
        config: cfg,
        report,
    };
    let json = serde_json::to_string_pretty(&summary).map_err(|e| Failure::io("report", e))?;
    let path = dir.join("report.json");
    fs::write(&path, json).map_err(|e| Failure::io(&path.display().to_string(), e))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>, Failure> {
    csv::Writer::from_path(path).map_err(|e| Failure::io(&path.display().to_string(), e))
}

fn write_coverage(path: &Path, report: &ReplicationReport) -> Result<(), Failure> {
    let mut w = csv_writer(path)?;
    for row in &report.coverage {
        w.serialize(row).map_err(|e| Failure::io("coverage.csv", e))?;
    }
    w.flush().map_err(|e| Failure::io("coverage.csv", e))
}

fn write_replicates(path: &Path, config: Configuration, report: &ReplicationReport) -> Result<(), Failure> {
    let mut w = csv_writer(path)?;
    let err = |e| Failure::io("replicates.csv", e);
    w.write_record([
        "config", "replicate", "seed", "method", "lambda", "side", "point", "ci_end", "truth", "covers",
    ])
    .map_err(err)?;
    for r in &report.records {
        let truth = report.truths.iter().find(|t| t.lambda == r.lambda);
        let sides = [
            ("lower", r.lower_point, r.lower_ci, truth.map(|t| t.lower.value), r.covers_lower),
            ("upper", r.upper_point, r.upper_ci, truth.map(|t| t.upper.value), r.covers_upper),
        ];
        for (side, point, end, truth, covers) in sides {
            w.write_record([
                config.to_string(),
                r.replicate.to_string(),
                r.seed.to_string(),
                r.method.clone(),
                r.lambda.to_string(),
                side.to_string(),
                point.to_string(),
                end.to_string(),
                truth.map_or(String::new(), |v| v.to_string()),
                covers.to_string(),
            ])
            .map_err(err)?;
        }
    }
    w.flush().map_err(|e| Failure::io("replicates.csv", e))
}
