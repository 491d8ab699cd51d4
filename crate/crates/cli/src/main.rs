mod analyze;
mod failure;
mod golden;
mod input;
mod simulate;
mod verify;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use msm_bounds::pipeline::TuningGrid;
use msm_bounds::simulation::Configuration;
use msm_bounds::OutcomeFamily;

use failure::Failure;

/// Sensitivity bounds for treatment effects under the marginal sensitivity model.
#[derive(Parser, Debug)]
#[command(name = "msmb", version)]
struct Cli {
    /// Worker threads; defaults to the available cores. Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Seed for every random choice (folds, simulated data, oracle draws).
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Bounds and confidence intervals for a dataset.
    Analyze(AnalyzeArgs),
    /// Coverage study on a simulated design.
    Simulate(SimulateArgs),
    /// Duality, KKT and population-ordering checks.
    Verify(VerifyArgs),
    /// Rewrite the golden fixtures in a directory.
    RegenGolden(GoldenArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Family {
    Linear,
    Binary,
}

#[derive(Args, Debug)]
struct GridArgs {
    /// Points in the penalty grid below the zero threshold.
    #[arg(long, default_value_t = 11)]
    grid_points: usize,
    /// Grid step as a power of 2 (0.25 gives the fine grid).
    #[arg(long, default_value_t = 1.0)]
    grid_step: f64,
    #[arg(long, default_value_t = 5)]
    folds: usize,
}

impl GridArgs {
    fn grid(&self, seed: u64) -> TuningGrid {
        TuningGrid {
            n_points: self.grid_points,
            divisor_exponent_step: self.grid_step,
            n_folds: self.folds,
            fold_seed: seed,
        }
    }
}

#[derive(Args, Debug)]
struct AnalyzeArgs {
    /// CSV with a header row.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    outcome: String,
    #[arg(long)]
    treatment: String,
    /// Covariate columns; all remaining columns when omitted.
    #[arg(long, value_delimiter = ',')]
    covariates: Vec<String>,
    /// Add all pairwise products of the covariates.
    #[arg(long)]
    interactions: bool,
    /// Drop design columns with fewer nonzero values.
    #[arg(long, default_value_t = 0)]
    min_nonzero: usize,
    #[arg(long, value_delimiter = ',', default_value = "1,1.2,1.5,2")]
    lambda: Vec<f64>,
    #[arg(long, default_value_t = 0.95)]
    confidence: f64,
    #[arg(long, default_value = "rcal")]
    method: String,
    #[arg(long, value_enum, default_value_t = Family::Linear)]
    family: Family,
    /// Use this penalty in every stage instead of cross-validation.
    #[arg(long)]
    penalty: Option<f64>,
    #[arg(long)]
    no_standardize: bool,
    #[command(flatten)]
    grid: GridArgs,
    /// JSON report path; stdout when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long, default_value = "C1")]
    config: Configuration,
    #[arg(long, default_value_t = 800)]
    n: usize,
    #[arg(long, default_value_t = 10)]
    p: usize,
    #[arg(long, default_value_t = 100)]
    reps: usize,
    #[arg(long, value_delimiter = ',', default_value = "rcal-relaxed,rml")]
    method: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "1,1.5,2")]
    lambda: Vec<f64>,
    /// Monte Carlo draws for the sharp bounds.
    #[arg(long, default_value_t = 1_000_000)]
    truth_draws: usize,
    #[command(flatten)]
    grid: GridArgs,
    /// Directory for coverage.csv, replicates.csv and report.json.
    #[arg(long, default_value = "simulation")]
    out_dir: PathBuf,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    /// Random duality instances.
    #[arg(long, default_value_t = 200)]
    instances: usize,
    /// Largest sample size of a duality instance.
    #[arg(long, default_value_t = 60)]
    nmax: usize,
    /// Calibrated fits checked against their KKT conditions.
    #[arg(long, default_value_t = 10)]
    fits: usize,
    /// Monte Carlo draws for the ordering checks.
    #[arg(long, default_value_t = 200_000)]
    draws: usize,
    /// Fault injection: scale the primal weights by 1 + this value.
    #[arg(long, default_value_t = 0.0)]
    perturb_weights: f64,
}

#[derive(Args, Debug)]
struct GoldenArgs {
    /// Fixture directory holding small.csv.
    #[arg(long)]
    dir: PathBuf,
    #[arg(long, default_value_t = 10_000_000)]
    draws: usize,
}

fn analyze(args: AnalyzeArgs, seed: u64) -> Result<u8, Failure> {
    let config = analyze::AnalysisConfig {
        data: args.data,
        columns: input::ColumnSelection {
            outcome: args.outcome,
            treatment: args.treatment,
            covariates: args.covariates,
            interactions: args.interactions,
            min_nonzero: args.min_nonzero,
        },
        lambdas: args.lambda,
        confidence: args.confidence,
        method: args.method,
        family: match args.family {
            Family::Linear => OutcomeFamily::Linear,
            Family::Binary => OutcomeFamily::Logistic,
        },
        grid: args.grid.grid(seed),
        fixed_penalty: args.penalty,
        standardize: !args.no_standardize,
        seed,
    };
    let report = analyze::run(config)?;
    let json = serde_json::to_string_pretty(&report).map_err(|e| Failure::io("json", e))? + "\n";
    match args.output {
        Some(path) => std::fs::write(&path, json).map_err(|e| Failure::io(&path.display().to_string(), e))?,
        None => std::io::stdout()
            .write_all(json.as_bytes())
            .map_err(|e| Failure::io("stdout", e))?,
    }
    Ok(failure::OK)
}

fn simulate(args: SimulateArgs, seed: u64) -> Result<u8, Failure> {
    let cfg = simulate::SimulationConfig {
        config: args.config,
        n: args.n,
        p: args.p,
        reps: args.reps,
        methods: args.method,
        lambdas: args.lambda,
        truth_draws: args.truth_draws,
        grid: args.grid.grid(seed),
        seed,
        out_dir: args.out_dir,
    };
    let report = simulate::run(&cfg)?;
    for row in &report.coverage {
        println!(
            "{} {:<13} lambda {:<4} {:<9} {:.3} (se {:.3}, {} reps)",
            row.config,
            row.method,
            row.lambda,
            format!("{:?}", row.side),
            row.coverage,
            row.mc_se,
            row.replicates
        );
    }
    if !report.failures.is_empty() {
        eprintln!("{} replicate fits failed and were excluded", report.failures.len());
    }
    Ok(failure::OK)
}

fn verify(args: VerifyArgs, seed: u64) -> Result<u8, Failure> {
    let results = verify::run(&verify::VerifyOptions {
        instances: args.instances,
        nmax: args.nmax,
        fits: args.fits,
        draws: args.draws,
        perturb_weights: args.perturb_weights,
        seed,
    })?;
    verify::print_table(&results);
    Ok(if results.iter().all(|r| r.passed) {
        failure::OK
    } else {
        failure::VERIFICATION
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { failure::INPUT } else { failure::OK });
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if let Some(t) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("error: --threads: {e}");
            return ExitCode::from(failure::INPUT);
        }
    }
    let result = match cli.command {
        Command::Analyze(a) => analyze(a, cli.seed),
        Command::Simulate(a) => simulate(a, cli.seed),
        Command::Verify(a) => verify(a, cli.seed),
        Command::RegenGolden(a) => golden::regenerate(&a.dir, a.draws).map(|_| failure::OK),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code)
        }
    }
}
