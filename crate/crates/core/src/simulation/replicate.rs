use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{arm_mean_report, Estimand, ReportSide};
use crate::error::Result;
use crate::methods::{PreparedArm, Strategy};
use crate::model::SensitivityLevel;
use crate::oracle::{sharp_bounds_streaming, McEstimate};
use crate::pipeline::FitPlan;

use super::dgp::{generate, DgpSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SharpBounds {
    pub lambda: f64,
    pub lower: McEstimate,
    pub upper: McEstimate,
}

/// Sharp population bounds on the treated mean for a design, at the true
/// conditional quantiles. They do not depend on `n`, and the covariate
/// dimension only matters through the first four covariates.
pub fn true_sharp_bounds(dgp: &DgpSpec, s: &SensitivityLevel, n_mc: usize, seed: u64) -> Result<SharpBounds> {
    let (lower, upper) = sharp_bounds_streaming(dgp.config, s, n_mc, seed)?;
    Ok(SharpBounds {
        lambda: s.lambda(),
        lower,
        upper,
    })
}

/// Seed of replicate `r`.
pub fn replicate_seed(base_seed: u64, r: usize) -> u64 {
    base_seed ^ r as u64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicationOptions {
    pub n_reps: usize,
    pub base_seed: u64,
    /// Monte Carlo draws for the sharp bounds.
    pub truth_draws: usize,
    pub truth_seed: u64,
    pub one_sided_confidence: f64,
    pub two_sided_confidence: f64,
    pub standardize: bool,
}

impl Default for ReplicationOptions {
    fn default() -> Self {
        ReplicationOptions {
            n_reps: 100,
            base_seed: 0,
            truth_draws: 1_000_000,
            truth_seed: 20_240_101,
            one_sided_confidence: 0.95,
            two_sided_confidence: 0.90,
            standardize: true,
        }
    }
}

/// Bounds from one method at one level in one replicate. Points are the
/// method's reported points (relaxed if the method relaxes).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub replicate: usize,
    pub seed: u64,
    pub method: String,
    pub lambda: f64,
    pub lower_point: f64,
    pub upper_point: f64,
    pub lower_ci: f64,
    pub upper_ci: f64,
    pub two_sided_lower: f64,
    pub two_sided_upper: f64,
    pub covers_lower: bool,
    pub covers_upper: bool,
    pub covers_two_sided: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub replicate: usize,
    pub method: String,
    pub message: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CoverageTarget {
    /// One-sided interval covering the sharp lower bound.
    Lower,
    Upper,
    /// Two-sided interval covering both sharp bounds.
    TwoSided,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageRow {
    pub config: String,
    pub method: String,
    pub lambda: f64,
    pub side: CoverageTarget,
    pub confidence: f64,
    pub coverage: f64,
    pub mc_se: f64,
    pub replicates: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointSummary {
    pub config: String,
    pub method: String,
    pub lambda: f64,
    pub truth_lower: f64,
    pub truth_upper: f64,
    pub mean_lower: f64,
    pub mean_upper: f64,
    pub sd_lower: f64,
    pub sd_upper: f64,
    pub replicates: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicationReport {
    pub dgp: DgpSpec,
    pub options: ReplicationOptions,
    pub truths: Vec<SharpBounds>,
    pub records: Vec<ReplicateRecord>,
    pub failures: Vec<FailureRecord>,
    pub coverage: Vec<CoverageRow>,
    pub points: Vec<PointSummary>,
}

impl ReplicationReport {
    pub fn coverage_of(&self, method: &str, lambda: f64, side: CoverageTarget) -> Option<&CoverageRow> {
        self.coverage
            .iter()
            .find(|r| r.method == method && r.lambda == lambda && r.side == side)
    }

    pub fn points_of(&self, method: &str, lambda: f64) -> Option<&PointSummary> {
        self.points.iter().find(|r| r.method == method && r.lambda == lambda)
    }
}

fn one_replicate(
    r: usize,
    dgp: &DgpSpec,
    strategies: &[&'static dyn Strategy],
    levels: &[SensitivityLevel],
    truths: &[SharpBounds],
    plan: &FitPlan,
    opts: &ReplicationOptions,
) -> (Vec<ReplicateRecord>, Vec<FailureRecord>) {
    let seed = replicate_seed(opts.base_seed, r);
    let mut records = Vec::new();
    let mut failures = Vec::new();
    let data = match generate(&DgpSpec { seed, ..*dgp }) {
        Ok(d) => d,
        Err(e) => {
            for s in strategies {
                failures.push(FailureRecord {
                    replicate: r,
                    method: s.name().to_string(),
                    message: e.to_string(),
                });
            }
            return (records, failures);
        }
    };
    let mut plan = plan.clone();
    plan.grid.fold_seed = seed;
    for strategy in strategies {
        let attempt = || -> Result<Vec<ReplicateRecord>> {
            let arm = PreparedArm::new(*strategy, &data, &plan, opts.standardize)?;
            let mut out = Vec::with_capacity(levels.len());
            for (s, truth) in levels.iter().zip(truths) {
                let fit = arm.fit_level(s)?.fit;
                let relaxed = strategy.relaxed();
                let d = arm.data();
                let one = arm_mean_report(Estimand::Mu1, d, &fit, ReportSide::TwoSided, opts.one_sided_confidence, relaxed)?;
                let two = arm_mean_report(Estimand::Mu1, d, &fit, ReportSide::TwoSided, opts.two_sided_confidence, relaxed)?;
                let (lo, hi) = (one.lower.expect("two-sided"), one.upper.expect("two-sided"));
                let lower_ci = one.ci_lower.expect("lower end");
                let upper_ci = one.ci_upper.expect("upper end");
                let (tl, tu) = (two.ci_lower.expect("lower end"), two.ci_upper.expect("upper end"));
                out.push(ReplicateRecord {
                    replicate: r,
                    seed,
                    method: strategy.name().to_string(),
                    lambda: s.lambda(),
                    lower_point: lo.point,
                    upper_point: hi.point,
                    lower_ci,
                    upper_ci,
                    two_sided_lower: tl,
                    two_sided_upper: tu,
                    covers_lower: lower_ci <= truth.lower.value,
                    covers_upper: upper_ci >= truth.upper.value,
                    covers_two_sided: tl <= truth.lower.value && tu >= truth.upper.value,
                });
            }
            Ok(out)
        };
        match attempt() {
            Ok(recs) => records.extend(recs),
            Err(e) => {
                log::debug!("replicate {r} method {} failed: {e}", strategy.name());
                failures.push(FailureRecord {
                    replicate: r,
                    method: strategy.name().to_string(),
                    message: e.to_string(),
                })
            }
        }
    }
    (records, failures)
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (m, var.sqrt())
}

/// Runs the coverage study. Replicates run in parallel; their seeds depend
/// only on the base seed and the replicate index, and results are reduced in
/// replicate order, so the report does not depend on scheduling.
pub fn run_replications(
    dgp: &DgpSpec,
    strategies: &[&'static dyn Strategy],
    lambdas: &[f64],
    plan: &FitPlan,
    opts: &ReplicationOptions,
) -> Result<ReplicationReport> {
    dgp.validate()?;
    if opts.n_reps == 0 {
        return Err(crate::Error::InvalidArgument("at least one replicate is required".into()));
    }
    if strategies.is_empty() || lambdas.is_empty() {
        return Err(crate::Error::InvalidArgument("need at least one method and one level".into()));
    }
    let levels = lambdas.iter().map(|&l| SensitivityLevel::new(l)).collect::<Result<Vec<_>>>()?;
    let truths = levels
        .iter()
        .map(|s| true_sharp_bounds(dgp, s, opts.truth_draws, opts.truth_seed))
        .collect::<Result<Vec<_>>>()?;
    let per_rep: Vec<(Vec<ReplicateRecord>, Vec<FailureRecord>)> = (0..opts.n_reps)
        .into_par_iter()
        .map(|r| one_replicate(r, dgp, strategies, &levels, &truths, plan, opts))
        .collect();
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (rec, fail) in per_rep {
        records.extend(rec);
        failures.extend(fail);
    }

    let config = dgp.config.to_string();
    let mut coverage = Vec::new();
    let mut points = Vec::new();
    for strategy in strategies {
        for (s, truth) in levels.iter().zip(&truths) {
            let rows: Vec<&ReplicateRecord> = records
                .iter()
                .filter(|r| r.method == strategy.name() && r.lambda == s.lambda())
                .collect();
            let k = rows.len();
            if k == 0 {
                continue;
            }
            let kf = k as f64;
            let targets: [(CoverageTarget, f64, fn(&ReplicateRecord) -> bool); 3] = [
                (CoverageTarget::Lower, opts.one_sided_confidence, |r| r.covers_lower),
                (CoverageTarget::Upper, opts.one_sided_confidence, |r| r.covers_upper),
                (CoverageTarget::TwoSided, opts.two_sided_confidence, |r| r.covers_two_sided),
            ];
            for (side, confidence, hit) in targets {
                let c = rows.iter().filter(|r| hit(r)).count() as f64 / kf;
                coverage.push(CoverageRow {
                    config: config.clone(),
                    method: strategy.name().to_string(),
                    lambda: s.lambda(),
                    side,
                    confidence,
                    coverage: c,
                    mc_se: (c * (1.0 - c) / kf).sqrt(),
                    replicates: k,
                });
            }
            let lows: Vec<f64> = rows.iter().map(|r| r.lower_point).collect();
            let ups: Vec<f64> = rows.iter().map(|r| r.upper_point).collect();
            let (ml, sl) = mean_sd(&lows);
            let (mu, su) = mean_sd(&ups);
            points.push(PointSummary {
                config: config.clone(),
                method: strategy.name().to_string(),
                lambda: s.lambda(),
                truth_lower: truth.lower.value,
                truth_upper: truth.upper.value,
                mean_lower: ml,
                mean_upper: mu,
                sd_lower: sl,
                sd_upper: su,
                replicates: k,
            });
        }
    }
    Ok(ReplicationReport {
        dgp: *dgp,
        options: opts.clone(),
        truths,
        records,
        failures,
        coverage,
        points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::methods::lookup;
    use crate::simulation::Configuration;

    #[test]
    fn sharp_bounds_at_unit_level_are_zero_for_c1() {
        let dgp = DgpSpec {
            config: Configuration::C1,
            n: 100,
            p: 4,
            seed: 0,
        };
        let b = true_sharp_bounds(&dgp, &SensitivityLevel::unconfounded(), 200_000, 1).unwrap();
        assert_eq!(b.lower.value, b.upper.value);
        assert!(b.upper.value.abs() < 4.0 * b.upper.se);
        let b15 = true_sharp_bounds(&dgp, &SensitivityLevel::new(1.5).unwrap(), 200_000, 1).unwrap();
        let b2 = true_sharp_bounds(&dgp, &SensitivityLevel::new(2.0).unwrap(), 200_000, 1).unwrap();
        assert!(b2.upper.value > b15.upper.value && b2.lower.value < b15.lower.value);
    }

    #[test]
    fn small_study_is_deterministic() {
        let dgp = DgpSpec {
            config: Configuration::C1,
            n: 120,
            p: 5,
            seed: 0,
        };
        let opts = ReplicationOptions {
            n_reps: 3,
            truth_draws: 20_000,
            ..Default::default()
        };
        let strategies = [lookup("rcal").unwrap(), lookup("rml").unwrap()];
        let plan = FitPlan::default();
        let a = run_replications(&dgp, &strategies, &[1.0, 1.5], &plan, &opts).unwrap();
        let b = run_replications(&dgp, &strategies, &[1.0, 1.5], &plan, &opts).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.records.len() + a.failures.len() * 2, 3 * 2 * 2);
        for r in a.records.iter().filter(|r| r.lambda == 1.0) {
            assert_eq!(r.lower_point, r.upper_point);
        }
        for c in &a.coverage {
            assert!((0.0..=1.0).contains(&c.coverage));
        }
    }
}
