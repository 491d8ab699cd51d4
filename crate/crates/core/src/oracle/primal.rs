//! Primal linear program over the sensitivity weights of the treated units.
//! Built independently of the quantile solver so that comparing the two
//! certifies the dual representation of the bound.

use crate::error::{Error, Result};
use crate::lp::{self, LinearProgram, SimplexOptions};
use crate::model::{check_loss, propensities, BoundSide, CoefficientVector, ObservedData, SensitivityLevel};

/// Sample bound as an optimization over `λ_i ∈ [1/Λ, Λ]` for treated units.
#[derive(Clone, Debug)]
pub struct PrimalBoundProblem {
    /// Inverse odds `(1 − π̂_i)/π̂_i` per treated unit.
    pub weights: Vec<f64>,
    pub y: Vec<f64>,
    /// Moment rows `h(X_i)` per treated unit, intercept first.
    pub h: Vec<Vec<f64>>,
    /// Full sample size, treated and untreated.
    pub n: usize,
    pub sensitivity: SensitivityLevel,
    /// Half-width of the box on the non-intercept moments; 0 for the exact problem.
    pub relax_slack: f64,
}

#[derive(Clone, Debug)]
pub struct PrimalBoundSolution {
    pub value: f64,
    /// Row multipliers of the moment constraints, intercept first.
    pub multipliers: Vec<f64>,
    /// Optimal `λ_i` per treated unit.
    pub odds_factors: Vec<f64>,
}

impl PrimalBoundProblem {
    /// Problem implied by a propensity fit, with slack `span · λ_β`.
    pub fn from_fit(data: &ObservedData, gamma: &CoefficientVector, s: &SensitivityLevel, lambda_beta: f64) -> Self {
        let (ps, _) = propensities(data.f(), gamma);
        let treated = data.treated_indices();
        PrimalBoundProblem {
            weights: treated.iter().map(|&i| ps[i].weight).collect(),
            y: treated.iter().map(|&i| data.y()[i]).collect(),
            h: treated.iter().map(|&i| data.h().row(i)).collect(),
            n: data.n(),
            sensitivity: *s,
            relax_slack: s.span() * lambda_beta,
        }
    }

    fn validate(&self) -> Result<usize> {
        let k = self.y.len();
        if k == 0 || self.weights.len() != k || self.h.len() != k {
            return Err(Error::InvalidArgument("primal problem needs matching, nonempty treated rows".into()));
        }
        let m = self.h[0].len();
        if m == 0 || self.h.iter().any(|r| r.len() != m) {
            return Err(Error::InvalidArgument("moment rows differ in length".into()));
        }
        if !(self.relax_slack >= 0.0) || self.weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::InvalidArgument("slack and weights must be nonnegative".into()));
        }
        Ok(m)
    }
}

/// Maximizes (upper side) or minimizes (lower side)
/// `(1/n) Σ_treated y_i (1 + w_i λ_i)` subject to `Σ w_i λ_i h_i0 = Σ w_i h_i0`
/// and `|(1/n) Σ w_i (λ_i − 1) h_ij| ≤ slack` for `j ≥ 1`.
pub fn solve_primal_bound(problem: &PrimalBoundProblem, side: BoundSide) -> Result<PrimalBoundSolution> {
    let m = problem.validate()?;
    let nf = problem.n as f64;
    let lam = problem.sensitivity.lambda();
    let sign = side.sign();
    let k = problem.y.len();

    // rows: j = 0..m; columns: λ_i then slack u_j (j ≥ 1)
    let mut prog = LinearProgram::new(m);
    for j in 0..m {
        prog.b[j] = problem.weights.iter().zip(&problem.h).map(|(w, r)| w * r[j]).sum::<f64>() / nf;
    }
    for i in 0..k {
        let w = problem.weights[i];
        let column: Vec<f64> = problem.h[i].iter().map(|v| w * v / nf).collect();
        // minimize the negated objective on the upper side
        prog.add_column(-sign * problem.y[i] * w / nf, 1.0 / lam, lam, &column);
    }
    for j in 1..m {
        let mut column = vec![0.0; m];
        column[j] = -1.0;
        prog.add_column(0.0, -problem.relax_slack, problem.relax_slack, &column);
    }
    let sol = lp::solve(&prog, &SimplexOptions::default())?;
    let base: f64 = problem.y.iter().sum::<f64>() / nf;
    Ok(PrimalBoundSolution {
        value: base - sign * sol.objective,
        multipliers: sol.duals.iter().map(|d| -sign * d).collect(),
        odds_factors: sol.x[..k].to_vec(),
    })
}

/// Closed-form value the primal should attain at a quantile fit `β`:
/// `Ẽ(TY/π̂) ± span{(1/n) Σ T w ρ(y, h'β) + λ_β ‖β_{1:m}‖₁}`, with the check
/// loss at `τ` (upper) or `1 − τ` (lower).
pub fn dual_bound_value(
    data: &ObservedData,
    gamma: &CoefficientVector,
    beta: &CoefficientVector,
    s: &SensitivityLevel,
    lambda_beta: f64,
    side: BoundSide,
) -> f64 {
    let (ps, _) = propensities(data.f(), gamma);
    let q = data.h().mul_vec(beta.values());
    let nf = data.n() as f64;
    let lvl = s.level(side);
    let (mut ipw, mut loss) = (0.0, 0.0);
    for i in data.treated_indices() {
        let y = data.y()[i];
        ipw += y / ps[i].pi;
        loss += ps[i].weight * check_loss(y, q[i], lvl);
    }
    ipw / nf + side.sign() * s.span() * (loss / nf + lambda_beta * beta.penalized_l1())
}
