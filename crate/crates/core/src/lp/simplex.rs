use crate::error::{Error, Result};

use super::LinearProgram;

#[derive(Clone, Debug)]
pub struct SimplexOptions {
    pub max_iterations: usize,
    /// Primal feasibility tolerance on bounds and rows.
    pub feasibility_tol: f64,
    /// Reduced-cost tolerance.
    pub optimality_tol: f64,
    pub pivot_tol: f64,
    pub refactor_every: usize,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        SimplexOptions {
            max_iterations: 200_000,
            feasibility_tol: 1e-9,
            optimality_tol: 1e-10,
            pivot_tol: 1e-9,
            refactor_every: 60,
        }
    }
}

/// Final basis, reusable as a warm start for a problem with the same `A` and `c`.
#[derive(Clone, Debug, PartialEq)]
pub struct Basis {
    pub basic: Vec<usize>,
    pub at_upper: Vec<bool>,
}

#[derive(Clone, Debug)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    /// Row multipliers `y` with `c_j - y'A_j` the reduced costs.
    pub duals: Vec<f64>,
    pub iterations: usize,
    pub basis: Option<Basis>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Nb {
    Basic,
    Lower,
    Upper,
    Free,
}

struct Tableau<'a> {
    lp: &'a LinearProgram,
    m: usize,
    n: usize,
    art_sign: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    cost: Vec<f64>,
    col_norm: Vec<f64>,
    x: Vec<f64>,
    state: Vec<Nb>,
    basic: Vec<usize>,
    binv: Vec<f64>,
    since_refactor: usize,
    iterations: usize,
    opts: &'a SimplexOptions,
}

enum Outcome {
    Optimal,
    Unbounded,
}

impl<'a> Tableau<'a> {
    fn new(lp: &'a LinearProgram, opts: &'a SimplexOptions) -> Self {
        let m = lp.nrows;
        let n = lp.ncols;
        let mut lower = lp.lower.clone();
        let mut upper = lp.upper.clone();
        lower.extend(std::iter::repeat_n(0.0, m));
        upper.extend(std::iter::repeat_n(0.0, m));
        let mut col_norm: Vec<f64> = (0..n)
            .map(|j| lp.column(j).iter().map(|v| v * v).sum::<f64>())
            .collect();
        col_norm.extend(std::iter::repeat_n(1.0, m));
        Tableau {
            lp,
            m,
            n,
            art_sign: vec![1.0; m],
            lower,
            upper,
            cost: vec![0.0; n + m],
            col_norm,
            x: vec![0.0; n + m],
            state: vec![Nb::Lower; n + m],
            basic: Vec::new(),
            binv: vec![0.0; m * m],
            since_refactor: 0,
            iterations: 0,
            opts,
        }
    }

    fn resting_value(&self, j: usize, prefer_upper: bool) -> (f64, Nb) {
        let (l, u) = (self.lower[j], self.upper[j]);
        if prefer_upper && u.is_finite() {
            (u, Nb::Upper)
        } else if l.is_finite() {
            (l, Nb::Lower)
        } else if u.is_finite() {
            (u, Nb::Upper)
        } else {
            (0.0, Nb::Free)
        }
    }

    #[inline]
    fn dot_col(&self, j: usize, v: &[f64]) -> f64 {
        if j < self.n {
            self.lp.column(j).iter().zip(v).map(|(a, b)| a * b).sum()
        } else {
            let k = j - self.n;
            self.art_sign[k] * v[k]
        }
    }

    /// `B^{-1} A_j`.
    fn ftran(&self, j: usize) -> Vec<f64> {
        let m = self.m;
        let mut out = vec![0.0; m];
        if j < self.n {
            let col = self.lp.column(j);
            for (r, o) in out.iter_mut().enumerate() {
                let row = &self.binv[r * m..(r + 1) * m];
                *o = row.iter().zip(col).map(|(a, b)| a * b).sum();
            }
        } else {
            let k = j - self.n;
            for (r, o) in out.iter_mut().enumerate() {
                *o = self.binv[r * m + k] * self.art_sign[k];
            }
        }
        out
    }

    /// `c_B' B^{-1}`.
    fn duals(&self) -> Vec<f64> {
        let m = self.m;
        let mut y = vec![0.0; m];
        for (r, &bj) in self.basic.iter().enumerate() {
            let c = self.cost[bj];
            if c != 0.0 {
                let row = &self.binv[r * m..(r + 1) * m];
                for (yk, a) in y.iter_mut().zip(row) {
                    *yk += c * a;
                }
            }
        }
        y
    }

    fn column_dense(&self, j: usize) -> Vec<f64> {
        if j < self.n {
            self.lp.column(j).to_vec()
        } else {
            let mut e = vec![0.0; self.m];
            e[j - self.n] = self.art_sign[j - self.n];
            e
        }
    }

    /// Recomputes `B^{-1}` by Gauss-Jordan elimination and the basic values.
    fn refactor(&mut self) -> Result<()> {
        let m = self.m;
        // augmented [B | I] in row-major
        let mut a = vec![0.0; m * 2 * m];
        for (k, &j) in self.basic.iter().enumerate() {
            let col = self.column_dense(j);
            for r in 0..m {
                a[r * 2 * m + k] = col[r];
            }
        }
        for r in 0..m {
            a[r * 2 * m + m + r] = 1.0;
        }
        let w = 2 * m;
        for c in 0..m {
            let mut piv = c;
            let mut best = a[c * w + c].abs();
            for r in c + 1..m {
                let v = a[r * w + c].abs();
                if v > best {
                    best = v;
                    piv = r;
                }
            }
            if best < 1e-13 {
                return Err(Error::LpNumerical("singular basis".into()));
            }
            if piv != c {
                for k in 0..w {
                    a.swap(c * w + k, piv * w + k);
                }
            }
            let p = a[c * w + c];
            for k in 0..w {
                a[c * w + k] /= p;
            }
            for r in 0..m {
                if r != c {
                    let f = a[r * w + c];
                    if f != 0.0 {
                        for k in 0..w {
                            a[r * w + k] -= f * a[c * w + k];
                        }
                    }
                }
            }
        }
        for r in 0..m {
            self.binv[r * m..(r + 1) * m].copy_from_slice(&a[r * w + m..r * w + 2 * m]);
        }
        self.since_refactor = 0;
        self.recompute_basic_values();
        Ok(())
    }

    fn recompute_basic_values(&mut self) {
        let m = self.m;
        let mut rhs = self.lp.b.clone();
        for j in 0..self.n + m {
            if self.state[j] != Nb::Basic && self.x[j] != 0.0 {
                let xj = self.x[j];
                if j < self.n {
                    for (r, a) in rhs.iter_mut().zip(self.lp.column(j)) {
                        *r -= a * xj;
                    }
                } else {
                    rhs[j - self.n] -= self.art_sign[j - self.n] * xj;
                }
            }
        }
        for r in 0..m {
            let row = &self.binv[r * m..(r + 1) * m];
            let v: f64 = row.iter().zip(&rhs).map(|(a, b)| a * b).sum();
            let j = self.basic[r];
            self.x[j] = v;
        }
    }

    fn pivot(&mut self, r: usize, alpha: &[f64]) {
        let m = self.m;
        let p = alpha[r];
        let (head, tail) = self.binv.split_at_mut(r * m);
        let (prow, rest) = tail.split_at_mut(m);
        for v in prow.iter_mut() {
            *v /= p;
        }
        for (k, &ak) in alpha.iter().enumerate() {
            if k == r || ak == 0.0 {
                continue;
            }
            let row = if k < r {
                &mut head[k * m..(k + 1) * m]
            } else {
                &mut rest[(k - r - 1) * m..(k - r) * m]
            };
            for (v, pv) in row.iter_mut().zip(prow.iter()) {
                *v -= ak * pv;
            }
        }
        self.since_refactor += 1;
    }

    fn eligible(&self, j: usize, d: f64, tol: f64) -> bool {
        match self.state[j] {
            Nb::Basic => false,
            _ if self.lower[j] == self.upper[j] => false,
            Nb::Lower => d < -tol,
            Nb::Upper => d > tol,
            Nb::Free => d.abs() > tol,
        }
    }

    fn primal(&mut self) -> Result<Outcome> {
        let tol = self.opts.optimality_tol;
        let ftol = self.opts.feasibility_tol;
        let ptol = self.opts.pivot_tol;
        let mut degenerate_run = 0usize;
        loop {
            if self.iterations >= self.opts.max_iterations {
                return Err(Error::LpNumerical("simplex iteration limit".into()));
            }
            if self.since_refactor >= self.opts.refactor_every {
                self.refactor()?;
            }
            let y = self.duals();
            let bland = degenerate_run > 50;
            let mut enter = None;
            let mut best = 0.0;
            let mut enter_d = 0.0;
            for j in 0..self.n + self.m {
                if self.state[j] == Nb::Basic || self.lower[j] == self.upper[j] {
                    continue;
                }
                let d = self.cost[j] - self.dot_col(j, &y);
                if self.eligible(j, d, tol) {
                    if bland {
                        enter = Some(j);
                        enter_d = d;
                        break;
                    }
                    let score = d * d / (1.0 + self.col_norm[j]);
                    if score > best {
                        best = score;
                        enter = Some(j);
                        enter_d = d;
                    }
                }
            }
            let Some(q) = enter else {
                return Ok(Outcome::Optimal);
            };
            self.iterations += 1;
            let dir = if enter_d < 0.0 { 1.0 } else { -1.0 };
            let alpha = self.ftran(q);

            // Harris two-pass ratio test
            let mut theta_max = f64::INFINITY;
            for (r, &a) in alpha.iter().enumerate() {
                let a = dir * a;
                let j = self.basic[r];
                if a > ptol && self.lower[j].is_finite() {
                    theta_max = theta_max.min((self.x[j] - self.lower[j] + ftol) / a);
                } else if a < -ptol && self.upper[j].is_finite() {
                    theta_max = theta_max.min((self.upper[j] - self.x[j] + ftol) / -a);
                }
            }
            let flip = if self.lower[q].is_finite() && self.upper[q].is_finite() {
                self.upper[q] - self.lower[q]
            } else {
                f64::INFINITY
            };
            if theta_max.is_infinite() && flip.is_infinite() {
                return Ok(Outcome::Unbounded);
            }
            let mut leave = None;
            let mut leave_theta = f64::INFINITY;
            let mut best_a = 0.0;
            if theta_max.is_finite() {
                for (r, &a0) in alpha.iter().enumerate() {
                    let a = dir * a0;
                    let j = self.basic[r];
                    let lim = if a > ptol && self.lower[j].is_finite() {
                        (self.x[j] - self.lower[j]) / a
                    } else if a < -ptol && self.upper[j].is_finite() {
                        (self.upper[j] - self.x[j]) / -a
                    } else {
                        continue;
                    };
                    if lim <= theta_max && a.abs() > best_a {
                        best_a = a.abs();
                        leave = Some(r);
                        leave_theta = lim.max(0.0);
                    }
                }
            }
            if flip <= leave_theta {
                // bound flip without a basis change
                for (r, &a) in alpha.iter().enumerate() {
                    let j = self.basic[r];
                    self.x[j] -= dir * flip * a;
                }
                if self.state[q] == Nb::Lower {
                    self.x[q] = self.upper[q];
                    self.state[q] = Nb::Upper;
                } else {
                    self.x[q] = self.lower[q];
                    self.state[q] = Nb::Lower;
                }
                degenerate_run = 0;
                continue;
            }
            let r = leave.expect("finite ratio implies a leaving row");
            let theta = leave_theta;
            for (k, &a) in alpha.iter().enumerate() {
                let j = self.basic[k];
                self.x[j] -= dir * theta * a;
            }
            self.x[q] += dir * theta;
            let out = self.basic[r];
            if dir * alpha[r] > 0.0 {
                self.x[out] = self.lower[out];
                self.state[out] = Nb::Lower;
            } else {
                self.x[out] = self.upper[out];
                self.state[out] = Nb::Upper;
            }
            self.state[q] = Nb::Basic;
            self.basic[r] = q;
            self.pivot(r, &alpha);
            if theta <= 1e-12 {
                degenerate_run += 1;
            } else {
                degenerate_run = 0;
            }
        }
    }

    fn primal_infeasibility(&self) -> (f64, Option<usize>) {
        let mut worst = 0.0;
        let mut row = None;
        for (r, &j) in self.basic.iter().enumerate() {
            let v = self.x[j];
            let viol = (self.lower[j] - v).max(v - self.upper[j]);
            if viol > worst {
                worst = viol;
                row = Some(r);
            }
        }
        (worst, row)
    }

    fn dual_feasible(&self) -> bool {
        let y = self.duals();
        let tol = self.opts.optimality_tol * 10.0;
        (0..self.n + self.m).all(|j| {
            if self.state[j] == Nb::Basic || self.lower[j] == self.upper[j] {
                return true;
            }
            let d = self.cost[j] - self.dot_col(j, &y);
            !self.eligible(j, d, tol)
        })
    }

    /// Bounded dual simplex from a dual feasible basis.
    fn dual(&mut self) -> Result<bool> {
        let ftol = self.opts.feasibility_tol;
        let ptol = self.opts.pivot_tol;
        let m = self.m;
        loop {
            if self.iterations >= self.opts.max_iterations {
                return Err(Error::LpNumerical("dual simplex iteration limit".into()));
            }
            if self.since_refactor >= self.opts.refactor_every {
                self.refactor()?;
            }
            let (viol, row) = self.primal_infeasibility();
            if viol <= ftol {
                return Ok(true);
            }
            let r = row.expect("violation implies a row");
            self.iterations += 1;
            let out = self.basic[r];
            let below = self.x[out] < self.lower[out];
            let target = if below { self.lower[out] } else { self.upper[out] };
            let y = self.duals();
            let brow = self.binv[r * m..(r + 1) * m].to_vec();
            let mut enter = None;
            let mut best_ratio = f64::INFINITY;
            let mut best_mag = 0.0;
            for j in 0..self.n + self.m {
                let st = self.state[j];
                if st == Nb::Basic || self.lower[j] == self.upper[j] {
                    continue;
                }
                let arj = self.dot_col(j, &brow);
                if arj.abs() <= ptol {
                    continue;
                }
                // moving x_j in its feasible direction must push x_out toward target
                let ok = match (st, below) {
                    (Nb::Lower, true) => arj < 0.0,
                    (Nb::Upper, true) => arj > 0.0,
                    (Nb::Lower, false) => arj > 0.0,
                    (Nb::Upper, false) => arj < 0.0,
                    (Nb::Free, _) => true,
                    (Nb::Basic, _) => false,
                };
                if !ok {
                    continue;
                }
                let d = self.cost[j] - self.dot_col(j, &y);
                let ratio = d.abs() / arj.abs();
                if ratio < best_ratio - 1e-12 || (ratio <= best_ratio + 1e-12 && arj.abs() > best_mag) {
                    best_ratio = ratio;
                    best_mag = arj.abs();
                    enter = Some(j);
                }
            }
            let Some(q) = enter else {
                return Ok(false);
            };
            let alpha = self.ftran(q);
            let delta = (self.x[out] - target) / alpha[r];
            for (k, &a) in alpha.iter().enumerate() {
                let j = self.basic[k];
                self.x[j] -= delta * a;
            }
            self.x[q] += delta;
            self.x[out] = target;
            self.state[out] = if below { Nb::Lower } else { Nb::Upper };
            self.state[q] = Nb::Basic;
            self.basic[r] = q;
            self.pivot(r, &alpha);
        }
    }

    fn finish(mut self, with_basis: bool) -> Result<LpSolution> {
        self.refactor()?;
        let (viol, _) = self.primal_infeasibility();
        let scale = 1.0 + self.lp.b.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if viol > 1e-7 * scale {
            return Err(Error::LpNumerical(format!("final basis infeasible by {viol:.3e}")));
        }
        // snap tiny bound violations
        for j in 0..self.n {
            self.x[j] = self.x[j].clamp(self.lower[j], self.upper[j]);
        }
        let duals = self.duals();
        let x: Vec<f64> = self.x[..self.n].to_vec();
        let objective = self.lp.objective(&x);
        let basis = if with_basis && self.basic.iter().all(|&j| j < self.n) {
            Some(Basis {
                basic: self.basic.clone(),
                at_upper: (0..self.n).map(|j| self.state[j] == Nb::Upper).collect(),
            })
        } else {
            None
        };
        Ok(LpSolution {
            x,
            objective,
            duals,
            iterations: self.iterations,
            basis,
        })
    }
}

/// Solves from scratch with a two-phase primal simplex.
pub fn solve(lp: &LinearProgram, opts: &SimplexOptions) -> Result<LpSolution> {
    validate(lp)?;
    let m = lp.nrows;
    let n = lp.ncols;
    let mut t = Tableau::new(lp, opts);
    for j in 0..n {
        let (v, s) = t.resting_value(j, false);
        t.x[j] = v;
        t.state[j] = s;
    }
    let mut resid = lp.b.clone();
    for j in 0..n {
        let xj = t.x[j];
        if xj != 0.0 {
            for (r, a) in resid.iter_mut().zip(lp.column(j)) {
                *r -= a * xj;
            }
        }
    }
    t.basic = (n..n + m).collect();
    for k in 0..m {
        t.art_sign[k] = if resid[k] < 0.0 { -1.0 } else { 1.0 };
        t.x[n + k] = resid[k].abs();
        t.state[n + k] = Nb::Basic;
        t.upper[n + k] = f64::INFINITY;
        t.cost[n + k] = 1.0;
        t.binv[k * m + k] = t.art_sign[k];
    }
    if let Outcome::Unbounded = t.primal()? {
        return Err(Error::LpNumerical("phase one reported unbounded".into()));
    }
    t.refactor()?;
    let infeas: f64 = (n..n + m).map(|j| t.x[j].abs()).sum();
    let scale = 1.0 + lp.b.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if infeas > 1e-8 * scale {
        return Err(Error::LpInfeasible);
    }
    // drive artificials out of the basis
    for r in 0..m {
        if t.basic[r] < n {
            continue;
        }
        let row = t.binv[r * m..(r + 1) * m].to_vec();
        let mut best = 1e-9;
        let mut cand = None;
        for j in 0..n {
            if t.state[j] == Nb::Basic {
                continue;
            }
            let v = t.dot_col(j, &row).abs();
            if v > best {
                best = v;
                cand = Some(j);
            }
        }
        if let Some(q) = cand {
            let alpha = t.ftran(q);
            let out = t.basic[r];
            t.x[out] = 0.0;
            t.state[out] = Nb::Lower;
            t.state[q] = Nb::Basic;
            t.basic[r] = q;
            t.pivot(r, &alpha);
        }
    }
    for k in 0..m {
        t.upper[n + k] = 0.0;
        t.cost[n + k] = 0.0;
        if t.state[n + k] != Nb::Basic {
            t.x[n + k] = 0.0;
        }
    }
    t.cost[..n].copy_from_slice(&lp.c);
    t.refactor()?;
    match t.primal()? {
        Outcome::Optimal => t.finish(true),
        Outcome::Unbounded => Err(Error::LpUnbounded),
    }
}

/// Starts from a previous basis when possible (same `A` and `c`, changed `b` or
/// bounds), falling back to a cold solve.
pub fn solve_warm(lp: &LinearProgram, basis: &Basis, opts: &SimplexOptions) -> Result<LpSolution> {
    match try_warm(lp, basis, opts) {
        Some(Ok(sol)) => Ok(sol),
        _ => solve(lp, opts),
    }
}

fn try_warm(lp: &LinearProgram, basis: &Basis, opts: &SimplexOptions) -> Option<Result<LpSolution>> {
    validate(lp).ok()?;
    let m = lp.nrows;
    let n = lp.ncols;
    if basis.basic.len() != m || basis.at_upper.len() != n || basis.basic.iter().any(|&j| j >= n) {
        return None;
    }
    let mut t = Tableau::new(lp, opts);
    t.cost[..n].copy_from_slice(&lp.c);
    for j in 0..n {
        let (v, s) = t.resting_value(j, basis.at_upper[j]);
        t.x[j] = v;
        t.state[j] = s;
    }
    for k in 0..m {
        t.state[n + k] = Nb::Lower;
    }
    for &j in &basis.basic {
        t.state[j] = Nb::Basic;
        t.x[j] = 0.0;
    }
    t.basic = basis.basic.clone();
    t.refactor().ok()?;
    let (viol, _) = t.primal_infeasibility();
    if viol > opts.feasibility_tol {
        if !t.dual_feasible() {
            return None;
        }
        match t.dual() {
            Ok(true) => {}
            Ok(false) => return Some(Err(Error::LpInfeasible)),
            Err(_) => return None,
        }
        if t.refactor().is_err() {
            return None;
        }
    }
    Some(match t.primal() {
        Ok(Outcome::Optimal) => t.finish(true),
        Ok(Outcome::Unbounded) => Err(Error::LpUnbounded),
        Err(e) => Err(e),
    })
}

fn validate(lp: &LinearProgram) -> Result<()> {
    if lp.a.len() != lp.nrows * lp.ncols
        || lp.b.len() != lp.nrows
        || lp.c.len() != lp.ncols
        || lp.lower.len() != lp.ncols
        || lp.upper.len() != lp.ncols
    {
        return Err(Error::LpNumerical("inconsistent problem dimensions".into()));
    }
    if lp.a.iter().chain(&lp.b).chain(&lp.c).any(|v| !v.is_finite()) {
        return Err(Error::LpNumerical("non-finite problem data".into()));
    }
    Ok(())
}
