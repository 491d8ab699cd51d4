//! Dense linear programming back end.
//!
//! Problems are stated as
//!
//! ```text
//! minimize    c'x
//! subject to  A x = b,   lower <= x <= upper
//! ```
//!
//! with possibly infinite bounds. The solver is a bounded-variable revised
//! simplex with an explicit basis inverse, which is adequate for the problem
//! sizes here (a few hundred rows). Row multipliers are reported so callers can
//! read off dual solutions.

mod simplex;

pub use simplex::{solve, solve_warm, Basis, LpSolution, SimplexOptions};

/// A linear program in bounded equality form. `a` is column-major, `nrows x ncols`.
#[derive(Clone, Debug)]
pub struct LinearProgram {
    pub nrows: usize,
    pub ncols: usize,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl LinearProgram {
    pub fn new(nrows: usize) -> Self {
        LinearProgram {
            nrows,
            ncols: 0,
            a: Vec::new(),
            b: vec![0.0; nrows],
            c: Vec::new(),
            lower: Vec::new(),
            upper: Vec::new(),
        }
    }

    /// Appends a column and returns its index.
    pub fn add_column(&mut self, cost: f64, lower: f64, upper: f64, column: &[f64]) -> usize {
        assert_eq!(column.len(), self.nrows, "column length must equal row count");
        assert!(lower <= upper, "empty bound interval");
        self.a.extend_from_slice(column);
        self.c.push(cost);
        self.lower.push(lower);
        self.upper.push(upper);
        self.ncols += 1;
        self.ncols - 1
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.a[j * self.nrows..(j + 1) * self.nrows]
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        self.c.iter().zip(x).map(|(c, x)| c * x).sum()
    }

    /// Largest violation of `A x = b` and of the bounds.
    pub fn max_infeasibility(&self, x: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for r in 0..self.nrows {
            let mut s = -self.b[r];
            for j in 0..self.ncols {
                s += self.a[j * self.nrows + r] * x[j];
            }
            worst = worst.max(s.abs());
        }
        for j in 0..self.ncols {
            worst = worst.max(self.lower[j] - x[j]).max(x[j] - self.upper[j]);
        }
        worst
    }
}
