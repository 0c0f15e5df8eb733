//! Self-contained LP solver: sparse LU plus a bounded-variable revised simplex.

mod lu;
mod simplex;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::lp::SparseLp;
use crate::numfmt::ser_f64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowKind {
    Le,
    Eq,
}

/// `min cost'x  s.t.  A x (<= | =) rhs,  lower <= x <= upper`, with `A`
/// stored column-wise. Bounds may be infinite.
#[derive(Debug, Clone)]
pub struct Problem {
    pub num_rows: usize,
    pub num_cols: usize,
    pub cost: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub col_start: Vec<usize>,
    pub row_idx: Vec<usize>,
    pub values: Vec<f64>,
    pub rhs: Vec<f64>,
    pub row_kind: Vec<RowKind>,
}

impl Problem {
    /// Builds a problem from `(row, col, value)` triplets. Duplicate entries
    /// are summed and exact zeros dropped.
    #[allow(clippy::too_many_arguments)]
    pub fn from_triplets(
        num_rows: usize,
        num_cols: usize,
        triplets: &[(usize, usize, f64)],
        rhs: Vec<f64>,
        row_kind: Vec<RowKind>,
        cost: Vec<f64>,
        lower: Vec<f64>,
        upper: Vec<f64>,
    ) -> Problem {
        assert_eq!(rhs.len(), num_rows);
        assert_eq!(row_kind.len(), num_rows);
        assert_eq!(cost.len(), num_cols);
        assert_eq!(lower.len(), num_cols);
        assert_eq!(upper.len(), num_cols);
        let mut sorted: Vec<(usize, usize, f64)> = triplets.to_vec();
        sorted.sort_by_key(|&(r, c, _)| (c, r));
        let mut col_start = vec![0usize; num_cols + 1];
        let mut row_idx = Vec::with_capacity(sorted.len());
        let mut values: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        let mut cols_of = Vec::with_capacity(sorted.len());
        for (r, c, v) in sorted {
            assert!(
                r < num_rows && c < num_cols,
                "triplet ({r}, {c}) out of range"
            );
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                row_idx.push(r);
                values.push(v);
                cols_of.push(c);
                last = Some((r, c));
            }
        }
        let mut keep_rows = Vec::with_capacity(row_idx.len());
        let mut keep_vals = Vec::with_capacity(values.len());
        for ((r, v), c) in row_idx.into_iter().zip(values).zip(cols_of) {
            if v != 0.0 {
                keep_rows.push(r);
                keep_vals.push(v);
                col_start[c + 1] += 1;
            }
        }
        for c in 0..num_cols {
            col_start[c + 1] += col_start[c];
        }
        Problem {
            num_rows,
            num_cols,
            cost,
            lower,
            upper,
            col_start,
            row_idx: keep_rows,
            values: keep_vals,
            rhs,
            row_kind,
        }
    }

    /// `A x` computed with compensated summation.
    pub fn row_activity(&self, x: &[f64]) -> Vec<f64> {
        let mut sums = vec![Neumaier::default(); self.num_rows];
        for j in 0..self.num_cols {
            for e in self.col_start[j]..self.col_start[j + 1] {
                sums[self.row_idx[e]].add(self.values[e] * x[j]);
            }
        }
        sums.iter().map(Neumaier::total).collect()
    }

    /// Largest violation of any row or bound at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        self.violations(x)
            .into_iter()
            .fold(0.0, |a, (_, v)| a.max(v))
    }

    /// Per-row violations followed by per-variable bound violations.
    fn violations(&self, x: &[f64]) -> Vec<(usize, f64)> {
        let ax = self.row_activity(x);
        let mut out = Vec::with_capacity(self.num_rows + self.num_cols);
        for i in 0..self.num_rows {
            let r = ax[i] - self.rhs[i];
            let v = match self.row_kind[i] {
                RowKind::Le => r.max(0.0),
                RowKind::Eq => r.abs(),
            };
            out.push((i, v));
        }
        for j in 0..self.num_cols {
            let v = (self.lower[j] - x[j]).max(x[j] - self.upper[j]).max(0.0);
            out.push((self.num_rows + j, v));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Status {
    Optimal,
    Infeasible,
    Unbounded,
    IterationLimit,
}

#[derive(Debug, Clone, Copy)]
pub struct SolveOptions {
    pub feas_tol: f64,
    pub opt_tol: f64,
    /// Defaults to 50 * (rows + cols).
    pub max_iter: Option<usize>,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            feas_tol: 1e-9,
            opt_tol: 1e-9,
            max_iter: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    /// Primal values of the structural variables.
    pub y: Vec<f64>,
    pub objective: f64,
    pub status: Status,
    pub iterations: usize,
    pub max_violation: f64,
    /// Row duals (nonpositive on `<=` rows at a minimum).
    pub duals: Vec<f64>,
    pub reduced_costs: Vec<f64>,
}

/// An initial point and basis. Each `(col, row)` pair makes structural
/// column `col` basic in place of the slack of `row`; all other structurals
/// start nonbasic at their value in `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct WarmStart {
    pub x: Vec<f64>,
    pub basic: Vec<(usize, usize)>,
}

/// Solves a general problem from the all-slack basis. Never panics on
/// numerical trouble; the outcome is reported through `status`.
pub fn solve_problem(p: &Problem, opts: &SolveOptions) -> LpSolution {
    simplex::run(p, opts, None)
}

/// Same as [`solve_problem`] but starting from `start`. A singular start
/// basis is repaired with slacks.
pub fn solve_problem_from(p: &Problem, opts: &SolveOptions, start: &WarmStart) -> LpSolution {
    assert_eq!(start.x.len(), p.num_cols, "warm start has the wrong length");
    simplex::run(p, opts, Some(start))
}

/// Solves an assembled dual LP. Free multipliers are kept free, not split.
/// The simplex starts from a crash basis built from approximate multipliers
/// (see [`SparseLp::crash`]), which cuts the pivot count from about `n` to
/// the handful of samples whose side of the boundary the estimate got wrong.
pub fn solve(lp: &SparseLp, opts: &SolveOptions) -> LpSolution {
    let start = lp.crash(&lp.approx_multipliers());
    solve_problem_from(&lp.to_problem(), opts, &start)
}

/// [`solve`] without the crash basis.
pub fn solve_cold(lp: &SparseLp, opts: &SolveOptions) -> LpSolution {
    solve_problem(&lp.to_problem(), opts)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CertificateReport {
    #[serde(serialize_with = "ser_f64")]
    pub max_violation: f64,
    pub worst_row: usize,
    #[serde(serialize_with = "ser_f64")]
    pub objective: f64,
    #[serde(serialize_with = "ser_f64")]
    pub objective_delta: f64,
    #[serde(serialize_with = "ser_f64")]
    pub complementarity: f64,
}

/// Recomputes feasibility, the objective and complementary slackness of an
/// optimal solution with compensated sums. Fails when the violation or the
/// objective discrepancy exceeds `10 * tol`. A failing objective check
/// reports `row = num_rows`.
pub fn check_certificate(lp: &SparseLp, sol: &LpSolution, tol: f64) -> Result<CertificateReport> {
    check_problem_certificate(&lp.to_problem(), sol, tol)
}

pub fn check_problem_certificate(
    p: &Problem,
    sol: &LpSolution,
    tol: f64,
) -> Result<CertificateReport> {
    if sol.status != Status::Optimal {
        return Err(Error::CertificateFailure {
            row: 0,
            reason: format!("status is {:?}", sol.status),
        });
    }
    if sol.y.len() != p.num_cols {
        return Err(Error::DimensionMismatch {
            expected: p.num_cols,
            got: sol.y.len(),
        });
    }
    let limit = 10.0 * tol;
    let (worst_row, max_violation) = p.violations(&sol.y).into_iter().fold(
        (0, 0.0f64),
        |acc, (i, v)| if v > acc.1 { (i, v) } else { acc },
    );
    if max_violation > limit {
        return Err(Error::CertificateFailure {
            row: worst_row,
            reason: format!("violation {max_violation:e} exceeds {limit:e}"),
        });
    }
    let mut obj = Neumaier::default();
    for (c, x) in p.cost.iter().zip(&sol.y) {
        obj.add(c * x);
    }
    let objective = obj.total();
    let objective_delta = (objective - sol.objective).abs();
    if objective_delta > limit * objective.abs().max(1.0) {
        return Err(Error::CertificateFailure {
            row: p.num_rows,
            reason: format!(
                "objective recomputes to {objective:e}, reported {:e}",
                sol.objective
            ),
        });
    }
    let ax = p.row_activity(&sol.y);
    let mut complementarity = 0.0f64;
    if sol.duals.len() == p.num_rows {
        for i in 0..p.num_rows {
            complementarity = complementarity.max((sol.duals[i] * (p.rhs[i] - ax[i])).abs());
        }
    }
    if sol.reduced_costs.len() == p.num_cols {
        for j in 0..p.num_cols {
            let x = sol.y[j];
            let gap = (x - p.lower[j]).min(p.upper[j] - x);
            let gap = if gap.is_finite() { gap } else { 1.0 };
            complementarity = complementarity.max((sol.reduced_costs[j] * gap).abs());
        }
    }
    Ok(CertificateReport {
        max_violation,
        worst_row,
        objective,
        objective_delta,
        complementarity,
    })
}

/// Neumaier's variant of Kahan summation.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct Neumaier {
    sum: f64,
    comp: f64,
}

impl Neumaier {
    pub fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn total(&self) -> f64 {
        self.sum + self.comp
    }
}
