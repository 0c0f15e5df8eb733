//! Bounded-variable primal revised simplex with a composite phase 1.
//!
//! Every row gets a slack column, so the all-slack basis is always available
//! as a starting point and as a repair for singular bases. Nonbasic variables
//! are allowed to sit strictly between their bounds (free variables start at
//! zero) and may move in either direction.

use super::lu::Lu;
use super::{LpSolution, Problem, RowKind, SolveOptions, Status, WarmStart};

const PIVOT_TOL: f64 = 1e-9;
const REFACTOR_EVERY: usize = 50;
const DEGENERATE_STEP: f64 = 1e-12;

struct State<'a> {
    p: &'a Problem,
    m: usize,
    n: usize,
    lower: Vec<f64>,
    upper: Vec<f64>,
    cost: Vec<f64>,
    x: Vec<f64>,
    head: Vec<usize>,
    // usize::MAX for nonbasic
    pos_of: Vec<usize>,
    lu: Lu,
}

impl<'a> State<'a> {
    fn column(&self, j: usize, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        if j < self.n {
            for e in self.p.col_start[j]..self.p.col_start[j + 1] {
                out[self.p.row_idx[e]] = self.p.values[e];
            }
        } else {
            out[j - self.n] = 1.0;
        }
    }

    fn sparse_column(&self, j: usize) -> Vec<(usize, f64)> {
        if j < self.n {
            (self.p.col_start[j]..self.p.col_start[j + 1])
                .map(|e| (self.p.row_idx[e], self.p.values[e]))
                .collect()
        } else {
            vec![(j - self.n, 1.0)]
        }
    }

    /// Refactors the basis, swapping in slacks for dependent columns, and
    /// recomputes the basic values from the nonbasic ones.
    fn refactor(&mut self) {
        loop {
            let cols: Vec<Vec<(usize, f64)>> =
                self.head.iter().map(|&j| self.sparse_column(j)).collect();
            match Lu::factor(self.m, cols) {
                Ok(lu) => {
                    self.lu = lu;
                    break;
                }
                Err(sing) => {
                    log::debug!("basis singular, replacing {} columns", sing.positions.len());
                    for (&pos, &row) in sing.positions.iter().zip(&sing.rows) {
                        let out = self.head[pos];
                        self.pos_of[out] = usize::MAX;
                        self.x[out] = self.x[out].clamp(self.lower[out], self.upper[out]);
                        let slack = self.n + row;
                        self.head[pos] = slack;
                        self.pos_of[slack] = pos;
                    }
                }
            }
        }
        let mut r = self.p.rhs.clone();
        for j in 0..self.n {
            if self.pos_of[j] == usize::MAX && self.x[j] != 0.0 {
                for e in self.p.col_start[j]..self.p.col_start[j + 1] {
                    r[self.p.row_idx[e]] -= self.p.values[e] * self.x[j];
                }
            }
        }
        for i in 0..self.m {
            let s = self.n + i;
            if self.pos_of[s] == usize::MAX {
                r[i] -= self.x[s];
            }
        }
        self.lu.ftran(&mut r);
        for (pos, &j) in self.head.iter().enumerate() {
            self.x[j] = r[pos];
        }
    }

    fn reduced_cost(&self, j: usize, y: &[f64], c: f64) -> f64 {
        if j < self.n {
            let mut d = c;
            for e in self.p.col_start[j]..self.p.col_start[j + 1] {
                d -= self.p.values[e] * y[self.p.row_idx[e]];
            }
            d
        } else {
            c - y[j - self.n]
        }
    }
}

pub(super) fn run(p: &Problem, opts: &SolveOptions, start: Option<&WarmStart>) -> LpSolution {
    let m = p.num_rows;
    let n = p.num_cols;
    let total = n + m;
    let ptol = 0.5 * opts.feas_tol;
    let dtol = opts.opt_tol;
    let max_iter = opts.max_iter.unwrap_or(50 * (m + n));

    let mut lower = p.lower.clone();
    let mut upper = p.upper.clone();
    let mut cost = p.cost.clone();
    for kind in &p.row_kind {
        lower.push(0.0);
        upper.push(match kind {
            RowKind::Le => f64::INFINITY,
            RowKind::Eq => 0.0,
        });
        cost.push(0.0);
    }
    let mut x = vec![0.0; total];
    for j in 0..n {
        let v = start.map_or(0.0, |s| s.x[j]);
        x[j] = if v.is_finite() {
            v.clamp(lower[j], upper[j])
        } else {
            0.0f64.clamp(lower[j], upper[j])
        };
    }
    let mut pos_of = vec![usize::MAX; total];
    let mut head: Vec<usize> = (n..total).collect();
    if let Some(s) = start {
        for &(col, row) in &s.basic {
            if col < n && row < m && head[row] == n + row {
                head[row] = col;
            }
        }
    }
    for (pos, &j) in head.iter().enumerate() {
        pos_of[j] = pos;
    }
    let mut st = State {
        p,
        m,
        n,
        lower,
        upper,
        cost,
        x,
        head,
        pos_of,
        lu: Lu::factor(0, Vec::new()).ok().unwrap(),
    };
    st.refactor();

    let mut y = vec![0.0; m];
    let mut w = vec![0.0; m];
    let mut cb = vec![0.0; m];
    let mut iterations = 0usize;
    let mut fresh = true;
    let mut degenerate_streak = 0usize;
    let mut bland = false;
    let mut phase1_cost = vec![0.0; m];

    let status = loop {
        // Phase costs on the basis.
        let mut infeasible = false;
        for (pos, &j) in st.head.iter().enumerate() {
            let xj = st.x[j];
            phase1_cost[pos] = if xj < st.lower[j] - ptol {
                -1.0
            } else if xj > st.upper[j] + ptol {
                1.0
            } else {
                0.0
            };
            infeasible |= phase1_cost[pos] != 0.0;
        }
        for pos in 0..m {
            cb[pos] = if infeasible {
                phase1_cost[pos]
            } else {
                st.cost[st.head[pos]]
            };
        }
        y.copy_from_slice(&cb);
        st.lu.btran(&mut y);

        // Pricing.
        let mut entering: Option<(usize, f64)> = None;
        for j in 0..total {
            if st.pos_of[j] != usize::MAX {
                continue;
            }
            let c = if infeasible { 0.0 } else { st.cost[j] };
            let d = st.reduced_cost(j, &y, c);
            let can_up = st.x[j] < st.upper[j] - ptol;
            let can_down = st.x[j] > st.lower[j] + ptol;
            if (d < -dtol && can_up) || (d > dtol && can_down) {
                if bland {
                    entering = Some((j, d));
                    break;
                }
                if entering.is_none_or(|(_, bd)| d.abs() > bd.abs()) {
                    entering = Some((j, d));
                }
            }
        }

        let Some((q, dq)) = entering else {
            if !fresh {
                st.refactor();
                fresh = true;
                continue;
            }
            break if infeasible {
                Status::Infeasible
            } else {
                Status::Optimal
            };
        };
        if iterations >= max_iter {
            break Status::IterationLimit;
        }
        iterations += 1;

        let dir = if dq < 0.0 { 1.0 } else { -1.0 };
        st.column(q, &mut w);
        st.lu.ftran(&mut w);

        // Ratio test: rate of change of each basic variable per unit step.
        let bound_for = |pos: usize, rate: f64, st: &State| -> Option<f64> {
            let j = st.head[pos];
            let xj = st.x[j];
            let (l, u) = (st.lower[j], st.upper[j]);
            let target = if rate < 0.0 {
                if xj > u + ptol {
                    u
                } else if xj >= l - ptol {
                    l
                } else {
                    return None;
                }
            } else if xj < l - ptol {
                l
            } else if xj <= u + ptol {
                u
            } else {
                return None;
            };
            if target.is_finite() {
                Some(target)
            } else {
                None
            }
        };

        let mut leave: Option<(usize, f64, f64)> = None; // (pos, theta, target)
        if bland {
            let mut best: Option<(usize, f64, f64)> = None;
            for pos in 0..m {
                let rate = -dir * w[pos];
                if rate.abs() <= PIVOT_TOL {
                    continue;
                }
                let Some(t) = bound_for(pos, rate, &st) else {
                    continue;
                };
                let theta = ((t - st.x[st.head[pos]]) / rate).max(0.0);
                let better = match best {
                    None => true,
                    Some((bp, bt, _)) => {
                        theta < bt - 1e-15 || (theta <= bt + 1e-15 && st.head[pos] < st.head[bp])
                    }
                };
                if better {
                    best = Some((pos, theta, t));
                }
            }
            leave = best;
        } else {
            let mut theta_max = f64::INFINITY;
            for pos in 0..m {
                let rate = -dir * w[pos];
                if rate.abs() <= PIVOT_TOL {
                    continue;
                }
                let Some(t) = bound_for(pos, rate, &st) else {
                    continue;
                };
                let dist = (t - st.x[st.head[pos]]) / rate;
                theta_max = theta_max.min(dist + ptol / rate.abs());
            }
            if theta_max.is_finite() {
                let mut best_rate = 0.0;
                for pos in 0..m {
                    let rate = -dir * w[pos];
                    if rate.abs() <= PIVOT_TOL {
                        continue;
                    }
                    let Some(t) = bound_for(pos, rate, &st) else {
                        continue;
                    };
                    let dist = (t - st.x[st.head[pos]]) / rate;
                    if dist <= theta_max && rate.abs() > best_rate {
                        best_rate = rate.abs();
                        leave = Some((pos, dist.max(0.0), t));
                    }
                }
            }
        }

        let range = if dir > 0.0 {
            st.upper[q] - st.x[q]
        } else {
            st.x[q] - st.lower[q]
        };
        let (theta, leaving) = match leave {
            Some((pos, theta, t)) if theta < range => (theta, Some((pos, t))),
            _ if range.is_finite() => (range, None),
            _ => break Status::Unbounded,
        };

        if theta > 0.0 {
            for pos in 0..m {
                if w[pos] != 0.0 {
                    let j = st.head[pos];
                    st.x[j] -= dir * theta * w[pos];
                }
            }
        }
        st.x[q] += dir * theta;
        fresh = false;

        if let Some((r, t)) = leaving {
            let out = st.head[r];
            st.x[out] = t;
            st.pos_of[out] = usize::MAX;
            st.head[r] = q;
            st.pos_of[q] = r;
            st.lu.push_eta(r, &w);
            if st.lu.num_etas() >= REFACTOR_EVERY {
                st.refactor();
            }
        } else {
            st.x[q] = if dir > 0.0 { st.upper[q] } else { st.lower[q] };
        }

        if theta <= DEGENERATE_STEP {
            degenerate_streak += 1;
            if degenerate_streak >= m.max(1) && !bland {
                log::debug!("switching to smallest-index pricing after {degenerate_streak} degenerate pivots");
                bland = true;
            }
        } else {
            degenerate_streak = 0;
            bland = false;
        }
    };

    // Final dual information from the phase 2 costs.
    for pos in 0..m {
        cb[pos] = st.cost[st.head[pos]];
    }
    y.copy_from_slice(&cb);
    st.lu.btran(&mut y);
    let reduced_costs: Vec<f64> = (0..n).map(|j| st.reduced_cost(j, &y, st.cost[j])).collect();

    let x = st.x[..n].to_vec();
    let objective: f64 = x.iter().zip(&p.cost).map(|(a, b)| a * b).sum();
    let max_violation = p.max_violation(&x);
    LpSolution {
        y: x,
        objective,
        status,
        iterations,
        max_violation,
        duals: y,
        reduced_costs,
    }
}
