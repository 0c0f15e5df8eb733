//! The dual problem written as an explicit sparse LP over `y = (zeta, lambda, gamma)`.
//!
//! Each sample contributes one slack `zeta_i >= 0` and two rows encoding
//! `zeta_i >= G_i` as the maximum of its two affine pieces.

use std::fmt::Write as _;

use crate::dual::{group_sizes, WeightedSample};
use crate::error::{Error, Result};
use crate::numfmt::f17;
use crate::problem::{Multipliers, ProblemConfig};
use crate::solver::{Problem, RowKind, WarmStart};

#[derive(Debug, Clone, PartialEq)]
pub struct SparseLp {
    pub n: usize,
    pub k: usize,
    /// Objective over `n + 2K` variables.
    pub c: Vec<f64>,
    /// Right-hand side over `2n` rows, `A y <= b`.
    pub b: Vec<f64>,
    /// Coordinate form, row-major in assembly order.
    pub row: Vec<usize>,
    pub col: Vec<usize>,
    pub val: Vec<f64>,
    /// True for the `zeta` block, false for the free multipliers.
    pub nonneg: Vec<bool>,
    /// Input index of the sample behind each `zeta` variable.
    pub sample_of: Vec<usize>,
    /// Group of each `zeta` variable.
    pub group_of: Vec<usize>,
}

impl SparseLp {
    pub fn num_vars(&self) -> usize {
        self.n + 2 * self.k
    }

    pub fn num_rows(&self) -> usize {
        2 * self.n
    }

    pub fn nnz(&self) -> usize {
        self.val.len()
    }

    /// `4n + nK`.
    pub fn nnz_bound(&self) -> usize {
        4 * self.n + self.n * self.k
    }

    pub fn to_problem(&self) -> Problem {
        let triplets: Vec<(usize, usize, f64)> = self
            .row
            .iter()
            .zip(&self.col)
            .zip(&self.val)
            .map(|((&r, &c), &v)| (r, c, v))
            .collect();
        let lower = self
            .nonneg
            .iter()
            .map(|&nn| if nn { 0.0 } else { f64::NEG_INFINITY })
            .collect();
        Problem::from_triplets(
            self.num_rows(),
            self.num_vars(),
            &triplets,
            self.b.clone(),
            vec![RowKind::Le; self.num_rows()],
            self.c.clone(),
            lower,
            vec![f64::INFINITY; self.num_vars()],
        )
    }

    /// Debug text: header `n K`, a line with `c`, a line with `b`, then one
    /// `row col value` triple per nonzero.
    pub fn dump(&self) -> String {
        let mut out = format!("{} {}\n", self.n, self.k);
        let join = |xs: &[f64]| xs.iter().map(|&x| f17(x)).collect::<Vec<_>>().join(" ");
        out.push_str(&join(&self.c));
        out.push('\n');
        out.push_str(&join(&self.b));
        out.push('\n');
        for i in 0..self.nnz() {
            let _ = writeln!(out, "{} {} {}", self.row[i], self.col[i], f17(self.val[i]));
        }
        out
    }
}

/// Per-sample data for evaluating the objective with the slacks and lambda
/// profiled out: `zeta_j = max(0, key_j - lambda_s)` where
/// `key_j = max(-b_j, gamma-part_j - b_{n+j})`.
struct Profile<'a> {
    lp: &'a SparseLp,
    // gamma coefficients of row n + j, K per sample
    coef: Vec<f64>,
    members: Vec<Vec<usize>>,
    uniform: Vec<bool>,
}

impl<'a> Profile<'a> {
    fn new(lp: &'a SparseLp) -> Self {
        let (n, k) = (lp.n, lp.k);
        let mut coef = vec![0.0; n * k];
        for e in 0..lp.nnz() {
            let (r, c) = (lp.row[e], lp.col[e]);
            if r >= n && c >= n + k {
                coef[(r - n) * k + (c - n - k)] += lp.val[e];
            }
        }
        let mut members = vec![Vec::new(); k];
        for (j, &g) in lp.group_of.iter().enumerate() {
            members[g].push(j);
        }
        let uniform = members
            .iter()
            .map(|m| {
                m.first()
                    .is_some_and(|&f| m.iter().all(|&j| lp.c[j] == lp.c[f]))
            })
            .collect();
        Profile {
            lp,
            coef,
            members,
            uniform,
        }
    }

    fn key(&self, j: usize, gamma: &[f64]) -> f64 {
        let (n, k) = (self.lp.n, self.lp.k);
        let part: f64 = self.coef[j * k..(j + 1) * k]
            .iter()
            .zip(gamma)
            .map(|(a, g)| a * g)
            .sum();
        (-self.lp.b[j]).max(part - self.lp.b[n + j])
    }

    /// Exact minimizing lambda for fixed gamma, and the objective there.
    fn eval(&self, gamma: &[f64]) -> (Vec<f64>, f64) {
        let (n, k) = (self.lp.n, self.lp.k);
        let mut lambda = vec![0.0; k];
        let mut obj = 0.0;
        let mut keys: Vec<(f64, f64)> = Vec::new();
        for s in 0..k {
            let target = self.lp.c[n + s];
            keys.clear();
            keys.extend(
                self.members[s]
                    .iter()
                    .map(|&j| (self.key(j, gamma), self.lp.c[j])),
            );
            let len = keys.len();
            let l = if self.uniform[s] {
                // weights are equal: the answer is an order statistic
                let w = keys[0].1;
                let idx = (((target - 1e-12) / w).ceil().max(1.0) as usize).min(len) - 1;
                let (_, v, _) = keys.select_nth_unstable_by(idx, |a, b| b.0.total_cmp(&a.0));
                v.0
            } else {
                keys.sort_by(|a, b| b.0.total_cmp(&a.0));
                let mut cum = 0.0;
                let mut chosen = keys[len - 1].0;
                for &(key, w) in keys.iter() {
                    cum += w;
                    if cum >= target - 1e-12 {
                        chosen = key;
                        break;
                    }
                }
                chosen
            };
            lambda[s] = l;
            obj += target * l
                + keys
                    .iter()
                    .map(|&(key, w)| w * (key - l).max(0.0))
                    .sum::<f64>();
        }
        (lambda, obj)
    }
}

impl SparseLp {
    /// Cheap approximate minimizer used to seed the simplex. Lambda is exact
    /// given gamma; gamma is found by cyclic golden-section searches along
    /// `e_t - e_{K-1}`, which keeps `sum(gamma) = 0`.
    pub fn approx_multipliers(&self) -> Multipliers {
        let k = self.k;
        let prof = Profile::new(self);
        let mut gamma = vec![0.0; k];
        let sweeps = match k {
            1 => 0,
            2 => 1,
            _ => 6,
        };
        let ratio = (5f64.sqrt() - 1.0) / 2.0;
        let mut width = 4.0;
        for _ in 0..sweeps {
            for t in 0..k - 1 {
                let at = |step: f64| {
                    let mut g = gamma.clone();
                    g[t] += step;
                    g[k - 1] -= step;
                    prof.eval(&g).1
                };
                let (mut lo, mut hi) = (-width, width);
                let mut x1 = hi - ratio * (hi - lo);
                let mut x2 = lo + ratio * (hi - lo);
                let (mut f1, mut f2) = (at(x1), at(x2));
                while hi - lo > 1e-7 {
                    if f1 <= f2 {
                        hi = x2;
                        x2 = x1;
                        f2 = f1;
                        x1 = hi - ratio * (hi - lo);
                        f1 = at(x1);
                    } else {
                        lo = x1;
                        x1 = x2;
                        f1 = f2;
                        x2 = lo + ratio * (hi - lo);
                        f2 = at(x2);
                    }
                }
                let step = 0.5 * (lo + hi);
                if at(step) < at(0.0) {
                    gamma[t] += step;
                    gamma[k - 1] -= step;
                }
            }
            width = (width * 0.5).max(0.25);
        }
        let (lambda, _) = prof.eval(&gamma);
        Multipliers { lambda, gamma }
    }

    /// Starting point for the simplex at the given multipliers: slacks at
    /// their smallest feasible values, each positive slack basic on the row
    /// that binds it, and the free multipliers nonbasic.
    pub fn crash(&self, m: &Multipliers) -> WarmStart {
        let (n, k) = (self.n, self.k);
        let prof = Profile::new(self);
        let mut x = vec![0.0; self.num_vars()];
        let mut basic = Vec::new();
        for j in 0..n {
            let s = self.group_of[j];
            let part: f64 = prof.coef[j * k..(j + 1) * k]
                .iter()
                .zip(&m.gamma)
                .map(|(a, g)| a * g)
                .sum();
            let v1 = -self.b[j] - m.lambda[s];
            let v2 = part - self.b[n + j] - m.lambda[s];
            let z = v1.max(v2);
            if z > 0.0 {
                x[j] = z;
                basic.push((j, if v1 >= v2 { j } else { n + j }));
            }
        }
        x[n..n + k].copy_from_slice(&m.lambda);
        x[n + k..].copy_from_slice(&m.gamma);
        WarmStart { x, basic }
    }
}

/// Assembles the LP for a plain empirical sample. Weights must be uniform
/// within each group; the slack costs are then `1/n_s`.
pub fn assemble(samples: &[WeightedSample], cfg: &ProblemConfig) -> Result<SparseLp> {
    let sizes = group_sizes(samples.iter().map(|w| w.group), cfg.k)?;
    let mut first = vec![f64::NAN; cfg.k];
    for w in samples {
        let f = &mut first[w.group];
        if f.is_nan() {
            *f = w.weight;
        } else if (w.weight - *f).abs() > 1e-12 * f.abs() {
            return Err(Error::NonUniformWeights(w.group));
        }
    }
    build(samples, cfg, |w| 1.0 / sizes[w.group] as f64)
}

/// Same system with slack costs equal to the sample weights, for discrete
/// populations with arbitrary atom masses.
pub fn assemble_weighted(samples: &[WeightedSample], cfg: &ProblemConfig) -> Result<SparseLp> {
    group_sizes(samples.iter().map(|w| w.group), cfg.k)?;
    build(samples, cfg, |w| w.weight)
}

fn build(
    samples: &[WeightedSample],
    cfg: &ProblemConfig,
    cost: impl Fn(&WeightedSample) -> f64,
) -> Result<SparseLp> {
    let k = cfg.k;
    let n = samples.len();
    let abar = cfg.alpha_bar();
    // Groups ascending, input order within a group.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| samples[i].group);

    let mut c = Vec::with_capacity(n + 2 * k);
    for &i in &order {
        c.push(cost(&samples[i]));
    }
    c.extend_from_slice(&cfg.alpha);
    c.extend(std::iter::repeat_n(0.0, k));

    let mut b = vec![0.0; 2 * n];
    let cap = 4 * n + n * k;
    let (mut row, mut col, mut val) = (
        Vec::with_capacity(cap),
        Vec::with_capacity(cap),
        Vec::with_capacity(cap),
    );
    let mut push = |r: usize, cc: usize, v: f64| {
        if v != 0.0 {
            row.push(r);
            col.push(cc);
            val.push(v);
        }
    };
    for (j, &i) in order.iter().enumerate() {
        let s = samples[i].group;
        let ratio = cfg.p[s] / abar;
        b[j] = ratio * samples[i].effective_score;
        push(j, j, -1.0);
        push(j, n + s, -1.0);
    }
    for (j, &i) in order.iter().enumerate() {
        let s = samples[i].group;
        let ratio = cfg.p[s] / abar;
        b[n + j] = ratio * (1.0 - samples[i].effective_score);
        push(n + j, j, -1.0);
        push(n + j, n + s, -1.0);
        for t in 0..k {
            let coef = if t == s {
                ratio - 1.0 / cfg.alpha[s]
            } else {
                ratio
            };
            push(n + j, n + k + t, coef);
        }
    }
    let mut nonneg = vec![true; n];
    nonneg.extend(std::iter::repeat_n(false, 2 * k));
    let group_of = order.iter().map(|&i| samples[i].group).collect();
    Ok(SparseLp {
        n,
        k,
        c,
        b,
        row,
        col,
        val,
        nonneg,
        sample_of: order,
        group_of,
    })
}

/// Splits an LP solution into multipliers and per-sample slacks, the latter
/// in the original sample order.
pub fn extract(lp: &SparseLp, y: &[f64]) -> Result<(Multipliers, Vec<f64>)> {
    if y.len() != lp.num_vars() {
        return Err(Error::DimensionMismatch {
            expected: lp.num_vars(),
            got: y.len(),
        });
    }
    let (n, k) = (lp.n, lp.k);
    let m = Multipliers {
        lambda: y[n..n + k].to_vec(),
        gamma: y[n + k..n + 2 * k].to_vec(),
    };
    let mut slack = vec![0.0; n];
    for (j, &i) in lp.sample_of.iter().enumerate() {
        slack[i] = y[j];
    }
    Ok((m, slack))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dual::{dual_objective, g_value};
    use proptest::prelude::*;

    fn ws(group: usize, e: f64, n: usize) -> WeightedSample {
        WeightedSample {
            group,
            effective_score: e,
            weight: 1.0 / n as f64,
        }
    }

    #[test]
    fn single_sample_example() {
        let cfg = ProblemConfig::new(vec![0.8], vec![1.0], 0.0, 0.05, 0).unwrap();
        let lp = assemble(&[ws(0, 0.3, 1)], &cfg).unwrap();
        assert_eq!(lp.b, vec![0.375, 0.875]);
        assert_eq!(lp.c, vec![1.0, 0.8, 0.0]);
        // the gamma coefficient cancels exactly and is not stored
        assert!(!lp.col.contains(&2));
        assert_eq!(lp.nnz(), 4);
        let m = Multipliers {
            lambda: vec![-0.2],
            gamma: vec![0.7],
        };
        let zeta = g_value(0.3, 0, &m, &cfg).max(0.0);
        let y = [zeta, -0.2, 0.7];
        let p = lp.to_problem();
        assert!(p.max_violation(&y) < 1e-15);
    }

    #[test]
    fn sizes_and_sparsity() {
        let cfg = ProblemConfig::new(vec![0.8, 0.9], vec![0.6, 0.4], 0.0, 0.05, 0).unwrap();
        let s = vec![
            ws(0, 0.1, 3),
            ws(1, 0.2, 2),
            ws(0, 0.5, 3),
            ws(0, 0.9, 3),
            ws(1, 0.6, 2),
        ];
        let lp = assemble(&s, &cfg).unwrap();
        assert_eq!(lp.num_vars(), 9);
        assert_eq!(lp.num_rows(), 10);
        assert!(lp.nnz() <= 30);
        assert_eq!(lp.sample_of, vec![0, 2, 3, 1, 4]);
        assert_eq!(&lp.c[..5], &[1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0, 0.5, 0.5]);
        let text = lp.dump();
        assert!(text.starts_with("5 2\n"));
        assert_eq!(text.lines().count(), 3 + lp.nnz());
    }

    #[test]
    fn weighted_groups_are_refused_by_plain_assembly() {
        let cfg = ProblemConfig::new(vec![0.8], vec![1.0], 0.0, 0.05, 0).unwrap();
        let s = vec![
            WeightedSample {
                group: 0,
                effective_score: 0.1,
                weight: 0.25,
            },
            WeightedSample {
                group: 0,
                effective_score: 0.7,
                weight: 0.75,
            },
        ];
        assert!(matches!(
            assemble(&s, &cfg),
            Err(Error::NonUniformWeights(0))
        ));
        let lp = assemble_weighted(&s, &cfg).unwrap();
        assert_eq!(&lp.c[..2], &[0.25, 0.75]);
    }

    #[test]
    fn extract_checks_length() {
        let cfg = ProblemConfig::new(vec![0.8], vec![1.0], 0.0, 0.05, 0).unwrap();
        let lp = assemble(&[ws(0, 0.3, 1)], &cfg).unwrap();
        assert!(matches!(
            extract(&lp, &[0.0]),
            Err(Error::DimensionMismatch { .. })
        ));
        let (m, z) = extract(&lp, &[0.0; 3]).unwrap();
        assert_eq!(m, Multipliers::zeros(1));
        assert_eq!(z, vec![0.0]);
        assert!(lp.to_problem().max_violation(&[0.0; 3]) == 0.0);
    }

    proptest! {
        #[test]
        fn epigraph_point_is_feasible_with_matching_objective(
            k in 1usize..4,
            pts in prop::collection::vec((0usize..3, 0.0f64..=1.0), 3..40),
            mv in prop::collection::vec(-2.0f64..2.0, 6),
            alpha in prop::collection::vec(0.1f64..=1.0, 3),
        ) {
            let mut pts = pts;
            for (i, pt) in pts.iter_mut().enumerate() {
                pt.0 = if i < k { i } else { pt.0 % k };
            }
            let p = vec![1.0 / k as f64; k];
            let p = { let mut p = p; let r: f64 = p[1..].iter().sum(); p[0] = 1.0 - r; p };
            let cfg = ProblemConfig::new(alpha[..k].to_vec(), p, 0.0, 0.05, 0).unwrap();
            let sizes = group_sizes(pts.iter().map(|x| x.0), k).unwrap();
            let s: Vec<WeightedSample> = pts.iter().map(|&(g, e)| ws(g, e, sizes[g])).collect();
            let lp = assemble(&s, &cfg).unwrap();
            prop_assert!(lp.nnz() <= lp.nnz_bound());
            let m = Multipliers { lambda: mv[..k].to_vec(), gamma: mv[3..3 + k].to_vec() };
            let mut y = vec![0.0; lp.num_vars()];
            for (j, &i) in lp.sample_of.iter().enumerate() {
                y[j] = g_value(s[i].effective_score, s[i].group, &m, &cfg).max(0.0);
            }
            y[lp.n..lp.n + k].copy_from_slice(&m.lambda);
            y[lp.n + k..].copy_from_slice(&m.gamma);
            let prob = lp.to_problem();
            prop_assert!(prob.max_violation(&y) < 1e-12);
            let obj: f64 = lp.c.iter().zip(&y).map(|(a, b)| a * b).sum();
            let f = dual_objective(&s, &m, &cfg).unwrap();
            prop_assert!((obj - f).abs() < 1e-12);
            // lowering any slack below its bound breaks a row
            let j = 0;
            if y[j] > 1e-6 {
                let mut z = y.clone();
                z[j] -= 1e-6;
                prop_assert!(prob.max_violation(&z) > 1e-7);
            }
        }

        #[test]
        fn crash_start_reaches_the_cold_optimum(
            k in 1usize..4,
            pts in prop::collection::vec((0usize..3, 0u8..6, 0.0f64..=1.0), 3..60),
            alpha in prop::collection::vec(0.1f64..=1.0, 3),
            ties in any::<bool>(),
        ) {
            use crate::solver::{check_certificate, solve, solve_cold, SolveOptions, Status};
            let mut pts = pts;
            for (i, pt) in pts.iter_mut().enumerate() {
                pt.0 = if i < k { i } else { pt.0 % k };
            }
            let mut p = vec![1.0 / k as f64; k];
            let r: f64 = p[1..].iter().sum();
            p[0] = 1.0 - r;
            let cfg = ProblemConfig::new(alpha[..k].to_vec(), p, 0.0, 0.05, 0).unwrap();
            let sizes = group_sizes(pts.iter().map(|x| x.0), k).unwrap();
            let s: Vec<WeightedSample> = pts
                .iter()
                .map(|&(g, d, e)| ws(g, if ties { d as f64 / 5.0 } else { e }, sizes[g]))
                .collect();
            let lp = assemble(&s, &cfg).unwrap();
            let opts = SolveOptions::default();
            let warm = solve(&lp, &opts);
            let cold = solve_cold(&lp, &opts);
            prop_assert_eq!(warm.status, Status::Optimal);
            prop_assert_eq!(cold.status, Status::Optimal);
            prop_assert!((warm.objective - cold.objective).abs() < 1e-9);
            prop_assert!(check_certificate(&lp, &warm, 1e-9).is_ok());
        }
    }
}
