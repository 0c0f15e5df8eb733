//! The score function `G`, the empirical dual objective and a grid-search
//! minimizer used to cross-check the LP for `K <= 2`.

use crate::error::{Error, Result};
use crate::problem::{Multipliers, ProblemConfig, ScoredSample};

/// A point of an empirical or discrete measure. Within each group the weights
/// sum to one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightedSample {
    pub group: usize,
    pub effective_score: f64,
    pub weight: f64,
}

impl WeightedSample {
    /// Uniform weights `1/n_s`, using the effective (noise-added) scores.
    pub fn uniform(samples: &[ScoredSample], k: usize) -> Result<Vec<WeightedSample>> {
        let sizes = group_sizes(samples.iter().map(|s| s.group), k)?;
        Ok(samples
            .iter()
            .map(|s| WeightedSample {
                group: s.group,
                effective_score: s.effective_score(),
                weight: 1.0 / sizes[s.group] as f64,
            })
            .collect())
    }
}

/// Per-group counts; fails on an out-of-range label or an empty group.
pub fn group_sizes(groups: impl Iterator<Item = usize>, k: usize) -> Result<Vec<usize>> {
    let mut sizes = vec![0usize; k];
    for g in groups {
        if g >= k {
            return Err(Error::GroupOutOfRange { group: g, k });
        }
        sizes[g] += 1;
    }
    if let Some(s) = sizes.iter().position(|&c| c == 0) {
        return Err(Error::MissingGroup(s));
    }
    Ok(sizes)
}

/// Group-level constants of `G` for fixed multipliers.
#[derive(Debug, Clone, Copy)]
pub(crate) struct GroupCoef {
    /// p_s / (2 abar)
    a: f64,
    /// gamma_s / (2 alpha_s)
    h: f64,
    lambda: f64,
    gamma_sum: f64,
}

impl GroupCoef {
    pub fn all(m: &Multipliers, cfg: &ProblemConfig) -> Vec<GroupCoef> {
        let gamma_sum = m.gamma_sum();
        (0..cfg.k)
            .map(|s| GroupCoef {
                a: cfg.p[s] / (2.0 * cfg.alpha_bar()),
                h: m.gamma[s] / (2.0 * cfg.alpha[s]),
                lambda: m.lambda[s],
                gamma_sum,
            })
            .collect()
    }

    /// The argument of the absolute value in `G`.
    #[inline]
    pub fn inner(&self, e: f64) -> f64 {
        self.a * (1.0 - 2.0 * e - self.gamma_sum) + self.h
    }

    #[inline]
    pub fn g(&self, e: f64) -> f64 {
        self.inner(e).abs() - self.a * (1.0 - self.gamma_sum) - self.lambda - self.h
    }
}

/// `G(e, s; lambda, gamma)`; the point is accepted iff this is positive.
pub fn g_value(score: f64, s: usize, m: &Multipliers, cfg: &ProblemConfig) -> f64 {
    let gamma_sum = m.gamma_sum();
    let a = cfg.p[s] / (2.0 * cfg.alpha_bar());
    let h = m.gamma[s] / (2.0 * cfg.alpha[s]);
    (a * (1.0 - 2.0 * score - gamma_sum) + h).abs() - a * (1.0 - gamma_sum) - m.lambda[s] - h
}

fn check_dims(samples: &[WeightedSample], m: &Multipliers, cfg: &ProblemConfig) -> Result<()> {
    if m.lambda.len() != cfg.k || m.gamma.len() != cfg.k {
        return Err(Error::DimensionMismatch {
            expected: cfg.k,
            got: m.lambda.len().min(m.gamma.len()),
        });
    }
    group_sizes(samples.iter().map(|w| w.group), cfg.k)?;
    Ok(())
}

/// `<lambda, alpha> + sum_s sum_{i in s} w_i (G_i)_+`, summed group by group
/// in input order.
pub fn dual_objective(
    samples: &[WeightedSample],
    m: &Multipliers,
    cfg: &ProblemConfig,
) -> Result<f64> {
    check_dims(samples, m, cfg)?;
    let coef = GroupCoef::all(m, cfg);
    let mut per_group = vec![0.0; cfg.k];
    for w in samples {
        let g = coef[w.group].g(w.effective_score);
        if g > 0.0 {
            per_group[w.group] += w.weight * g;
        }
    }
    let lin: f64 = m.lambda.iter().zip(&cfg.alpha).map(|(l, a)| l * a).sum();
    Ok(lin + per_group.iter().sum::<f64>())
}

/// A subgradient of the dual objective: exact gradient away from kinks.
pub fn dual_gradient(
    samples: &[WeightedSample],
    m: &Multipliers,
    cfg: &ProblemConfig,
) -> Result<Multipliers> {
    check_dims(samples, m, cfg)?;
    let k = cfg.k;
    let abar = cfg.alpha_bar();
    let coef = GroupCoef::all(m, cfg);
    let mut dl = cfg.alpha.clone();
    let mut dg = vec![0.0; k];
    for w in samples {
        let c = &coef[w.group];
        if c.g(w.effective_score) <= 0.0 {
            continue;
        }
        dl[w.group] -= w.weight;
        if c.inner(w.effective_score) < 0.0 {
            let slope = cfg.p[w.group] / abar;
            for (t, d) in dg.iter_mut().enumerate() {
                *d += w.weight * slope;
                if t == w.group {
                    *d -= w.weight / cfg.alpha[w.group];
                }
            }
        }
    }
    Ok(Multipliers {
        lambda: dl,
        gamma: dg,
    })
}

/// True if `m` sits within `eps` of a kink of the objective at any sample.
pub fn near_kink(
    samples: &[WeightedSample],
    m: &Multipliers,
    cfg: &ProblemConfig,
    eps: f64,
) -> bool {
    let coef = GroupCoef::all(m, cfg);
    samples.iter().any(|w| {
        let c = &coef[w.group];
        c.inner(w.effective_score).abs() < eps || c.g(w.effective_score).abs() < eps
    })
}

/// Search settings for [`grid_minimize`].
#[derive(Debug, Clone, Copy)]
pub struct GridSpec {
    /// Points of the coarse grid over the gamma coordinate.
    pub points: usize,
    /// Stop refining once the bracket is this narrow.
    pub tol: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            points: 81,
            tol: 1e-11,
        }
    }
}

/// For fixed gamma the objective separates across groups, and each
/// `lambda_s` has an exact minimizer: a weighted upper quantile of the values
/// `G_i(lambda = 0)`. Returns the minimizing lambda and the profiled objective.
pub fn best_lambda(
    samples: &[WeightedSample],
    gamma: &[f64],
    cfg: &ProblemConfig,
) -> Result<(Vec<f64>, f64)> {
    let k = cfg.k;
    let base = Multipliers {
        lambda: vec![0.0; k],
        gamma: gamma.to_vec(),
    };
    check_dims(samples, &base, cfg)?;
    let coef = GroupCoef::all(&base, cfg);
    let mut keyed: Vec<Vec<(f64, f64)>> = vec![Vec::new(); k];
    for w in samples {
        keyed[w.group].push((coef[w.group].g(w.effective_score), w.weight));
    }
    let mut lambda = vec![0.0; k];
    for (s, kv) in keyed.iter_mut().enumerate() {
        kv.sort_by(|x, y| y.0.total_cmp(&x.0));
        let mut cum = 0.0;
        let mut chosen = kv.last().unwrap().0;
        for &(key, w) in kv.iter() {
            cum += w;
            if cum >= cfg.alpha[s] - 1e-12 {
                chosen = key;
                break;
            }
        }
        lambda[s] = chosen;
    }
    let m = Multipliers {
        lambda,
        gamma: gamma.to_vec(),
    };
    let obj = dual_objective(samples, &m, cfg)?;
    Ok((m.lambda, obj))
}

/// Minimizes the dual objective without an LP. `K = 1` is solved exactly;
/// for `K = 2` the gamma coordinate orthogonal to the gauge direction is
/// searched on a grid and refined by golden section, with lambda profiled out
/// exactly. The returned multipliers satisfy `sum(gamma) = 0`.
pub fn grid_minimize(
    samples: &[WeightedSample],
    cfg: &ProblemConfig,
    spec: GridSpec,
) -> Result<Multipliers> {
    let k = cfg.k;
    if k > 2 {
        return Err(Error::GridTooManyGroups(k));
    }
    const G_MAX: f64 = 2.0;
    let eval = |g: f64| -> Result<(Vec<f64>, f64)> {
        let gamma = if k == 1 { vec![0.0] } else { vec![g, -g] };
        best_lambda(samples, &gamma, cfg)
    };
    let g_best = if k == 1 {
        0.0
    } else {
        let pts = spec.points.max(3);
        let step = 2.0 * G_MAX / (pts - 1) as f64;
        let mut best = (0usize, f64::INFINITY);
        for i in 0..pts {
            let v = eval(-G_MAX + step * i as f64)?.1;
            if v < best.1 {
                best = (i, v);
            }
        }
        let mut lo = -G_MAX + step * best.0.saturating_sub(1) as f64;
        let mut hi = (-G_MAX + step * (best.0 + 1) as f64).min(G_MAX);
        let ratio = (5f64.sqrt() - 1.0) / 2.0;
        let mut x1 = hi - ratio * (hi - lo);
        let mut x2 = lo + ratio * (hi - lo);
        let mut f1 = eval(x1)?.1;
        let mut f2 = eval(x2)?.1;
        while hi - lo > spec.tol {
            if f1 <= f2 {
                hi = x2;
                x2 = x1;
                f2 = f1;
                x1 = hi - ratio * (hi - lo);
                f1 = eval(x1)?.1;
            } else {
                lo = x1;
                x1 = x2;
                f1 = f2;
                x2 = lo + ratio * (hi - lo);
                f2 = eval(x2)?.1;
            }
        }
        let g = 0.5 * (lo + hi);
        if g.abs() >= G_MAX - 1e-6 {
            return Err(Error::GridTooCoarse("gamma"));
        }
        g
    };
    let (lambda, _) = eval(g_best)?;
    for s in 0..k {
        let bound = (cfg.p[s] / cfg.alpha_bar()).max(2.0 / cfg.alpha[s]) + 1.0;
        if lambda[s].abs() >= bound {
            return Err(Error::GridTooCoarse("lambda"));
        }
    }
    let gamma = if k == 1 {
        vec![0.0]
    } else {
        vec![g_best, -g_best]
    };
    Ok(Multipliers { lambda, gamma })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::normalize_gauge;
    use proptest::prelude::*;

    fn cfg1(alpha: f64) -> ProblemConfig {
        ProblemConfig::new(vec![alpha], vec![1.0], 0.0, 0.05, 0).unwrap()
    }

    fn uniform_grid(n: usize) -> Vec<WeightedSample> {
        (0..n)
            .map(|i| WeightedSample {
                group: 0,
                effective_score: i as f64 / (n - 1) as f64,
                weight: 1.0 / n as f64,
            })
            .collect()
    }

    #[test]
    fn g_value_examples() {
        let cfg = cfg1(0.8);
        let zero = Multipliers::zeros(1);
        assert!((g_value(0.3, 0, &zero, &cfg) + 0.375).abs() < 1e-15);
        let m = Multipliers {
            lambda: vec![-0.5],
            gamma: vec![0.0],
        };
        assert!((g_value(0.75, 0, &m, &cfg) - 0.1875).abs() < 1e-15);
        for i in 0..=100 {
            assert!(g_value(i as f64 / 100.0, 0, &zero, &cfg) <= 0.0);
        }
    }

    #[test]
    fn uniform_closed_form() {
        let cfg = cfg1(0.8);
        let s = uniform_grid(10001);
        let m = Multipliers {
            lambda: vec![-0.5],
            gamma: vec![0.0],
        };
        let obj = dual_objective(&s, &m, &cfg).unwrap();
        assert!((obj + 0.2).abs() < 1e-3, "{obj}");
        assert_eq!(
            dual_objective(&s, &Multipliers::zeros(1), &cfg).unwrap(),
            0.0
        );
        let fit = grid_minimize(&s, &cfg, GridSpec::default()).unwrap();
        assert!((-0.55..=-0.45).contains(&fit.lambda[0]), "{:?}", fit.lambda);
    }

    #[test]
    fn full_acceptance_gives_bayes_risk() {
        let cfg = cfg1(1.0);
        let s: Vec<WeightedSample> = [0.1, 0.4, 0.7, 0.95]
            .iter()
            .map(|&e| WeightedSample {
                group: 0,
                effective_score: e,
                weight: 0.25,
            })
            .collect();
        let fit = grid_minimize(&s, &cfg, GridSpec::default()).unwrap();
        let obj = dual_objective(&s, &fit, &cfg).unwrap();
        let bayes = (0.1 + 0.4 + 0.3 + 0.05) / 4.0;
        assert!((obj + bayes).abs() < 1e-12, "{obj}");
        // brute force over a lambda grid never beats it
        for i in 0..2000 {
            let l = -2.0 + i as f64 * 0.002;
            let v = dual_objective(
                &s,
                &Multipliers {
                    lambda: vec![l],
                    gamma: vec![0.0],
                },
                &cfg,
            )
            .unwrap();
            assert!(v >= obj - 1e-12);
        }
    }

    #[test]
    fn duplicating_samples_changes_nothing() {
        let cfg = ProblemConfig::new(vec![0.7, 0.9], vec![0.4, 0.6], 0.0, 0.05, 0).unwrap();
        let base: Vec<WeightedSample> = (0..40)
            .map(|i| WeightedSample {
                group: i % 2,
                effective_score: ((i * 37) % 41) as f64 / 41.0 + 0.001 * i as f64,
                weight: 1.0 / 20.0,
            })
            .collect();
        let doubled: Vec<WeightedSample> = base
            .iter()
            .flat_map(|w| {
                [WeightedSample {
                    weight: w.weight / 2.0,
                    ..*w
                }; 2]
            })
            .collect();
        let a = grid_minimize(&base, &cfg, GridSpec::default()).unwrap();
        let b = grid_minimize(&doubled, &cfg, GridSpec::default()).unwrap();
        let fa = dual_objective(&base, &a, &cfg).unwrap();
        let fb = dual_objective(&doubled, &b, &cfg).unwrap();
        assert!((fa - fb).abs() < 1e-10);
    }

    #[test]
    fn rejects_bad_inputs() {
        let cfg = ProblemConfig::new(vec![0.8, 0.8], vec![0.5, 0.5], 0.0, 0.05, 0).unwrap();
        let s = vec![WeightedSample {
            group: 0,
            effective_score: 0.5,
            weight: 1.0,
        }];
        assert!(matches!(
            dual_objective(&s, &Multipliers::zeros(2), &cfg),
            Err(Error::MissingGroup(1))
        ));
        let cfg3 = ProblemConfig::new(vec![0.8; 3], vec![0.2, 0.3, 0.5], 0.0, 0.05, 0).unwrap();
        assert!(matches!(
            grid_minimize(&s, &cfg3, GridSpec::default()),
            Err(Error::GridTooManyGroups(3))
        ));
    }

    fn instance(
    ) -> impl Strategy<Value = (ProblemConfig, Vec<WeightedSample>, Multipliers, Multipliers)> {
        (1usize..4).prop_flat_map(|k| {
            (
                prop::collection::vec(0.1f64..=1.0, k),
                prop::collection::vec(0.2f64..1.0, k),
                prop::collection::vec((0usize..k, 0.0f64..=1.0), (3 * k)..60),
                prop::collection::vec(-2.0f64..2.0, 4 * k),
            )
                .prop_map(move |(alpha, w, pts, mv)| {
                    let t: f64 = w.iter().sum();
                    let mut p: Vec<f64> = w.iter().map(|x| x / t).collect();
                    let rest: f64 = p[1..].iter().sum();
                    p[0] = 1.0 - rest;
                    let cfg = ProblemConfig::new(alpha, p, 0.0, 0.05, 0).unwrap();
                    let mut pts = pts;
                    for s in 0..k {
                        pts[s].0 = s;
                    }
                    let sizes = group_sizes(pts.iter().map(|x| x.0), k).unwrap();
                    let samples = pts
                        .iter()
                        .map(|&(g, e)| WeightedSample {
                            group: g,
                            effective_score: e,
                            weight: 1.0 / sizes[g] as f64,
                        })
                        .collect();
                    let m1 = Multipliers {
                        lambda: mv[..k].to_vec(),
                        gamma: mv[k..2 * k].to_vec(),
                    };
                    let m2 = Multipliers {
                        lambda: mv[2 * k..3 * k].to_vec(),
                        gamma: mv[3 * k..].to_vec(),
                    };
                    (cfg, samples, m1, m2)
                })
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn objective_is_convex_and_bounded((cfg, s, m1, m2) in instance()) {
            let mid = Multipliers {
                lambda: m1.lambda.iter().zip(&m2.lambda).map(|(a, b)| 0.5 * (a + b)).collect(),
                gamma: m1.gamma.iter().zip(&m2.gamma).map(|(a, b)| 0.5 * (a + b)).collect(),
            };
            let f1 = dual_objective(&s, &m1, &cfg).unwrap();
            let f2 = dual_objective(&s, &m2, &cfg).unwrap();
            let fm = dual_objective(&s, &mid, &cfg).unwrap();
            prop_assert!(fm <= 0.5 * (f1 + f2) + 1e-12);
            prop_assert!(f1 >= -1.0 - 1e-12);
        }

        #[test]
        fn objective_is_gauge_invariant((cfg, s, m1, _m2) in instance()) {
            let g = normalize_gauge(&m1, &cfg);
            let a = dual_objective(&s, &m1, &cfg).unwrap();
            let b = dual_objective(&s, &g, &cfg).unwrap();
            prop_assert!((a - b).abs() < 1e-12, "{} vs {}", a, b);
        }
    }

    fn same_pieces(
        s: &[WeightedSample],
        a: &Multipliers,
        b: &Multipliers,
        cfg: &ProblemConfig,
    ) -> bool {
        let (ca, cb) = (GroupCoef::all(a, cfg), GroupCoef::all(b, cfg));
        s.iter().all(|w| {
            let (x, y) = (&ca[w.group], &cb[w.group]);
            let e = w.effective_score;
            (x.inner(e) > 0.0) == (y.inner(e) > 0.0) && (x.g(e) > 0.0) == (y.g(e) > 0.0)
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn gradient_matches_finite_differences((cfg, s, m1, _m2) in instance()) {
            prop_assume!(!near_kink(&s, &m1, &cfg, 1e-7));
            let grad = dual_gradient(&s, &m1, &cfg).unwrap();
            let h = 1e-5;
            for t in 0..cfg.k {
                for which in 0..2 {
                    let mut up = m1.clone();
                    let mut dn = m1.clone();
                    let (u, d, g) = if which == 0 {
                        (&mut up.lambda[t], &mut dn.lambda[t], grad.lambda[t])
                    } else {
                        (&mut up.gamma[t], &mut dn.gamma[t], grad.gamma[t])
                    };
                    *u += h;
                    *d -= h;
                    // the objective must be affine on the whole stencil
                    prop_assume!(same_pieces(&s, &m1, &up, &cfg) && same_pieces(&s, &m1, &dn, &cfg));
                    let fd = (dual_objective(&s, &up, &cfg).unwrap() - dual_objective(&s, &dn, &cfg).unwrap()) / (2.0 * h);
                    prop_assert!((fd - g).abs() < 1e-6, "coord {} {}: fd {} vs {}", which, t, fd, g);
                }
            }
        }
    }
}
