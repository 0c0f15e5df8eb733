//! Ground truth: discrete populations solved exactly over randomized
//! classifiers, population metrics (exact or Monte Carlo), and synthetic
//! data generators with a known regression function.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal as StdNormal};

use crate::dual::WeightedSample;
use crate::error::{Error, Result};
use crate::numfmt::{ser_f64, ser_vec};
use crate::postprocess::{dual_minimum_weighted, FittedModel};
use crate::problem::{ProblemConfig, ScoredSample};
use crate::rng::{stream_rng, sub_seed, STREAM_MONTE_CARLO, STREAM_SYNTH};
use crate::solver::{
    check_problem_certificate, solve_problem, Problem, RowKind, SolveOptions, Status,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub group: usize,
    pub eta: f64,
    /// Conditional mass within the group.
    pub mass: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscretePopulation {
    pub atoms: Vec<Atom>,
    pub p: Vec<f64>,
}

impl DiscretePopulation {
    /// Validates per-group masses (sum to one within 1e-9), `eta` in `[0, 1]`
    /// and `p` on the simplex.
    pub fn new(atoms: Vec<Atom>, p: Vec<f64>) -> Result<Self> {
        let k = p.len();
        if k == 0 {
            return Err(Error::config("p", "no groups"));
        }
        if p.iter().any(|&v| !(v > 0.0 && v.is_finite()))
            || (p.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(Error::config(
                "p",
                format!("{p:?} is not a positive probability vector"),
            ));
        }
        let mut total = vec![0.0; k];
        for a in &atoms {
            if a.group >= k {
                return Err(Error::GroupOutOfRange { group: a.group, k });
            }
            if !(0.0..=1.0).contains(&a.eta) {
                return Err(Error::config("eta", format!("{} outside [0, 1]", a.eta)));
            }
            if !(a.mass >= 0.0 && a.mass.is_finite()) {
                return Err(Error::config(
                    "mass",
                    format!("{} is not a nonnegative mass", a.mass),
                ));
            }
            total[a.group] += a.mass;
        }
        for (s, &t) in total.iter().enumerate() {
            if t == 0.0 {
                return Err(Error::MissingGroup(s));
            }
            if (t - 1.0).abs() > 1e-9 {
                return Err(Error::config(
                    "mass",
                    format!("group {s} masses sum to {t}"),
                ));
            }
        }
        Ok(DiscretePopulation { atoms, p })
    }

    /// From joint masses `P(S = s, eta = v)`: `p_s` is the group total and
    /// atom masses are renormalized within each group.
    pub fn from_joint(rows: &[(usize, f64, f64)], k: usize) -> Result<Self> {
        let mut p = vec![0.0; k];
        for &(g, _, m) in rows {
            if g >= k {
                return Err(Error::GroupOutOfRange { group: g, k });
            }
            p[g] += m;
        }
        let total: f64 = p.iter().sum();
        if total.is_nan() || total <= 0.0 {
            return Err(Error::config("mass", "total mass is zero"));
        }
        let atoms = rows
            .iter()
            .map(|&(group, eta, m)| Atom {
                group,
                eta,
                mass: if p[group] > 0.0 { m / p[group] } else { 0.0 },
            })
            .collect();
        let p = p.iter().map(|v| v / total).collect();
        DiscretePopulation::new(atoms, p)
    }

    pub fn k(&self) -> usize {
        self.p.len()
    }

    /// The atoms as weighted samples scored by `eta`.
    pub fn weighted_samples(&self) -> Vec<WeightedSample> {
        self.atoms
            .iter()
            .filter(|a| a.mass > 0.0)
            .map(|a| WeightedSample {
                group: a.group,
                effective_score: a.eta,
                weight: a.mass,
            })
            .collect()
    }
}

#[derive(Debug, Deserialize)]
struct PopulationRow {
    group: i64,
    eta: f64,
    mass: f64,
}

/// Reads a `group,eta,mass` CSV of joint masses. Groups are 1-based unless
/// `zero_based`; `K` is the largest group seen.
pub fn read_population(path: &Path, zero_based: bool) -> Result<DiscretePopulation> {
    let name = path.display().to_string();
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut rows = Vec::new();
    for (i, rec) in rdr.deserialize::<PopulationRow>().enumerate() {
        let row = i + 2;
        let r = rec.map_err(|e| Error::Parse {
            path: name.clone(),
            row,
            reason: e.to_string(),
        })?;
        let g = r.group - if zero_based { 0 } else { 1 };
        if g < 0 {
            return Err(Error::Parse {
                path: name,
                row,
                reason: format!("group {} below the first index", r.group),
            });
        }
        rows.push((g as usize, r.eta, r.mass));
    }
    let k = rows.iter().map(|r| r.0 + 1).max().unwrap_or(0);
    DiscretePopulation::from_joint(&rows, k)
}

/// A randomized classifier on atoms: `[q0, q1, qr]` per atom.
pub type Table = Vec<[f64; 3]>;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleSolution {
    #[serde(serialize_with = "ser_f64")]
    pub risk: f64,
    pub table: Table,
    pub iterations: usize,
}

/// Minimum risk over randomized classifiers with accept rate `alpha_s` in
/// every group and exactly equal positive rates among classified points.
pub fn oracle_solve(pop: &DiscretePopulation, alpha: &[f64]) -> Result<OracleSolution> {
    oracle_solve_relaxed(pop, alpha, 0.0)
}

/// As [`oracle_solve`], but positive rates may differ pairwise by up to
/// `dp_slack`. A classifier with that much unfairness and the same accept
/// rates is feasible, so its risk is bounded below by this value.
pub fn oracle_solve_relaxed(
    pop: &DiscretePopulation,
    alpha: &[f64],
    dp_slack: f64,
) -> Result<OracleSolution> {
    let k = pop.k();
    if alpha.len() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            got: alpha.len(),
        });
    }
    if alpha.iter().any(|&a| !(a > 0.0 && a <= 1.0)) {
        return Err(Error::config(
            "alpha",
            format!("{alpha:?} must lie in (0, 1]"),
        ));
    }
    let na = pop.atoms.len();
    let abar: f64 = pop.p.iter().zip(alpha).map(|(p, a)| p * a).sum();
    let mut trip = Vec::with_capacity(8 * na);
    let mut rhs = Vec::new();
    let mut kind = Vec::new();
    let mut cost = vec![0.0; 3 * na];
    // columns 3i, 3i+1, 3i+2 are q0, q1, qr
    for (i, a) in pop.atoms.iter().enumerate() {
        for c in 0..3 {
            trip.push((i, 3 * i + c, 1.0));
        }
        rhs.push(1.0);
        kind.push(RowKind::Eq);
        let w = pop.p[a.group] * a.mass / abar;
        cost[3 * i] = w * a.eta;
        cost[3 * i + 1] = w * (1.0 - a.eta);
    }
    for s in 0..k {
        let r = na + s;
        for (i, a) in pop.atoms.iter().enumerate().filter(|(_, a)| a.group == s) {
            trip.push((r, 3 * i, a.mass));
            trip.push((r, 3 * i + 1, a.mass));
        }
        rhs.push(alpha[s]);
        kind.push(RowKind::Eq);
    }
    // positive-rate rows: (1/alpha_s) sum_s m q1 - (1/alpha_t) sum_t m q1
    let pair = |s: usize, t: usize, sign: f64, trip: &mut Vec<(usize, usize, f64)>, r: usize| {
        for (i, a) in pop.atoms.iter().enumerate() {
            if a.group == s {
                trip.push((r, 3 * i + 1, sign * a.mass / alpha[s]));
            } else if a.group == t {
                trip.push((r, 3 * i + 1, -sign * a.mass / alpha[t]));
            }
        }
    };
    let mut r = na + k;
    if dp_slack == 0.0 {
        for s in 1..k {
            pair(s, 0, 1.0, &mut trip, r);
            rhs.push(0.0);
            kind.push(RowKind::Eq);
            r += 1;
        }
    } else {
        for s in 0..k {
            for t in s + 1..k {
                for sign in [1.0, -1.0] {
                    pair(s, t, sign, &mut trip, r);
                    rhs.push(dp_slack);
                    kind.push(RowKind::Le);
                    r += 1;
                }
            }
        }
    }
    let prob = Problem::from_triplets(
        r,
        3 * na,
        &trip,
        rhs,
        kind,
        cost,
        vec![0.0; 3 * na],
        vec![f64::INFINITY; 3 * na],
    );
    let opts = SolveOptions::default();
    let sol = solve_problem(&prob, &opts);
    if sol.status != Status::Optimal {
        return Err(Error::SolverFailure(format!(
            "oracle LP: status {:?}",
            sol.status
        )));
    }
    check_problem_certificate(&prob, &sol, opts.feas_tol)?;
    let table = (0..na)
        .map(|i| {
            [
                sol.y[3 * i].max(0.0),
                sol.y[3 * i + 1].max(0.0),
                sol.y[3 * i + 2].max(0.0),
            ]
        })
        .collect();
    Ok(OracleSolution {
        risk: sol.objective,
        table,
        iterations: sol.iterations,
    })
}

/// `-(minimum of the dual)` over the population's atoms. Equals the oracle
/// risk by strong duality.
pub fn dual_risk(pop: &DiscretePopulation, alpha: &[f64]) -> Result<f64> {
    let cfg = ProblemConfig::new(alpha.to_vec(), pop.p.clone(), 0.0, 0.05, 0)?;
    Ok(-dual_minimum_weighted(&pop.weighted_samples(), &cfg)?.1)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PopulationMetrics {
    /// Misclassification risk among classified points.
    #[serde(serialize_with = "ser_f64")]
    pub risk: f64,
    #[serde(serialize_with = "ser_vec")]
    pub nab_s: Vec<f64>,
    #[serde(serialize_with = "ser_f64")]
    pub nab: f64,
    /// Positive rate among classified points, per group.
    #[serde(serialize_with = "ser_vec")]
    pub pt_s: Vec<f64>,
    #[serde(serialize_with = "ser_f64")]
    pub pt: f64,
}

impl PopulationMetrics {
    /// Largest pairwise gap between group positive rates.
    pub fn dp_gap(&self) -> f64 {
        let max = self.pt_s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = self.pt_s.iter().cloned().fold(f64::INFINITY, f64::min);
        max - min
    }
}

/// Per-group sums `(mass classified, mass predicted 1, expected errors)`
/// turned into the five conditional quantities.
fn finish(p: &[f64], sums: &[[f64; 3]]) -> Result<PopulationMetrics> {
    let mut nab = 0.0;
    let (mut pos, mut err) = (0.0, 0.0);
    let mut pt_s = Vec::with_capacity(p.len());
    for (s, &[c, one, e]) in sums.iter().enumerate() {
        if c <= 0.0 {
            return Err(Error::ZeroMassEvent("a group never receives a prediction"));
        }
        pt_s.push(one / c);
        nab += p[s] * c;
        pos += p[s] * one;
        err += p[s] * e;
    }
    if nab <= 0.0 {
        return Err(Error::ZeroMassEvent("no point receives a prediction"));
    }
    Ok(PopulationMetrics {
        risk: err / nab,
        nab_s: sums.iter().map(|v| v[0]).collect(),
        nab,
        pt_s,
        pt: pos / nab,
    })
}

/// Exact metrics of a randomized classifier on a discrete population.
pub fn population_metrics(
    pop: &DiscretePopulation,
    table: &[[f64; 3]],
) -> Result<PopulationMetrics> {
    if table.len() != pop.atoms.len() {
        return Err(Error::DimensionMismatch {
            expected: pop.atoms.len(),
            got: table.len(),
        });
    }
    let mut sums = vec![[0.0; 3]; pop.k()];
    for (a, q) in pop.atoms.iter().zip(table) {
        let acc = &mut sums[a.group];
        acc[0] += a.mass * (q[0] + q[1]);
        acc[1] += a.mass * q[1];
        acc[2] += a.mass * (q[0] * a.eta + q[1] * (1.0 - a.eta));
    }
    finish(&pop.p, &sums)
}

/// The table a fitted model induces on atoms scored by `scores` (the
/// estimated regression function at each atom).
pub fn model_table(
    model: &FittedModel,
    pop: &DiscretePopulation,
    scores: &[f64],
    fresh_noise: bool,
) -> Result<Table> {
    if scores.len() != pop.atoms.len() {
        return Err(Error::DimensionMismatch {
            expected: pop.atoms.len(),
            got: scores.len(),
        });
    }
    pop.atoms
        .iter()
        .zip(scores)
        .map(|(a, &e)| model.decision_probs(e, a.group, fresh_noise))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    /// `X | S ~ U[0, 1]` and `eta = x` in every group.
    Uniform,
    /// Two groups, `X | S ~ N(-shift, 1)` for the first and `N(shift, 1)` for
    /// the second, `eta = sigmoid(slope x)`.
    Logistic2 { shift: f64, slope: f64 },
    /// Finitely many `(eta, mass)` atoms per group.
    Table(Vec<Vec<(f64, f64)>>),
}

impl Family {
    pub fn logistic2() -> Self {
        Family::Logistic2 {
            shift: 0.5,
            slope: 2.0,
        }
    }

    pub fn parse(name: &str) -> Option<Family> {
        match name {
            "uniform" => Some(Family::Uniform),
            "logistic2" => Some(Family::logistic2()),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticGenerator {
    pub family: Family,
    pub p: Vec<f64>,
    /// `eta_hat = clip(eta + shift)`; zero means well specified.
    pub shift: f64,
    pub seed: u64,
}

/// One synthetic draw with its true regression value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Draw {
    pub group: usize,
    pub eta: f64,
    pub eta_hat: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    /// Scored by `eta_hat`, no labels.
    pub unlabeled: Vec<ScoredSample>,
    /// Scored by `eta_hat`, labels drawn from `eta`.
    pub test: Vec<ScoredSample>,
    pub unlabeled_eta: Vec<f64>,
    pub test_eta: Vec<f64>,
    /// `E|eta - eta_hat|` estimated on the unlabeled part, groups weighted by `p`.
    pub l1_gap: f64,
}

impl SyntheticGenerator {
    pub fn new(family: Family, p: Vec<f64>, seed: u64) -> Result<Self> {
        let g = SyntheticGenerator {
            family,
            p,
            shift: 0.0,
            seed,
        };
        g.check()?;
        Ok(g)
    }

    pub fn with_shift(mut self, shift: f64) -> Self {
        self.shift = shift;
        self
    }

    pub fn k(&self) -> usize {
        self.p.len()
    }

    fn check(&self) -> Result<()> {
        let want = match &self.family {
            Family::Uniform => self.p.len(),
            Family::Logistic2 { .. } => 2,
            Family::Table(t) => t.len(),
        };
        if self.p.len() != want || want == 0 {
            return Err(Error::DimensionMismatch {
                expected: want,
                got: self.p.len(),
            });
        }
        if let Family::Table(t) = &self.family {
            let atoms = t
                .iter()
                .enumerate()
                .flat_map(|(s, v)| {
                    v.iter().map(move |&(eta, mass)| Atom {
                        group: s,
                        eta,
                        mass,
                    })
                })
                .collect();
            DiscretePopulation::new(atoms, self.p.clone())?;
        } else {
            DiscretePopulation::new(
                (0..want)
                    .map(|s| Atom {
                        group: s,
                        eta: 0.5,
                        mass: 1.0,
                    })
                    .collect(),
                self.p.clone(),
            )?;
        }
        Ok(())
    }

    pub fn eta_hat(&self, eta: f64) -> f64 {
        (eta + self.shift).clamp(0.0, 1.0)
    }

    /// Draws the true regression value for one point of group `s`.
    pub fn draw_eta<R: Rng + ?Sized>(&self, s: usize, rng: &mut R) -> f64 {
        match &self.family {
            Family::Uniform => rng.random::<f64>(),
            Family::Logistic2 { shift, slope } => {
                let mean = if s == 0 { -shift } else { *shift };
                let x: f64 = Normal::new(mean, 1.0).unwrap().sample(rng);
                1.0 / (1.0 + (-slope * x).exp())
            }
            Family::Table(t) => {
                let u: f64 = rng.random();
                let mut cum = 0.0;
                for &(eta, mass) in &t[s] {
                    cum += mass;
                    if u < cum {
                        return eta;
                    }
                }
                t[s].iter().rev().find(|a| a.1 > 0.0).map_or(0.5, |a| a.0)
            }
        }
    }

    pub fn draw<R: Rng + ?Sized>(&self, s: usize, rng: &mut R) -> Draw {
        let eta = self.draw_eta(s, rng);
        Draw {
            group: s,
            eta,
            eta_hat: self.eta_hat(eta),
        }
    }

    /// `n` unlabeled and `n` labeled test points per group. Deterministic
    /// in the seed.
    pub fn generate(&self, n: usize) -> SyntheticData {
        let mut rng = stream_rng(self.seed, STREAM_SYNTH);
        let mut out = SyntheticData {
            unlabeled: Vec::with_capacity(n * self.k()),
            test: Vec::with_capacity(n * self.k()),
            unlabeled_eta: Vec::new(),
            test_eta: Vec::new(),
            l1_gap: 0.0,
        };
        for s in 0..self.k() {
            let mut gap = 0.0;
            for _ in 0..n {
                let d = self.draw(s, &mut rng);
                gap += (d.eta - d.eta_hat).abs();
                out.unlabeled.push(ScoredSample::new(s, d.eta_hat));
                out.unlabeled_eta.push(d.eta);
            }
            out.l1_gap += self.p[s] * gap / n.max(1) as f64;
        }
        for s in 0..self.k() {
            for _ in 0..n {
                let d = self.draw(s, &mut rng);
                let y = u8::from(rng.random::<f64>() < d.eta);
                out.test.push(ScoredSample::labeled(s, d.eta_hat, y));
                out.test_eta.push(d.eta);
            }
        }
        out
    }

    /// A discrete stand-in with `m` equal-mass atoms per group at the
    /// quantile midpoints (table families are returned as is). The second
    /// value holds `eta_hat` per atom.
    pub fn population(&self, m: usize) -> Result<(DiscretePopulation, Vec<f64>)> {
        let m = m.max(1);
        let mid = |i: usize| (i as f64 + 0.5) / m as f64;
        let mut atoms = Vec::new();
        match &self.family {
            Family::Uniform => {
                for s in 0..self.k() {
                    atoms.extend((0..m).map(|i| Atom {
                        group: s,
                        eta: mid(i),
                        mass: 1.0 / m as f64,
                    }));
                }
            }
            Family::Logistic2 { shift, slope } => {
                let z = StdNormal::new(0.0, 1.0).unwrap();
                for s in 0..2 {
                    let mean = if s == 0 { -shift } else { *shift };
                    atoms.extend((0..m).map(|i| {
                        let x = mean + z.inverse_cdf(mid(i));
                        Atom {
                            group: s,
                            eta: 1.0 / (1.0 + (-slope * x).exp()),
                            mass: 1.0 / m as f64,
                        }
                    }));
                }
            }
            Family::Table(t) => {
                for (s, v) in t.iter().enumerate() {
                    atoms.extend(v.iter().map(|&(eta, mass)| Atom {
                        group: s,
                        eta,
                        mass,
                    }));
                }
            }
        }
        let scores = atoms.iter().map(|a| self.eta_hat(a.eta)).collect();
        Ok((DiscretePopulation::new(atoms, self.p.clone())?, scores))
    }

    /// `E|eta - eta_hat|` on the discrete stand-in with `m` atoms per group.
    pub fn l1_gap(&self, m: usize) -> Result<f64> {
        let (pop, scores) = self.population(m)?;
        Ok(pop
            .atoms
            .iter()
            .zip(&scores)
            .map(|(a, e)| pop.p[a.group] * a.mass * (a.eta - e).abs())
            .sum())
    }

    /// Stratified Monte Carlo: `m` fresh draws per group, classified by
    /// `model` at `eta_hat`. Errors are counted in expectation (`eta` or
    /// `1 - eta`) rather than through sampled labels, which keeps the
    /// estimator unbiased with lower variance. Batches use independent
    /// counter-addressed streams and are reduced in order.
    pub fn monte_carlo(
        &self,
        model: &FittedModel,
        m: usize,
        seed: u64,
        fresh_noise: bool,
    ) -> Result<PopulationMetrics> {
        const BATCH: usize = 8192;
        if m == 0 {
            return Err(Error::config("m", "Monte Carlo size must be positive"));
        }
        let k = self.k();
        let batches = m.div_ceil(BATCH);
        let run = |job: usize| -> Result<[f64; 3]> {
            let (s, b) = (job / batches, job % batches);
            let mut rng = stream_rng(sub_seed(seed, job as u64), STREAM_MONTE_CARLO);
            let len = BATCH.min(m - b * BATCH);
            let mut acc = [0.0; 3];
            for _ in 0..len {
                let d = self.draw(s, &mut rng);
                let e = if fresh_noise && model.cfg.sigma > 0.0 {
                    d.eta_hat + model.cfg.sigma * rng.random::<f64>()
                } else {
                    d.eta_hat
                };
                match model.decide(e, s)? {
                    crate::problem::Decision::Zero => {
                        acc[0] += 1.0;
                        acc[2] += d.eta;
                    }
                    crate::problem::Decision::One => {
                        acc[0] += 1.0;
                        acc[1] += 1.0;
                        acc[2] += 1.0 - d.eta;
                    }
                    crate::problem::Decision::Reject => {}
                }
            }
            Ok(acc)
        };
        let jobs = k * batches;
        #[cfg(feature = "parallel")]
        let parts: Vec<[f64; 3]> = {
            use rayon::prelude::*;
            (0..jobs).into_par_iter().map(run).collect::<Result<_>>()?
        };
        #[cfg(not(feature = "parallel"))]
        let parts: Vec<[f64; 3]> = (0..jobs).map(run).collect::<Result<_>>()?;
        let mut sums = vec![[0.0; 3]; k];
        for (job, part) in parts.iter().enumerate() {
            let s = job / batches;
            for c in 0..3 {
                sums[s][c] += part[c];
            }
        }
        for v in &mut sums {
            for c in v.iter_mut() {
                *c /= m as f64;
            }
        }
        finish(&self.p, &sums)
    }
}
