//! Randomize scores, fit the multipliers, and classify with abstention.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dual::{
    dual_objective, grid_minimize, group_sizes, GridSpec, GroupCoef, WeightedSample,
};
use crate::error::{Error, Result};
use crate::lp::{assemble, assemble_weighted, extract, SparseLp};
use crate::numfmt::{ser_f64, ser_vec};
use crate::problem::{normalize_gauge, Decision, Multipliers, ProblemConfig, ScoredSample};
use crate::rng::{uniform_at, STREAM_FIT_NOISE, STREAM_PREDICT_NOISE};
use crate::solver::{self, check_certificate, SolveOptions, Status};

/// Adds independent `U[0, sigma]` noise to every score, addressed by sample
/// index so the result does not depend on evaluation order.
pub fn randomize(samples: &[ScoredSample], sigma: f64, seed: u64) -> Vec<ScoredSample> {
    if sigma == 0.0 {
        return samples.to_vec();
    }
    samples
        .iter()
        .enumerate()
        .map(|(i, s)| ScoredSample {
            noise: Some(sigma * uniform_at(seed, STREAM_FIT_NOISE, i as u64)),
            ..*s
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Lp,
    Grid,
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "lp" => Ok(Method::Lp),
            "grid" => Ok(Method::Grid),
            other => Err(format!("unknown method '{other}' (expected lp or grid)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Provenance {
    pub solver: Method,
    pub objective: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FittedModel {
    /// Gauge-normalized multipliers.
    pub multipliers: Multipliers,
    pub cfg: ProblemConfig,
    pub group_sizes: Vec<usize>,
    pub provenance: Provenance,
    /// Solver output before normalization (empty for loaded models).
    pub raw: Option<Multipliers>,
}

/// Randomizes `samples` with the config's `sigma` and `seed`, then minimizes
/// the empirical dual.
pub fn fit(samples: &[ScoredSample], cfg: &ProblemConfig, method: Method) -> Result<FittedModel> {
    let noisy = randomize(samples, cfg.sigma, cfg.seed);
    let weighted = WeightedSample::uniform(&noisy, cfg.k)?;
    fit_weighted(&weighted, cfg, method)
}

/// Fits on samples whose effective scores are already final.
pub fn fit_weighted(
    samples: &[WeightedSample],
    cfg: &ProblemConfig,
    method: Method,
) -> Result<FittedModel> {
    let sizes = group_sizes(samples.iter().map(|w| w.group), cfg.k)?;
    let (raw, objective) = match method {
        Method::Lp => solve_lp(samples, cfg)?,
        Method::Grid => {
            let m = grid_minimize(samples, cfg, GridSpec::default())?;
            let obj = dual_objective(samples, &m, cfg)?;
            (m, obj)
        }
    };
    let model = FittedModel {
        multipliers: normalize_gauge(&raw, cfg),
        cfg: cfg.clone(),
        group_sizes: sizes,
        provenance: Provenance {
            solver: method,
            objective,
            seed: cfg.seed,
        },
        raw: Some(raw),
    };
    diagnostics(&model, samples).log_warnings();
    Ok(model)
}

fn solve_lp(samples: &[WeightedSample], cfg: &ProblemConfig) -> Result<(Multipliers, f64)> {
    solve_assembled(&assemble(samples, cfg)?)
}

/// Minimizes the dual over arbitrary positive weights (e.g. the atoms of a
/// discrete population) through the LP. Returns raw, unnormalized
/// multipliers and the minimum.
pub fn dual_minimum_weighted(
    samples: &[WeightedSample],
    cfg: &ProblemConfig,
) -> Result<(Multipliers, f64)> {
    solve_assembled(&assemble_weighted(samples, cfg)?)
}

fn solve_assembled(lp: &SparseLp) -> Result<(Multipliers, f64)> {
    let opts = SolveOptions::default();
    let sol = solver::solve(lp, &opts);
    log::debug!(
        "LP n={} status={:?} iterations={}",
        lp.n,
        sol.status,
        sol.iterations
    );
    if sol.status != Status::Optimal {
        return Err(Error::SolverFailure(format!(
            "status {:?} after {} iterations",
            sol.status, sol.iterations
        )));
    }
    check_certificate(lp, &sol, opts.feas_tol)?;
    let (m, _) = extract(lp, &sol.y)?;
    Ok((m, sol.objective))
}

/// Post-fit checks on the fitting sample.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitDiagnostics {
    #[serde(serialize_with = "ser_vec")]
    pub accept_rate: Vec<f64>,
    /// `|accept_rate - alpha| <= 2/n_s` per group.
    pub accept_within: Vec<bool>,
    /// Samples with `|G| <= 1e-9`, per group.
    pub boundary: Vec<usize>,
    #[serde(serialize_with = "ser_f64")]
    pub gamma_l1: f64,
    pub lambda_within: Vec<bool>,
}

impl FitDiagnostics {
    pub fn ok(&self) -> bool {
        self.accept_within.iter().all(|&b| b) && self.boundary.iter().all(|&c| c <= 2)
    }

    fn log_warnings(&self) {
        for (s, ok) in self.accept_within.iter().enumerate() {
            if !ok {
                log::warn!(
                    "group {s}: empirical accept rate {:.6} misses its target by more than 2/n_s (duplicate scores?)",
                    self.accept_rate[s]
                );
            }
        }
        for (s, &c) in self.boundary.iter().enumerate() {
            if c > 2 {
                log::warn!("group {s}: {c} samples sit on the decision boundary");
            }
        }
        if self.gamma_l1 > 2.0 + 1e-6 {
            log::warn!("|gamma|_1 = {} exceeds 2", self.gamma_l1);
        }
        if self.lambda_within.iter().any(|&b| !b) {
            log::warn!("lambda exceeds its a-priori bound");
        }
    }
}

pub fn diagnostics(model: &FittedModel, samples: &[WeightedSample]) -> FitDiagnostics {
    let cfg = &model.cfg;
    let m = &model.multipliers;
    let coef = GroupCoef::all(m, cfg);
    let k = cfg.k;
    let mut accepted = vec![0usize; k];
    let mut boundary = vec![0usize; k];
    let mut sizes = vec![0usize; k];
    for w in samples {
        let g = coef[w.group].g(w.effective_score);
        sizes[w.group] += 1;
        if g > 0.0 {
            accepted[w.group] += 1;
        }
        if g.abs() <= 1e-9 {
            boundary[w.group] += 1;
        }
    }
    let accept_rate: Vec<f64> = (0..k)
        .map(|s| accepted[s] as f64 / sizes[s].max(1) as f64)
        .collect();
    let accept_within = (0..k)
        .map(|s| (accept_rate[s] - cfg.alpha[s]).abs() <= 2.0 / sizes[s].max(1) as f64 + 1e-12)
        .collect();
    let gamma_l1 = m.gamma.iter().map(|g| g.abs()).sum();
    let abar = cfg.alpha_bar();
    let lambda_within = (0..k)
        .map(|s| {
            m.lambda[s].abs()
                <= (cfg.p[s] / abar).max(m.gamma[s].abs() / cfg.alpha[s])
                    + 1e-6
                    + cfg.sigma * cfg.p[s] / abar
        })
        .collect();
    FitDiagnostics {
        accept_rate,
        accept_within,
        boundary,
        gamma_l1,
        lambda_within,
    }
}

impl FittedModel {
    /// `c_s = (abar gamma_s / (alpha_s p_s) - sum(gamma)) / 2`; the positive
    /// class needs `e > 1/2 + c_s`.
    pub fn threshold_shift(&self, s: usize) -> f64 {
        let cfg = &self.cfg;
        let m = &self.multipliers;
        0.5 * (cfg.alpha_bar() * m.gamma[s] / (cfg.alpha[s] * cfg.p[s]) - m.gamma_sum())
    }

    fn check_group(&self, s: usize) -> Result<()> {
        if s >= self.cfg.k {
            return Err(Error::GroupOutOfRange {
                group: s,
                k: self.cfg.k,
            });
        }
        Ok(())
    }

    /// The decision at an already-perturbed score.
    pub fn decide(&self, effective_score: f64, s: usize) -> Result<Decision> {
        self.check_group(s)?;
        let g = crate::dual::g_value(effective_score, s, &self.multipliers, &self.cfg);
        Ok(if g <= 0.0 {
            Decision::Reject
        } else if effective_score > 0.5 + self.threshold_shift(s) {
            Decision::One
        } else {
            Decision::Zero
        })
    }

    /// The reject region in effective-score space, `[lo, hi]`; `None` when
    /// the group never abstains.
    pub fn reject_interval(&self, s: usize) -> Result<Option<(f64, f64)>> {
        self.check_group(s)?;
        let cfg = &self.cfg;
        let m = &self.multipliers;
        let r = cfg.alpha_bar() / cfg.p[s];
        let lo = -r * m.lambda[s];
        let hi = 1.0 - m.gamma_sum() + r * (m.lambda[s] + m.gamma[s] / cfg.alpha[s]);
        Ok(if lo <= hi { Some((lo, hi)) } else { None })
    }
}

impl FittedModel {
    /// Probabilities of `[Zero, One, Reject]` at raw score `score` when the
    /// effective score is `score + U[0, sigma]`. Without fresh noise (or with
    /// `sigma = 0`) this is the indicator of [`FittedModel::decide`].
    pub fn decision_probs(&self, score: f64, s: usize, fresh_noise: bool) -> Result<[f64; 3]> {
        let sigma = self.cfg.sigma;
        if !fresh_noise || sigma == 0.0 {
            return Ok(match self.decide(score, s)? {
                Decision::Zero => [1.0, 0.0, 0.0],
                Decision::One => [0.0, 1.0, 0.0],
                Decision::Reject => [0.0, 0.0, 1.0],
            });
        }
        let (a, b) = (score, score + sigma);
        let overlap = |lo: f64, hi: f64| (hi.min(b) - lo.max(a)).max(0.0) / sigma;
        let t = 0.5 + self.threshold_shift(s);
        let (zero, one, reject) = match self.reject_interval(s)? {
            Some((lo, hi)) => {
                let reject = overlap(lo, hi);
                // the parts of (-inf, t] and (t, inf) outside [lo, hi]
                let zero = overlap(f64::NEG_INFINITY, t.min(lo)) + overlap(hi, t);
                let one = overlap(t, lo) + overlap(t.max(hi), f64::INFINITY);
                (zero, one, reject)
            }
            None => (
                overlap(f64::NEG_INFINITY, t),
                overlap(t, f64::INFINITY),
                0.0,
            ),
        };
        let total = zero + one + reject;
        Ok([zero / total, one / total, reject / total])
    }
}

/// Classifies one score, optionally perturbing it with a fresh `U[0, sigma]`
/// draw from `rng`.
pub fn predict<R: Rng + ?Sized>(
    model: &FittedModel,
    score: f64,
    s: usize,
    fresh_noise: bool,
    rng: &mut R,
) -> Result<Decision> {
    let e = if fresh_noise && model.cfg.sigma > 0.0 {
        score + model.cfg.sigma * rng.random::<f64>()
    } else {
        score
    };
    model.decide(e, s)
}

/// Vectorized [`predict`]; sample `i` uses the `i`-th draw of the prediction
/// noise stream of `seed`, so the output does not depend on scheduling.
pub fn predict_batch(
    model: &FittedModel,
    samples: &[ScoredSample],
    fresh_noise: bool,
    seed: u64,
) -> Result<Vec<Decision>> {
    let sigma = model.cfg.sigma;
    let one = |(i, x): (usize, &ScoredSample)| {
        let e = if fresh_noise && sigma > 0.0 {
            x.score + sigma * uniform_at(seed, STREAM_PREDICT_NOISE, i as u64)
        } else {
            x.score
        };
        model.decide(e, x.group)
    };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        if samples.len() >= 4096 {
            return samples.par_iter().enumerate().map(one).collect();
        }
    }
    samples.iter().enumerate().map(one).collect()
}

/// On-disk model. `delta` and `group_sizes` ride along so bounds can be
/// recomputed from the file alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    #[serde(serialize_with = "ser_vec")]
    pub lambda: Vec<f64>,
    #[serde(serialize_with = "ser_vec")]
    pub gamma: Vec<f64>,
    #[serde(serialize_with = "ser_vec")]
    pub p: Vec<f64>,
    #[serde(serialize_with = "ser_vec")]
    pub alpha: Vec<f64>,
    #[serde(serialize_with = "ser_f64")]
    pub sigma: f64,
    pub seed: u64,
    #[serde(serialize_with = "ser_f64")]
    pub objective: f64,
    pub solver: Method,
    #[serde(serialize_with = "ser_f64", default = "default_delta")]
    pub delta: f64,
    #[serde(default)]
    pub group_sizes: Vec<usize>,
}

fn default_delta() -> f64 {
    0.05
}

impl From<&FittedModel> for ModelFile {
    fn from(m: &FittedModel) -> Self {
        ModelFile {
            lambda: m.multipliers.lambda.clone(),
            gamma: m.multipliers.gamma.clone(),
            p: m.cfg.p.clone(),
            alpha: m.cfg.alpha.clone(),
            sigma: m.cfg.sigma,
            seed: m.cfg.seed,
            objective: m.provenance.objective,
            solver: m.provenance.solver,
            delta: m.cfg.delta,
            group_sizes: m.group_sizes.clone(),
        }
    }
}

impl ModelFile {
    pub fn into_model(self) -> Result<FittedModel> {
        let cfg = ProblemConfig::new(self.alpha, self.p, self.sigma, self.delta, self.seed)?;
        let k = cfg.k;
        if self.lambda.len() != k || self.gamma.len() != k {
            return Err(Error::Model(format!("expected {k} multipliers per block")));
        }
        if !self.group_sizes.is_empty() && self.group_sizes.len() != k {
            return Err(Error::Model(format!("expected {k} group sizes")));
        }
        let m = Multipliers {
            lambda: self.lambda,
            gamma: self.gamma,
        };
        if !m.is_finite() || !self.objective.is_finite() {
            return Err(Error::Model("non-finite value".into()));
        }
        let scale = 1.0 + m.gamma.iter().map(|g| g.abs()).sum::<f64>();
        if m.gamma_sum().abs() > 1e-9 * scale {
            return Err(Error::Model(format!(
                "gamma is not gauge-normalized (sum {:e})",
                m.gamma_sum()
            )));
        }
        let model = FittedModel {
            multipliers: m,
            cfg,
            group_sizes: self.group_sizes,
            provenance: Provenance {
                solver: self.solver,
                objective: self.objective,
                seed: self.seed,
            },
            raw: None,
        };
        if model.multipliers.gamma.iter().map(|g| g.abs()).sum::<f64>()
            > 2.0 + 1e-6 + 4.0 * model.cfg.sigma
        {
            log::warn!("loaded model has |gamma|_1 > 2");
        }
        Ok(model)
    }
}

pub fn model_to_json(model: &FittedModel) -> Result<String> {
    Ok(crate::numfmt::to_json_string(&ModelFile::from(model))?)
}

pub fn model_from_json(text: &str) -> Result<FittedModel> {
    let file: ModelFile = serde_json::from_str(text)?;
    file.into_model()
}
