//! Domain types, configuration validation and derived constants.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numfmt::{ser_f64, ser_opt_vec, ser_vec};

/// A validated problem configuration. Build it with [`ProblemConfig::new`] or
/// [`validate_config`]; `alpha_bar` is cached at validation time.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemConfig {
    pub k: usize,
    pub alpha: Vec<f64>,
    pub p: Vec<f64>,
    pub sigma: f64,
    pub delta: f64,
    pub seed: u64,
    alpha_bar: f64,
}

impl ProblemConfig {
    pub fn new(alpha: Vec<f64>, p: Vec<f64>, sigma: f64, delta: f64, seed: u64) -> Result<Self> {
        validate_config(ProblemConfig {
            k: alpha.len(),
            alpha,
            p,
            sigma,
            delta,
            seed,
            alpha_bar: f64::NAN,
        })
    }

    /// `sum_s p_s alpha_s`.
    pub fn alpha_bar(&self) -> f64 {
        self.alpha_bar
    }

    /// Same config with the group masses replaced.
    pub fn with_p(&self, p: Vec<f64>) -> Result<Self> {
        ProblemConfig::new(self.alpha.clone(), p, self.sigma, self.delta, self.seed)
    }

    pub fn with_alpha(&self, alpha: Vec<f64>) -> Result<Self> {
        ProblemConfig::new(alpha, self.p.clone(), self.sigma, self.delta, self.seed)
    }

    pub fn with_sigma(&self, sigma: f64) -> Result<Self> {
        ProblemConfig::new(
            self.alpha.clone(),
            self.p.clone(),
            sigma,
            self.delta,
            self.seed,
        )
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        ProblemConfig {
            seed,
            ..self.clone()
        }
    }
}

/// Checks every invariant of `cfg` and returns it with `alpha_bar` cached.
pub fn validate_config(mut cfg: ProblemConfig) -> Result<ProblemConfig> {
    if cfg.k == 0 {
        return Err(Error::config("K", "need at least one group"));
    }
    if cfg.alpha.len() != cfg.k {
        return Err(Error::config(
            "alpha",
            format!("expected {} entries, got {}", cfg.k, cfg.alpha.len()),
        ));
    }
    if cfg.p.len() != cfg.k {
        return Err(Error::config(
            "p",
            format!("expected {} entries, got {}", cfg.k, cfg.p.len()),
        ));
    }
    for (s, &a) in cfg.alpha.iter().enumerate() {
        if !(a > 0.0 && a <= 1.0) {
            return Err(Error::config(
                "alpha",
                format!("alpha[{s}] = {a} is outside (0, 1]"),
            ));
        }
    }
    for (s, &ps) in cfg.p.iter().enumerate() {
        if !(ps > 0.0 && ps.is_finite()) {
            return Err(Error::config("p", format!("p[{s}] = {ps} is not positive")));
        }
    }
    let total: f64 = cfg.p.iter().sum();
    if (total - 1.0).abs() > 1e-12 {
        return Err(Error::config(
            "p",
            format!("not a simplex: entries sum to {total}"),
        ));
    }
    if !(cfg.sigma >= 0.0 && cfg.sigma.is_finite()) {
        return Err(Error::config(
            "sigma",
            format!("{} must be a finite value >= 0", cfg.sigma),
        ));
    }
    if !(cfg.delta > 0.0 && cfg.delta < 1.0) {
        return Err(Error::config(
            "delta",
            format!("{} is outside (0, 1)", cfg.delta),
        ));
    }
    cfg.alpha_bar = cfg.p.iter().zip(&cfg.alpha).map(|(p, a)| p * a).sum();
    Ok(cfg)
}

/// Group masses estimated by relative group counts.
pub fn estimate_p(group_sizes: &[usize]) -> Result<Vec<f64>> {
    let n: usize = group_sizes.iter().sum();
    if let Some(s) = group_sizes.iter().position(|&c| c == 0) {
        return Err(Error::MissingGroup(s));
    }
    Ok(group_sizes.iter().map(|&c| c as f64 / n as f64).collect())
}

/// The on-disk config: `p` may be null, in which case it is estimated from
/// the group counts of the unlabeled sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigFile {
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(serialize_with = "ser_vec")]
    pub alpha: Vec<f64>,
    #[serde(default, serialize_with = "ser_opt_vec")]
    pub p: Option<Vec<f64>>,
    #[serde(serialize_with = "ser_f64")]
    pub sigma: f64,
    #[serde(serialize_with = "ser_f64")]
    pub delta: f64,
    pub seed: u64,
}

impl ConfigFile {
    /// Validates the file against the observed group sizes.
    pub fn resolve(&self, group_sizes: &[usize]) -> Result<ProblemConfig> {
        if group_sizes.len() != self.k {
            return Err(Error::DimensionMismatch {
                expected: self.k,
                got: group_sizes.len(),
            });
        }
        let p = match &self.p {
            Some(p) => p.clone(),
            None => estimate_p(group_sizes)?,
        };
        validate_config(ProblemConfig {
            k: self.k,
            alpha: self.alpha.clone(),
            p,
            sigma: self.sigma,
            delta: self.delta,
            seed: self.seed,
            alpha_bar: f64::NAN,
        })
    }
}

impl From<&ProblemConfig> for ConfigFile {
    fn from(cfg: &ProblemConfig) -> Self {
        ConfigFile {
            k: cfg.k,
            alpha: cfg.alpha.clone(),
            p: Some(cfg.p.clone()),
            sigma: cfg.sigma,
            delta: cfg.delta,
            seed: cfg.seed,
        }
    }
}

/// One unlabeled or labeled observation, reduced to its base score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredSample {
    pub group: usize,
    pub score: f64,
    pub noise: Option<f64>,
    pub label: Option<u8>,
}

impl ScoredSample {
    pub fn new(group: usize, score: f64) -> Self {
        ScoredSample {
            group,
            score,
            noise: None,
            label: None,
        }
    }

    pub fn labeled(group: usize, score: f64, label: u8) -> Self {
        ScoredSample {
            group,
            score,
            noise: None,
            label: Some(label),
        }
    }

    pub fn effective_score(&self) -> f64 {
        self.score + self.noise.unwrap_or(0.0)
    }
}

/// Dual variables `(lambda, gamma)`; these 2K numbers are the fitted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Multipliers {
    #[serde(serialize_with = "ser_vec")]
    pub lambda: Vec<f64>,
    #[serde(serialize_with = "ser_vec")]
    pub gamma: Vec<f64>,
}

impl Multipliers {
    pub fn zeros(k: usize) -> Self {
        Multipliers {
            lambda: vec![0.0; k],
            gamma: vec![0.0; k],
        }
    }

    pub fn k(&self) -> usize {
        self.lambda.len()
    }

    pub fn gamma_sum(&self) -> f64 {
        self.gamma.iter().sum()
    }

    pub fn is_finite(&self) -> bool {
        self.lambda.iter().chain(&self.gamma).all(|v| v.is_finite())
    }
}

/// Shifts `gamma` along the direction that leaves both the dual objective
/// and the induced classifier unchanged, so that the entries sum to zero.
pub fn normalize_gauge(m: &Multipliers, cfg: &ProblemConfig) -> Multipliers {
    let c = -m.gamma_sum();
    let abar = cfg.alpha_bar();
    let gamma = m
        .gamma
        .iter()
        .zip(cfg.p.iter().zip(&cfg.alpha))
        .map(|(&g, (&p, &a))| g + p * a / abar * c)
        .collect();
    Multipliers {
        lambda: m.lambda.clone(),
        gamma,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Decision {
    Zero,
    One,
    Reject,
}

impl Decision {
    pub fn as_str(self) -> &'static str {
        match self {
            Decision::Zero => "0",
            Decision::One => "1",
            Decision::Reject => "r",
        }
    }

    pub fn parse(s: &str) -> Option<Decision> {
        match s.trim() {
            "0" => Some(Decision::Zero),
            "1" => Some(Decision::One),
            "r" => Some(Decision::Reject),
            _ => None,
        }
    }

    pub fn is_classified(self) -> bool {
        self != Decision::Reject
    }
}

/// Finite-sample tolerances for the accept-rate, parity and risk guarantees.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GuaranteeBounds {
    #[serde(serialize_with = "ser_vec")]
    pub u: Vec<f64>,
    #[serde(serialize_with = "ser_vec")]
    pub reject_bound: Vec<f64>,
    #[serde(serialize_with = "ser_vec")]
    pub dp_bound: Vec<f64>,
    #[serde(serialize_with = "ser_f64")]
    pub risk_slack: f64,
}

/// `sqrt(2 ln(2K/delta) / n) + 2/n`: the accept-rate deviation bound.
pub fn u_bound(n: usize, k: usize, delta: f64) -> f64 {
    let n = n as f64;
    (2.0 * (2.0 * k as f64 / delta).ln() / n).sqrt() + 2.0 / n
}

/// The shorter-form constant `sqrt(2 ln(4K/delta) / (2n)) + 2/n`, kept for
/// comparison with [`u_bound`].
pub fn u_bound_alt(n: usize, k: usize, delta: f64) -> f64 {
    let n = n as f64;
    (2.0 * (4.0 * k as f64 / delta).ln() / (2.0 * n)).sqrt() + 2.0 / n
}

/// `3 sqrt(ln(4K/delta) / (2n)) + 4/n`, the per-group term of the parity
/// bound. The log argument accounts for the union bound over `2K` events.
pub fn v_bound(n: usize, k: usize, delta: f64) -> f64 {
    let n = n as f64;
    3.0 * ((4.0 * k as f64 / delta).ln() / (2.0 * n)).sqrt() + 4.0 / n
}

pub fn guarantee_bounds(cfg: &ProblemConfig, n: &[usize]) -> Result<GuaranteeBounds> {
    if n.len() != cfg.k {
        return Err(Error::DimensionMismatch {
            expected: cfg.k,
            got: n.len(),
        });
    }
    if let Some(s) = n.iter().position(|&c| c == 0) {
        return Err(Error::MissingGroup(s));
    }
    let k = cfg.k;
    let abar = cfg.alpha_bar();
    let u: Vec<f64> = n.iter().map(|&ns| u_bound(ns, k, cfg.delta)).collect();
    let v: Vec<f64> = n.iter().map(|&ns| v_bound(ns, k, cfg.delta)).collect();
    let pooled: f64 = cfg.p.iter().zip(&v).map(|(p, v)| p * v).sum();
    let dp_bound = (0..k)
        .map(|s| v[s] / cfg.alpha[s] + 2.0 / abar * pooled)
        .collect();
    let risk_slack = 6.0
        * (0..k)
            .map(|s| (cfg.p[s] / abar + 1.0 / cfg.alpha[s]) * u[s])
            .sum::<f64>();
    Ok(GuaranteeBounds {
        reject_bound: u.clone(),
        u,
        dp_bound,
        risk_slack,
    })
}
