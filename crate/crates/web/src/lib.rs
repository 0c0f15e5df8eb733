//! Browser bindings for the demo page. Every export takes plain numbers and
//! returns a JSON string, so the page needs no bundler or glue beyond the
//! generated module.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use fair_abstain::dual::{best_lambda, WeightedSample};
use fair_abstain::metrics::{evaluate, sweep, Rates};
use fair_abstain::oracle::{Family, SyntheticData, SyntheticGenerator};
use fair_abstain::postprocess::{fit, predict_batch, randomize, Method};
use fair_abstain::problem::ProblemConfig;

const BINS: usize = 40;

/// A two-group logistic population plus the fitting controls shared by
/// every export.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Setup {
    pub shift: f64,
    pub slope: f64,
    /// Points per group, for both the fitting and the test sample.
    pub n: usize,
    pub sigma: f64,
    pub seed: u64,
}

impl Setup {
    fn data(&self) -> Result<SyntheticData, String> {
        if self.n == 0 || self.n > 200_000 {
            return Err(format!("n = {} must lie in 1..=200000", self.n));
        }
        let family = Family::Logistic2 {
            shift: self.shift,
            slope: self.slope,
        };
        let g = SyntheticGenerator::new(family, vec![0.5, 0.5], self.seed)
            .map_err(|e| e.to_string())?;
        Ok(g.generate(self.n))
    }

    fn config(&self, alpha: Vec<f64>) -> Result<ProblemConfig, String> {
        ProblemConfig::new(alpha, vec![0.5, 0.5], self.sigma, 0.05, self.seed)
            .map_err(|e| e.to_string())
    }
}

#[derive(Serialize)]
struct GroupView {
    /// Unlabeled score counts over `BINS` equal bins of [0, 1].
    hist: Vec<usize>,
    /// Rejected scores, or `None` when the group never abstains.
    reject: Option<(f64, f64)>,
    /// Scores above this are classified 1 (outside the strip).
    threshold: f64,
    test: Rates,
}

#[derive(Serialize)]
struct FitView {
    lambda: Vec<f64>,
    gamma: Vec<f64>,
    objective: f64,
    groups: Vec<GroupView>,
    overall: Rates,
    base: Rates,
}

/// Fits at per-group accept rates and reports the reject strips together
/// with test metrics of the fitted and of the plain 1/2-threshold rule.
pub fn fit_view(setup: Setup, alpha: [f64; 2]) -> Result<String, String> {
    let data = setup.data()?;
    let cfg = setup.config(alpha.to_vec())?;
    let model = fit(&data.unlabeled, &cfg, Method::Lp).map_err(|e| e.to_string())?;
    let decisions =
        predict_batch(&model, &data.test, true, setup.seed).map_err(|e| e.to_string())?;
    let labels: Vec<(usize, u8)> = data
        .test
        .iter()
        .map(|s| (s.group, s.label.unwrap_or(0)))
        .collect();
    let metrics = evaluate(&decisions, &labels, 2).map_err(|e| e.to_string())?;
    let plain: Vec<_> = data
        .test
        .iter()
        .map(|s| {
            if s.score > 0.5 {
                fair_abstain::problem::Decision::One
            } else {
                fair_abstain::problem::Decision::Zero
            }
        })
        .collect();
    let base = evaluate(&plain, &labels, 2).map_err(|e| e.to_string())?;
    let mut hist = vec![vec![0usize; BINS]; 2];
    for s in &data.unlabeled {
        hist[s.group][((s.score * BINS as f64) as usize).min(BINS - 1)] += 1;
    }
    let groups = (0..2)
        .map(|s| {
            Ok(GroupView {
                hist: hist[s].clone(),
                reject: model.reject_interval(s).map_err(|e| e.to_string())?,
                threshold: 0.5 + model.threshold_shift(s),
                test: metrics.per_group[s].clone(),
            })
        })
        .collect::<Result<_, String>>()?;
    let view = FitView {
        lambda: model.multipliers.lambda.clone(),
        gamma: model.multipliers.gamma.clone(),
        objective: model.provenance.objective,
        groups,
        overall: metrics.overall,
        base: base.overall,
    };
    serde_json::to_string(&view).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct Landscape {
    gamma: Vec<f64>,
    objective: Vec<f64>,
    lambda: Vec<Vec<f64>>,
}

/// The dual objective along `gamma = (g, -g)` for `g` in `[-width, width]`,
/// with lambda minimized out exactly at every point.
pub fn landscape_view(
    setup: Setup,
    alpha: [f64; 2],
    width: f64,
    points: usize,
) -> Result<String, String> {
    if !(width > 0.0 && width.is_finite()) || !(2..=2001).contains(&points) {
        return Err("need width > 0 and 2 <= points <= 2001".into());
    }
    let data = setup.data()?;
    let cfg = setup.config(alpha.to_vec())?;
    let noisy = WeightedSample::uniform(&randomize(&data.unlabeled, cfg.sigma, cfg.seed), 2)
        .map_err(|e| e.to_string())?;
    let mut out = Landscape {
        gamma: Vec::new(),
        objective: Vec::new(),
        lambda: Vec::new(),
    };
    for i in 0..points {
        let g = -width + 2.0 * width * i as f64 / (points - 1) as f64;
        let (lambda, f) = best_lambda(&noisy, &[g, -g], &cfg).map_err(|e| e.to_string())?;
        out.gamma.push(g);
        out.objective.push(f);
        out.lambda.push(lambda);
    }
    serde_json::to_string(&out).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct SweepPoint {
    alpha: f64,
    groups: Vec<Rates>,
    overall: Rates,
}

/// Shared accept rates `lo..=hi` in `count` steps; test metrics per step.
pub fn sweep_view(setup: Setup, lo: f64, hi: f64, count: usize) -> Result<String, String> {
    let grid = fair_abstain::metrics::parse_grid(&format!("{lo}:{hi}:{count}"))
        .map_err(|e| e.to_string())?;
    let data = setup.data()?;
    let cfg = setup.config(vec![grid[0]; 2])?;
    let rows = sweep(&data.unlabeled, &data.test, &cfg, &grid, Method::Lp, true)
        .map_err(|e| e.to_string())?;
    let points: Vec<SweepPoint> = rows
        .into_iter()
        .map(|r| SweepPoint {
            alpha: r.alpha,
            groups: r.metrics.per_group,
            overall: r.metrics.overall,
        })
        .collect();
    serde_json::to_string(&points).map_err(|e| e.to_string())
}

fn js(r: Result<String, String>) -> Result<String, JsValue> {
    r.map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn fit_demo(
    shift: f64,
    slope: f64,
    n: usize,
    sigma: f64,
    seed: u32,
    alpha1: f64,
    alpha2: f64,
) -> Result<String, JsValue> {
    js(fit_view(
        Setup {
            shift,
            slope,
            n,
            sigma,
            seed: seed.into(),
        },
        [alpha1, alpha2],
    ))
}

#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn dual_landscape(
    shift: f64,
    slope: f64,
    n: usize,
    sigma: f64,
    seed: u32,
    alpha1: f64,
    alpha2: f64,
    width: f64,
    points: usize,
) -> Result<String, JsValue> {
    js(landscape_view(
        Setup {
            shift,
            slope,
            n,
            sigma,
            seed: seed.into(),
        },
        [alpha1, alpha2],
        width,
        points,
    ))
}

#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn sweep_demo(
    shift: f64,
    slope: f64,
    n: usize,
    sigma: f64,
    seed: u32,
    lo: f64,
    hi: f64,
    count: usize,
) -> Result<String, JsValue> {
    js(sweep_view(
        Setup {
            shift,
            slope,
            n,
            sigma,
            seed: seed.into(),
        },
        lo,
        hi,
        count,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup() -> Setup {
        Setup {
            shift: 0.3,
            slope: 2.0,
            n: 400,
            sigma: 1e-3,
            seed: 1,
        }
    }

    #[test]
    fn fit_reports_two_strips() {
        let v: serde_json::Value =
            serde_json::from_str(&fit_view(setup(), [0.8, 0.9]).unwrap()).unwrap();
        for s in 0..2 {
            let g = &v["groups"][s];
            assert_eq!(
                g["hist"]
                    .as_array()
                    .unwrap()
                    .iter()
                    .map(|c| c.as_u64().unwrap())
                    .sum::<u64>(),
                400
            );
            let (lo, hi) = (
                g["reject"][0].as_f64().unwrap(),
                g["reject"][1].as_f64().unwrap(),
            );
            assert!(lo < hi);
        }
        let g: f64 = v["gamma"]
            .as_array()
            .unwrap()
            .iter()
            .map(|x| x.as_f64().unwrap())
            .sum();
        assert!(g.abs() < 1e-12);
    }

    #[test]
    fn landscape_minimum_matches_the_fit() {
        let fit: serde_json::Value =
            serde_json::from_str(&fit_view(setup(), [0.8, 0.9]).unwrap()).unwrap();
        let l: serde_json::Value =
            serde_json::from_str(&landscape_view(setup(), [0.8, 0.9], 1.0, 401).unwrap()).unwrap();
        let min = l["objective"]
            .as_array()
            .unwrap()
            .iter()
            .map(|x| x.as_f64().unwrap())
            .fold(f64::INFINITY, f64::min);
        let best = fit["objective"].as_f64().unwrap();
        // the grid minimum can only overshoot the exact minimum
        assert!(min >= best - 1e-9 && min - best < 1e-3, "{min} vs {best}");
    }

    #[test]
    fn sweep_and_bad_input() {
        let v: serde_json::Value =
            serde_json::from_str(&sweep_view(setup(), 0.8, 0.99, 5).unwrap()).unwrap();
        assert_eq!(v.as_array().unwrap().len(), 5);
        assert!(fit_view(setup(), [1.2, 0.9]).is_err());
        assert!(sweep_view(setup(), 0.9, 0.8, 5).is_err());
        assert!(landscape_view(setup(), [0.8, 0.9], 1.0, 1).is_err());
    }
}
