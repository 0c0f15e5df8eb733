//! Cross-module checks: files in, fitted model, decisions, metrics and the
//! population oracle.

#![allow(clippy::needless_range_loop)]

use fair_abstain::data::{
    read_decisions_from, read_scores_from, write_decisions, write_scores, GroupBase,
};
use fair_abstain::dual::WeightedSample;
use fair_abstain::metrics::{evaluate, guarantee_report, parse_grid, sweep};
use fair_abstain::oracle::{
    model_table, oracle_solve_relaxed, population_metrics, Family, SyntheticGenerator,
};
use fair_abstain::postprocess::{
    diagnostics, fit, model_from_json, model_to_json, predict_batch, randomize, Method,
};
use fair_abstain::problem::{estimate_p, guarantee_bounds, ProblemConfig};

fn logistic(seed: u64) -> SyntheticGenerator {
    SyntheticGenerator::new(Family::logistic2(), vec![0.5, 0.5], seed).unwrap()
}

#[test]
fn score_file_to_metrics() {
    let data = logistic(11).generate(1500);
    let ids: Vec<String> = (0..data.unlabeled.len()).map(|i| format!("u{i}")).collect();
    let mut buf = Vec::new();
    write_scores(&mut buf, &ids, &data.unlabeled, GroupBase::One).unwrap();
    let file = read_scores_from(buf.as_slice(), "mem", GroupBase::One).unwrap();
    assert_eq!(file.samples, data.unlabeled);

    let cfg = ProblemConfig::new(
        vec![0.85, 0.85],
        estimate_p(&file.group_sizes()).unwrap(),
        1e-3,
        0.05,
        2,
    )
    .unwrap();
    let model = fit(&file.samples, &cfg, Method::Lp).unwrap();
    let loaded = model_from_json(&model_to_json(&model).unwrap()).unwrap();
    assert_eq!(loaded.multipliers, model.multipliers);

    let decisions = predict_batch(&loaded, &data.test, true, 9).unwrap();
    let tids: Vec<String> = (0..data.test.len()).map(|i| format!("t{i}")).collect();
    let groups: Vec<usize> = data.test.iter().map(|s| s.group).collect();
    let mut out = Vec::new();
    write_decisions(&mut out, &tids, &groups, &decisions, GroupBase::One).unwrap();
    let back = read_decisions_from(out.as_slice(), "mem", GroupBase::One).unwrap();
    assert_eq!(back.decisions, decisions);

    let labels: Vec<(usize, u8)> = data
        .test
        .iter()
        .map(|s| (s.group, s.label.unwrap()))
        .collect();
    let m = evaluate(&back.decisions, &labels, 2).unwrap();
    let bounds = guarantee_bounds(&cfg, &model.group_sizes).unwrap();
    let report = guarantee_report(&m, &cfg.alpha, &bounds);
    assert!(report.pass, "{report:?}");
}

#[test]
fn lp_and_grid_fits_classify_alike() {
    let data = logistic(12).generate(150);
    let cfg = ProblemConfig::new(vec![0.7, 0.9], vec![0.5, 0.5], 1e-3, 0.05, 5).unwrap();
    let a = fit(&data.unlabeled, &cfg, Method::Lp).unwrap();
    let b = fit(&data.unlabeled, &cfg, Method::Grid).unwrap();
    assert!((a.provenance.objective - b.provenance.objective).abs() < 1e-6);
    let da = predict_batch(&a, &data.test, false, 0).unwrap();
    let db = predict_batch(&b, &data.test, false, 0).unwrap();
    let differ = da.iter().zip(&db).filter(|(x, y)| x != y).count();
    // only points within the solver tolerance of a decision boundary may differ
    assert!(differ <= 2, "{differ} decisions differ");
}

#[test]
fn fitted_accept_rates_are_exact_on_the_fitting_sample() {
    let data = logistic(13).generate(800);
    let cfg = ProblemConfig::new(vec![0.75, 0.95], vec![0.5, 0.5], 1e-3, 0.05, 6).unwrap();
    let model = fit(&data.unlabeled, &cfg, Method::Lp).unwrap();
    let noisy =
        WeightedSample::uniform(&randomize(&data.unlabeled, cfg.sigma, cfg.seed), 2).unwrap();
    let d = diagnostics(&model, &noisy);
    assert!(d.ok(), "{d:?}");
}

#[test]
fn fitted_model_sits_between_the_oracle_and_the_bounds() {
    let g = logistic(14);
    let data = g.generate(4000);
    let alpha = vec![0.85, 0.85];
    let cfg = ProblemConfig::new(alpha.clone(), vec![0.5, 0.5], 1e-3, 0.05, 7).unwrap();
    let model = fit(&data.unlabeled, &cfg, Method::Lp).unwrap();
    let (pop, scores) = g.population(1500).unwrap();
    let table = model_table(&model, &pop, &scores, true).unwrap();
    let pm = population_metrics(&pop, &table).unwrap();
    let bounds = guarantee_bounds(&cfg, &model.group_sizes).unwrap();
    for s in 0..2 {
        assert!(
            (pm.nab_s[s] - alpha[s]).abs() <= bounds.reject_bound[s],
            "group {s}: {}",
            pm.nab_s[s]
        );
    }
    // the relaxed oracle at the achieved rates and gap is a lower bound
    let oracle = oracle_solve_relaxed(&pop, &pm.nab_s, pm.dp_gap()).unwrap();
    assert!(
        pm.risk >= oracle.risk - 1e-9,
        "{} < {}",
        pm.risk,
        oracle.risk
    );
    assert!(pm.risk - oracle.risk <= bounds.risk_slack);
}

#[test]
fn sweep_is_deterministic_and_tracks_the_grid() {
    let data = logistic(15).generate(300);
    let cfg = ProblemConfig::new(vec![0.9, 0.9], vec![0.5, 0.5], 1e-3, 0.05, 8).unwrap();
    let grid = parse_grid("0.8:0.99:20").unwrap();
    let a = sweep(&data.unlabeled, &data.test, &cfg, &grid, Method::Lp, true).unwrap();
    let b = sweep(&data.unlabeled, &data.test, &cfg, &grid, Method::Lp, true).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), 20);
    for r in &a {
        let clf = r.metrics.overall.clf.unwrap();
        assert!((clf - r.alpha).abs() < 0.1, "alpha {} clf {clf}", r.alpha);
    }
}
