//! Test-set statistics per group and their comparison with the guarantee bounds.

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::numfmt::{f17, ser_f64, ser_opt};
use crate::postprocess::{fit, predict_batch, Method};
use crate::problem::{guarantee_bounds, Decision, GuaranteeBounds, ProblemConfig, ScoredSample};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Counts {
    pub size: usize,
    pub classified: usize,
    pub rejected: usize,
    /// Classified as 1.
    pub positives: usize,
    /// Classified and equal to the label.
    pub correct: usize,
}

impl Counts {
    fn add(&mut self, d: Decision, label: u8) {
        self.size += 1;
        match d {
            Decision::Reject => self.rejected += 1,
            Decision::Zero | Decision::One => {
                self.classified += 1;
                let one = d == Decision::One;
                self.positives += usize::from(one);
                self.correct += usize::from(u8::from(one) == label);
            }
        }
    }

    fn merge(&mut self, o: &Counts) {
        self.size += o.size;
        self.classified += o.classified;
        self.rejected += o.rejected;
        self.positives += o.positives;
        self.correct += o.correct;
    }

    fn ratio(a: usize, b: usize) -> Option<f64> {
        (b > 0).then(|| a as f64 / b as f64)
    }

    /// Accuracy on classified points.
    pub fn acc(&self) -> Option<f64> {
        Self::ratio(self.correct, self.classified)
    }

    pub fn clf(&self) -> Option<f64> {
        Self::ratio(self.classified, self.size)
    }

    /// Positive rate on classified points.
    pub fn pos(&self) -> Option<f64> {
        Self::ratio(self.positives, self.classified)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Rates {
    #[serde(serialize_with = "ser_opt")]
    pub acc: Option<f64>,
    #[serde(serialize_with = "ser_opt")]
    pub clf: Option<f64>,
    #[serde(serialize_with = "ser_opt")]
    pub pos: Option<f64>,
    pub counts: Counts,
}

impl From<Counts> for Rates {
    fn from(c: Counts) -> Self {
        Rates {
            acc: c.acc(),
            clf: c.clf(),
            pos: c.pos(),
            counts: c,
        }
    }
}

/// Per-group and overall rates. `None` marks an empty denominator.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupMetrics {
    pub per_group: Vec<Rates>,
    pub overall: Rates,
}

/// Counts decisions against `(group, label)` pairs for `k` groups.
pub fn evaluate(decisions: &[Decision], test: &[(usize, u8)], k: usize) -> Result<GroupMetrics> {
    if decisions.len() != test.len() {
        return Err(Error::LengthMismatch {
            left: decisions.len(),
            right: test.len(),
        });
    }
    let mut per = vec![Counts::default(); k];
    for (&d, &(s, y)) in decisions.iter().zip(test) {
        if s >= k {
            return Err(Error::GroupOutOfRange { group: s, k });
        }
        per[s].add(d, y);
    }
    let mut all = Counts::default();
    per.iter().for_each(|c| all.merge(c));
    Ok(GroupMetrics {
        per_group: per.into_iter().map(Rates::from).collect(),
        overall: all.into(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    /// `reject`, `dp`, or `dp_pairwise`.
    pub kind: &'static str,
    /// Group index; absent for the pairwise row.
    pub s: Option<usize>,
    #[serde(serialize_with = "ser_opt")]
    pub value: Option<f64>,
    #[serde(serialize_with = "ser_f64")]
    pub bound: f64,
    /// `bound - value`; negative on failure.
    #[serde(serialize_with = "ser_opt")]
    pub margin: Option<f64>,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GuaranteeReport {
    pub checks: Vec<Check>,
    pub pass: bool,
}

fn check(kind: &'static str, s: Option<usize>, value: Option<f64>, bound: f64) -> Check {
    let margin = value.map(|v| bound - v);
    Check {
        kind,
        s,
        value,
        bound,
        margin,
        pass: margin.is_some_and(|m| m >= 0.0),
    }
}

/// Compares `|clf_s - alpha_s|` with the reject bound and `|pos_s - pos|`
/// with the per-group DP bound. The pairwise row compares the largest
/// `|pos_s - pos_t|` with the sum of the two largest DP bounds. Undefined
/// rates fail.
pub fn guarantee_report(
    metrics: &GroupMetrics,
    alpha: &[f64],
    bounds: &GuaranteeBounds,
) -> GuaranteeReport {
    let mut checks = Vec::new();
    for (s, r) in metrics.per_group.iter().enumerate() {
        checks.push(check(
            "reject",
            Some(s),
            r.clf.map(|c| (c - alpha[s]).abs()),
            bounds.reject_bound[s],
        ));
    }
    let pos = metrics.overall.pos;
    for (s, r) in metrics.per_group.iter().enumerate() {
        let v = r.pos.zip(pos).map(|(a, b)| (a - b).abs());
        checks.push(check("dp", Some(s), v, bounds.dp_bound[s]));
    }
    if metrics.per_group.len() > 1 {
        let ps: Option<Vec<f64>> = metrics.per_group.iter().map(|r| r.pos).collect();
        let gap = ps.map(|v| {
            v.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
                - v.iter().cloned().fold(f64::INFINITY, f64::min)
        });
        let mut b = bounds.dp_bound.clone();
        b.sort_by(|x, y| y.total_cmp(x));
        checks.push(check("dp_pairwise", None, gap, b[0] + b[1]));
    }
    let pass = checks.iter().all(|c| c.pass);
    GuaranteeReport { checks, pass }
}

#[derive(Debug, Serialize)]
struct GroupEntry<'a> {
    s: usize,
    #[serde(flatten)]
    rates: &'a Rates,
}

#[derive(Debug, Serialize)]
struct MetricsFile<'a> {
    per_group: Vec<GroupEntry<'a>>,
    overall: &'a Rates,
    bounds: Option<&'a GuaranteeBounds>,
    checks: Option<Vec<Check>>,
    pass: Option<bool>,
}

/// Metrics JSON. Group indices are shifted by `base` (1 for files that
/// number groups from 1).
pub fn metrics_json(
    metrics: &GroupMetrics,
    bounds: Option<&GuaranteeBounds>,
    report: Option<&GuaranteeReport>,
    base: usize,
) -> Result<String> {
    let file = MetricsFile {
        per_group: metrics
            .per_group
            .iter()
            .enumerate()
            .map(|(s, rates)| GroupEntry { s: s + base, rates })
            .collect(),
        overall: &metrics.overall,
        bounds,
        checks: report.map(|r| {
            r.checks
                .iter()
                .map(|c| Check {
                    s: c.s.map(|s| s + base),
                    ..c.clone()
                })
                .collect()
        }),
        pass: report.map(|r| r.pass),
    };
    Ok(crate::numfmt::to_json_string(&file)?)
}

/// Parses `lo:hi:count` into `count` evenly spaced values including both ends.
pub fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    let bad = |reason: &str| Error::config("alpha-grid", format!("'{spec}': {reason}"));
    let parts: Vec<&str> = spec.split(':').collect();
    let [lo, hi, n] = parts.as_slice() else {
        return Err(bad("expected lo:hi:count"));
    };
    let lo: f64 = lo.trim().parse().map_err(|_| bad("lo is not a number"))?;
    let hi: f64 = hi.trim().parse().map_err(|_| bad("hi is not a number"))?;
    let n: usize = n
        .trim()
        .parse()
        .map_err(|_| bad("count is not a positive integer"))?;
    if n == 0 || !(lo > 0.0 && hi <= 1.0 && lo <= hi) || (n == 1 && lo != hi) {
        return Err(bad("need 0 < lo <= hi <= 1 and count >= 1"));
    }
    if n == 1 {
        return Ok(vec![lo]);
    }
    Ok((0..n)
        .map(|i| {
            if i + 1 == n {
                hi
            } else {
                lo + (hi - lo) * i as f64 / (n - 1) as f64
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub alpha: f64,
    pub metrics: GroupMetrics,
    pub report: GuaranteeReport,
}

/// Fits at each shared `alpha` of the grid on `unlabeled` and evaluates on
/// the labeled `test` set. Grid points are independent jobs.
pub fn sweep(
    unlabeled: &[ScoredSample],
    test: &[ScoredSample],
    base: &ProblemConfig,
    grid: &[f64],
    method: Method,
    fresh_noise: bool,
) -> Result<Vec<SweepRow>> {
    let labels: Vec<(usize, u8)> = test
        .iter()
        .enumerate()
        .map(|(i, t)| {
            t.label
                .map(|y| (t.group, y))
                .ok_or_else(|| Error::config("test", format!("row {i} has no label")))
        })
        .collect::<Result<_>>()?;
    let one = |&a: &f64| -> Result<SweepRow> {
        let cfg = base.with_alpha(vec![a; base.k])?;
        let model = fit(unlabeled, &cfg, method)?;
        let decisions = predict_batch(&model, test, fresh_noise, cfg.seed)?;
        let metrics = evaluate(&decisions, &labels, cfg.k)?;
        let bounds = guarantee_bounds(&cfg, &model.group_sizes)?;
        let report = guarantee_report(&metrics, &cfg.alpha, &bounds);
        Ok(SweepRow {
            alpha: a,
            metrics,
            report,
        })
    };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        grid.par_iter().map(one).collect()
    }
    #[cfg(not(feature = "parallel"))]
    grid.iter().map(one).collect()
}

/// Sweep CSV: `alpha`, then `acc_s,clf_s,pos_s` per group (numbered from
/// `base`). Undefined rates are empty cells.
pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], k: usize, base: usize, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["alpha".to_string()];
    for s in 0..k {
        for name in ["acc", "clf", "pos"] {
            header.push(format!("{name}_{}", s + base));
        }
    }
    w.write_record(&header)?;
    let cell = |v: Option<f64>| v.map(f17).unwrap_or_default();
    for r in rows {
        let mut rec = vec![f17(r.alpha)];
        for g in &r.metrics.per_group {
            rec.extend([cell(g.acc), cell(g.clf), cell(g.pos)]);
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const Z: Decision = Decision::Zero;
    const O: Decision = Decision::One;
    const R: Decision = Decision::Reject;

    #[test]
    fn hand_counted_group() {
        let m = evaluate(&[O, Z, R], &[(0, 1), (0, 0), (0, 1)], 1).unwrap();
        let g = &m.per_group[0];
        assert_eq!(g.acc, Some(1.0));
        assert_eq!(g.clf, Some(2.0 / 3.0));
        assert_eq!(g.pos, Some(0.5));
        assert_eq!(
            g.counts,
            Counts {
                size: 3,
                classified: 2,
                rejected: 1,
                positives: 1,
                correct: 2
            }
        );
    }

    #[test]
    fn never_rejecting_classifies_everything() {
        let m = evaluate(&[O, Z, Z, O], &[(0, 1), (1, 1), (0, 0), (1, 0)], 2).unwrap();
        assert!(m.per_group.iter().all(|g| g.clf == Some(1.0)));
    }

    #[test]
    fn empty_denominators_are_undefined() {
        let m = evaluate(&[R, R, O], &[(0, 1), (0, 0), (1, 1)], 3).unwrap();
        assert_eq!(m.per_group[0].acc, None);
        assert_eq!(m.per_group[0].pos, None);
        assert_eq!(m.per_group[0].clf, Some(0.0));
        assert_eq!(m.per_group[2].clf, None);
        assert!(matches!(
            evaluate(&[R], &[], 1),
            Err(Error::LengthMismatch { left: 1, right: 0 })
        ));
    }

    fn bounds(k: usize) -> GuaranteeBounds {
        GuaranteeBounds {
            u: vec![0.05; k],
            reject_bound: vec![0.05; k],
            dp_bound: vec![0.1; k],
            risk_slack: 1.0,
        }
    }

    #[test]
    fn report_passes_and_fails_with_margins() {
        // full acceptance: the reject check reads |clf - 1|
        let m = evaluate(&[O, Z, O, Z], &[(0, 1), (0, 0), (1, 1), (1, 0)], 2).unwrap();
        let r = guarantee_report(&m, &[1.0, 1.0], &bounds(2));
        assert!(r.pass);
        assert_eq!(r.checks[0].margin, Some(0.05));
        // constant classifier that rejects one group entirely
        let m = evaluate(&[O, O, R, R], &[(0, 1), (0, 0), (1, 1), (1, 0)], 2).unwrap();
        let r = guarantee_report(&m, &[0.8, 0.8], &bounds(2));
        assert!(!r.pass);
        let bad: Vec<&Check> = r.checks.iter().filter(|c| !c.pass).collect();
        assert!(bad
            .iter()
            .any(|c| c.kind == "reject" && c.margin.unwrap() < 0.0));
        assert!(bad.iter().any(|c| c.kind == "dp" && c.value.is_none()));
        let json = metrics_json(&m, Some(&bounds(2)), Some(&r), 1).unwrap();
        assert!(json.contains("\"pass\": false"));
        assert!(json.contains("\"acc\": null"));
    }

    #[test]
    fn grid_parsing() {
        let g = parse_grid("0.8:0.99:20").unwrap();
        assert_eq!(g.len(), 20);
        assert_eq!(g[0], 0.8);
        assert_eq!(g[19], 0.99);
        assert_eq!(parse_grid("0.9:0.9:1").unwrap(), vec![0.9]);
        for bad in ["0.8:0.99", "a:1:2", "0.5:1.2:3", "0.9:0.8:3", "0.5:0.9:0"] {
            assert!(parse_grid(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn sweep_csv_shape() {
        let m = evaluate(&[O, R], &[(0, 1), (1, 0)], 2).unwrap();
        let report = guarantee_report(&m, &[0.9, 0.9], &bounds(2));
        let rows = vec![SweepRow {
            alpha: 0.9,
            metrics: m,
            report,
        }];
        let mut buf = Vec::new();
        write_sweep_csv(&rows, 2, 1, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "alpha,acc_1,clf_1,pos_1,acc_2,clf_2,pos_2");
        assert!(lines[1].ends_with(",,0.0000000000000000e0,"));
    }

    fn decision() -> impl Strategy<Value = Decision> {
        prop_oneof![Just(Z), Just(O), Just(R)]
    }

    proptest! {
        #[test]
        fn permutation_invariant_and_consistent(
            rows in prop::collection::vec((decision(), 0usize..3, 0u8..2), 0..200),
            seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            let (d, t): (Vec<Decision>, Vec<(usize, u8)>) = rows.iter().map(|&(d, s, y)| (d, (s, y))).unzip();
            let m = evaluate(&d, &t, 3).unwrap();
            let mut shuffled = rows.clone();
            shuffled.shuffle(&mut crate::rng::stream_rng(seed, 0));
            let (d2, t2): (Vec<Decision>, Vec<(usize, u8)>) = shuffled.iter().map(|&(d, s, y)| (d, (s, y))).unzip();
            prop_assert_eq!(&m, &evaluate(&d2, &t2, 3).unwrap());
            for g in m.per_group.iter().chain(std::iter::once(&m.overall)) {
                let c = g.counts;
                prop_assert_eq!(c.classified + c.rejected, c.size);
                if let Some(a) = g.acc { prop_assert!((a - c.correct as f64 / c.classified as f64).abs() <= 1e-15); }
                if let Some(v) = g.clf { prop_assert!((v - c.classified as f64 / c.size as f64).abs() <= 1e-15); }
                if let Some(p) = g.pos { prop_assert!((p - c.positives as f64 / c.classified as f64).abs() <= 1e-15); }
                for v in [g.acc, g.clf, g.pos].into_iter().flatten() {
                    prop_assert!((0.0..=1.0).contains(&v));
                }
            }
        }
    }
}
