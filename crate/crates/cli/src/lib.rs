//! The `fair-abstain` command line. [`run`] parses arguments, executes one
//! subcommand and maps the outcome to an exit code.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use fair_abstain::data::{
    read_decisions, read_scores, split_indices, train_base, write_decisions, write_scores,
    BaseModel, FeatureTable, Fractions, GroupBase, TrainOptions,
};
use fair_abstain::dual::group_sizes;
use fair_abstain::metrics::{
    evaluate, guarantee_report, metrics_json, parse_grid, sweep, write_sweep_csv,
};
use fair_abstain::numfmt::{ser_f64, ser_vec, to_json_string};
use fair_abstain::oracle::{
    oracle_solve, population_metrics, read_population, Family, PopulationMetrics,
    SyntheticGenerator,
};
use fair_abstain::postprocess::{fit, model_from_json, model_to_json, predict_batch, Method};
use fair_abstain::problem::{estimate_p, guarantee_bounds, ProblemConfig, ScoredSample};
use fair_abstain::Error;

/// Environment variable holding the worker count for `sweep`.
pub const THREADS_ENV: &str = "FAIR_ABSTAIN_THREADS";

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_SOLVER: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "fair-abstain",
    version,
    about = "Post-process classifier scores into fair abstaining decisions"
)]
struct Cli {
    /// Group indices in input and output files start at 0 instead of 1.
    #[arg(long, global = true)]
    zero_based: bool,
    /// Emit log records as JSON lines on stderr.
    #[arg(long, global = true)]
    json_logs: bool,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Split a CSV with a group column into train/unlabeled/test parts.
    Split {
        input: PathBuf,
        #[arg(long, default_value = "0.6,0.2,0.2", value_parser = parse_fractions)]
        fractions: Fractions,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory.
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Train the built-in logistic scorer on a labeled feature table.
    TrainBase {
        features: PathBuf,
        #[arg(long, default_value_t = 1e-4)]
        l2: f64,
        #[arg(long, default_value_t = 10_000)]
        max_iter: usize,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Score a feature table with a trained base model.
    Score {
        model: PathBuf,
        features: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Fit the abstaining post-processor on unlabeled scores.
    Postprocess {
        scores: PathBuf,
        #[command(flatten)]
        alpha: AlphaArgs,
        #[command(flatten)]
        fit: FitArgs,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Classify scores with a fitted model.
    Predict {
        model: PathBuf,
        scores: PathBuf,
        /// Classify the raw scores without fresh test-time noise.
        #[arg(long)]
        no_fresh_noise: bool,
        /// Seed of the test-time noise (defaults to the model seed).
        #[arg(long)]
        seed: Option<u64>,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Per-group accuracy, classification and positive rates of decisions.
    Evaluate {
        decisions: PathBuf,
        /// Labeled scores, row-aligned with the decisions.
        scores: PathBuf,
        /// Fitted model; adds the guarantee bounds and PASS/FAIL checks.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Fit and evaluate over a grid of shared accept rates.
    Sweep {
        scores: PathBuf,
        /// Labeled evaluation scores (defaults to the fitting file itself).
        #[arg(long)]
        test: Option<PathBuf>,
        #[arg(long, default_value = "0.8:0.99:20")]
        alpha_grid: String,
        #[command(flatten)]
        fit: FitArgs,
        #[arg(long)]
        no_fresh_noise: bool,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Exact optimum over randomized classifiers on a discrete population.
    Oracle {
        population: PathBuf,
        #[command(flatten)]
        alpha: AlphaArgs,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Write a synthetic unlabeled/test pair and its discretized population.
    Synth {
        #[arg(long, default_value = "uniform")]
        family: String,
        /// Points per group in each of the unlabeled and test files.
        #[arg(long)]
        n: usize,
        /// Number of groups of the uniform family.
        #[arg(long, default_value_t = 1)]
        k: usize,
        #[arg(long, value_parser = parse_list)]
        p: Option<List>,
        /// Scores are `clip(eta + shift)`; zero is well specified.
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        shift: f64,
        /// Atoms per group in population.csv.
        #[arg(long, default_value_t = 200)]
        atoms: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(short, long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
struct AlphaArgs {
    /// Accept rate per group, comma separated.
    #[arg(long, value_parser = parse_list)]
    alpha: Option<List>,
    /// One accept rate for every group.
    #[arg(long)]
    alpha_shared: Option<f64>,
}

impl AlphaArgs {
    fn resolve(&self, k: usize) -> Result<Vec<f64>, CliError> {
        match (&self.alpha, self.alpha_shared) {
            (Some(List(a)), _) if a.len() != k => Err(CliError::Usage(format!(
                "--alpha has {} values but the data has {k} groups",
                a.len()
            ))),
            (Some(List(a)), _) => Ok(a.clone()),
            (None, Some(a)) => Ok(vec![a; k]),
            (None, None) => Err(CliError::Usage(
                "one of --alpha or --alpha-shared is required".into(),
            )),
        }
    }
}

#[derive(Debug, Args)]
struct FitArgs {
    #[arg(long, default_value_t = 1e-3)]
    sigma: f64,
    #[arg(long, default_value_t = 0.05)]
    delta: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "lp")]
    method: Method,
    /// Group masses; estimated from the group counts when absent.
    #[arg(long, value_parser = parse_list)]
    p: Option<List>,
}

impl FitArgs {
    fn config(&self, alpha: Vec<f64>, sizes: &[usize]) -> Result<ProblemConfig, CliError> {
        let p = match &self.p {
            Some(List(p)) if p.len() != sizes.len() => {
                return Err(CliError::Usage(format!(
                    "--p has {} values but the data has {} groups",
                    p.len(),
                    sizes.len()
                )))
            }
            Some(List(p)) => p.clone(),
            None => estimate_p(sizes)?,
        };
        Ok(ProblemConfig::new(
            alpha, p, self.sigma, self.delta, self.seed,
        )?)
    }
}

/// A comma separated list of numbers.
#[derive(Debug, Clone, PartialEq)]
struct List(Vec<f64>);

fn parse_list(s: &str) -> Result<List, String> {
    s.split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| format!("'{v}' is not a number"))
        })
        .collect::<Result<_, _>>()
        .map(List)
}

fn parse_fractions(s: &str) -> Result<Fractions, String> {
    match parse_list(s)?.0.as_slice() {
        &[a, b, c] => Ok(Fractions(a, b, c)),
        _ => Err("expected three comma separated fractions".into()),
    }
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Lib(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Lib(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Lib(e.into())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Lib(e.into())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Lib(e.into())
    }
}

/// Runs the command line `args` (program name first) and returns the exit
/// code: 0 on success, 1 for invalid input or usage, 2 when a solver fails.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                EXIT_INVALID
            } else {
                EXIT_OK
            };
        }
    };
    init_logging(cli.json_logs);
    let base = if cli.zero_based {
        GroupBase::Zero
    } else {
        GroupBase::One
    };
    match execute(cli.cmd, base) {
        Ok(()) => EXIT_OK,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            EXIT_INVALID
        }
        Err(CliError::Lib(e)) => {
            eprintln!("error: {e}");
            if e.is_solver_failure() {
                EXIT_SOLVER
            } else {
                EXIT_INVALID
            }
        }
    }
}

fn init_logging(json: bool) {
    let mut b = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"));
    if json {
        b.format(|buf, r| {
            let line = serde_json::json!({
                "level": r.level().to_string().to_lowercase(),
                "target": r.target(),
                "msg": r.args().to_string(),
            });
            writeln!(buf, "{line}")
        });
    }
    // a second call in the same process keeps the first logger
    let _ = b.try_init();
}

/// Worker count from the environment; `None` lets rayon decide.
fn threads_from_env() -> Result<Option<usize>, CliError> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(CliError::Usage(format!(
                "{THREADS_ENV}={v} is not a positive integer"
            ))),
        },
    }
}

/// Runs `f` on a pool of `threads` workers (all cores for `None`).
#[cfg(feature = "parallel")]
fn with_threads<R: Send>(
    threads: Option<usize>,
    f: impl FnOnce() -> R + Send,
) -> Result<R, CliError> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        b = b.num_threads(n);
    }
    let pool = b
        .build()
        .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

#[cfg(not(feature = "parallel"))]
fn with_threads<R: Send>(
    _threads: Option<usize>,
    f: impl FnOnce() -> R + Send,
) -> Result<R, CliError> {
    Ok(f())
}

fn create(path: &Path) -> Result<std::io::BufWriter<fs::File>, CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(std::io::BufWriter::new(fs::File::create(path)?))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    let mut f = create(path)?;
    f.write_all(text.as_bytes())?;
    f.flush()?;
    Ok(())
}

fn execute(cmd: Command, base: GroupBase) -> Result<(), CliError> {
    // only the sweep is parallel; everything else runs on one thread
    let threads = match &cmd {
        Command::Sweep { .. } => threads_from_env()?,
        _ => Some(1),
    };
    with_threads(threads, move || dispatch(cmd, base))?
}

fn dispatch(cmd: Command, base: GroupBase) -> Result<(), CliError> {
    match cmd {
        Command::Split {
            input,
            fractions,
            seed,
            out,
        } => split(&input, fractions, seed, &out, base),
        Command::TrainBase {
            features,
            l2,
            max_iter,
            out,
        } => {
            let t = FeatureTable::read(&features, base)?;
            let m = train_base(
                &t,
                &TrainOptions {
                    l2,
                    max_iter,
                    ..TrainOptions::default()
                },
            )?;
            log::info!(
                "trained on {} rows: {} iterations, gradient norm {:e}",
                t.rows.len(),
                m.iterations,
                m.grad_norm
            );
            write_text(&out, &to_json_string(&m)?)
        }
        Command::Score {
            model,
            features,
            out,
        } => {
            let m: BaseModel = serde_json::from_str(&fs::read_to_string(&model)?)?;
            let t = FeatureTable::read(&features, base)?;
            let Some(groups) = &t.groups else {
                return Err(CliError::Usage(format!(
                    "{} has no group column",
                    features.display()
                )));
            };
            let scores = m.score(&t)?;
            let samples: Vec<ScoredSample> = scores
                .iter()
                .enumerate()
                .map(|(i, &s)| ScoredSample {
                    label: t.labels.as_ref().and_then(|l| l[i]),
                    ..ScoredSample::new(groups[i], s)
                })
                .collect();
            write_scores(create(&out)?, &t.ids, &samples, base)?;
            Ok(())
        }
        Command::Postprocess {
            scores,
            alpha,
            fit: args,
            out,
        } => {
            let f = read_scores(&scores, base)?;
            let sizes = f.group_sizes();
            let cfg = args.config(alpha.resolve(f.k)?, &sizes)?;
            let model = fit(&f.samples, &cfg, args.method)?;
            log::info!(
                "fitted K={} on {} samples: objective {:e}, lambda {:?}, gamma {:?}",
                cfg.k,
                f.samples.len(),
                model.provenance.objective,
                model.multipliers.lambda,
                model.multipliers.gamma
            );
            write_text(&out, &model_to_json(&model)?)
        }
        Command::Predict {
            model,
            scores,
            no_fresh_noise,
            seed,
            out,
        } => {
            let model = model_from_json(&fs::read_to_string(&model)?)?;
            let f = read_scores(&scores, base)?;
            // never reinterpret groups the model was not fitted on
            if let Some((i, s)) = f
                .samples
                .iter()
                .enumerate()
                .find(|(_, s)| s.group >= model.cfg.k)
            {
                return Err(Error::Parse {
                    path: scores.display().to_string(),
                    row: i + 2,
                    reason: format!(
                        "group {} is unknown to the model (K = {})",
                        s.group + base.offset(),
                        model.cfg.k
                    ),
                }
                .into());
            }
            let decisions = predict_batch(
                &model,
                &f.samples,
                !no_fresh_noise,
                seed.unwrap_or(model.cfg.seed),
            )?;
            let groups: Vec<usize> = f.samples.iter().map(|s| s.group).collect();
            write_decisions(create(&out)?, &f.ids, &groups, &decisions, base)?;
            Ok(())
        }
        Command::Evaluate {
            decisions,
            scores,
            model,
            out,
        } => {
            let d = read_decisions(&decisions, base)?;
            let f = read_scores(&scores, base)?;
            let labels = f.labels(&scores.display().to_string())?;
            if d.decisions.len() != labels.len() {
                return Err(Error::LengthMismatch {
                    left: d.decisions.len(),
                    right: labels.len(),
                }
                .into());
            }
            for (i, ((id, g), (fid, (fg, _)))) in d
                .ids
                .iter()
                .zip(&d.groups)
                .zip(f.ids.iter().zip(&labels))
                .enumerate()
            {
                if id != fid || g != fg {
                    return Err(Error::Parse {
                        path: decisions.display().to_string(),
                        row: i + 2,
                        reason: format!(
                            "row ({id}, group {}) does not match the scores file ({fid}, group {})",
                            g + base.offset(),
                            fg + base.offset()
                        ),
                    }
                    .into());
                }
            }
            let model = model
                .map(|p| {
                    fs::read_to_string(p)
                        .map_err(CliError::from)
                        .and_then(|t| Ok(model_from_json(&t)?))
                })
                .transpose()?;
            let k = model.as_ref().map_or(f.k, |m| m.cfg.k.max(f.k));
            let metrics = evaluate(&d.decisions, &labels, k)?;
            let (bounds, report) = match &model {
                Some(m) => {
                    let sizes = if m.group_sizes.is_empty() {
                        f.group_sizes()
                    } else {
                        m.group_sizes.clone()
                    };
                    let b = guarantee_bounds(&m.cfg, &sizes)?;
                    let r = guarantee_report(&metrics, &m.cfg.alpha, &b);
                    (Some(b), Some(r))
                }
                None => (None, None),
            };
            write_text(
                &out,
                &metrics_json(&metrics, bounds.as_ref(), report.as_ref(), base.offset())?,
            )
        }
        Command::Sweep {
            scores,
            test,
            alpha_grid,
            fit: args,
            no_fresh_noise,
            out,
        } => {
            let grid = parse_grid(&alpha_grid)?;
            let f = read_scores(&scores, base)?;
            let t = match &test {
                Some(path) => read_scores(path, base)?,
                None => f.clone(),
            };
            let test_name = test.as_ref().unwrap_or(&scores).display().to_string();
            t.labels(&test_name)?;
            if t.k > f.k {
                return Err(CliError::Usage(format!(
                    "{test_name} has groups the fitting file lacks"
                )));
            }
            let cfg = args.config(vec![grid[0]; f.k], &f.group_sizes())?;
            let rows = sweep(
                &f.samples,
                &t.samples,
                &cfg,
                &grid,
                args.method,
                !no_fresh_noise,
            )?;
            write_sweep_csv(&rows, f.k, base.offset(), create(&out)?)?;
            Ok(())
        }
        Command::Oracle {
            population,
            alpha,
            out,
        } => {
            let pop = read_population(&population, base == GroupBase::Zero)?;
            let a = alpha.resolve(pop.k())?;
            let sol = oracle_solve(&pop, &a)?;
            let metrics = population_metrics(&pop, &sol.table).ok();
            let report = OracleReport {
                risk: sol.risk,
                alpha: a,
                p: pop.p.clone(),
                iterations: sol.iterations,
                metrics,
                table: pop
                    .atoms
                    .iter()
                    .zip(&sol.table)
                    .map(|(at, q)| OracleRow {
                        group: at.group + base.offset(),
                        eta: at.eta,
                        mass: at.mass,
                        q0: q[0],
                        q1: q[1],
                        qr: q[2],
                    })
                    .collect(),
            };
            write_text(&out, &to_json_string(&report)?)
        }
        Command::Synth {
            family,
            n,
            k,
            p,
            shift,
            atoms,
            seed,
            out,
        } => {
            let fam = Family::parse(&family).ok_or_else(|| {
                CliError::Usage(format!(
                    "--family '{family}' is not one of uniform, logistic2"
                ))
            })?;
            let k = if matches!(fam, Family::Logistic2 { .. }) {
                2
            } else {
                k
            };
            let p = p.map_or_else(|| vec![1.0 / k as f64; k], |l| l.0);
            let g = SyntheticGenerator::new(fam, p, seed)?.with_shift(shift);
            let data = g.generate(n);
            let ids = |prefix: &str, len: usize| {
                (0..len).map(|i| format!("{prefix}{i}")).collect::<Vec<_>>()
            };
            fs::create_dir_all(&out)?;
            write_scores(
                create(&out.join("unlabeled.csv"))?,
                &ids("u", data.unlabeled.len()),
                &data.unlabeled,
                base,
            )?;
            write_scores(
                create(&out.join("test.csv"))?,
                &ids("t", data.test.len()),
                &data.test,
                base,
            )?;
            let (pop, _) = g.population(atoms)?;
            let mut w = csv::Writer::from_writer(create(&out.join("population.csv"))?);
            w.write_record(["group", "eta", "mass"])?;
            for a in &pop.atoms {
                let joint = pop.p[a.group] * a.mass;
                w.write_record([
                    (a.group + base.offset()).to_string(),
                    fair_abstain::numfmt::f17(a.eta),
                    fair_abstain::numfmt::f17(joint),
                ])?;
            }
            w.flush()?;
            log::info!(
                "wrote {} unlabeled and {} test rows, l1 gap {:.4}",
                data.unlabeled.len(),
                data.test.len(),
                data.l1_gap
            );
            Ok(())
        }
    }
}

#[derive(Serialize)]
struct OracleRow {
    group: usize,
    #[serde(serialize_with = "ser_f64")]
    eta: f64,
    #[serde(serialize_with = "ser_f64")]
    mass: f64,
    #[serde(serialize_with = "ser_f64")]
    q0: f64,
    #[serde(serialize_with = "ser_f64")]
    q1: f64,
    #[serde(serialize_with = "ser_f64")]
    qr: f64,
}

#[derive(Serialize)]
struct OracleReport {
    #[serde(serialize_with = "ser_f64")]
    risk: f64,
    #[serde(serialize_with = "ser_vec")]
    alpha: Vec<f64>,
    #[serde(serialize_with = "ser_vec")]
    p: Vec<f64>,
    iterations: usize,
    metrics: Option<PopulationMetrics>,
    table: Vec<OracleRow>,
}

/// Writes `train.csv`, `unlabeled.csv` (label column dropped) and `test.csv`.
fn split(
    input: &Path,
    fractions: Fractions,
    seed: u64,
    out: &Path,
    base: GroupBase,
) -> Result<(), CliError> {
    let name = input.display().to_string();
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(input)?;
    let headers = rdr.headers()?.clone();
    let gi = headers
        .iter()
        .position(|h| h == "group")
        .ok_or_else(|| Error::Parse {
            path: name.clone(),
            row: 1,
            reason: "missing column 'group'".into(),
        })?;
    let li = headers.iter().position(|h| h == "label");
    let mut records = Vec::new();
    let mut groups = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let row = r + 2;
        let rec = rec.map_err(|e| Error::Parse {
            path: name.clone(),
            row,
            reason: e.to_string(),
        })?;
        let g = rec
            .get(gi)
            .and_then(|v| v.parse::<i64>().ok())
            .map(|v| v - base.offset() as i64)
            .filter(|&v| v >= 0)
            .ok_or_else(|| Error::Parse {
                path: name.clone(),
                row,
                reason: format!("group '{}' is not a valid index", rec.get(gi).unwrap_or("")),
            })?;
        groups.push(g as usize);
        records.push(rec);
    }
    let k = group_sizes(
        groups.iter().copied(),
        groups.iter().max().map_or(0, |g| g + 1),
    )?
    .len();
    let parts = split_indices(&groups, k, fractions, seed)?;
    fs::create_dir_all(out)?;
    for (file, rows) in ["train.csv", "unlabeled.csv", "test.csv"]
        .iter()
        .zip(&parts)
    {
        let keep: Vec<usize> = (0..headers.len())
            .filter(|&i| !(*file == "unlabeled.csv" && Some(i) == li))
            .collect();
        let mut w = csv::Writer::from_writer(create(&out.join(file))?);
        w.write_record(keep.iter().map(|&i| &headers[i]))?;
        for &r in rows {
            w.write_record(keep.iter().map(|&i| &records[r][i]))?;
        }
        w.flush()?;
    }
    log::info!(
        "split {} rows into {}/{}/{}",
        groups.len(),
        parts[0].len(),
        parts[1].len(),
        parts[2].len()
    );
    Ok(())
}
