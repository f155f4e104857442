//! `hslab` command line: dataset generation, the learners, boosting, the
//! lemma harness and experiment matrices.
//!
//! Every command prints JSON Lines. Each record carries the resolved
//! [`RunConfig`] under `run`; saving that object to a file and passing it via
//! `--config` replays the run exactly. Only the `wall_ms` fields differ
//! between replays.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::boosting::{boost, make_oracle, BoostParams, BoostedHypothesis, WeakLearnerKind};
use crate::data::{
    from_json_str, gen_sample, gen_target, load_sample_csv, save_json, save_sample_csv, Distribution,
    DistributionDescriptor, TargetMode,
};
use crate::domain::{correct_count, Hypothesis, LabeledSample, LearnerParams, Sign, TargetFunction};
use crate::forster::forsterize_sample;
use crate::learners::{brute_force_learn, find_consistent_halfspace, majority_label, BruteForceOutcome, Consistency};
use crate::lemmalab::{
    verify_advantage_band, verify_filtering_simple, verify_monotonicity, verify_planted_chain, verify_reverse_markov,
    AdvantageGrid, FilteringConfig, LemmaReport, MonotonicityGrid, PlantedChainConfig, ReverseMarkovConfig, Verdict,
};
use crate::numerics::derive_seed;
use crate::weak2::weak_learn_and2;
use crate::weakk::weak_learn_anyk;
use crate::{LabError, Result};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "hslab", version, about = "Learners for Boolean functions of a few halfspaces")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Option<Command>,

    /// Master seed.
    #[arg(long, global = true, env = "RNG_MASTER_SEED", default_value_t = 0)]
    pub seed: u64,

    /// Replay a saved run configuration instead of a subcommand.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Worker threads (default: available parallelism). Results do not
    /// depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Human-readable output instead of JSON Lines.
    #[arg(long, global = true)]
    pub pretty: bool,
}

#[derive(Debug, Clone, PartialEq, Subcommand, Serialize, Deserialize)]
#[serde(tag = "command", content = "args", rename_all = "snake_case")]
pub enum Command {
    /// Generate a target and a labeled sample.
    Gen(GenArgs),
    /// Put a sample in radial isotropic position.
    Forsterize(ForsterizeArgs),
    /// Two-halfspace weak learner.
    Weak2(Weak2Args),
    /// k-halfspace weak learner.
    Weakk(WeakkArgs),
    /// Boost a weak learner on a planted target.
    Boost(BoostArgs),
    /// Exact or classical baselines.
    Baseline(BaselineArgs),
    /// Monte Carlo lemma checks.
    Lemmas(LemmasArgs),
    /// Accuracy of a saved model on a sample.
    Eval(EvalArgs),
    /// Learner runs over a grid of (n, k, m, seed).
    Matrix(MatrixArgs),
}

/// A command together with its seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(flatten)]
    pub command: Command,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[value(rename_all = "snake_case")]
#[serde(rename_all = "snake_case")]
pub enum ModeArg {
    Random,
    AndOfK,
    ParityOfK,
}

impl ModeArg {
    fn mode(self) -> TargetMode {
        match self {
            ModeArg::Random => TargetMode::Random,
            ModeArg::AndOfK => TargetMode::AndOfK,
            ModeArg::ParityOfK => TargetMode::ParityOfK,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[value(rename_all = "snake_case")]
#[serde(rename_all = "snake_case")]
pub enum DistArg {
    UniformSphere,
    GaussianNormalized,
    Clustered,
    BoundaryHugging,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct DistOpts {
    #[arg(long, value_enum, default_value = "uniform_sphere")]
    pub dist: DistArg,
    /// Boundary distance for boundary_hugging.
    #[arg(long, default_value_t = 0.05)]
    pub offset: f64,
    /// Cluster count for clustered.
    #[arg(long, default_value_t = 4)]
    pub centers: usize,
    #[arg(long, default_value_t = 0.3)]
    pub spread: f64,
}

impl DistOpts {
    fn descriptor(&self, n: usize) -> DistributionDescriptor {
        let dist = match self.dist {
            DistArg::UniformSphere => Distribution::UniformSphere,
            DistArg::GaussianNormalized => Distribution::GaussianNormalized { scales: Vec::new() },
            DistArg::Clustered => Distribution::Clustered {
                centers: self.centers,
                spread: self.spread,
            },
            DistArg::BoundaryHugging => Distribution::BoundaryHugging { offset: self.offset },
        };
        DistributionDescriptor { n, dist }
    }
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct GenArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 2)]
    pub k: usize,
    #[arg(long, value_enum, default_value = "random")]
    pub mode: ModeArg,
    #[arg(long)]
    pub m: usize,
    #[command(flatten)]
    pub dist: DistOpts,
    /// Sample CSV.
    #[arg(long)]
    pub out: PathBuf,
    /// Target JSON (default: the sample path with `.target.json`).
    #[arg(long)]
    pub target_out: Option<PathBuf>,
}

/// Learner knobs shared by the sample learners.
#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct LearnerOpts {
    #[arg(long)]
    pub guess_budget: Option<usize>,
    #[arg(long)]
    pub gamma_desk: Option<f64>,
    #[arg(long)]
    pub inner_steps: Option<usize>,
    #[arg(long)]
    pub size_floor: Option<f64>,
}

impl LearnerOpts {
    fn params(&self, base: LearnerParams, seed: u64) -> LearnerParams {
        LearnerParams {
            guess_budget: self.guess_budget.unwrap_or(base.guess_budget),
            gamma_desk: self.gamma_desk.unwrap_or(base.gamma_desk),
            inner_steps: self.inner_steps.or(base.inner_steps),
            size_floor: self.size_floor.or(base.size_floor),
            seed,
            ..base
        }
    }
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct ForsterizeArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Transformed sample CSV (kept points only).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct Weak2Args {
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub learner: LearnerOpts,
    /// Hypothesis JSON (default: the sample path with `.weak2.json`).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct WeakkArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub k: usize,
    #[command(flatten)]
    pub learner: LearnerOpts,
    /// Hypothesis JSON (default: the sample path with `.weakk.json`).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[value(rename_all = "snake_case")]
#[serde(rename_all = "snake_case")]
pub enum LearnerArg {
    Weak2,
    Weakk,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct BoostArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 1)]
    pub k: usize,
    #[arg(long, value_enum, default_value = "random")]
    pub mode: ModeArg,
    #[command(flatten)]
    pub dist: DistOpts,
    #[arg(long, value_enum, default_value = "weak2")]
    pub learner: LearnerArg,
    #[arg(long, default_value_t = 0.15)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 0.1)]
    pub delta: f64,
    #[arg(long, default_value_t = 0.06)]
    pub gamma: f64,
    #[arg(long, default_value_t = 0.07)]
    pub gamma_prime: f64,
    #[arg(long, default_value_t = 10)]
    pub round_retries: usize,
    #[arg(long, default_value_t = 3)]
    pub retry_budget: usize,
    #[arg(long, default_value_t = 20_000)]
    pub holdout: usize,
    #[command(flatten)]
    pub learner_opts: LearnerOpts,
    /// Boosted model JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[value(rename_all = "snake_case")]
#[serde(rename_all = "snake_case")]
pub enum BaselineMethod {
    /// Exhaustive search over `k` halfspaces (tiny inputs only).
    Brute,
    /// Consistent halfspace by linear feasibility.
    Halfspace,
    /// Majority label.
    Majority,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct BaselineArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value = "halfspace")]
    pub method: BaselineMethod,
    #[arg(long, default_value_t = 1)]
    pub k: usize,
    #[arg(long, default_value_t = 100_000)]
    pub lp_budget: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[value(rename_all = "snake_case")]
#[serde(rename_all = "snake_case")]
pub enum LemmaArg {
    All,
    Monotonicity,
    Advantage,
    Filtering,
    ReverseMarkov,
    Planted,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct LemmasArgs {
    #[arg(long, value_enum, default_value = "all")]
    pub which: LemmaArg,
    /// Trials per cell; each check has its own default.
    #[arg(long)]
    pub trials: Option<u64>,
    /// Planted-chain dimension, halfspace count and steps.
    #[arg(long, default_value_t = 9)]
    pub n: usize,
    #[arg(long, default_value_t = 1)]
    pub k: usize,
    #[arg(long, default_value_t = 1)]
    pub steps: usize,
    #[arg(long, default_value_t = 100)]
    pub runs: usize,
    /// JSONL destination (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub hyp: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct MatrixArgs {
    #[arg(long, value_enum, default_value = "weak2")]
    pub learner: LearnerArg,
    #[arg(long, value_delimiter = ',', default_values_t = [8usize])]
    pub ns: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = [2usize])]
    pub ks: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = [4000usize])]
    pub ms: Vec<usize>,
    /// Seeds per (n, k, m); cell seeds are `seed, seed + 1, ...`.
    #[arg(long, default_value_t = 1)]
    pub seeds: u64,
    #[arg(long, value_enum, default_value = "random")]
    pub mode: ModeArg,
    #[command(flatten)]
    pub dist: DistOpts,
    #[command(flatten)]
    pub learner_opts: LearnerOpts,
    /// JSONL destination (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// A saved model of any kind, for `eval`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", content = "body", rename_all = "snake_case")]
pub enum Model {
    Hypothesis(Hypothesis),
    Target(TargetFunction),
    Boosted(BoostedHypothesis),
}

impl Model {
    pub fn evaluate(&self, x: &[f64]) -> Result<Sign> {
        match self {
            Model::Hypothesis(h) => h.evaluate(x),
            Model::Target(f) => f.evaluate(x),
            Model::Boosted(b) => b.evaluate(x),
        }
    }

    pub fn correct_on(&self, s: &LabeledSample) -> Result<usize> {
        match self {
            Model::Hypothesis(h) => correct_count(h, s),
            _ => {
                let hits: Result<Vec<bool>> = s
                    .points
                    .par_iter()
                    .zip(&s.labels)
                    .map(|(x, &y)| Ok(self.evaluate(x)? == y))
                    .collect();
                Ok(hits?.into_iter().filter(|&b| b).count())
            }
        }
    }
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(suffix);
    PathBuf::from(s)
}

/// Where records go, plus how they are rendered.
struct Sink {
    out: Box<dyn Write>,
    pretty: bool,
}

impl Sink {
    fn open(path: Option<&Path>, pretty: bool) -> Result<Self> {
        let out: Box<dyn Write> = match path {
            Some(p) => Box::new(BufWriter::new(File::create(p)?)),
            None => Box::new(std::io::stdout().lock()),
        };
        Ok(Sink { out, pretty })
    }

    fn emit(&mut self, record: &Value) -> Result<()> {
        if self.pretty {
            render_pretty(&mut self.out, record, 0)?;
            writeln!(self.out)?;
        } else {
            writeln!(self.out, "{}", serde_json::to_string(record)?)?;
        }
        Ok(())
    }

    fn finish(mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }
}

fn render_pretty(w: &mut dyn Write, v: &Value, depth: usize) -> Result<()> {
    let pad = "  ".repeat(depth);
    match v {
        Value::Object(map) => {
            for (k, val) in map {
                match val {
                    Value::Object(_) => {
                        writeln!(w, "{pad}{k}:")?;
                        render_pretty(w, val, depth + 1)?;
                    }
                    Value::Array(items) if items.iter().any(|i| i.is_object()) => {
                        writeln!(w, "{pad}{k}:")?;
                        for (i, item) in items.iter().enumerate() {
                            writeln!(w, "{pad}  [{i}]")?;
                            render_pretty(w, item, depth + 2)?;
                        }
                    }
                    _ => writeln!(w, "{pad}{k:<24} {val}")?,
                }
            }
        }
        other => writeln!(w, "{pad}{other}")?,
    }
    Ok(())
}

fn record(run: &RunConfig, kind: &str, body: Value, started: Instant) -> Value {
    let mut rec = json!({ "record": kind, "run": run });
    if let (Value::Object(r), Value::Object(b)) = (&mut rec, body) {
        r.extend(b);
    }
    rec["wall_ms"] = json!(started.elapsed().as_millis() as u64);
    rec
}

fn save_model(model: &Model, path: &Path) -> Result<()> {
    save_json(model, path)
}

fn load_model(path: &Path) -> Result<Model> {
    from_json_str(&std::fs::read_to_string(path)?)
}

/// Maps an error to its exit code.
pub fn exit_code(e: &LabError) -> i32 {
    if e.is_numeric() {
        return EXIT_NUMERIC;
    }
    match e {
        LabError::BoostFailure(_) | LabError::Internal(_) => EXIT_FAIL,
        _ => EXIT_USAGE,
    }
}

/// Parses `argv` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let config = match resolve_config(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("hslab: {e}");
            return EXIT_USAGE;
        }
    };
    let go = || execute(&config, cli.pretty);
    let result = match cli.threads {
        Some(t) => match rayon::ThreadPoolBuilder::new().num_threads(t).build() {
            Ok(pool) => pool.install(go),
            Err(e) => {
                eprintln!("hslab: cannot start {t} threads: {e}");
                return EXIT_USAGE;
            }
        },
        None => go(),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("hslab: {e}");
            exit_code(&e)
        }
    }
}

fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    match (&cli.config, &cli.command) {
        (Some(_), Some(_)) => Err(LabError::InvalidParameter("give either --config or a subcommand, not both".into())),
        (Some(path), None) => {
            let text = std::fs::read_to_string(path)?;
            serde_json::from_str(&text).map_err(|e| LabError::Parse {
                line: e.line(),
                message: e.to_string(),
            })
        }
        (None, Some(cmd)) => Ok(RunConfig {
            command: cmd.clone(),
            seed: cli.seed,
        }),
        (None, None) => Err(LabError::InvalidParameter("no subcommand given; see --help".into())),
    }
}

/// Runs a resolved configuration; the `Ok` value is the exit code.
pub fn execute(run: &RunConfig, pretty: bool) -> Result<i32> {
    let seed = run.seed;
    let started = Instant::now();
    match &run.command {
        Command::Gen(a) => {
            let f = gen_target(a.n, a.k, &a.mode.mode(), derive_seed(seed, &[0]))?;
            let desc = a.dist.descriptor(a.n);
            desc.validate()?;
            let s = gen_sample(&desc, &f, a.m, derive_seed(seed, &[1]))?;
            save_sample_csv(&s, &a.out)?;
            let target_path = a.target_out.clone().unwrap_or_else(|| with_suffix(&a.out, ".target.json"));
            save_model(&Model::Target(f), &target_path)?;
            let body = json!({
                "points": s.len(), "n": s.n, "positives": s.count(Sign::Pos),
                "sample": a.out, "target": target_path,
            });
            emit_one(run, "gen", body, started, pretty)?;
            Ok(EXIT_OK)
        }
        Command::Forsterize(a) => {
            let s = load_sample_csv(&a.data)?;
            let (out, t) = forsterize_sample(&s, &LearnerParams::default().forster)?;
            if let Some(p) = &a.out {
                save_sample_csv(&t, p)?;
            }
            let (lo, hi) = out
                .eigenvalues
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &e| (l.min(e), h.max(e)));
            let body = json!({
                "dim": out.dim(), "kept": out.kept_indices.len(), "points": s.len(),
                "iterations": out.iterations, "eigen_min": lo, "eigen_max": hi,
            });
            emit_one(run, "forsterize", body, started, pretty)?;
            Ok(EXIT_OK)
        }
        Command::Weak2(a) => {
            let s = load_sample_csv(&a.data)?;
            let params = a.learner.params(LearnerParams::default(), seed);
            let rep = weak_learn_and2(&s, &params)?;
            let path = a.out.clone().unwrap_or_else(|| with_suffix(&a.data, ".weak2.json"));
            let returned = learner_output(rep.outcome.hypothesis(), &path)?;
            let body = json!({
                "returned": returned, "iterations_used": rep.iterations_used, "branch": rep.branch,
                "sample_advantage": rep.sample_advantage, "beta": rep.beta,
                "forster_dim": rep.forster_dim, "kept": rep.kept, "hypothesis": returned.then_some(&path),
            });
            emit_one(run, "weak2", body, started, pretty)?;
            Ok(if returned { EXIT_OK } else { EXIT_FAIL })
        }
        Command::Weakk(a) => {
            let s = load_sample_csv(&a.data)?;
            let params = a.learner.params(LearnerParams::anyk_defaults(), seed);
            let rep = weak_learn_anyk(&s, a.k, &params)?;
            let path = a.out.clone().unwrap_or_else(|| with_suffix(&a.data, ".weakk.json"));
            let returned = learner_output(rep.outcome.hypothesis(), &path)?;
            let body = json!({
                "returned": returned, "iterations_used": rep.iterations_used, "k": rep.k,
                "inner_steps": rep.inner_steps, "summary": rep.summary,
                "sample_advantage": rep.sample_advantage, "bits": rep.bits, "stages": rep.stages,
                "forster_dim": rep.forster_dim, "kept": rep.kept, "hypothesis": returned.then_some(&path),
            });
            emit_one(run, "weakk", body, started, pretty)?;
            Ok(if returned { EXIT_OK } else { EXIT_FAIL })
        }
        Command::Boost(a) => run_boost(run, a, started, pretty),
        Command::Baseline(a) => run_baseline(run, a, started, pretty),
        Command::Lemmas(a) => run_lemmas(run, a, pretty),
        Command::Eval(a) => {
            let model = load_model(&a.hyp)?;
            let s = load_sample_csv(&a.data)?;
            let correct = model.correct_on(&s)?;
            let body = json!({
                "correct": correct, "total": s.len(), "accuracy": correct as f64 / s.len() as f64,
            });
            emit_one(run, "eval", body, started, pretty)?;
            Ok(EXIT_OK)
        }
        Command::Matrix(a) => run_matrix(run, a, pretty),
    }
}

fn emit_one(run: &RunConfig, kind: &str, body: Value, started: Instant, pretty: bool) -> Result<()> {
    let mut sink = Sink::open(None, pretty)?;
    sink.emit(&record(run, kind, body, started))?;
    sink.finish()
}

/// Saves the hypothesis if there is one; returns whether there was.
fn learner_output(h: Option<&Hypothesis>, path: &Path) -> Result<bool> {
    match h {
        Some(h) => {
            save_model(&Model::Hypothesis(h.clone()), path)?;
            Ok(true)
        }
        None => Ok(false),
    }
}

fn learner_kind(arg: LearnerArg, k: usize) -> WeakLearnerKind {
    match arg {
        LearnerArg::Weak2 => WeakLearnerKind::Weak2,
        LearnerArg::Weakk => WeakLearnerKind::WeakK { k },
    }
}

fn run_boost(run: &RunConfig, a: &BoostArgs, started: Instant, pretty: bool) -> Result<i32> {
    let seed = run.seed;
    let f = gen_target(a.n, a.k, &a.mode.mode(), derive_seed(seed, &[0]))?;
    let mut oracle = make_oracle(&f, &a.dist.descriptor(a.n), derive_seed(seed, &[1]))?;
    let learner = learner_kind(a.learner, a.k);
    let base = match a.learner {
        LearnerArg::Weak2 => LearnerParams::default(),
        LearnerArg::Weakk => LearnerParams::anyk_defaults(),
    };
    let lp = a.learner_opts.params(base, seed);
    let bp = BoostParams {
        epsilon: a.epsilon,
        delta: a.delta,
        gamma: a.gamma,
        gamma_prime: Some(a.gamma_prime),
        round_retries: a.round_retries,
        retry_budget: a.retry_budget,
        holdout_size: a.holdout,
        ..BoostParams::default()
    };
    let rep = match boost(&mut oracle, &learner, &lp, &bp, derive_seed(seed, &[2])) {
        Ok(r) => r,
        Err(LabError::BoostFailure(msg)) => {
            emit_one(run, "boost", json!({ "accepted": false, "failure": msg }), started, pretty)?;
            return Ok(EXIT_FAIL);
        }
        Err(e) => return Err(e),
    };
    if let (Some(p), Some(h)) = (&a.out, &rep.hypothesis) {
        save_model(&Model::Boosted(h.clone()), p)?;
    }
    let attempts: Vec<Value> = rep
        .attempts
        .iter()
        .map(|at| {
            json!({
                "attempt": at.attempt, "rounds": at.rounds.len(), "holdout_error": at.holdout_error,
                "accepted": at.accepted, "bound_ok": at.bound_ok,
                "final_training_error": at.rounds.last().map(|r| r.training_error),
                "mean_edge": at.rounds.iter().map(|r| r.edge).sum::<f64>() / at.rounds.len().max(1) as f64,
            })
        })
        .collect();
    let accepted = rep.accepted().is_some();
    let body = json!({
        "accepted": accepted, "planned_rounds": rep.planned_rounds, "working_size": rep.working_size,
        "round_sample_size": rep.round_sample_size, "d_vc": rep.d_vc, "attempts": attempts,
    });
    emit_one(run, "boost", body, started, pretty)?;
    Ok(if accepted { EXIT_OK } else { EXIT_FAIL })
}

fn run_baseline(run: &RunConfig, a: &BaselineArgs, started: Instant, pretty: bool) -> Result<i32> {
    let s = load_sample_csv(&a.data)?;
    let model = match a.method {
        BaselineMethod::Brute => match brute_force_learn(&s, a.k)? {
            BruteForceOutcome::Found { target } => Some(Model::Target(target)),
            BruteForceOutcome::NoConsistent => None,
        },
        BaselineMethod::Halfspace => {
            let r = find_consistent_halfspace(&s.normalized()?, a.lp_budget)?;
            match r.outcome {
                Consistency::Weight { w } => Some(Model::Target(TargetFunction::new(vec![w], vec![Sign::Neg, Sign::Pos])?)),
                _ => None,
            }
        }
        BaselineMethod::Majority => Some(Model::Hypothesis(Hypothesis::constant(majority_label(&s)?))),
    };
    let accuracy = match &model {
        Some(m) => Some(m.correct_on(&s)? as f64 / s.len() as f64),
        None => None,
    };
    if let (Some(p), Some(m)) = (&a.out, &model) {
        save_model(m, p)?;
    }
    let body = json!({ "method": a.method, "found": model.is_some(), "sample_accuracy": accuracy });
    emit_one(run, "baseline", body, started, pretty)?;
    Ok(if model.is_some() { EXIT_OK } else { EXIT_FAIL })
}

fn run_lemmas(run: &RunConfig, a: &LemmasArgs, pretty: bool) -> Result<i32> {
    let seed = run.seed;
    let which = |l: LemmaArg| a.which == LemmaArg::All || a.which == l;
    let mut sink = Sink::open(a.out.as_deref(), pretty)?;
    let mut failed = false;
    let mut emit = |rep: LemmaReport, started: Instant, sink: &mut Sink| -> Result<()> {
        failed |= rep.verdict == Verdict::Fail;
        let body = serde_json::to_value(&rep)?;
        sink.emit(&record(run, "lemma", body, started))
    };
    if which(LemmaArg::Monotonicity) {
        let t = Instant::now();
        let rep = verify_monotonicity(&MonotonicityGrid::default(), a.trials.unwrap_or(100_000), derive_seed(seed, &[1]))?;
        emit(rep, t, &mut sink)?;
    }
    if which(LemmaArg::Advantage) {
        let t = Instant::now();
        let rep = verify_advantage_band(&AdvantageGrid::default(), a.trials.unwrap_or(100_000), derive_seed(seed, &[2]))?;
        emit(rep, t, &mut sink)?;
    }
    if which(LemmaArg::Filtering) {
        let t = Instant::now();
        let f = gen_target(a.n, 1, &TargetMode::Random, derive_seed(seed, &[3, 0]))?;
        let s = gen_sample(&DistributionDescriptor::uniform(a.n), &f, 500, derive_seed(seed, &[3, 1]))?;
        let rep = verify_filtering_simple(
            &s.points,
            &f.weights[0],
            a.trials.unwrap_or(20_000),
            derive_seed(seed, &[3, 2]),
            &FilteringConfig::default(),
        )?;
        emit(rep, t, &mut sink)?;
    }
    if which(LemmaArg::ReverseMarkov) {
        let t = Instant::now();
        let rep = verify_reverse_markov(a.trials.unwrap_or(10_000), derive_seed(seed, &[4]), &ReverseMarkovConfig::default())?;
        emit(rep, t, &mut sink)?;
    }
    if which(LemmaArg::Planted) {
        let t = Instant::now();
        let f = gen_target(a.n, a.k, &TargetMode::Random, derive_seed(seed, &[5, 0]))?;
        let cfg = PlantedChainConfig {
            runs: a.runs,
            ..Default::default()
        };
        let rep = verify_planted_chain(&f, a.steps, derive_seed(seed, &[5, 1]), &cfg)?;
        emit(rep, t, &mut sink)?;
    }
    sink.finish()?;
    Ok(if failed { EXIT_FAIL } else { EXIT_OK })
}

/// Result of one matrix cell. `error` is set when the cell could not run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub n: usize,
    pub k: usize,
    pub m: usize,
    pub seed: u64,
    pub returned: bool,
    pub sample_accuracy: Option<f64>,
    pub iterations_used: Option<usize>,
    pub error: Option<String>,
}

/// The learner run behind `gen` followed by `weak2`/`weakk` with the same
/// seed: target from stream `[0]`, sample from stream `[1]`, learner seeded
/// with `seed` itself.
pub fn learner_cell(
    learner: LearnerArg,
    n: usize,
    k: usize,
    m: usize,
    mode: ModeArg,
    desc: &DistributionDescriptor,
    opts: &LearnerOpts,
    seed: u64,
) -> CellResult {
    let mut cell = CellResult {
        n,
        k,
        m,
        seed,
        returned: false,
        sample_accuracy: None,
        iterations_used: None,
        error: None,
    };
    let res: Result<()> = (|| {
        let f = gen_target(n, k, &mode.mode(), derive_seed(seed, &[0]))?;
        let s = gen_sample(desc, &f, m, derive_seed(seed, &[1]))?;
        let (outcome, iters) = match learner {
            LearnerArg::Weak2 => {
                let r = weak_learn_and2(&s, &opts.params(LearnerParams::default(), seed))?;
                (r.outcome, r.iterations_used)
            }
            LearnerArg::Weakk => {
                let r = weak_learn_anyk(&s, k, &opts.params(LearnerParams::anyk_defaults(), seed))?;
                (r.outcome, r.iterations_used)
            }
        };
        cell.iterations_used = Some(iters);
        if let Some(h) = outcome.hypothesis() {
            cell.returned = true;
            cell.sample_accuracy = Some(correct_count(h, &s)? as f64 / s.len() as f64);
        }
        Ok(())
    })();
    if let Err(e) = res {
        cell.error = Some(e.to_string());
    }
    cell
}

fn run_matrix(run: &RunConfig, a: &MatrixArgs, pretty: bool) -> Result<i32> {
    let mut cells = Vec::new();
    for &n in &a.ns {
        for &k in &a.ks {
            for &m in &a.ms {
                for i in 0..a.seeds {
                    cells.push((n, k, m, run.seed.wrapping_add(i)));
                }
            }
        }
    }
    // Each cell reports its own time; rows are written in cell order.
    let results: Vec<(CellResult, u64)> = cells
        .par_iter()
        .map(|&(n, k, m, s)| {
            let t = Instant::now();
            let r = learner_cell(a.learner, n, k, m, a.mode, &a.dist.descriptor(n), &a.learner_opts, s);
            (r, t.elapsed().as_millis() as u64)
        })
        .collect();
    let mut sink = Sink::open(a.out.as_deref(), pretty)?;
    for (idx, (r, ms)) in results.iter().enumerate() {
        let mut rec = json!({ "record": "cell", "run": run, "cell": idx });
        if let (Value::Object(o), Value::Object(b)) = (&mut rec, serde_json::to_value(r)?) {
            o.extend(b);
        }
        rec["wall_ms"] = json!(ms);
        sink.emit(&rec)?;
    }
    let mut groups: Vec<(usize, usize, usize)> = cells.iter().map(|c| (c.0, c.1, c.2)).collect();
    groups.dedup();
    for g in &groups {
        let rows: Vec<&CellResult> = results.iter().map(|r| &r.0).filter(|r| (r.n, r.k, r.m) == *g).collect();
        let ok = rows.iter().filter(|r| r.returned).count();
        let accs: Vec<f64> = rows.iter().filter_map(|r| r.sample_accuracy).collect();
        let rec = json!({
            "record": "group", "n": g.0, "k": g.1, "m": g.2, "cells": rows.len(), "returned": ok,
            "success_rate": ok as f64 / rows.len() as f64,
            "errors": rows.iter().filter(|r| r.error.is_some()).count(),
            "mean_sample_accuracy": if accs.is_empty() { None } else { Some(accs.iter().sum::<f64>() / accs.len() as f64) },
        });
        sink.emit(&rec)?;
    }
    let ok = results.iter().filter(|r| r.0.returned).count();
    let total = results.len();
    let summary = json!({
        "record": "summary", "run": run, "cells": total, "returned": ok,
        "success_rate": if total == 0 { None } else { Some(ok as f64 / total as f64) },
        "errors": results.iter().filter(|r| r.0.error.is_some()).count(),
        "wall_ms": results.iter().map(|r| r.1).sum::<u64>(),
    });
    sink.emit(&summary)?;
    sink.finish()?;
    Ok(EXIT_OK)
}

/// Drops every `wall_ms` field, recursively. Used to compare reruns.
pub fn strip_wall_ms(v: &mut Value) {
    match v {
        Value::Object(map) => {
            map.remove("wall_ms");
            map.values_mut().for_each(strip_wall_ms);
        }
        Value::Array(items) => items.iter_mut().for_each(strip_wall_ms),
        _ => {}
    }
}

/// JSON text of a run configuration, ready for `--config`.
pub fn config_json(run: &RunConfig) -> Result<String> {
    Ok(serde_json::to_string_pretty(run)?)
}
