//! Command-line front end. Each verb reads an experiment config (a JSON
//! file or a preset name), applies flag overrides, and writes its
//! artifacts plus the resolved config into a fresh run directory.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::ExperimentConfig;
use crate::data::{ingest_csv, CsvOptions, TableSchema};
use crate::diffcalc::Array;
use crate::error::{Error, Result};
use crate::eval;
use crate::experiments::{self, Outcome};
use crate::guidance::GuidanceSchedule;
use crate::scorenet::Checkpoint;

#[derive(Debug, Parser)]
#[command(name = "scoreguide", version, about = "Constrained sampling from score-based generative models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a score model and write a checkpoint.
    Train(TrainArgs),
    /// Draw unconditional samples from a checkpoint.
    Sample(SampleArgs),
    /// Draw constrained samples with score guidance.
    Guide(GuideArgs),
    /// Rejection-sample the constrained distribution.
    Oracle(OracleArgs),
    /// Compare a sample CSV with a reference CSV.
    Evaluate(EvaluateArgs),
    /// Run a whole experiment and check its criteria.
    Reproduce(ReproduceArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// Config JSON file or preset name (toy, esirs_bridging, esirs_inequality, wine_complex, wine_multi).
    #[arg(long)]
    pub config: String,
    /// Run directory. Defaults to `<root>/<experiment>-<verb>`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Root for default run directories.
    #[arg(long, env = "SCOREGUIDE_OUT", default_value = "runs")]
    pub root: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ConstraintArgs {
    /// File holding the constraint formula.
    #[arg(long)]
    pub constraint: Option<PathBuf>,
    #[arg(long)]
    pub k: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub schedule: Option<GuidanceSchedule>,
    #[arg(long)]
    pub langevin_steps: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub steps: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = 1000)]
    pub count: usize,
}

#[derive(Debug, Args)]
pub struct GuideArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub constraint: ConstraintArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Oracle samples CSV; when given, a full metric report is written.
    #[arg(long)]
    pub reference: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub constraint: ConstraintArgs,
    /// Required when the oracle draws from the model.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub samples: PathBuf,
    #[arg(long)]
    pub reference: PathBuf,
    /// Supplies the schema; otherwise it comes from the dataset.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReproduceArgs {
    /// Preset name; alternatively pass `--config`.
    pub experiment: Option<String>,
    #[arg(long)]
    pub config: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, env = "SCOREGUIDE_OUT", default_value = "runs")]
    pub root: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub constraint: ConstraintArgs,
}

/// Outcome of a verb other than an error.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Done,
    CriteriaFailed,
}

/// A preset name or a path to a config file.
pub fn resolve_config(arg: &str) -> Result<ExperimentConfig> {
    if experiments::NAMES.contains(&arg) && !Path::new(arg).exists() {
        return experiments::preset(arg);
    }
    if Path::new(arg).exists() {
        return ExperimentConfig::load(arg);
    }
    Err(Error::Config(format!(
        "`{arg}` is neither a config file nor a preset; presets: {}",
        experiments::NAMES.join(", ")
    )))
}

fn apply_constraint(c: &mut ExperimentConfig, a: &ConstraintArgs) -> Result<()> {
    if let Some(p) = &a.constraint {
        c.constraint.text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?.trim().to_string();
    }
    if let Some(k) = a.k {
        c.constraint.k = k;
    }
    if let Some(l) = a.lambda {
        c.constraint.lambda = l;
    }
    if let Some(s) = a.schedule {
        c.schedule = s;
    }
    if let Some(n) = a.langevin_steps {
        c.sampler.final_langevin_steps = n;
    }
    Ok(())
}

/// Fresh run directory; an existing non-empty one is refused.
fn run_dir(out: &Option<PathBuf>, root: &Path, name: &str, verb: &str) -> Result<PathBuf> {
    let dir = out.clone().unwrap_or_else(|| root.join(format!("{name}-{verb}")));
    if dir.read_dir().map(|mut d| d.next().is_some()).unwrap_or(false) {
        return Err(Error::Config(format!("run directory {} is not empty", dir.display())));
    }
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Decoded rows of a CSV written by `guide`, `oracle` or `sample`.
pub fn read_samples(path: &Path, schema: &TableSchema, instances: usize) -> Result<Array<f64>> {
    let schema = experiments::instance_schema(schema, instances)?;
    let opts = CsvOptions {
        drop: vec!["log_weight".into(), "satisfied".into()],
        normalize_headers: false,
        ..CsvOptions::default()
    };
    Ok(ingest_csv(path, Some(&schema), &opts)?.rows)
}

fn print_outcomes(outcomes: &[Outcome]) {
    for o in outcomes {
        let value = o.value.map_or("n/a".to_string(), |v| format!("{v:.4}"));
        println!("{} {}: {value} (required {})", if o.passed { "PASS" } else { "FAIL" }, o.label, o.bound);
    }
}

fn train(a: &TrainArgs) -> Result<Status> {
    let mut c = resolve_config(&a.common.config)?;
    if let Some(s) = a.common.seed {
        c.train.seed = s;
        c.model_seed = s.wrapping_add(1);
    }
    if let Some(n) = a.steps {
        c.train.steps = n;
    }
    c.validate()?;
    let dir = run_dir(&a.common.out, &a.common.root, &c.name, "train")?;
    c.save(dir.join("config.json"))?;
    let prepared = experiments::prepare(&c.dataset)?;
    let (ck, report) = experiments::train_model(&c, &prepared)?;
    ck.save(dir.join("model.sgck"))?;
    experiments::write_loss_csv(dir.join("loss.csv"), &report.losses)?;
    println!("trained {} steps, final loss {:.4}", report.losses.len(), report.tail_mean(100));
    println!("checkpoint: {}", dir.join("model.sgck").display());
    Ok(Status::Done)
}

fn sample(a: &SampleArgs) -> Result<Status> {
    let mut c = resolve_config(&a.common.config)?;
    if let Some(s) = a.common.seed {
        c.sampler.rng_seed = s;
    }
    c.validate()?;
    let ck = Checkpoint::load(&a.checkpoint)?;
    let dir = run_dir(&a.common.out, &a.common.root, &c.name, "sample")?;
    c.save(dir.join("config.json"))?;
    let rows = experiments::sample(&c, &ck, a.count)?;
    let (schema, _) = experiments::parts(&ck)?;
    crate::data::write_csv(dir.join("samples.csv"), schema, &rows, &[])?;
    println!("wrote {} samples to {}", rows.rows(), dir.join("samples.csv").display());
    Ok(Status::Done)
}

fn guide(a: &GuideArgs) -> Result<Status> {
    let mut c = resolve_config(&a.common.config)?;
    apply_constraint(&mut c, &a.constraint)?;
    if let Some(s) = a.common.seed {
        c.sampler.rng_seed = s;
    }
    c.validate()?;
    let ck = Checkpoint::load(&a.checkpoint)?;
    let (schema, normalization) = experiments::parts(&ck)?;
    let cc = experiments::compile_constraint(&c.constraint, schema, normalization)?;
    let dir = run_dir(&a.common.out, &a.common.root, &c.name, "guide")?;
    c.save(dir.join("config.json"))?;
    let g = experiments::guide(&c, &ck, &cc)?;
    let n = c.constraint.instances;
    experiments::write_guided_csv(dir.join("guided.csv"), schema, &g, n)?;
    println!("hard satisfaction: {:.4}", g.satisfaction_rate());
    let reference = a.reference.as_ref().map(|p| read_samples(p, schema, n)).transpose()?;
    let ev = experiments::evaluate_rows(&c, schema, &g.decoded, reference.as_ref(), None)?;
    ev.report.save_json(dir.join("report.json"))?;
    if let Some(r) = &reference {
        eval::write_histograms_csv(dir.join("histograms.csv"), &g.decoded, r, &ev.report.labels, c.metrics.bins)?;
        println!("histogram distance: median {:.4}, max {:.4}", ev.report.hist_summary.median, ev.report.hist_summary.max);
    }
    write_json(&dir.join("checks.json"), &ev.checks)?;
    Ok(Status::Done)
}

fn oracle(a: &OracleArgs) -> Result<Status> {
    let mut c = resolve_config(&a.common.config)?;
    apply_constraint(&mut c, &a.constraint)?;
    if let Some(s) = a.common.seed {
        c.oracle.seed = s;
    }
    c.validate()?;
    let ck = a.checkpoint.as_ref().map(Checkpoint::load).transpose()?;
    let prepared;
    let (schema, normalization) = match &ck {
        Some(ck) => experiments::parts(ck)?,
        None => {
            prepared = experiments::prepare(&c.dataset)?;
            (&prepared.dataset.schema, &prepared.normalization)
        }
    };
    let cc = experiments::compile_constraint(&c.constraint, schema, normalization)?;
    let dir = run_dir(&a.common.out, &a.common.root, &c.name, "oracle")?;
    c.save(dir.join("config.json"))?;
    let o = experiments::oracle_with(&c, ck.as_ref().map(|k| &k.model), schema, normalization, &cc)?;
    experiments::write_oracle_csv(dir.join("oracle.csv"), schema, &o, c.constraint.instances)?;
    let info = experiments::AcceptanceInfo {
        proposed: o.result.proposed,
        accepted: o.result.accepted_total,
        rate: o.result.acceptance_rate(),
        partial: o.result.partial,
    };
    write_json(&dir.join("acceptance.json"), &info)?;
    println!(
        "accepted {} of {} proposals (rate {:.5}){}",
        info.accepted,
        info.proposed,
        info.rate,
        if info.partial { "; budget exhausted before the target" } else { "" }
    );
    Ok(Status::Done)
}

fn evaluate(a: &EvaluateArgs) -> Result<Status> {
    let c = resolve_config(&a.common.config)?;
    let ck = a.checkpoint.as_ref().map(Checkpoint::load).transpose()?;
    let loaded;
    let schema = match &ck {
        Some(ck) => experiments::parts(ck)?.0,
        None => {
            loaded = c.dataset.load()?;
            &loaded.schema
        }
    };
    let n = c.constraint.instances;
    let samples = read_samples(&a.samples, schema, n)?;
    let reference = read_samples(&a.reference, schema, n)?;
    let dir = run_dir(&a.common.out, &a.common.root, &c.name, "evaluate")?;
    c.save(dir.join("config.json"))?;
    let ev = experiments::evaluate_rows(&c, schema, &samples, Some(&reference), None)?;
    ev.report.save_json(dir.join("report.json"))?;
    eval::write_histograms_csv(dir.join("histograms.csv"), &samples, &reference, &ev.report.labels, c.metrics.bins)?;
    write_json(&dir.join("checks.json"), &ev.checks)?;
    print_outcomes(&experiments::assess(&c.criteria, &ev));
    Ok(Status::Done)
}

fn reproduce(a: &ReproduceArgs) -> Result<Status> {
    let source = match (&a.experiment, &a.config) {
        (Some(n), None) => n.clone(),
        (None, Some(p)) => p.clone(),
        _ => return Err(Error::Config("give either an experiment name or --config".into())),
    };
    let mut c = resolve_config(&source)?;
    apply_constraint(&mut c, &a.constraint)?;
    if let Some(s) = a.seed {
        c.train.seed = s;
        c.model_seed = s.wrapping_add(1);
        c.sampler.rng_seed = s.wrapping_add(2);
        c.oracle.seed = s.wrapping_add(3);
    }
    let dir = run_dir(&a.out, &a.root, &c.name, "reproduce")?;
    let start = std::time::Instant::now();
    let summary = experiments::reproduce(&c, &dir, &mut |m| eprintln!("{:>8.1}s {m}", start.elapsed().as_secs_f64()))
        .map_err(|e| {
            eprintln!("stage `{}` failed", e.stage);
            e.error
        })?;
    print_outcomes(&summary.outcomes);
    println!("artifacts: {}", dir.display());
    Ok(if summary.passed() { Status::Done } else { Status::CriteriaFailed })
}

pub fn run(cli: &Cli) -> Result<Status> {
    match &cli.command {
        Command::Train(a) => train(a),
        Command::Sample(a) => sample(a),
        Command::Guide(a) => guide(a),
        Command::Oracle(a) => oracle(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Reproduce(a) => reproduce(a),
    }
}

/// 0 success, 1 usage or config error, 2 numeric failure, 3 failed criteria.
pub fn exit_code(r: &Result<Status>) -> u8 {
    match r {
        Ok(Status::Done) => 0,
        Ok(Status::CriteriaFailed) => 3,
        Err(e) if e.is_numeric() => 2,
        Err(_) => 1,
    }
}

pub fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let r = run(&cli);
    if let Err(e) = &r {
        eprintln!("error: {e}");
    }
    ExitCode::from(exit_code(&r))
}
