//! End-to-end pipeline stages and the named experiment presets.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::{
    Bound, Check, ConstraintConfig, CriterionSpec, DatasetSource, ExperimentConfig, Metric, MetricConfig, OracleBase,
    OracleConfig,
};
use crate::data::{decode, decode_instances, encode, write_csv, Column, Dataset, ESIRSParams, Normalization, TableSchema};
use crate::diffcalc::Array;
use crate::diffusion::{pc_sample, DiffusionSpec, SamplerConfig, StepRule, T_MIN};
use crate::error::{Error, Result};
use crate::eval::{self, MetricReport};
use crate::guidance::{constrained_sample, Decoder, GuidanceSchedule, GuidedSampleJob, GuidedSamples};
use crate::logic::{compile, eval_hard, parse, to_nnf, Binding, CompiledConstraint, Formula};
use crate::oracle::{rejection_sample, FnProposal, ModelProposal, RejectionJob, RejectionResult};
use crate::scorenet::{train, Activation, Architecture, Checkpoint, Optimizer, ScoreModel, TrainConfig, TrainReport};

pub const NAMES: [&str; 5] = ["toy", "esirs_bridging", "esirs_inequality", "wine_complex", "wine_multi"];

/// Environment variable pointing at the UCI white-wine CSV.
pub const WINE_CSV_ENV: &str = "WINE_QUALITY_CSV";

pub const ESIRS_CONSISTENCY: &str = "forall t in 0..30: S[t] >= 0 and I[t] >= 0 and S[t] + I[t] <= 100";
pub const WINE_COMPLEX: &str = "(fixed_acidity in [5.0, 6.0] or fixed_acidity in [8.0, 9.0]) \
     and alcohol >= 11.0 and (residual_sugar <= 5.0 -> citric_acid >= 0.5)";
pub const WINE_MULTI: &str = "alcohol_1 > alcohol_2 + 1";

fn sampler(predictor_steps: usize, final_langevin_steps: usize, seed: u64) -> SamplerConfig {
    SamplerConfig {
        predictor_steps,
        corrector_steps_per_t: 0,
        corrector_step: StepRule::Snr(0.16),
        final_langevin_steps,
        langevin_step: StepRule::Snr(0.16),
        langevin_time: T_MIN,
        denoise: false,
        rng_seed: seed,
    }
}

fn arch(hidden: Vec<usize>) -> Architecture {
    Architecture {
        hidden,
        activation: Activation::Silu,
        embedding_dim: 32,
        fourier_scale: 1.0,
        scale_cap: 3.0,
        zero_init_output: false,
    }
}

fn training(steps: usize, batch_size: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        steps,
        batch_size,
        accumulation: 1,
        optimizer: Optimizer::default(),
        t_min: crate::diffusion::T_MIN,
        dequantize: false,
        ema_decay: Some(0.999),
        seed,
    }
}

fn criterion(label: &str, metric: Metric, bound: Bound) -> CriterionSpec {
    CriterionSpec {
        label: label.into(),
        metric,
        bound,
    }
}

fn wine_source() -> DatasetSource {
    match std::env::var_os(WINE_CSV_ENV) {
        Some(path) => DatasetSource::Csv {
            path: path.into(),
            delimiter: ';',
            drop: vec!["quality".into()],
            normalize_headers: true,
            schema: None,
        },
        None => DatasetSource::SyntheticWine { count: 4898, seed: 21 },
    }
}

fn esirs_base(name: &str, constraint: String, k: f64, langevin: usize, guided: usize) -> ExperimentConfig {
    ExperimentConfig {
        name: name.into(),
        dataset: DatasetSource::Esirs {
            params: ESIRSParams::default(),
            count: 50_000,
            seed: 11,
        },
        diffusion: None,
        architecture: arch(vec![256, 256, 256]),
        train: training(20_000, 1024, 12),
        model_seed: 13,
        constraint: ConstraintConfig {
            text: constraint,
            k,
            lambda: 1.0,
            one_sided: false,
            instances: 1,
        },
        schedule: GuidanceSchedule::Snr,
        // Langevin at the integer-count scale mixes slowly; run it at
        // σ ≈ 0.36 and let the predictor finish
        sampler: SamplerConfig {
            langevin_step: StepRule::Snr(0.3),
            langevin_time: 0.43,
            ..sampler(500, langevin, 14)
        },
        oracle: OracleConfig {
            base: OracleBase::Generator,
            target: 50_000,
            budget: 200_000_000,
            batch: 20_000,
            use_bound: true,
            seed: 15,
        },
        metrics: MetricConfig {
            bins: eval::DEFAULT_BINS,
            guided_count: guided,
            split_seed: 16,
        },
        checks: vec![Check::Holds {
            name: "consistency".into(),
            formula: ESIRS_CONSISTENCY.into(),
        }],
        criteria: vec![],
    }
}

/// The configuration of a named experiment.
pub fn preset(name: &str) -> Result<ExperimentConfig> {
    let cfg = match name {
        "toy" => ExperimentConfig {
            name: name.into(),
            dataset: DatasetSource::Mixture {
                components: vec![(0.5, -3.0, 0.5), (0.5, 4.0, 1.0)],
                count: 20_000,
                seed: 1,
            },
            diffusion: None,
            architecture: arch(vec![128, 128, 128]),
            train: training(20_000, 1024, 2),
            model_seed: 3,
            constraint: ConstraintConfig {
                text: "x >= 0".into(),
                k: 50.0,
                lambda: 1.0,
                one_sided: false,
                instances: 1,
            },
            schedule: GuidanceSchedule::Snr,
            sampler: sampler(1000, 200, 4),
            oracle: OracleConfig {
                base: OracleBase::Model,
                target: 5000,
                budget: 100_000,
                batch: 5000,
                use_bound: false,
                seed: 5,
            },
            metrics: MetricConfig {
                bins: eval::DEFAULT_BINS,
                guided_count: 5000,
                split_seed: 6,
            },
            checks: vec![],
            criteria: vec![
                criterion("histogram distance to RS", Metric::HistMax, Bound::AtMost(0.07)),
                criterion("hard satisfaction", Metric::Satisfaction, Bound::AtLeast(0.98)),
            ],
        },
        "esirs_bridging" => {
            let text = format!("({ESIRS_CONSISTENCY}) and (S[0] = 95 and I[0] = 5 and S[25] = 30) @k=7");
            let mut c = esirs_base(name, text, 1.0, 8000, 5000);
            c.checks.push(Check::TargetDeviation {
                name: "target deviation".into(),
                targets: vec![("S[0]".into(), 95.0), ("I[0]".into(), 5.0), ("S[25]".into(), 30.0)],
            });
            c.criteria = vec![
                criterion(
                    "mean absolute deviation from targets",
                    Metric::Check {
                        name: "target deviation".into(),
                    },
                    Bound::AtMost(0.5),
                ),
                criterion("median per-step histogram distance", Metric::HistMedian, Bound::AtMost(0.20)),
                criterion(
                    "consistency satisfaction",
                    Metric::Check {
                        name: "consistency".into(),
                    },
                    Bound::AtLeast(0.99),
                ),
            ];
            c
        }
        "esirs_inequality" => {
            let text = format!("({ESIRS_CONSISTENCY}) and (forall t in 0..30: I[t] <= 20) @k=25");
            let mut c = esirs_base(name, text, 1.0, 2500, 1000);
            // the bound max I ≤ 20 is essentially never met by the simulator
            c.oracle.target = 1000;
            c.oracle.budget = 1_000_000;
            c.criteria = vec![criterion("hard satisfaction", Metric::Satisfaction, Bound::AtLeast(0.95))];
            c
        }
        "wine_complex" | "wine_multi" => {
            let multi = name == "wine_multi";
            let dataset = wine_source();
            let real = matches!(dataset, DatasetSource::Csv { .. });
            let criteria = match (multi, real) {
                (true, _) => vec![
                    criterion("hard satisfaction", Metric::Satisfaction, Bound::AtLeast(0.95)),
                    criterion("instance 1 mean marginal distance", Metric::InstanceHistMean { instance: 1 }, Bound::AtMost(0.10)),
                    criterion("instance 2 mean marginal distance", Metric::InstanceHistMean { instance: 2 }, Bound::AtMost(0.10)),
                ],
                (false, true) => vec![
                    criterion("median marginal distance", Metric::HistMedian, Bound::AtMost(0.15)),
                    criterion("max marginal distance", Metric::HistMax, Bound::AtMost(0.25)),
                    criterion("hard satisfaction", Metric::Satisfaction, Bound::Within(0.80, 0.95)),
                    criterion("RS acceptance rate", Metric::AcceptanceRate, Bound::Within(0.005, 0.04)),
                ],
                (false, false) => vec![],
            };
            ExperimentConfig {
                name: name.into(),
                dataset,
                diffusion: None,
                architecture: arch(vec![128, 128, 128]),
                train: training(10_000, 256, 22),
                model_seed: 23,
                constraint: ConstraintConfig {
                    text: if multi { WINE_MULTI } else { WINE_COMPLEX }.into(),
                    k: if multi { 50.0 } else { 30.0 },
                    lambda: 1.0,
                    one_sided: false,
                    instances: if multi { 2 } else { 1 },
                },
                schedule: GuidanceSchedule::Snr,
                sampler: SamplerConfig {
                    langevin_time: 0.4,
                    ..sampler(500, if multi { 4000 } else { 2000 }, 24)
                },
                oracle: OracleConfig {
                    base: OracleBase::Model,
                    target: 5000,
                    budget: 2_000_000,
                    batch: 10_000,
                    use_bound: false,
                    seed: 25,
                },
                metrics: MetricConfig {
                    bins: eval::DEFAULT_BINS,
                    guided_count: 5000,
                    split_seed: 26,
                },
                checks: vec![],
                criteria,
            }
        }
        other => {
            return Err(Error::Config(format!(
                "unknown experiment `{other}`; expected one of: {}",
                NAMES.join(", ")
            )))
        }
    };
    Ok(cfg)
}

/// A loaded dataset with its fitted normalization and encoding.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub dataset: Dataset,
    pub normalization: Normalization,
    pub encoded: Array<f64>,
}

pub fn prepare(source: &DatasetSource) -> Result<Prepared> {
    let dataset = source.load()?;
    if dataset.is_empty() {
        return Err(Error::Config("dataset has no usable rows".into()));
    }
    let normalization = Normalization::fit(&dataset);
    let encoded = encode(&dataset, &normalization)?;
    Ok(Prepared {
        dataset,
        normalization,
        encoded,
    })
}

/// The config's diffusion, or VE sized to the encoded data.
pub fn resolve_diffusion(config: &ExperimentConfig, encoded: &Array<f64>) -> DiffusionSpec {
    config
        .diffusion
        .unwrap_or_else(|| DiffusionSpec::ve_for_data(encoded, 0.01))
}

pub fn train_model(config: &ExperimentConfig, prepared: &Prepared) -> Result<(Checkpoint, TrainReport)> {
    let spec = resolve_diffusion(config, &prepared.encoded);
    let schema = &prepared.dataset.schema;
    let mut model = ScoreModel::new(schema.width(), spec, config.architecture.clone(), config.model_seed)?;
    let dequant = prepared.normalization.dequantization(schema);
    let report = train(&mut model, &prepared.encoded, Some(&dequant), &config.train)?;
    let ck = Checkpoint {
        model,
        normalization: Some(prepared.normalization.clone()),
        schema: Some(schema.clone()),
        train: Some(config.train.clone()),
        final_loss: report.losses.last().copied(),
    };
    Ok((ck, report))
}

/// Schema and normalization stored alongside the model.
pub fn parts(ck: &Checkpoint) -> Result<(&TableSchema, &Normalization)> {
    match (&ck.schema, &ck.normalization) {
        (Some(s), Some(n)) => Ok((s, n)),
        _ => Err(Error::Checkpoint("checkpoint lacks schema or normalization".into())),
    }
}

pub fn parse_formula(text: &str, schema: &TableSchema, instances: usize) -> Result<Formula> {
    let binding = if instances == 1 {
        Binding::new(schema)
    } else {
        Binding::multi(schema, instances)
    };
    Ok(parse(text, &binding)?)
}

pub fn compile_constraint(
    constraint: &ConstraintConfig,
    schema: &TableSchema,
    normalization: &Normalization,
) -> Result<CompiledConstraint> {
    let f = parse_formula(&constraint.text, schema, constraint.instances)?;
    let nnf = to_nnf(&f)?;
    Ok(compile(&nnf, normalization, constraint.instances, constraint.options())?)
}

pub fn guide(config: &ExperimentConfig, ck: &Checkpoint, cc: &CompiledConstraint) -> Result<GuidedSamples> {
    let (schema, normalization) = parts(ck)?;
    let job = GuidedSampleJob {
        score: &ck.model,
        spec: *ck.model.spec(),
        constraint: cc,
        schedule: config.schedule,
        sampler: config.sampler,
        dim: ck.model.dim(),
        instances: config.constraint.instances,
        count: config.metrics.guided_count,
        decoder: Some(Decoder { schema, normalization }),
    };
    constrained_sample(&job)
}

/// Unconditional samples from the reverse process, decoded.
pub fn sample(config: &ExperimentConfig, ck: &Checkpoint, count: usize) -> Result<Array<f64>> {
    let (schema, normalization) = parts(ck)?;
    let y = pc_sample(ck.model.spec(), &ck.model, &config.sampler, ck.model.dim(), count)?;
    Ok(decode(&y, schema, normalization)?)
}

/// Rejection samples plus their decoded rows.
pub struct OracleSamples {
    pub result: RejectionResult,
    pub decoded: Array<f64>,
}

pub fn oracle(config: &ExperimentConfig, ck: &Checkpoint, cc: &CompiledConstraint) -> Result<OracleSamples> {
    let (schema, normalization) = parts(ck)?;
    oracle_with(config, Some(&ck.model), schema, normalization, cc)
}

/// Rejection sampling with an explicit encoding; `model` is needed only
/// for the model base.
pub fn oracle_with(
    config: &ExperimentConfig,
    model: Option<&ScoreModel>,
    schema: &TableSchema,
    normalization: &Normalization,
    cc: &CompiledConstraint,
) -> Result<OracleSamples> {
    let n = config.constraint.instances;
    let o = &config.oracle;
    let job = RejectionJob {
        target: o.target,
        budget: o.budget,
        batch: o.batch,
        seed: o.seed,
        log_envelope: if o.use_bound { cc.upper_bound() } else { 0.0 },
    };
    let result = match o.base {
        OracleBase::Model => {
            let model = model.ok_or_else(|| Error::Config("the model oracle needs a checkpoint".into()))?;
            let mut src = ModelProposal {
                score: model,
                spec: *model.spec(),
                sampler: config.sampler,
                dim: model.dim(),
                instances: n,
            };
            // the unconditional proposal stops at the reverse process
            src.sampler.final_langevin_steps = 0;
            rejection_sample(&job, cc, &mut src)?
        }
        OracleBase::Generator => {
            let width = schema.width() * n;
            let mut src = FnProposal {
                width,
                generate: |count: usize, rng: &mut rand_chacha::ChaCha8Rng| {
                    let d = config.dataset.regenerate(count * n, rng.random())?;
                    Ok(encode(&d, normalization)?.reshape(count, width)?)
                },
            };
            rejection_sample(&job, cc, &mut src)?
        }
    };
    let decoded = decode_instances(&result.accepted, n, schema, normalization)?;
    Ok(OracleSamples { result, decoded })
}

/// Schema whose columns are those of `schema` repeated per instance.
pub fn instance_schema(schema: &TableSchema, instances: usize) -> Result<TableSchema> {
    if instances == 1 {
        return Ok(schema.clone());
    }
    let cols: Vec<Column> = (1..=instances)
        .flat_map(|i| {
            schema.columns.iter().map(move |c| Column {
                name: format!("{}_{i}", c.name),
                ..c.clone()
            })
        })
        .collect();
    Ok(TableSchema::new(cols)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedValue {
    pub name: String,
    pub value: f64,
}

/// Values of the config's checks on decoded data-space rows.
pub fn run_checks(config: &ExperimentConfig, schema: &TableSchema, decoded: &Array<f64>) -> Result<Vec<NamedValue>> {
    let n = config.constraint.instances;
    let labels = instance_schema(schema, n)?.component_labels();
    config
        .checks
        .iter()
        .map(|c| {
            let value = match c {
                Check::Holds { formula, .. } => {
                    let f = to_nnf(&parse_formula(formula, schema, n)?)?;
                    let ok: Vec<bool> = (0..decoded.rows()).map(|i| eval_hard(&f, decoded.row_slice(i))).collect();
                    eval::fraction(&ok)
                }
                Check::TargetDeviation { targets, .. } => {
                    let mut sum = 0.0;
                    for (label, v) in targets {
                        let j = labels
                            .iter()
                            .position(|l| l == label)
                            .ok_or_else(|| Error::Config(format!("unknown component `{label}` in check")))?;
                        sum += (0..decoded.rows()).map(|i| (decoded.get(i, j) - v).abs()).sum::<f64>();
                    }
                    sum / (targets.len() * decoded.rows()).max(1) as f64
                }
            };
            Ok(NamedValue {
                name: c.name().into(),
                value,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub report: MetricReport,
    pub checks: Vec<NamedValue>,
    pub instances: usize,
}

pub fn evaluate(
    config: &ExperimentConfig,
    schema: &TableSchema,
    guided: &GuidedSamples,
    oracle: Option<&OracleSamples>,
) -> Result<Evaluation> {
    evaluate_rows(
        config,
        schema,
        &guided.decoded,
        oracle.map(|o| &o.decoded),
        oracle.map(|o| o.result.acceptance_rate()),
    )
}

/// Metrics and checks on decoded samples against optional decoded
/// reference rows.
pub fn evaluate_rows(
    config: &ExperimentConfig,
    schema: &TableSchema,
    samples: &Array<f64>,
    reference: Option<&Array<f64>>,
    acceptance_rate: Option<f64>,
) -> Result<Evaluation> {
    let n = config.constraint.instances;
    let labels = instance_schema(schema, n)?.component_labels();
    if samples.cols() != labels.len() {
        return Err(Error::Dimension {
            expected: labels.len(),
            got: samples.cols(),
        });
    }
    let bins = config.metrics.bins;
    let formula = to_nnf(&parse_formula(&config.constraint.text, schema, n)?)?;
    let mut report = match reference {
        Some(r) if r.rows() >= 4 => {
            let m = MetricReport::compare(samples, r, labels, bins)?.with_self_distance(r, config.metrics.split_seed)?;
            MetricReport {
                reference_satisfaction: Some(eval::satisfaction_rate(&formula, r)?),
                ..m
            }
        }
        _ => MetricReport {
            labels,
            binning: eval::Binning {
                bins,
                range: "no reference sample".into(),
            },
            n_samples: samples.rows(),
            n_reference: reference.map_or(0, |r| r.rows()),
            hist_l1: vec![],
            hist_summary: eval::Summary {
                median: f64::NAN,
                mean: f64::NAN,
                max: f64::NAN,
            },
            corr_l1: None,
            self_distance: None,
            satisfaction: None,
            reference_satisfaction: None,
            acceptance_rate: None,
        },
    };
    report.satisfaction = Some(eval::satisfaction_rate(&formula, samples)?);
    report.acceptance_rate = acceptance_rate;
    Ok(Evaluation {
        report,
        checks: run_checks(config, schema, samples)?,
        instances: n,
    })
}

impl Evaluation {
    pub fn metric(&self, m: &Metric) -> Option<f64> {
        let r = &self.report;
        let finite = |v: f64| v.is_finite().then_some(v);
        match m {
            Metric::HistMedian => finite(r.hist_summary.median),
            Metric::HistMean => finite(r.hist_summary.mean),
            Metric::HistMax => finite(r.hist_summary.max),
            Metric::InstanceHistMean { instance } => {
                if r.hist_l1.is_empty() || *instance == 0 || *instance > self.instances {
                    return None;
                }
                let d = r.hist_l1.len() / self.instances;
                Some(eval::mean(&r.hist_l1[(instance - 1) * d..instance * d]))
            }
            Metric::CorrL1 => r.corr_l1.as_ref().map(|c| c.value),
            Metric::Satisfaction => r.satisfaction,
            Metric::AcceptanceRate => r.acceptance_rate,
            Metric::Check { name } => self.checks.iter().find(|c| &c.name == name).map(|c| c.value),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub label: String,
    pub value: Option<f64>,
    pub bound: Bound,
    pub passed: bool,
}

pub fn assess(criteria: &[CriterionSpec], ev: &Evaluation) -> Vec<Outcome> {
    criteria
        .iter()
        .map(|c| {
            let value = ev.metric(&c.metric);
            Outcome {
                label: c.label.clone(),
                value,
                bound: c.bound,
                passed: value.is_some_and(|v| c.bound.holds(v)),
            }
        })
        .collect()
}

pub fn write_loss_csv(path: impl AsRef<Path>, losses: &[f64]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Config(e.to_string()))?;
    let err = |e: csv::Error| Error::Config(e.to_string());
    w.write_record(["step", "loss"]).map_err(err)?;
    for (i, l) in losses.iter().enumerate() {
        w.write_record([i.to_string(), l.to_string()]).map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_guided_csv(path: impl AsRef<Path>, schema: &TableSchema, g: &GuidedSamples, instances: usize) -> Result<()> {
    let flags: Vec<f64> = g.satisfied.iter().map(|s| f64::from(u8::from(*s))).collect();
    write_csv(
        path,
        &instance_schema(schema, instances)?,
        &g.decoded,
        &[("log_weight", &g.log_weights), ("satisfied", &flags)],
    )
}

pub fn write_oracle_csv(path: impl AsRef<Path>, schema: &TableSchema, o: &OracleSamples, instances: usize) -> Result<()> {
    write_csv(
        path,
        &instance_schema(schema, instances)?,
        &o.decoded,
        &[("log_weight", &o.result.log_weights)],
    )
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub experiment: String,
    pub evaluation: Evaluation,
    pub outcomes: Vec<Outcome>,
    pub acceptance: Option<AcceptanceInfo>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AcceptanceInfo {
    pub proposed: usize,
    pub accepted: usize,
    pub rate: f64,
    pub partial: bool,
}

impl RunSummary {
    pub fn passed(&self) -> bool {
        self.outcomes.iter().all(|o| o.passed)
    }
}

/// Stage tag attached to pipeline failures.
#[derive(Debug)]
pub struct StageError {
    pub stage: &'static str,
    pub error: Error,
}

impl std::fmt::Display for StageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "[{}] {}", self.stage, self.error)
    }
}

impl std::error::Error for StageError {}

fn stage<T>(name: &'static str, r: Result<T>) -> std::result::Result<T, StageError> {
    r.map_err(|error| StageError { stage: name, error })
}

/// Train, sample with guidance, run the oracle and evaluate, writing every
/// artifact into `out`.
pub fn reproduce(
    config: &ExperimentConfig,
    out: &Path,
    log: &mut dyn FnMut(&str),
) -> std::result::Result<RunSummary, StageError> {
    stage("config", config.validate())?;
    stage("output", std::fs::create_dir_all(out).map_err(|e| Error::io(out, e)))?;
    stage("output", config.save(out.join("config.json")))?;

    log(&format!("[data] loading {}", config.name));
    let prepared = stage("data", prepare(&config.dataset))?;
    log(&format!(
        "[data] {} rows, {} rejected, width {}",
        prepared.dataset.len(),
        prepared.dataset.rejected,
        prepared.dataset.schema.width()
    ));
    log(&format!("[train] {} steps", config.train.steps));
    let (ck, trace) = stage("train", train_model(config, &prepared))?;
    stage("train", ck.save(out.join("model.sgck")))?;
    stage("train", write_loss_csv(out.join("loss.csv"), &trace.losses))?;
    log(&format!("[train] final loss {:.4}", trace.tail_mean(100)));

    let schema = &prepared.dataset.schema;
    let cc = stage("constraint", compile_constraint(&config.constraint, schema, &prepared.normalization))?;
    log("[oracle] rejection sampling");
    let o = stage("oracle", oracle(config, &ck, &cc))?;
    log(&format!(
        "[oracle] accepted {} of {} ({:.4}){}",
        o.result.len(),
        o.result.proposed,
        o.result.acceptance_rate(),
        if o.result.partial { ", budget exhausted" } else { "" }
    ));
    stage("oracle", write_oracle_csv(out.join("oracle.csv"), schema, &o, config.constraint.instances))?;

    log("[guide] constrained sampling");
    let g = stage("guide", guide(config, &ck, &cc))?;
    stage("guide", write_guided_csv(out.join("guided.csv"), schema, &g, config.constraint.instances))?;

    let ev = stage("evaluate", evaluate(config, schema, &g, Some(&o)))?;
    stage("evaluate", ev.report.save_json(out.join("report.json")))?;
    if o.decoded.rows() > 0 {
        stage(
            "evaluate",
            eval::write_histograms_csv(
                out.join("histograms.csv"),
                &g.decoded,
                &o.decoded,
                &ev.report.labels,
                config.metrics.bins,
            ),
        )?;
    }
    let summary = RunSummary {
        experiment: config.name.clone(),
        outcomes: assess(&config.criteria, &ev),
        evaluation: ev,
        acceptance: Some(AcceptanceInfo {
            proposed: o.result.proposed,
            accepted: o.result.accepted_total,
            rate: o.result.acceptance_rate(),
            partial: o.result.partial,
        }),
    };
    let text = stage("output", serde_json::to_string_pretty(&summary).map_err(Error::from))?;
    stage("output", std::fs::write(out.join("summary.json"), text).map_err(|e| Error::io(out, e)))?;
    Ok(summary)
}
