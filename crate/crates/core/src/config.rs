//! Experiment configuration. A saved config lists every setting explicitly,
//! so rerunning from it repeats the run.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{
    esirs_simulate, gaussian_mixture_1d, ingest_csv, synthetic_wine, CsvOptions, Dataset, ESIRSParams, TableSchema,
};
use crate::diffusion::{DiffusionSpec, SamplerConfig};
use crate::error::{Error, Result};
use crate::guidance::GuidanceSchedule;
use crate::logic::CompileOptions;
use crate::scorenet::{Architecture, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSource {
    Csv {
        path: PathBuf,
        #[serde(default = "comma")]
        delimiter: char,
        #[serde(default)]
        drop: Vec<String>,
        #[serde(default)]
        normalize_headers: bool,
        /// Optional schema sidecar (JSON).
        #[serde(default)]
        schema: Option<PathBuf>,
    },
    Esirs {
        params: ESIRSParams,
        count: usize,
        seed: u64,
    },
    /// `(weight, mean, std)` per component, column `x`.
    Mixture {
        components: Vec<(f64, f64, f64)>,
        count: usize,
        seed: u64,
    },
    SyntheticWine {
        count: usize,
        seed: u64,
    },
}

fn comma() -> char {
    ','
}

impl DatasetSource {
    pub fn load(&self) -> Result<Dataset> {
        match self {
            DatasetSource::Csv {
                path,
                delimiter,
                drop,
                normalize_headers,
                schema,
            } => {
                if !delimiter.is_ascii() {
                    return Err(Error::Config(format!("delimiter `{delimiter}` is not ASCII")));
                }
                let opts = CsvOptions {
                    delimiter: *delimiter as u8,
                    drop: drop.clone(),
                    normalize_headers: *normalize_headers,
                    ..CsvOptions::default()
                };
                let schema = schema.as_ref().map(TableSchema::load_json).transpose()?;
                ingest_csv(path, schema.as_ref(), &opts)
            }
            DatasetSource::Esirs { params, count, seed } => Ok(esirs_simulate(params, *count, *seed)?),
            DatasetSource::Mixture { components, count, seed } => Ok(gaussian_mixture_1d(components, *count, *seed)?),
            DatasetSource::SyntheticWine { count, seed } => Ok(synthetic_wine(*count, *seed)),
        }
    }

    /// Fresh draws from the generating process, when there is one.
    pub fn regenerate(&self, count: usize, seed: u64) -> Result<Dataset> {
        match self {
            DatasetSource::Csv { .. } => Err(Error::Config("a CSV source has no generator to draw from".into())),
            DatasetSource::Esirs { params, .. } => Ok(esirs_simulate(params, count, seed)?),
            DatasetSource::Mixture { components, .. } => Ok(gaussian_mixture_1d(components, count, seed)?),
            DatasetSource::SyntheticWine { .. } => Ok(synthetic_wine(count, seed)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintConfig {
    pub text: String,
    #[serde(default = "one")]
    pub k: f64,
    #[serde(default = "one")]
    pub lambda: f64,
    #[serde(default)]
    pub one_sided: bool,
    /// Records tied together by one constraint.
    #[serde(default = "one_usize")]
    pub instances: usize,
}

fn one() -> f64 {
    1.0
}

fn one_usize() -> usize {
    1
}

impl ConstraintConfig {
    pub fn options(&self) -> CompileOptions {
        CompileOptions {
            k: self.k,
            lambda: self.lambda,
            one_sided: self.one_sided,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleBase {
    /// Proposals from the unconditional learned model.
    Model,
    /// Proposals from the dataset's generating process.
    Generator,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    pub base: OracleBase,
    pub target: usize,
    pub budget: usize,
    pub batch: usize,
    /// Use the formula's static bound as the log envelope.
    #[serde(default)]
    pub use_bound: bool,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricConfig {
    pub bins: usize,
    pub guided_count: usize,
    pub split_seed: u64,
}

/// Extra per-run measurements on decoded guided samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Check {
    /// Fraction of samples on which `formula` holds.
    Holds { name: String, formula: String },
    /// Mean `|x_c − v|` over samples and `(component label, v)` pairs.
    TargetDeviation { name: String, targets: Vec<(String, f64)> },
}

impl Check {
    pub fn name(&self) -> &str {
        match self {
            Check::Holds { name, .. } | Check::TargetDeviation { name, .. } => name,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Metric {
    HistMedian,
    HistMean,
    HistMax,
    /// Mean marginal distance over the columns of one instance (1-based).
    InstanceHistMean { instance: usize },
    CorrL1,
    Satisfaction,
    AcceptanceRate,
    Check { name: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bound {
    AtMost(f64),
    AtLeast(f64),
    Within(f64, f64),
}

impl Bound {
    pub fn holds(&self, v: f64) -> bool {
        match *self {
            Bound::AtMost(b) => v <= b,
            Bound::AtLeast(b) => v >= b,
            Bound::Within(lo, hi) => (lo..=hi).contains(&v),
        }
    }
}

impl std::fmt::Display for Bound {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Bound::AtMost(b) => write!(f, "<= {b}"),
            Bound::AtLeast(b) => write!(f, ">= {b}"),
            Bound::Within(lo, hi) => write!(f, "in [{lo}, {hi}]"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionSpec {
    pub label: String,
    pub metric: Metric,
    pub bound: Bound,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    pub dataset: DatasetSource,
    /// Omitted: VE with `σ_min = 0.01` and `σ_max` from the encoded data.
    #[serde(default)]
    pub diffusion: Option<DiffusionSpec>,
    pub architecture: Architecture,
    pub train: TrainConfig,
    pub model_seed: u64,
    pub constraint: ConstraintConfig,
    pub schedule: GuidanceSchedule,
    pub sampler: SamplerConfig,
    pub oracle: OracleConfig,
    pub metrics: MetricConfig,
    #[serde(default)]
    pub checks: Vec<Check>,
    #[serde(default)]
    pub criteria: Vec<CriterionSpec>,
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let c: Self = serde_json::from_str(&text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(spec) = &self.diffusion {
            spec.validate()?;
        }
        self.architecture.validate()?;
        self.train.validate()?;
        self.sampler.validate()?;
        self.constraint.options().validate()?;
        if self.constraint.instances == 0 {
            return Err(Error::Config("constraint.instances must be at least 1".into()));
        }
        if self.metrics.bins == 0 || self.metrics.guided_count == 0 {
            return Err(Error::Config("metrics.bins and metrics.guided_count must be positive".into()));
        }
        if self.oracle.target == 0 || self.oracle.batch == 0 || self.oracle.budget < self.oracle.target {
            return Err(Error::Config("oracle needs 0 < target ≤ budget and a positive batch".into()));
        }
        Ok(())
    }
}
