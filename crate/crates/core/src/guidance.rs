//! Constraint-guided sampling with `s̃(x,t) = s(x,t) + g(t) ∇c(x)`.
//!
//! Multi-instance jobs treat `n` records as one state row of width `n·d`:
//! the unconditional score is evaluated per record and the constraint
//! gradient over the concatenation.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{decode_instances, Normalization, TableSchema};
use crate::diffcalc::Array;
use crate::diffusion::{sample_with_rng, DiffusionSpec, SamplerConfig, ScoreFn};
use crate::error::{Error, Result};
use crate::logic::{eval_hard, CompiledConstraint};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GuidanceSchedule {
    /// `g(t) = 1 − t`
    Linear,
    /// `g(t) = (1 + σ_t²)^{-1/2}`
    #[default]
    Snr,
}

impl GuidanceSchedule {
    pub fn weight(self, spec: &DiffusionSpec, t: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::TimeOutOfRange(t));
        }
        Ok(match self {
            GuidanceSchedule::Linear => 1.0 - t,
            GuidanceSchedule::Snr => snr_weight(spec.sigma(t)?),
        })
    }
}

/// `(1 + σ²)^{-1/2}`
pub fn snr_weight(sigma: f64) -> f64 {
    1.0 / (1.0 + sigma * sigma).sqrt()
}

impl FromStr for GuidanceSchedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "linear" => Ok(GuidanceSchedule::Linear),
            "snr" => Ok(GuidanceSchedule::Snr),
            other => Err(Error::Config(format!("unknown schedule `{other}` (expected linear or snr)"))),
        }
    }
}

/// Maps model-space samples back to data rows for hard checks.
#[derive(Debug, Clone, Copy)]
pub struct Decoder<'a> {
    pub schema: &'a TableSchema,
    pub normalization: &'a Normalization,
}

pub struct GuidedSampleJob<'a> {
    pub score: &'a dyn ScoreFn,
    pub spec: DiffusionSpec,
    pub constraint: &'a CompiledConstraint,
    pub schedule: GuidanceSchedule,
    pub sampler: SamplerConfig,
    /// Width of one record.
    pub dim: usize,
    pub instances: usize,
    pub count: usize,
    /// Without a decoder, hard satisfaction is checked on raw model-space rows.
    pub decoder: Option<Decoder<'a>>,
}

impl GuidedSampleJob<'_> {
    pub fn validate(&self) -> Result<()> {
        if self.instances == 0 || self.dim == 0 {
            return Err(Error::Config("dim and instance count must be positive".into()));
        }
        if self.constraint.width() != self.instances * self.dim {
            return Err(Error::Dimension {
                expected: self.instances * self.dim,
                got: self.constraint.width(),
            });
        }
        if let Some(d) = self.decoder {
            if d.schema.width() != self.dim {
                return Err(Error::Dimension {
                    expected: self.dim,
                    got: d.schema.width(),
                });
            }
        }
        self.sampler.validate()
    }

    pub fn width(&self) -> usize {
        self.instances * self.dim
    }
}

/// Unconditional score of rows holding `instances` records each.
pub fn multi_score(score: &dyn ScoreFn, v: &Array<f64>, instances: usize, t: f64) -> Result<Array<f64>> {
    if instances == 1 {
        return score.score(v, t);
    }
    if instances == 0 || v.cols() % instances != 0 {
        return Err(Error::Dimension {
            expected: instances.max(1) * (v.cols() / instances.max(1)),
            got: v.cols(),
        });
    }
    let (rows, width) = (v.rows(), v.cols());
    let flat = v.clone().reshape(rows * instances, width / instances)?;
    Ok(score.score(&flat, t)?.reshape(rows, width)?)
}

/// Guided score with an explicit constraint weight `g`.
pub fn guided_score_weighted(job: &GuidedSampleJob, v: &Array<f64>, t: f64, g: f64) -> Result<Array<f64>> {
    if v.cols() != job.width() {
        return Err(Error::Dimension {
            expected: job.width(),
            got: v.cols(),
        });
    }
    let mut s = multi_score(job.score, v, job.instances, t)?;
    if g == 0.0 {
        return Ok(s);
    }
    let grad = job.constraint.grad(v)?;
    if !grad.all_finite() {
        return Err(Error::NonFinite {
            what: "constraint gradient",
            t,
        });
    }
    for (a, b) in s.data_mut().iter_mut().zip(grad.data()) {
        *a += g * b;
    }
    Ok(s)
}

/// `s(x,t) + g(t) ∇c(x)` with the job's schedule.
pub fn guided_score(job: &GuidedSampleJob, v: &Array<f64>, t: f64) -> Result<Array<f64>> {
    let g = job.schedule.weight(&job.spec, t)?;
    guided_score_weighted(job, v, t, g)
}

struct Guided<'j, 'a> {
    job: &'j GuidedSampleJob<'a>,
    weight: Option<f64>,
}

impl ScoreFn for Guided<'_, '_> {
    fn score(&self, x: &Array<f64>, t: f64) -> Result<Array<f64>> {
        match self.weight {
            Some(g) => guided_score_weighted(self.job, x, t, g),
            None => guided_score(self.job, x, t),
        }
    }
}

#[derive(Debug, Clone)]
pub struct GuidedSamples {
    /// Model-space rows of width `instances · dim`.
    pub samples: Array<f64>,
    /// Data-space rows after decoding.
    pub decoded: Array<f64>,
    pub log_weights: Vec<f64>,
    pub satisfied: Vec<bool>,
}

impl GuidedSamples {
    pub fn satisfaction_rate(&self) -> f64 {
        self.satisfied.iter().filter(|s| **s).count() as f64 / self.satisfied.len().max(1) as f64
    }
}

/// Soft log-weights and hard satisfaction for model-space rows.
pub fn diagnose(
    constraint: &CompiledConstraint,
    samples: &Array<f64>,
    instances: usize,
    decoder: Option<Decoder>,
) -> Result<(Array<f64>, Vec<f64>, Vec<bool>)> {
    let log_weights = constraint.eval(samples)?;
    let decoded = match decoder {
        Some(d) => decode_instances(samples, instances, d.schema, d.normalization)?,
        None => samples.clone(),
    };
    let satisfied = (0..decoded.rows())
        .map(|i| eval_hard(&constraint.formula, decoded.row_slice(i)))
        .collect();
    Ok((decoded, log_weights, satisfied))
}

/// Reverse-time sampling with the guided score plus the configured Langevin
/// steps with `g = 1`.
pub fn constrained_sample(job: &GuidedSampleJob) -> Result<GuidedSamples> {
    job.validate()?;
    let mut rng = job.sampler.rng();
    let annealed = Guided { job, weight: None };
    let exact = Guided { job, weight: Some(1.0) };
    let x = sample_with_rng(&job.spec, &annealed, &exact, &job.sampler, job.width(), job.count, &mut rng)?;
    let (decoded, log_weights, satisfied) = diagnose(job.constraint, &x, job.instances, job.decoder)?;
    Ok(GuidedSamples {
        samples: x,
        decoded,
        log_weights,
        satisfied,
    })
}
