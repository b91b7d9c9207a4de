//! Rejection sampling from `p(x) e^{c(x)} / Z`: draw from `p`, keep `x`
//! with probability `e^{c(x) − L}` where `L ≥ sup c` is the log envelope.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffcalc::Array;
use crate::diffusion::{sample_with_rng, DiffusionSpec, SamplerConfig, ScoreFn};
use crate::error::{Error, Result};
use crate::logic::{CompiledConstraint, LogicError};

/// Source of unconditional model-space proposals.
pub trait Proposal {
    fn width(&self) -> usize;
    fn propose(&mut self, count: usize, rng: &mut ChaCha8Rng) -> Result<Array<f64>>;
}

/// Proposals from the learned model; `instances` independent draws are
/// concatenated per row.
pub struct ModelProposal<'a> {
    pub score: &'a dyn ScoreFn,
    pub spec: DiffusionSpec,
    pub sampler: SamplerConfig,
    pub dim: usize,
    pub instances: usize,
}

impl Proposal for ModelProposal<'_> {
    fn width(&self) -> usize {
        self.dim * self.instances
    }

    fn propose(&mut self, count: usize, rng: &mut ChaCha8Rng) -> Result<Array<f64>> {
        let x = sample_with_rng(&self.spec, self.score, self.score, &self.sampler, self.dim, count * self.instances, rng)?;
        Ok(x.reshape(count, self.width())?)
    }
}

/// Proposals from a closure, typically a simulator followed by encoding.
pub struct FnProposal<F> {
    pub width: usize,
    pub generate: F,
}

impl<F> Proposal for FnProposal<F>
where
    F: FnMut(usize, &mut ChaCha8Rng) -> Result<Array<f64>>,
{
    fn width(&self) -> usize {
        self.width
    }

    fn propose(&mut self, count: usize, rng: &mut ChaCha8Rng) -> Result<Array<f64>> {
        (self.generate)(count, rng)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RejectionJob {
    pub target: usize,
    /// Maximum number of proposals.
    pub budget: usize,
    /// Proposals drawn per round.
    pub batch: usize,
    pub seed: u64,
    /// `L` with `c(x) ≤ L ≤ 0`. `0` is always valid.
    #[serde(default)]
    pub log_envelope: f64,
}

impl RejectionJob {
    pub fn validate(&self) -> Result<()> {
        if self.target == 0 || self.batch == 0 {
            return Err(Error::Config("target and batch must be positive".into()));
        }
        if self.budget < self.target {
            return Err(Error::Config(format!(
                "budget {} is smaller than the target {}",
                self.budget, self.target
            )));
        }
        if !(self.log_envelope <= 0.0) {
            return Err(Error::Config(format!("log_envelope must be ≤ 0, got {}", self.log_envelope)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct RejectionResult {
    /// At most `target` accepted model-space rows, in proposal order.
    pub accepted: Array<f64>,
    pub log_weights: Vec<f64>,
    pub proposed: usize,
    /// Acceptances over all proposals, including any beyond the target.
    pub accepted_total: usize,
    /// Budget ran out before the target was reached.
    pub partial: bool,
}

impl RejectionResult {
    /// Fraction of proposals accepted with probability `e^{c − L}`.
    pub fn acceptance_rate(&self) -> f64 {
        self.accepted_total as f64 / self.proposed.max(1) as f64
    }

    pub fn len(&self) -> usize {
        self.accepted.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn rejection_sample(job: &RejectionJob, constraint: &CompiledConstraint, source: &mut dyn Proposal) -> Result<RejectionResult> {
    job.validate()?;
    if source.width() != constraint.width() {
        return Err(Error::Dimension {
            expected: constraint.width(),
            got: source.width(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(job.seed);
    let width = source.width();
    let mut kept: Vec<f64> = Vec::new();
    let mut weights = Vec::new();
    let (mut proposed, mut total) = (0usize, 0usize);
    while weights.len() < job.target && proposed < job.budget {
        let n = job.batch.min(job.budget - proposed);
        let x = source.propose(n, &mut rng)?;
        if x.rows() != n || x.cols() != width {
            return Err(Error::Dimension {
                expected: n * width,
                got: x.len(),
            });
        }
        let c = constraint.eval(&x)?;
        proposed += n;
        for (i, &ci) in c.iter().enumerate() {
            if ci > job.log_envelope {
                return Err(LogicError::PositiveLogWeight(ci - job.log_envelope).into());
            }
            let u: f64 = rng.random();
            if u < (ci - job.log_envelope).exp() {
                total += 1;
                if weights.len() < job.target {
                    kept.extend_from_slice(x.row_slice(i));
                    weights.push(ci);
                }
            }
        }
    }
    let rows = weights.len();
    Ok(RejectionResult {
        accepted: Array::matrix(rows, width, kept)?,
        partial: rows < job.target,
        log_weights: weights,
        proposed,
        accepted_total: total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Column, Normalization, TableSchema};
    use crate::logic::{compile, parse, to_nnf, Binding, CompileOptions};
    use rand_distr::StandardNormal;

    fn constraint(text: &str, k: f64) -> CompiledConstraint {
        let schema = TableSchema::new(vec![Column::real("x")]).unwrap();
        let f = to_nnf(&parse(text, &Binding::new(&schema)).unwrap()).unwrap();
        compile(&f, &Normalization::identity(1), 1, CompileOptions { k, lambda: 1.0, one_sided: false }).unwrap()
    }

    fn normal_source() -> FnProposal<impl FnMut(usize, &mut ChaCha8Rng) -> Result<Array<f64>>> {
        FnProposal {
            width: 1,
            generate: |n: usize, rng: &mut ChaCha8Rng| Ok(Array::from_fn(n, 1, |_, _| rng.sample(StandardNormal))),
        }
    }

    fn job(target: usize, budget: usize) -> RejectionJob {
        RejectionJob {
            target,
            budget,
            batch: 1000,
            seed: 7,
            log_envelope: 0.0,
        }
    }

    #[test]
    fn near_tautology_accepts_everything() {
        let c = constraint("x >= -1000", 1.0);
        let r = rejection_sample(&job(2000, 2000), &c, &mut normal_source()).unwrap();
        assert_eq!(r.acceptance_rate(), 1.0);
        assert!(!r.partial);
    }

    #[test]
    fn constant_half_acceptance() {
        // x >= x is ln σ(0) = −ln 2 everywhere
        let c = constraint("x >= x", 1.0);
        let r = rejection_sample(&job(10_000, 10_000), &c, &mut normal_source()).unwrap();
        assert!((r.acceptance_rate() - 0.5).abs() < 0.02, "{}", r.acceptance_rate());
        assert!(r.partial);
        assert_eq!(r.proposed, 10_000);
    }

    #[test]
    fn envelope_scales_acceptance() {
        let c = constraint("x >= x", 1.0);
        let j = RejectionJob {
            log_envelope: -std::f64::consts::LN_2,
            ..job(1000, 1000)
        };
        let r = rejection_sample(&j, &c, &mut normal_source()).unwrap();
        assert_eq!(r.acceptance_rate(), 1.0);
        let bad = RejectionJob { log_envelope: -1.0, ..j };
        assert!(rejection_sample(&bad, &c, &mut normal_source()).is_err());
    }

    #[test]
    fn accepted_are_truncated_and_deterministic() {
        let c = constraint("x >= 0", 20.0);
        let a = rejection_sample(&job(300, 100_000), &c, &mut normal_source()).unwrap();
        let b = rejection_sample(&job(300, 100_000), &c, &mut normal_source()).unwrap();
        assert_eq!(a.len(), 300);
        assert_eq!(a.accepted.data(), b.accepted.data());
        assert_eq!(a.proposed, 1000);
        assert!(a.accepted_total >= 300);
        assert!(a.accepted.data().iter().filter(|v| **v < 0.0).count() < 15);
    }

    #[test]
    fn job_validation() {
        assert!(job(10, 5).validate().is_err());
        assert!(RejectionJob { batch: 0, ..job(1, 1) }.validate().is_err());
        assert!(RejectionJob { log_envelope: 0.5, ..job(1, 1) }.validate().is_err());
        let c = constraint("x >= 0", 1.0);
        let mut wide = FnProposal {
            width: 2,
            generate: |n: usize, _: &mut ChaCha8Rng| Ok(Array::zeros(n, 2)),
        };
        assert!(rejection_sample(&job(1, 1), &c, &mut wide).is_err());
    }
}
