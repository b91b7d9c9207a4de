//! Time-conditioned MLP score model `s_θ(x, t) = f_θ(x, embed(t)) · min(1/σ_t, M)`.
//!
//! The network runs in `f32`; inputs and outputs cross the boundary as
//! `f64` arrays. The time embedding is a bank of fixed random Fourier
//! features of `ln σ_t` (VE) or `t` (sub-VP).

mod checkpoint;
mod train;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::diffcalc::{Array, DiffGraph, NodeId, Real};
use crate::diffusion::{DiffusionSpec, ScoreFn};
use crate::error::{Error, Result};

pub use checkpoint::Checkpoint;
pub use train::{train, Optimizer, TrainConfig, TrainReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Silu,
    Tanh,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    /// Number of Fourier features; must be even.
    pub embedding_dim: usize,
    /// Standard deviation of the random Fourier frequencies.
    pub fourier_scale: f64,
    /// Cap `M` on the output scaling `1/σ_t`.
    pub scale_cap: f64,
    /// Start the output layer at zero, so the initial score is 0.
    #[serde(default)]
    pub zero_init_output: bool,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            hidden: vec![256; 4],
            activation: Activation::Silu,
            embedding_dim: 32,
            fourier_scale: 1.0,
            scale_cap: 100.0,
            zero_init_output: false,
        }
    }
}

impl Architecture {
    pub fn validate(&self) -> Result<()> {
        if self.embedding_dim == 0 || self.embedding_dim % 2 != 0 {
            return Err(Error::Config(format!(
                "embedding_dim must be positive and even, got {}",
                self.embedding_dim
            )));
        }
        if self.hidden.contains(&0) {
            return Err(Error::Config("hidden widths must be positive".into()));
        }
        if !(self.scale_cap > 0.0 && self.scale_cap.is_finite()) {
            return Err(Error::Config(format!("scale_cap must be positive, got {}", self.scale_cap)));
        }
        if !(self.fourier_scale > 0.0 && self.fourier_scale.is_finite()) {
            return Err(Error::Config("fourier_scale must be positive".into()));
        }
        Ok(())
    }

    /// Shapes of the parameter tensors in storage order.
    pub fn tensor_shapes(&self, dim: usize) -> Vec<(String, [usize; 2])> {
        let widths: Vec<usize> = self.hidden.iter().copied().chain([dim]).collect();
        let mut out = vec![
            ("layer0.w_x".to_string(), [dim, widths[0]]),
            ("layer0.w_t".to_string(), [self.embedding_dim, widths[0]]),
            ("layer0.b".to_string(), [1, widths[0]]),
        ];
        for i in 1..widths.len() {
            out.push((format!("layer{i}.w"), [widths[i - 1], widths[i]]));
            out.push((format!("layer{i}.b"), [1, widths[i]]));
        }
        out
    }
}

/// The MLP graph with its parameter, output and loss nodes.
#[derive(Debug, Clone)]
pub(crate) struct Net<T: Real> {
    pub graph: DiffGraph<T>,
    pub params: Vec<NodeId>,
    pub out: NodeId,
    /// `Σ_b ‖a_b · f_b + z_b‖²` with inputs `a` (B×1) and `z` (B×D).
    pub loss: NodeId,
}

pub(crate) fn build_net<T: Real>(arch: &Architecture, values: Vec<Array<T>>) -> Net<T> {
    let mut g = DiffGraph::new();
    let x = g.input("x");
    let emb = g.input("emb");
    let mut params: Vec<NodeId> = Vec::with_capacity(values.len());
    let mut it = values.into_iter();
    let mut next = |g: &mut DiffGraph<T>, params: &mut Vec<NodeId>| {
        let id = g.param(it.next().expect("tensor count matches architecture"));
        params.push(id);
        id
    };
    let wx = next(&mut g, &mut params);
    let wt = next(&mut g, &mut params);
    let b0 = next(&mut g, &mut params);
    let hx = g.affine(x, wx, Some(b0));
    let ht = g.affine(emb, wt, None);
    let htb = g.broadcast(ht, hx);
    let mut h = g.add(hx, htb);
    for _ in 0..arch.hidden.len() {
        h = match arch.activation {
            Activation::Silu => g.silu(h),
            Activation::Tanh => g.tanh(h),
        };
        let w = next(&mut g, &mut params);
        let b = next(&mut g, &mut params);
        h = g.affine(h, w, Some(b));
    }
    let out = h;
    let a = g.input("a");
    let z = g.input("z");
    let ab = g.broadcast(a, out);
    let sf = g.mul(out, ab);
    let r = g.add(sf, z);
    let sq = g.mul(r, r);
    let loss = g.sum(sq);
    Net {
        graph: g,
        params,
        out,
        loss,
    }
}

#[derive(Debug, Clone)]
pub struct ScoreModel {
    spec: DiffusionSpec,
    arch: Architecture,
    dim: usize,
    frequencies: Vec<f32>,
    net: Net<f32>,
}

impl ScoreModel {
    /// Fresh model with Glorot-uniform weights and zero biases.
    pub fn new(dim: usize, spec: DiffusionSpec, arch: Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        spec.validate()?;
        if dim == 0 {
            return Err(Error::Config("data dimension must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let frequencies = (0..arch.embedding_dim / 2)
            .map(|_| (arch.fourier_scale * rng.sample::<f64, _>(StandardNormal)) as f32)
            .collect();
        let shapes = arch.tensor_shapes(dim);
        let last_w = shapes.len() - 2;
        let values = shapes
            .iter()
            .enumerate()
            .map(|(i, (name, [r, c]))| {
                if name.ends_with(".b") || (arch.zero_init_output && i == last_w) {
                    return Array::zeros(*r, *c);
                }
                let fan_in = if i <= 1 { dim + arch.embedding_dim } else { *r };
                let bound = (6.0 / (fan_in + c) as f64).sqrt();
                Array::from_fn(*r, *c, |_, _| rng.random_range(-bound..bound) as f32)
            })
            .collect();
        Ok(Self::from_parts(spec, arch, dim, frequencies, values))
    }

    pub(crate) fn from_parts(
        spec: DiffusionSpec,
        arch: Architecture,
        dim: usize,
        frequencies: Vec<f32>,
        values: Vec<Array<f32>>,
    ) -> Self {
        let net = build_net(&arch, values);
        Self {
            spec,
            arch,
            dim,
            frequencies,
            net,
        }
    }

    pub fn spec(&self) -> &DiffusionSpec {
        &self.spec
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn frequencies(&self) -> &[f32] {
        &self.frequencies
    }

    pub fn parameters(&self) -> Vec<&Array<f32>> {
        self.net
            .params
            .iter()
            .map(|&p| self.net.graph.leaf_value(p).expect("param"))
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|p| p.len()).sum()
    }

    pub(crate) fn net(&self) -> &Net<f32> {
        &self.net
    }

    pub(crate) fn net_mut(&mut self) -> &mut Net<f32> {
        &mut self.net
    }

    /// `min(1/σ_t, M)`.
    pub fn output_scale(&self, t: f64) -> Result<f64> {
        Ok((1.0 / self.spec.sigma(t)?).min(self.arch.scale_cap))
    }

    /// Fourier features for each time in `ts`, one row per entry.
    pub fn embed(&self, ts: &[f64]) -> Result<Array<f32>> {
        let half = self.frequencies.len();
        let mut out = Array::zeros(ts.len(), 2 * half);
        for (i, &t) in ts.iter().enumerate() {
            let c = self.spec.embedding_coordinate(t)?;
            let row = out.row_slice_mut(i);
            for (j, &w) in self.frequencies.iter().enumerate() {
                let phase = std::f64::consts::TAU * w as f64 * c;
                row[j] = phase.sin() as f32;
                row[half + j] = phase.cos() as f32;
            }
        }
        Ok(out)
    }

    /// Raw network output `f_θ(x, embed(t))`.
    pub fn network_output(&self, x: &Array<f64>, t: f64) -> Result<Array<f64>> {
        if x.cols() != self.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                got: x.cols(),
            });
        }
        if !x.all_finite() {
            return Err(Error::NonFinite { what: "score input", t });
        }
        let emb = self.embed(&[t])?;
        let x32: Array<f32> = x.cast();
        let f = self
            .net
            .graph
            .forward(self.net.out, &[("x", &x32), ("emb", &emb)])?;
        Ok(f.cast())
    }

    pub fn score(&self, x: &Array<f64>, t: f64) -> Result<Array<f64>> {
        let scale = self.output_scale(t)?;
        let f = self.network_output(x, t)?;
        let s = f.map(|v| v * scale);
        if !s.all_finite() {
            return Err(Error::NonFinite { what: "score output", t });
        }
        Ok(s)
    }

    /// One Monte Carlo estimate of the σ²-weighted DSM loss on `batch`
    /// (model space), drawing `t ~ U(t_min, 1)` and `z ~ N(0, I)` per row.
    pub fn dsm_loss(&self, batch: &Array<f64>, t_min: f64, rng: &mut impl Rng) -> Result<f64> {
        let (inputs, _) = train::prepare_batch(self, batch, None, t_min, rng)?;
        let n = batch.rows() as f64;
        let v = self.net.graph.forward(
            self.net.loss,
            &[
                ("x", &inputs.x),
                ("emb", &inputs.emb),
                ("a", &inputs.a),
                ("z", &inputs.z),
            ],
        )?;
        Ok(v.data()[0] as f64 / n)
    }
}

impl ScoreFn for ScoreModel {
    fn score(&self, x: &Array<f64>, t: f64) -> Result<Array<f64>> {
        ScoreModel::score(self, x, t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(zero: bool) -> ScoreModel {
        let arch = Architecture {
            hidden: vec![8, 8],
            zero_init_output: zero,
            ..Architecture::default()
        };
        ScoreModel::new(3, DiffusionSpec::default(), arch, 1).unwrap()
    }

    #[test]
    fn zero_output_layer_gives_zero_score() {
        let m = tiny(true);
        let x = Array::from_fn(5, 3, |i, j| (i as f64) - j as f64);
        for t in [0.0, 0.3, 1.0] {
            assert!(m.score(&x, t).unwrap().data().iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn output_scale_cap() {
        let spec = DiffusionSpec::Ve {
            sigma_min: 1e-6,
            sigma_max: 4.0,
        };
        let arch = Architecture {
            hidden: vec![4],
            ..Architecture::default()
        };
        let m = ScoreModel::new(2, spec, arch, 0).unwrap();
        // σ_1 = 4 → 1/σ = 0.25, σ_0 = 1e-6 → capped at 100
        assert_eq!(m.output_scale(1.0).unwrap(), 0.25);
        assert_eq!(m.output_scale(0.0).unwrap(), 100.0);
        let half = DiffusionSpec::Ve {
            sigma_min: 1.0,
            sigma_max: 4.0,
        };
        let m = ScoreModel::new(2, half, Architecture { hidden: vec![4], ..Architecture::default() }, 0).unwrap();
        let x = Array::row(vec![0.5, -0.5]);
        let f = m.network_output(&x, 0.5).unwrap();
        let s = m.score(&x, 0.5).unwrap();
        for (a, b) in s.data().iter().zip(f.data()) {
            assert_eq!(*a, b * 0.5);
        }
    }

    #[test]
    fn score_rejects_bad_input() {
        let m = tiny(false);
        assert!(matches!(
            m.score(&Array::row(vec![0.0, 1.0]), 0.5),
            Err(Error::Dimension { .. })
        ));
        assert!(m.score(&Array::row(vec![0.0, f64::NAN, 1.0]), 0.5).is_err());
        assert!(m.score(&Array::row(vec![0.0, 0.0, 1.0]), 1.5).is_err());
    }

    #[test]
    fn batch_rows_are_independent() {
        let m = tiny(false);
        let x = Array::from_fn(4, 3, |i, j| 0.1 * (i * 3 + j) as f64);
        let all = m.score(&x, 0.4).unwrap();
        for i in 0..4 {
            let one = m.score(&Array::row(x.row_slice(i).to_vec()), 0.4).unwrap();
            for (a, b) in one.data().iter().zip(all.row_slice(i)) {
                assert!((a - b).abs() <= 1e-4 * b.abs().max(1.0));
            }
        }
    }

    #[test]
    fn bounded_by_cap_times_output() {
        let arch = Architecture {
            hidden: vec![16],
            activation: Activation::Tanh,
            ..Architecture::default()
        };
        let m = ScoreModel::new(2, DiffusionSpec::default(), arch, 4).unwrap();
        let x = Array::from_fn(50, 2, |i, j| (i as f64 - 25.0) * (j as f64 + 1.0));
        for t in [0.0, 0.01, 0.5, 1.0] {
            let f = m.network_output(&x, t).unwrap().max_abs();
            let s = m.score(&x, t).unwrap().max_abs();
            assert!(s <= m.architecture().scale_cap * f * (1.0 + 1e-12));
        }
    }
}
