use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::ScoreModel;
use crate::diffcalc::{Array, GraphError};
use crate::diffusion::T_MIN;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Optimizer {
    Adam {
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
    },
    Sgd {
        lr: f64,
    },
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Adam {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    /// Micro-batches averaged into each optimizer step.
    pub accumulation: usize,
    pub optimizer: Optimizer,
    /// Training times are drawn from `U(t_min, 1)`.
    pub t_min: f64,
    /// Jitter integer components uniformly by half a unit before noising.
    pub dequantize: bool,
    /// Keep an exponential moving average of the weights with this decay
    /// and install it in the model when training ends.
    pub ema_decay: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 10_000,
            batch_size: 256,
            accumulation: 1,
            optimizer: Optimizer::default(),
            t_min: T_MIN,
            dequantize: false,
            ema_decay: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.accumulation == 0 {
            return Err(Error::Config("batch_size and accumulation must be positive".into()));
        }
        if !(self.t_min > 0.0 && self.t_min < 1.0) {
            return Err(Error::Config(format!("t_min must lie in (0, 1), got {}", self.t_min)));
        }
        let lr = match self.optimizer {
            Optimizer::Adam { lr, beta1, beta2, eps } => {
                if !((0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && eps > 0.0) {
                    return Err(Error::Config("Adam needs beta1, beta2 in [0, 1) and eps > 0".into()));
                }
                lr
            }
            Optimizer::Sgd { lr } => lr,
        };
        if let Some(d) = self.ema_decay {
            if !(0.0..1.0).contains(&d) {
                return Err(Error::Config(format!("ema_decay must lie in [0, 1), got {d}")));
            }
        }
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {lr}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean DSM loss of each optimizer step.
    pub losses: Vec<f64>,
}

impl TrainReport {
    /// Mean of the last `n` recorded losses.
    pub fn tail_mean(&self, n: usize) -> f64 {
        let tail = &self.losses[self.losses.len().saturating_sub(n)..];
        tail.iter().sum::<f64>() / tail.len().max(1) as f64
    }
}

pub(crate) struct BatchInputs {
    pub x: Array<f32>,
    pub emb: Array<f32>,
    pub a: Array<f32>,
    pub z: Array<f32>,
}

/// Noised inputs for the DSM objective. `a_b = σ_b · min(1/σ_b, M)`, so the
/// loss graph computes `‖a f + z‖² = σ²‖s_θ + z/σ‖²`.
pub(crate) fn prepare_batch(
    model: &ScoreModel,
    batch: &Array<f64>,
    dequant: Option<&[f64]>,
    t_min: f64,
    rng: &mut impl Rng,
) -> Result<(BatchInputs, Vec<f64>)> {
    let (b, d) = (batch.rows(), batch.cols());
    if d != model.dim() {
        return Err(Error::Dimension {
            expected: model.dim(),
            got: d,
        });
    }
    let ts: Vec<f64> = (0..b).map(|_| rng.random_range(t_min..1.0)).collect();
    let mut x = Array::zeros(b, d);
    let mut z = Array::zeros(b, d);
    let mut a = Array::zeros(b, 1);
    for i in 0..b {
        let kp = model.spec().kernel_params(ts[i])?;
        let scale = (1.0 / kp.std).min(model.architecture().scale_cap);
        a.set(i, 0, (kp.std * scale) as f32);
        let src = batch.row_slice(i);
        let xr = x.row_slice_mut(i);
        let zr = z.row_slice_mut(i);
        for j in 0..d {
            let mut v = src[j];
            if let Some(h) = dequant {
                if h[j] > 0.0 {
                    v += rng.random_range(-h[j]..h[j]);
                }
            }
            let e: f64 = rng.sample(StandardNormal);
            xr[j] = (kp.mean_scale * v + kp.std * e) as f32;
            zr[j] = e as f32;
        }
    }
    let emb = model.embed(&ts)?;
    Ok((BatchInputs { x, emb, a, z }, ts))
}

/// Loss and parameter gradients of one micro-batch.
pub(crate) fn batch_gradient(model: &ScoreModel, inputs: &BatchInputs) -> Result<(f64, Vec<Array<f32>>)> {
    let net = model.net();
    let n = inputs.x.rows() as f64;
    let mut session = net.graph.session();
    let value = session.forward(
        net.loss,
        &[
            ("x", &inputs.x),
            ("emb", &inputs.emb),
            ("a", &inputs.a),
            ("z", &inputs.z),
        ],
    )?;
    let loss = value.data()[0] as f64 / n;
    if !loss.is_finite() {
        return Err(GraphError::NonFinite.into());
    }
    let mut grads = session.backward(&Array::scalar((1.0 / n) as f32))?;
    let out = net
        .params
        .iter()
        .map(|&p| grads.take(p).expect("every parameter reaches the loss"))
        .collect();
    Ok((loss, out))
}

/// Fit `model` to `data` (model space) by denoising score matching.
/// `dequant` gives per-component jitter half-widths, used when enabled.
pub fn train(
    model: &mut ScoreModel,
    data: &Array<f64>,
    dequant: Option<&[f64]>,
    config: &TrainConfig,
) -> Result<TrainReport> {
    config.validate()?;
    if data.rows() == 0 {
        return Err(Error::Config("training set is empty".into()));
    }
    if data.cols() != model.dim() {
        return Err(Error::Dimension {
            expected: model.dim(),
            got: data.cols(),
        });
    }
    if let Some(h) = dequant {
        if h.len() != data.cols() {
            return Err(Error::Dimension {
                expected: data.cols(),
                got: h.len(),
            });
        }
    }
    let dequant = if config.dequantize { dequant } else { None };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let shapes: Vec<(usize, usize)> = model.parameters().iter().map(|p| (p.rows(), p.cols())).collect();
    let mut m1: Vec<Array<f32>> = shapes.iter().map(|&(r, c)| Array::zeros(r, c)).collect();
    let mut m2 = m1.clone();
    let mut ema: Option<Vec<Array<f32>>> = config
        .ema_decay
        .map(|_| model.parameters().into_iter().cloned().collect());
    let mut losses = Vec::with_capacity(config.steps);
    let (b, d) = (config.batch_size, data.cols());
    let mut batch = Array::zeros(b, d);

    for step in 0..config.steps {
        let mut acc: Vec<Array<f32>> = shapes.iter().map(|&(r, c)| Array::zeros(r, c)).collect();
        let mut loss_sum = 0.0;
        for _ in 0..config.accumulation {
            for i in 0..b {
                let k = rng.random_range(0..data.rows());
                batch.row_slice_mut(i).copy_from_slice(data.row_slice(k));
            }
            let (inputs, _) = prepare_batch(model, &batch, dequant, config.t_min, &mut rng)?;
            let (loss, grads) = match batch_gradient(model, &inputs) {
                Ok(v) => v,
                Err(Error::Graph(GraphError::NonFinite)) => {
                    return Err(Error::Diverged { step, loss: f64::NAN })
                }
                Err(e) => return Err(e),
            };
            loss_sum += loss;
            for (a, g) in acc.iter_mut().zip(&grads) {
                for (x, y) in a.data_mut().iter_mut().zip(g.data()) {
                    *x += *y;
                }
            }
        }
        let loss = loss_sum / config.accumulation as f64;
        let inv = 1.0 / config.accumulation as f32;
        let params = model.net().params.clone();
        let graph = &mut model.net_mut().graph;
        for (i, &p) in params.iter().enumerate() {
            let w = graph.leaf_value_mut(p).expect("param").data_mut();
            let g = acc[i].data();
            match config.optimizer {
                Optimizer::Adam { lr, beta1, beta2, eps } => {
                    let (b1, b2) = (beta1 as f32, beta2 as f32);
                    let t = (step + 1) as i32;
                    let c1 = 1.0 / (1.0 - beta1.powi(t)) as f32;
                    let c2 = 1.0 / (1.0 - beta2.powi(t)) as f32;
                    let (lr, eps) = (lr as f32, eps as f32);
                    let mm = m1[i].data_mut();
                    let vv = m2[i].data_mut();
                    for k in 0..w.len() {
                        let gk = g[k] * inv;
                        mm[k] = b1 * mm[k] + (1.0 - b1) * gk;
                        vv[k] = b2 * vv[k] + (1.0 - b2) * gk * gk;
                        w[k] -= lr * (mm[k] * c1) / ((vv[k] * c2).sqrt() + eps);
                    }
                }
                Optimizer::Sgd { lr } => {
                    let lr = lr as f32;
                    for k in 0..w.len() {
                        w[k] -= lr * g[k] * inv;
                    }
                }
            }
            if !w.iter().all(|v| v.is_finite()) {
                return Err(Error::Diverged { step, loss });
            }
            if let (Some(avg), Some(d)) = (ema.as_mut(), config.ema_decay) {
                let d = d as f32;
                for (a, v) in avg[i].data_mut().iter_mut().zip(w.iter()) {
                    *a = d * *a + (1.0 - d) * *v;
                }
            }
        }
        losses.push(loss);
    }
    if let Some(avg) = ema {
        let params = model.net().params.clone();
        let graph = &mut model.net_mut().graph;
        for (p, v) in params.into_iter().zip(avg) {
            *graph.leaf_value_mut(p).expect("param") = v;
        }
    }
    Ok(TrainReport { losses })
}
