//! Forward corruption processes and score-driven samplers.
//!
//! Two processes are supported: variance exploding (VE), with
//! `σ_t = σ_min (σ_max/σ_min)^t` and unit mean scale, and sub-variance
//! preserving (sub-VP) with linear `β(t)`. Sampling runs reverse-time
//! Euler–Maruyama predictor steps down a uniform time grid from `t = 1` to
//! [`T_MIN`], optionally interleaved with Langevin corrector steps.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::diffcalc::Array;
use crate::error::{Error, Result};

/// Smallest time on the sampling grid; "t = 0" quantities are taken here.
pub const T_MIN: f64 = 1e-3;

/// [`dsm_target`] refuses kernels narrower than this.
pub const SIGMA_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DiffusionSpec {
    Ve { sigma_min: f64, sigma_max: f64 },
    SubVp { beta_min: f64, beta_max: f64 },
}

impl Default for DiffusionSpec {
    fn default() -> Self {
        DiffusionSpec::Ve {
            sigma_min: 0.01,
            sigma_max: 50.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelParams {
    pub mean_scale: f64,
    pub std: f64,
}

fn check_time(t: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::TimeOutOfRange(t));
    }
    Ok(())
}

impl DiffusionSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            DiffusionSpec::Ve {
                sigma_min,
                sigma_max,
            } => {
                if !(sigma_min > 0.0 && sigma_min < sigma_max) {
                    return Err(Error::Config(format!(
                        "VE needs 0 < sigma_min < sigma_max, got {sigma_min}, {sigma_max}"
                    )));
                }
            }
            DiffusionSpec::SubVp { beta_min, beta_max } => {
                if !(beta_min > 0.0 && beta_min < beta_max) {
                    return Err(Error::Config(format!(
                        "sub-VP needs 0 < beta_min < beta_max, got {beta_min}, {beta_max}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// VE spec with `σ_max` set to the largest pairwise distance between rows
    /// of `data` (model space), which makes the prior cover the data.
    pub fn ve_for_data(data: &Array<f64>, sigma_min: f64) -> Self {
        let n = data.rows();
        // Exact maximum is quadratic; a strided subsample is plenty.
        let stride = (n / 2000).max(1);
        let rows: Vec<&[f64]> = (0..n).step_by(stride).map(|i| data.row_slice(i)).collect();
        let mut best = 0.0f64;
        for (i, a) in rows.iter().enumerate() {
            for b in &rows[i + 1..] {
                let d: f64 = a.iter().zip(*b).map(|(x, y)| (x - y) * (x - y)).sum();
                best = best.max(d);
            }
        }
        DiffusionSpec::Ve {
            sigma_min,
            sigma_max: best.sqrt().max(sigma_min * 10.0),
        }
    }

    fn beta(&self, t: f64) -> f64 {
        match *self {
            DiffusionSpec::SubVp { beta_min, beta_max } => beta_min + t * (beta_max - beta_min),
            DiffusionSpec::Ve { .. } => 0.0,
        }
    }

    fn beta_integral(&self, t: f64) -> f64 {
        match *self {
            DiffusionSpec::SubVp { beta_min, beta_max } => {
                beta_min * t + 0.5 * (beta_max - beta_min) * t * t
            }
            DiffusionSpec::Ve { .. } => 0.0,
        }
    }

    /// Mean scale and standard deviation of `q_t(x̃|x)`.
    pub fn kernel_params(&self, t: f64) -> Result<KernelParams> {
        check_time(t)?;
        Ok(match *self {
            DiffusionSpec::Ve {
                sigma_min,
                sigma_max,
            } => KernelParams {
                mean_scale: 1.0,
                std: sigma_min * (sigma_max / sigma_min).powf(t),
            },
            DiffusionSpec::SubVp { .. } => {
                let b = self.beta_integral(t);
                KernelParams {
                    mean_scale: (-0.5 * b).exp(),
                    std: -(-b).exp_m1(),
                }
            }
        })
    }

    pub fn sigma(&self, t: f64) -> Result<f64> {
        Ok(self.kernel_params(t)?.std)
    }

    /// Standard deviation of the isotropic Gaussian prior at `t = 1`.
    pub fn prior_std(&self) -> f64 {
        match *self {
            DiffusionSpec::Ve { sigma_max, .. } => sigma_max,
            DiffusionSpec::SubVp { .. } => 1.0,
        }
    }

    /// The scalar fed to the time embedding: `ln σ_t` for VE, `t` for sub-VP.
    pub fn embedding_coordinate(&self, t: f64) -> Result<f64> {
        match self {
            DiffusionSpec::Ve { .. } => Ok(self.sigma(t)?.ln()),
            DiffusionSpec::SubVp { .. } => {
                check_time(t)?;
                Ok(t)
            }
        }
    }
}

/// Anything that can estimate `∇_x ln p_t(x)` for a batch of rows.
pub trait ScoreFn {
    fn score(&self, x: &Array<f64>, t: f64) -> Result<Array<f64>>;
}

impl<F> ScoreFn for F
where
    F: Fn(&Array<f64>, f64) -> Result<Array<f64>>,
{
    fn score(&self, x: &Array<f64>, t: f64) -> Result<Array<f64>> {
        self(x, t)
    }
}

/// Draw a `rows × cols` array of standard normals.
pub fn gaussian(rng: &mut impl Rng, rows: usize, cols: usize) -> Array<f64> {
    Array::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

fn check_shapes(a: &Array<f64>, b: &Array<f64>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Dimension {
            expected: a.len(),
            got: b.len(),
        });
    }
    Ok(())
}

fn check_finite(a: &Array<f64>, what: &'static str, t: f64) -> Result<()> {
    if !a.all_finite() {
        return Err(Error::NonFinite { what, t });
    }
    Ok(())
}

/// `mean_scale·x + σ_t·z`.
pub fn perturb(spec: &DiffusionSpec, x: &Array<f64>, t: f64, z: &Array<f64>) -> Result<Array<f64>> {
    check_shapes(x, z)?;
    let k = spec.kernel_params(t)?;
    Ok(x.zip_map(z, |xv, zv| k.mean_scale * xv + k.std * zv)?)
}

/// `∇_{x̃} ln q_t(x̃|x) = −(x̃ − mean_scale·x)/σ_t²`.
pub fn dsm_target(
    spec: &DiffusionSpec,
    x: &Array<f64>,
    x_tilde: &Array<f64>,
    t: f64,
) -> Result<Array<f64>> {
    check_shapes(x, x_tilde)?;
    let k = spec.kernel_params(t)?;
    if k.std < SIGMA_FLOOR {
        return Err(Error::SigmaBelowFloor {
            t,
            sigma: k.std,
            floor: SIGMA_FLOOR,
        });
    }
    let inv_var = 1.0 / (k.std * k.std);
    Ok(x.zip_map(x_tilde, |xv, xt| -(xt - k.mean_scale * xv) * inv_var)?)
}

/// One reverse-time Euler–Maruyama step from `t` to `t − dt`.
pub fn predictor_step(
    spec: &DiffusionSpec,
    score_fn: &dyn ScoreFn,
    x: &Array<f64>,
    t: f64,
    dt: f64,
    z: &Array<f64>,
) -> Result<Array<f64>> {
    if !(dt > 0.0) || t - dt < -1e-12 {
        return Err(Error::Config(format!(
            "predictor step needs dt > 0 and t - dt >= 0, got t={t}, dt={dt}"
        )));
    }
    check_shapes(x, z)?;
    let s = score_fn.score(x, t)?;
    check_shapes(x, &s)?;
    check_finite(&s, "score", t)?;
    let t_next = (t - dt).max(0.0);
    let mut out = x.clone();
    match spec {
        DiffusionSpec::Ve { .. } => {
            let hi = spec.sigma(t)?;
            let lo = spec.sigma(t_next)?;
            let dvar = (hi * hi - lo * lo).max(0.0);
            let noise = dvar.sqrt();
            for ((o, &sv), &zv) in out.data_mut().iter_mut().zip(s.data()).zip(z.data()) {
                *o += dvar * sv + noise * zv;
            }
        }
        DiffusionSpec::SubVp { .. } => {
            let beta = spec.beta(t);
            let g2 = beta * (-(-2.0 * spec.beta_integral(t)).exp_m1());
            let noise = (g2 * dt).sqrt();
            for ((o, &sv), &zv) in out.data_mut().iter_mut().zip(s.data()).zip(z.data()) {
                let xv = *o;
                *o = xv + (0.5 * beta * xv + g2 * sv) * dt + noise * zv;
            }
        }
    }
    Ok(out)
}

/// Langevin step size rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepRule {
    /// `ε = 2 (r · mean‖z‖ / mean‖s‖)²`, norms per row averaged over the batch.
    Snr(f64),
    /// Constant `ε`.
    Fixed(f64),
}

impl StepRule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            StepRule::Snr(r) if r > 0.0 => Ok(()),
            StepRule::Fixed(e) if e > 0.0 => Ok(()),
            other => Err(Error::Config(format!("step rule needs a positive value, got {other:?}"))),
        }
    }

    /// Step size for this batch, `None` when the score vanishes.
    pub fn step_size(&self, score: &Array<f64>, z: &Array<f64>) -> Option<f64> {
        match *self {
            StepRule::Fixed(eps) => Some(eps),
            StepRule::Snr(snr) => {
                let mean_norm = |a: &Array<f64>| {
                    let rows = a.rows().max(1);
                    (0..a.rows())
                        .map(|i| a.row_slice(i).iter().map(|v| v * v).sum::<f64>().sqrt())
                        .sum::<f64>()
                        / rows as f64
                };
                let grad_norm = mean_norm(score);
                if grad_norm == 0.0 {
                    return None;
                }
                let noise_norm = mean_norm(z);
                let ratio = snr * noise_norm / grad_norm;
                Some(2.0 * ratio * ratio)
            }
        }
    }
}

/// One Langevin step `x + ε s(x,t) + √(2ε) z`.
pub fn corrector_step(
    score_fn: &dyn ScoreFn,
    x: &Array<f64>,
    t: f64,
    rule: StepRule,
    z: &Array<f64>,
) -> Result<Array<f64>> {
    check_shapes(x, z)?;
    let s = score_fn.score(x, t)?;
    check_shapes(x, &s)?;
    check_finite(&s, "score", t)?;
    langevin_update(x, &s, rule, z)
}

/// Langevin update from a precomputed score.
pub(crate) fn langevin_update(
    x: &Array<f64>,
    s: &Array<f64>,
    rule: StepRule,
    z: &Array<f64>,
) -> Result<Array<f64>> {
    let Some(eps) = rule.step_size(s, z) else {
        return Ok(x.clone());
    };
    let noise = (2.0 * eps).sqrt();
    let mut out = x.clone();
    for ((o, &sv), &zv) in out.data_mut().iter_mut().zip(s.data()).zip(z.data()) {
        *o += eps * sv + noise * zv;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub predictor_steps: usize,
    pub corrector_steps_per_t: usize,
    pub corrector_step: StepRule,
    /// Extra Langevin steps, run once the reverse process reaches
    /// `langevin_time`.
    pub final_langevin_steps: usize,
    pub langevin_step: StepRule,
    /// Above [`T_MIN`], the predictor resumes after the Langevin steps. On
    /// integer data this avoids the flat score of the dequantization noise.
    #[serde(default = "t_min")]
    pub langevin_time: f64,
    /// Finish with the posterior mean `x + σ² s(x, T_MIN)` (VE) instead of
    /// leaving the `σ_min` noise in the samples.
    #[serde(default)]
    pub denoise: bool,
    pub rng_seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            predictor_steps: 500,
            corrector_steps_per_t: 0,
            corrector_step: StepRule::Snr(0.16),
            final_langevin_steps: 0,
            langevin_step: StepRule::Snr(0.16),
            langevin_time: T_MIN,
            denoise: false,
            rng_seed: 0,
        }
    }
}

fn t_min() -> f64 {
    T_MIN
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.predictor_steps == 0 {
            return Err(Error::Config("predictor_steps must be at least 1".into()));
        }
        if !(T_MIN..1.0).contains(&self.langevin_time) {
            return Err(Error::Config(format!(
                "langevin_time must lie in [{T_MIN}, 1), got {}",
                self.langevin_time
            )));
        }
        self.corrector_step.validate()?;
        self.langevin_step.validate()
    }

    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.rng_seed)
    }
}

/// Uniform grid `1 = t_0 > t_1 > … > t_N = T_MIN`.
pub fn time_grid(steps: usize) -> Vec<f64> {
    let dt = (1.0 - T_MIN) / steps as f64;
    (0..=steps)
        .map(|i| if i == steps { T_MIN } else { 1.0 - i as f64 * dt })
        .collect()
}

/// Predictor–corrector sampling of `count` rows of width `dim`. The final
/// Langevin steps of the config are not applied here.
pub fn pc_sample(
    spec: &DiffusionSpec,
    score_fn: &dyn ScoreFn,
    config: &SamplerConfig,
    dim: usize,
    count: usize,
) -> Result<Array<f64>> {
    let mut rng = config.rng();
    pc_sample_with_rng(spec, score_fn, config, dim, count, &mut rng)
}

pub(crate) fn pc_sample_with_rng(
    spec: &DiffusionSpec,
    score_fn: &dyn ScoreFn,
    config: &SamplerConfig,
    dim: usize,
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Array<f64>> {
    let config = SamplerConfig {
        final_langevin_steps: 0,
        ..*config
    };
    sample_with_rng(spec, score_fn, score_fn, &config, dim, count, rng)
}

/// Reverse process with `reverse`, plus the config's Langevin steps with
/// `langevin` at the first grid time not above `langevin_time`.
pub(crate) fn sample_with_rng(
    spec: &DiffusionSpec,
    reverse: &dyn ScoreFn,
    langevin: &dyn ScoreFn,
    config: &SamplerConfig,
    dim: usize,
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Array<f64>> {
    spec.validate()?;
    config.validate()?;
    if count == 0 {
        return Err(Error::Config("sample count must be at least 1".into()));
    }
    let run_langevin = |x: &mut Array<f64>, t: f64, rng: &mut ChaCha8Rng| -> Result<()> {
        for _ in 0..config.final_langevin_steps {
            let z = gaussian(rng, count, dim);
            *x = corrector_step(langevin, x, t, config.langevin_step, &z)?;
            check_finite(x, "Langevin state", t)?;
        }
        Ok(())
    };
    let prior = spec.prior_std();
    let mut x = gaussian(rng, count, dim).map(|v| v * prior);
    let grid = time_grid(config.predictor_steps);
    let mut pending = true;
    for w in grid.windows(2) {
        let (t, t_next) = (w[0], w[1]);
        if pending && t <= config.langevin_time {
            run_langevin(&mut x, t, rng)?;
            pending = false;
        }
        for _ in 0..config.corrector_steps_per_t {
            let z = gaussian(rng, count, dim);
            x = corrector_step(reverse, &x, t, config.corrector_step, &z)?;
        }
        let z = gaussian(rng, count, dim);
        x = predictor_step(spec, reverse, &x, t, t - t_next, &z)?;
        check_finite(&x, "sampler state", t_next)?;
    }
    if pending {
        run_langevin(&mut x, T_MIN, rng)?;
    }
    if config.denoise {
        x = denoise(spec, langevin, &x, T_MIN)?;
    }
    Ok(x)
}

/// Tweedie estimate `E[x_0 | x_t] = (x + σ_t² s(x, t)) / m_t`.
pub fn denoise(spec: &DiffusionSpec, score_fn: &dyn ScoreFn, x: &Array<f64>, t: f64) -> Result<Array<f64>> {
    let k = spec.kernel_params(t)?;
    let s = score_fn.score(x, t)?;
    check_shapes(x, &s)?;
    check_finite(&s, "score", t)?;
    let var = k.std * k.std;
    Ok(x.zip_map(&s, |xv, sv| (xv + var * sv) / k.mean_scale)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    const VE: DiffusionSpec = DiffusionSpec::Ve {
        sigma_min: 0.01,
        sigma_max: 50.0,
    };
    const SUBVP: DiffusionSpec = DiffusionSpec::SubVp {
        beta_min: 0.1,
        beta_max: 20.0,
    };

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn ve_kernel_boundaries_and_midpoint() {
        let k0 = VE.kernel_params(0.0).unwrap();
        assert_eq!((k0.mean_scale, k0.std), (1.0, 0.01));
        let k1 = VE.kernel_params(1.0).unwrap();
        assert!(close(k1.std, 50.0, 1e-12));
        let mid = VE.kernel_params(0.5).unwrap().std;
        assert!(close(mid, (0.01f64 * 50.0).sqrt(), 1e-12));
        assert!(close(mid, 0.7071, 1e-4));
    }

    #[test]
    fn subvp_kernel_matches_closed_form() {
        let t = 0.3;
        let b = 0.1 * t + 0.5 * (20.0 - 0.1) * t * t;
        let k = SUBVP.kernel_params(t).unwrap();
        assert!(close(k.mean_scale, (-0.5 * b).exp(), 1e-15));
        assert!(close(k.std, 1.0 - (-b).exp(), 1e-15));
        assert_eq!(SUBVP.kernel_params(0.0).unwrap().std, 0.0);
    }

    #[test]
    fn time_outside_unit_interval_is_rejected() {
        assert!(matches!(VE.kernel_params(1.5), Err(Error::TimeOutOfRange(_))));
        assert!(matches!(VE.kernel_params(-0.1), Err(Error::TimeOutOfRange(_))));
    }

    #[test]
    fn invalid_specs_rejected() {
        let bad = DiffusionSpec::Ve {
            sigma_min: 1.0,
            sigma_max: 0.5,
        };
        assert!(bad.validate().is_err());
        assert!(DiffusionSpec::SubVp {
            beta_min: 2.0,
            beta_max: 1.0
        }
        .validate()
        .is_err());
    }

    #[test]
    fn perturb_with_zero_noise_scales_mean() {
        let x = Array::row(vec![1.0, -2.0, 3.0]);
        let z = Array::zeros(1, 3);
        assert_eq!(perturb(&VE, &x, 0.7, &z).unwrap().data(), x.data());
        let p = perturb(&SUBVP, &x, 0.5, &z).unwrap();
        let m = SUBVP.kernel_params(0.5).unwrap().mean_scale;
        for (a, b) in p.data().iter().zip(x.data()) {
            assert!(close(*a, m * b, 1e-15));
        }
        let zv = Array::row(vec![1.0, 1.0, 1.0]);
        let p0 = perturb(&VE, &x, 0.0, &zv).unwrap();
        assert!(p0.data().iter().zip(x.data()).all(|(a, b)| close(*a, b + 0.01, 1e-15)));
    }

    #[test]
    fn perturb_empirical_std() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let t = 0.4;
        let x = Array::full(n, 1, 2.0);
        let z = gaussian(&mut rng, n, 1);
        let p = perturb(&VE, &x, t, &z).unwrap();
        let mean = p.sum() / n as f64;
        let var = p.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
        let sigma = VE.sigma(t).unwrap();
        assert!((var.sqrt() / sigma - 1.0).abs() < 0.02);
    }

    #[test]
    fn dsm_target_examples() {
        let x = Array::row(vec![0.5, -1.0]);
        assert!(dsm_target(&VE, &x, &x, 0.3).unwrap().data().iter().all(|v| *v == 0.0));

        // σ_t = 1 on a VE spec with σ_min = 1e-2, σ_max = 1e2 at t = 0.5
        let unit = DiffusionSpec::Ve {
            sigma_min: 0.01,
            sigma_max: 100.0,
        };
        assert!(close(unit.sigma(0.5).unwrap(), 1.0, 1e-12));
        let xt = Array::row(vec![2.5, -1.0]);
        let tgt = dsm_target(&unit, &x, &xt, 0.5).unwrap();
        assert!(close(tgt.data()[0], -2.0, 1e-9) && close(tgt.data()[1], 0.0, 1e-12));
    }

    #[test]
    fn dsm_target_matches_numerical_log_density_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for spec in [VE, SUBVP] {
            for _ in 0..20 {
                let t: f64 = rng.random_range(0.05..1.0);
                let x = gaussian(&mut rng, 1, 4);
                let z = gaussian(&mut rng, 1, 4);
                let xt = perturb(&spec, &x, t, &z).unwrap();
                let k = spec.kernel_params(t).unwrap();
                let log_q = |v: &[f64]| -> f64 {
                    v.iter()
                        .zip(x.data())
                        .map(|(vi, xi)| {
                            let d = vi - k.mean_scale * xi;
                            -0.5 * d * d / (k.std * k.std)
                                - (k.std * (2.0 * std::f64::consts::PI).sqrt()).ln()
                        })
                        .sum()
                };
                let analytic = dsm_target(&spec, &x, &xt, t).unwrap();
                for j in 0..4 {
                    let h = 1e-5 * k.std;
                    let mut p = xt.data().to_vec();
                    let mut m = xt.data().to_vec();
                    p[j] += h;
                    m[j] -= h;
                    let num = (log_q(&p) - log_q(&m)) / (2.0 * h);
                    let a = analytic.data()[j];
                    assert!((a - num).abs() / a.abs().max(1.0) <= 1e-6, "{a} vs {num}");
                }
            }
        }
    }

    #[test]
    fn dsm_target_refuses_collapsed_kernel() {
        let x = Array::row(vec![1.0]);
        assert!(matches!(
            dsm_target(&SUBVP, &x, &x, 0.0),
            Err(Error::SigmaBelowFloor { .. })
        ));
    }

    #[test]
    fn predictor_examples() {
        let zero_score = |x: &Array<f64>, _t: f64| -> Result<Array<f64>> { Ok(Array::zeros(x.rows(), x.cols())) };
        let x = Array::row(vec![0.3, -0.7]);
        let z = Array::zeros(1, 2);
        let out = predictor_step(&VE, &zero_score, &x, 0.5, 0.1, &z).unwrap();
        assert_eq!(out.data(), x.data());

        // σ_t² − σ_{t−Δt}² = 0.25 exactly: σ(1) = 0.5·√2... pick spec so that σ_1² = 0.5, σ_0² = 0.25
        let spec = DiffusionSpec::Ve {
            sigma_min: 0.5,
            sigma_max: 0.5f64.sqrt(),
        };
        let ones = |x: &Array<f64>, _t: f64| -> Result<Array<f64>> { Ok(Array::full(x.rows(), x.cols(), 1.0)) };
        let out = predictor_step(&spec, &ones, &x, 1.0, 1.0, &z).unwrap();
        assert!(close(out.data()[0], 0.55, 1e-12) && close(out.data()[1], -0.45, 1e-12));

        assert!(predictor_step(&VE, &ones, &x, 0.1, 0.2, &z).is_err());
        let nan = |x: &Array<f64>, _t: f64| -> Result<Array<f64>> { Ok(Array::full(x.rows(), x.cols(), f64::NAN)) };
        assert!(matches!(
            predictor_step(&VE, &nan, &x, 0.5, 0.1, &z),
            Err(Error::NonFinite { .. })
        ));
    }

    fn gaussian_score(spec: DiffusionSpec) -> impl Fn(&Array<f64>, f64) -> Result<Array<f64>> {
        // Data N(0, 1): p_t = N(0, m² + σ²)
        move |x: &Array<f64>, t: f64| {
            let k = spec.kernel_params(t)?;
            let var = k.mean_scale * k.mean_scale + k.std * k.std;
            Ok(x.map(|v| -v / var))
        }
    }

    #[test]
    fn predictor_recovers_standard_normal() {
        for spec in [VE, SUBVP] {
            let score = gaussian_score(spec);
            let config = SamplerConfig {
                predictor_steps: 1000,
                rng_seed: 3,
                ..SamplerConfig::default()
            };
            let x = pc_sample(&spec, &score, &config, 1, 10_000).unwrap();
            let n = x.len() as f64;
            let mean = x.sum() / n;
            let var = x.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            assert!((0.85..=1.15).contains(&var), "{spec:?}: var {var}");
        }
    }

    #[test]
    fn corrector_examples() {
        let ones = |x: &Array<f64>, _t: f64| -> Result<Array<f64>> { Ok(Array::full(x.rows(), x.cols(), 1.0)) };
        let x = Array::row(vec![1.0, 2.0]);
        let z = Array::zeros(1, 2);
        let out = corrector_step(&ones, &x, 0.5, StepRule::Snr(0.5), &z).unwrap();
        assert_eq!(out.data(), x.data());

        let z = Array::row(vec![1.0, -1.0]);
        let s = Array::row(vec![1.0, 1.0]);
        assert!(close(StepRule::Snr(0.5).step_size(&s, &z).unwrap(), 0.5, 1e-15));

        let zero = |x: &Array<f64>, _t: f64| -> Result<Array<f64>> { Ok(Array::zeros(x.rows(), x.cols())) };
        let out = corrector_step(&zero, &x, 0.5, StepRule::Snr(0.5), &z).unwrap();
        assert_eq!(out.data(), x.data(), "zero score skips the step");
    }

    #[test]
    fn fixed_step_langevin_targets_standard_normal() {
        let score = |x: &Array<f64>, _t: f64| -> Result<Array<f64>> { Ok(x.map(|v| -v)) };
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let chains = 2000;
        let mut x = Array::full(chains, 1, 3.0);
        for _ in 0..5000 {
            let z = gaussian(&mut rng, chains, 1);
            x = corrector_step(&score, &x, T_MIN, StepRule::Fixed(1e-3), &z).unwrap();
        }
        let n = chains as f64;
        let mean = x.sum() / n;
        let var = x.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        assert!(mean.abs() <= 0.1, "mean {mean}");
        assert!((0.8..=1.2).contains(&var), "var {var}");
    }

    #[test]
    fn pc_sample_is_deterministic_and_zero_corrector_is_pure_predictor() {
        let score = gaussian_score(VE);
        let config = SamplerConfig {
            predictor_steps: 50,
            corrector_steps_per_t: 2,
            rng_seed: 9,
            ..SamplerConfig::default()
        };
        let a = pc_sample(&VE, &score, &config, 3, 20).unwrap();
        let b = pc_sample(&VE, &score, &config, 3, 20).unwrap();
        assert_eq!(a.data(), b.data());

        let pure = SamplerConfig {
            corrector_steps_per_t: 0,
            ..config
        };
        let mut rng = pure.rng();
        let mut x = gaussian(&mut rng, 20, 3).map(|v| v * 50.0);
        let grid = time_grid(50);
        for w in grid.windows(2) {
            let z = gaussian(&mut rng, 20, 3);
            x = predictor_step(&VE, &score, &x, w[0], w[0] - w[1], &z).unwrap();
        }
        assert_eq!(pc_sample(&VE, &score, &pure, 3, 20).unwrap().data(), x.data());
    }

    #[test]
    fn langevin_midway_keeps_the_target() {
        let score = gaussian_score(VE);
        let base = SamplerConfig {
            predictor_steps: 200,
            final_langevin_steps: 0,
            langevin_time: 0.3,
            rng_seed: 4,
            ..SamplerConfig::default()
        };
        let mut rng = base.rng();
        let plain = sample_with_rng(&VE, &score, &score, &SamplerConfig { langevin_time: T_MIN, ..base }, 1, 50, &mut rng).unwrap();
        let mut rng = base.rng();
        let zero = sample_with_rng(&VE, &score, &score, &base, 1, 50, &mut rng).unwrap();
        assert_eq!(plain.data(), zero.data(), "no steps, no change");

        // a score that is wrong just above t = 0.3 is repaired by the Langevin steps
        let biased = |x: &Array<f64>, t: f64| -> Result<Array<f64>> {
            let s = score(x, t)?;
            Ok(if t > 0.3 && t < 0.5 { s.map(|v| v + 3.0) } else { s })
        };
        let config = SamplerConfig {
            final_langevin_steps: 300,
            langevin_step: StepRule::Snr(0.16),
            ..base
        };
        let mut rng = config.rng();
        let x = sample_with_rng(&VE, &biased, &score, &config, 1, 5000, &mut rng).unwrap();
        let n = x.len() as f64;
        let mean = x.sum() / n;
        let var = x.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        assert!(mean.abs() < 0.08, "mean {mean}");
        assert!((0.85..=1.15).contains(&var), "var {var}");

        assert!(SamplerConfig { langevin_time: 1.0, ..base }.validate().is_err());
        assert!(SamplerConfig { langevin_time: 0.0, ..base }.validate().is_err());
    }

    #[test]
    fn denoise_is_the_posterior_mean() {
        // data N(0, 1) under VE: E[x_0 | x_t] = x / (1 + σ²)
        let score = gaussian_score(VE);
        let x = Array::row(vec![2.0, -1.0]);
        let sigma = VE.sigma(0.3).unwrap();
        let d = denoise(&VE, &score, &x, 0.3).unwrap();
        for (a, b) in d.data().iter().zip(x.data()) {
            assert!(close(*a, b / (1.0 + sigma * sigma), 1e-12));
        }
        let config = SamplerConfig {
            predictor_steps: 100,
            rng_seed: 2,
            ..SamplerConfig::default()
        };
        let raw = pc_sample(&VE, &score, &config, 1, 10).unwrap();
        let clean = pc_sample(&VE, &score, &SamplerConfig { denoise: true, ..config }, 1, 10).unwrap();
        assert_eq!(clean.data(), denoise(&VE, &score, &raw, T_MIN).unwrap().data());
    }

    #[test]
    fn grid_ends_at_t_min() {
        let g = time_grid(10);
        assert_eq!(g.len(), 11);
        assert_eq!(g[0], 1.0);
        assert_eq!(*g.last().unwrap(), T_MIN);
        assert!(g.windows(2).all(|w| w[0] > w[1]));
    }

    #[test]
    fn dsm_target_has_zero_mean_under_its_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let n = 100_000;
        let t = 0.2;
        let x = Array::full(n, 1, 0.7);
        let z = gaussian(&mut rng, n, 1);
        let xt = perturb(&VE, &x, t, &z).unwrap();
        let tgt = dsm_target(&VE, &x, &xt, t).unwrap();
        let mean = tgt.sum() / n as f64;
        let sigma = VE.sigma(t).unwrap();
        assert!(mean.abs() <= 3.0 / sigma * 10f64.powf(-2.5), "mean {mean}");
    }

    proptest::proptest! {
        #[test]
        fn kernel_std_strictly_increasing(a in 0.0f64..1.0, b in 0.0f64..1.0) {
            proptest::prop_assume!((a - b).abs() > 1e-9);
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            for spec in [VE, SUBVP] {
                proptest::prop_assert!(spec.sigma(lo).unwrap() < spec.sigma(hi).unwrap());
            }
        }
    }
}
