//! Property checks with fixed seeds. Each returns a [`Check`] rather than
//! panicking so the acceptance run can report every one of them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use scoreguide::data::{Column, Normalization, TableSchema};
use scoreguide::diffcalc::Array;
use scoreguide::diffusion::{corrector_step, dsm_target, pc_sample, DiffusionSpec, SamplerConfig, ScoreFn, StepRule, T_MIN};
use scoreguide::eval;
use scoreguide::guidance::{constrained_sample, guided_score, guided_score_weighted, GuidanceSchedule, GuidedSampleJob};
use scoreguide::logic::{compile, eval_hard, parse, stable_or, to_nnf, Binding, CompileOptions, CompiledConstraint, Formula};
use scoreguide::oracle::{rejection_sample, FnProposal, RejectionJob};

use super::{gen, reference, Check};

fn parsed(text: &str, schema: &TableSchema) -> Formula {
    parse(text, &Binding::new(schema)).unwrap_or_else(|e| panic!("{text}: {e}"))
}

fn compiled(f: &Formula, norm: &Normalization, k: f64, lambda: f64) -> CompiledConstraint {
    let opts = CompileOptions { k, lambda, one_sided: false };
    compile(&to_nnf(f).unwrap(), norm, 1, opts).unwrap()
}

/// `c ≤ 0`, finite, and below the static bound on `formulas × points`
/// random pairs, with hardness and scale reaching log-weights near −10³.
pub fn boundedness(formulas: usize, points: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let schema = gen::schema();
    let (mut worst, mut lowest, mut bad) = (f64::NEG_INFINITY, 0.0f64, 0usize);
    let mut first_bad = String::new();
    for _ in 0..formulas {
        let text = gen::formula(&mut rng, 4, 3.0);
        let f = parsed(&text, &schema);
        let norm = gen::normalization(&mut rng, schema.width());
        let k = 10f64.powf(rng.random_range(-1.0..2.5));
        let cc = compiled(&f, &norm, k, 1.0);
        let scale = 10f64.powf(rng.random_range(0.0..1.5));
        let ys: Vec<f64> = (0..points * schema.width()).map(|_| rng.random_range(-scale..scale)).collect();
        let c = cc.eval(&Array::matrix(points, schema.width(), ys).unwrap()).unwrap();
        for v in c {
            worst = worst.max(v - cc.upper_bound());
            lowest = lowest.min(v);
            if !(v.is_finite() && v <= 0.0 && v <= cc.upper_bound()) {
                bad += 1;
                if first_bad.is_empty() {
                    first_bad = format!(" first: {text} gives {v}");
                }
            }
        }
    }
    Check::new(
        "logic boundedness",
        bad == 0 && lowest < -500.0,
        format!(
            "{} pairs, {bad} violations, lowest c {lowest:.1}, max c minus bound {worst:.3e}{first_bad}",
            formulas * points
        ),
    )
}

/// The stable disjunction against the literal formula, and its value at
/// (−1000, −1000).
pub fn stable_or_grid() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let mut err = 0.0f64;
    for _ in 0..10_000 {
        let (x, y) = (rng.random_range(-30.0..0.0), rng.random_range(-30.0..0.0));
        err = err.max((stable_or(x, y).unwrap() - reference::naive_or(x, y)).abs());
    }
    let far = stable_or(-1000.0, -1000.0).unwrap();
    let expected = -1000.0 + std::f64::consts::LN_2;
    let ok = err <= 1e-12 && far.is_finite() && (far - expected).abs() < 1e-9 && (far + 999.306853).abs() < 1e-6;
    Check::new(
        "stable or",
        ok,
        format!("max deviation {err:.2e} on 10000 pairs, value at (-1000,-1000) {far:.6}"),
    )
}

/// Compiled NNF against the reference semantics of the original formula,
/// soft within 1e-9 and hard exactly.
pub fn de_morgan(pairs: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let schema = gen::schema();
    let (mut err, mut hard_mismatch) = (0.0f64, 0usize);
    let mut worst = String::new();
    for _ in 0..pairs {
        let text = gen::formula(&mut rng, 4, 2.0);
        let f = parsed(&text, &schema);
        let nnf = to_nnf(&f).unwrap();
        let norm = gen::normalization(&mut rng, schema.width());
        let k = rng.random_range(0.5..3.0);
        let cc = compile(&nnf, &norm, 1, CompileOptions { k, lambda: 1.0, one_sided: false }).unwrap();
        let (y, x) = gen::point(&mut rng, &norm, 2.0);
        let want = reference::soft(&f, &x, k, 1.0);
        let got = cc.eval_one(&y).unwrap();
        let e = (got - want).abs() / want.abs().max(1.0);
        if e > err {
            err = e;
            worst = format!("{text} (got {got}, reference {want})");
        }
        if eval_hard(&nnf, &x) != reference::hard(&f, &x) {
            hard_mismatch += 1;
        }
    }
    Check::new(
        "De Morgan / NNF equivalence",
        err <= 1e-9 && hard_mismatch == 0,
        format!("{pairs} pairs, max relative deviation {err:.2e}, {hard_mismatch} crisp mismatches; worst {worst}"),
    )
}

/// Autodiff gradients against central differences of the reference.
pub fn gradients(pairs: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    let schema = gen::schema();
    let mut err = 0.0f64;
    let h = 1e-5;
    for _ in 0..pairs {
        let f = parsed(&gen::formula(&mut rng, 3, 2.0), &schema);
        let norm = gen::normalization(&mut rng, schema.width());
        let (k, lambda) = (rng.random_range(0.5..3.0), rng.random_range(0.5..2.0));
        let cc = compiled(&f, &norm, k, lambda);
        let (y, _) = gen::point(&mut rng, &norm, 1.5);
        let grad = cc.grad(&Array::row(y.clone())).unwrap();
        let at = |y: &[f64]| {
            let x: Vec<f64> = y.iter().enumerate().map(|(j, v)| norm.mean[j] + norm.std[j] * v).collect();
            reference::soft(&f, &x, k, lambda)
        };
        let (mut diff, mut norm_fd) = (0.0f64, 0.0f64);
        for j in 0..y.len() {
            let (mut up, mut down) = (y.clone(), y.clone());
            up[j] += h;
            down[j] -= h;
            let fd = (at(&up) - at(&down)) / (2.0 * h);
            diff += (grad.data()[j] - fd).powi(2);
            norm_fd += fd * fd;
        }
        err = err.max(diff.sqrt() / norm_fd.sqrt().max(1e-3));
    }
    Check::new(
        "gradient vs finite differences",
        err <= 1e-4,
        format!("{pairs} pairs, max relative error {err:.2e}"),
    )
}

/// Rejection sampling on three states against `p e^c / Z` computed by hand.
pub fn oracle_three_state(proposals: usize) -> Check {
    let schema = TableSchema::new(vec![Column::real("x")]).unwrap();
    let norm = Normalization::identity(1);
    let states = [0.0, 1.0, 2.0];
    let p = [0.2, 0.5, 0.3];
    let mut lines = Vec::new();
    let mut ok = true;
    for (text, k, use_bound) in [("x >= 1", 1.5, false), ("x = 1", 2.0, true), ("x <= 0.5 or x >= 1.5", 3.0, false)] {
        let f = parsed(text, &schema);
        let cc = compiled(&f, &norm, k, 1.0);
        let w: Vec<f64> = states.iter().map(|s| reference::soft(&f, &[*s], k, 1.0).exp()).collect();
        let z: f64 = p.iter().zip(&w).map(|(a, b)| a * b).sum();
        let mut source = FnProposal {
            width: 1,
            generate: |n: usize, rng: &mut ChaCha8Rng| {
                Ok(Array::from_fn(n, 1, |_, _| {
                    let u: f64 = rng.random();
                    if u < p[0] {
                        states[0]
                    } else if u < p[0] + p[1] {
                        states[1]
                    } else {
                        states[2]
                    }
                }))
            },
        };
        let job = RejectionJob {
            target: proposals,
            budget: proposals,
            batch: 10_000,
            seed: 105,
            log_envelope: if use_bound { cc.upper_bound() } else { 0.0 },
        };
        let r = rejection_sample(&job, &cc, &mut source).unwrap();
        let n = r.len() as f64;
        let mut worst_sigma = 0.0f64;
        for (i, s) in states.iter().enumerate() {
            let q = p[i] * w[i] / z;
            let freq = r.accepted.data().iter().filter(|v| *v == s).count() as f64 / n;
            let sd = (q * (1.0 - q) / n).sqrt();
            worst_sigma = worst_sigma.max((freq - q).abs() / sd);
        }
        let rate = z / job.log_envelope.exp();
        let rate_sd = (rate * (1.0 - rate) / proposals as f64).sqrt();
        let rate_sigma = (r.acceptance_rate() - rate).abs() / rate_sd;
        ok &= worst_sigma <= 3.0 && rate_sigma <= 3.0 && r.proposed == proposals;
        lines.push(format!("`{text}`: {worst_sigma:.2}σ, rate {rate_sigma:.2}σ"));
    }
    Check::new("oracle exactness", ok, format!("{proposals} proposals each; {}", lines.join("; ")))
}

fn gaussian_score(spec: DiffusionSpec, mean: f64, std: f64) -> impl Fn(&Array<f64>, f64) -> scoreguide::Result<Array<f64>> {
    move |x: &Array<f64>, t: f64| {
        let k = spec.kernel_params(t)?;
        let var = (k.mean_scale * std).powi(2) + k.std * k.std;
        Ok(x.map(|v| -(v - k.mean_scale * mean) / var))
    }
}

fn moments(x: &Array<f64>) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.data().iter().sum::<f64>() / n;
    (m, x.data().iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0))
}

/// Reverse-process sampling with the exact score of `N(0.5, 1)` data.
pub fn gaussian_recovery() -> Check {
    let mut lines = Vec::new();
    let mut ok = true;
    for spec in [
        DiffusionSpec::Ve { sigma_min: 0.01, sigma_max: 10.0 },
        DiffusionSpec::SubVp { beta_min: 0.1, beta_max: 20.0 },
    ] {
        let score = gaussian_score(spec, 0.5, 1.0);
        let cfg = SamplerConfig {
            predictor_steps: 500,
            rng_seed: 106,
            ..SamplerConfig::default()
        };
        let x = pc_sample(&spec, &score, &cfg, 2, 4000).unwrap();
        let (m, v) = moments(&x);
        ok &= (m - 0.5).abs() <= 0.1 && (0.8..=1.2).contains(&v);
        lines.push(format!("{spec:?}: mean {m:.3}, variance {v:.3}"));
    }
    Check::new("Gaussian recovery", ok, lines.join("; "))
}

/// Langevin steps at the smallest time keep exact samples in place.
pub fn langevin_stationarity() -> Check {
    let spec = DiffusionSpec::Ve { sigma_min: 0.01, sigma_max: 10.0 };
    let score = gaussian_score(spec, 0.5, 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(107);
    let mut x = Array::from_fn(4000, 1, |_, _| 0.5 + rng.sample::<f64, _>(StandardNormal));
    for _ in 0..500 {
        let z = Array::from_fn(4000, 1, |_, _| rng.sample(StandardNormal));
        x = corrector_step(&score, &x, T_MIN, StepRule::Snr(0.16), &z).unwrap();
    }
    let (m, v) = moments(&x);
    Check::new(
        "Langevin stationarity",
        (m - 0.5).abs() <= 0.1 && (0.8..=1.2).contains(&v),
        format!("after 500 steps: mean {m:.3}, variance {v:.3}"),
    )
}

/// The denoising target against a numerical gradient of `ln q_t(x̃|x)`.
pub fn dsm_target_numeric() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(108);
    let mut err = 0.0f64;
    for spec in [
        DiffusionSpec::Ve { sigma_min: 0.01, sigma_max: 20.0 },
        DiffusionSpec::SubVp { beta_min: 0.1, beta_max: 20.0 },
    ] {
        for t in [0.05, 0.3, 0.7, 1.0] {
            let k = spec.kernel_params(t).unwrap();
            let x = Array::from_fn(8, 3, |_, _| rng.random_range(-2.0..2.0));
            let xt = Array::from_fn(8, 3, |i, j| k.mean_scale * x.get(i, j) + k.std * rng.sample::<f64, _>(StandardNormal));
            let target = dsm_target(&spec, &x, &xt, t).unwrap();
            let log_q = |v: f64, mean: f64| -0.5 * ((v - mean) / k.std).powi(2) - (k.std * (2.0 * std::f64::consts::PI).sqrt()).ln();
            for i in 0..8 {
                for j in 0..3 {
                    let (v, mean) = (xt.get(i, j), k.mean_scale * x.get(i, j));
                    let h = 1e-4 * k.std;
                    let fd = (log_q(v + h, mean) - log_q(v - h, mean)) / (2.0 * h);
                    err = err.max((fd - target.get(i, j)).abs() / target.get(i, j).abs().max(1.0));
                }
            }
        }
    }
    Check::new("DSM target", err <= 1e-6, format!("max relative deviation {err:.2e}"))
}

fn job<'a>(score: &'a dyn ScoreFn, spec: DiffusionSpec, cc: &'a CompiledConstraint) -> GuidedSampleJob<'a> {
    GuidedSampleJob {
        score,
        spec,
        constraint: cc,
        schedule: GuidanceSchedule::Linear,
        sampler: SamplerConfig::default(),
        dim: cc.width(),
        instances: 1,
        count: 1,
        decoder: None,
    }
}

/// Guided score at the boundary, under λ doubling, and a vacuous
/// constraint through the full sampler.
pub fn guidance_identities() -> Check {
    let schema = TableSchema::new(vec![Column::real("a"), Column::real("b")]).unwrap();
    let norm = Normalization {
        mean: vec![0.3, -0.2],
        std: vec![1.5, 0.7],
    };
    let f = parsed("(a >= b or a + b <= -1) and b in [-2, 2]", &schema);
    let c1 = compiled(&f, &norm, 3.0, 1.0);
    let c2 = compiled(&f, &norm, 3.0, 2.0);
    let spec = DiffusionSpec::Ve { sigma_min: 0.01, sigma_max: 5.0 };
    let score = gaussian_score(spec, 0.0, 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(109);
    let x = Array::from_fn(50, 2, |_, _| rng.random_range(-3.0..3.0));

    let s = score(&x, 0.0).unwrap();
    let g1 = c1.grad(&x).unwrap();
    let g2 = c2.grad(&x).unwrap();
    let at_zero = guided_score(&job(&score, spec, &c1), &x, 0.0).unwrap();
    let at_one = guided_score(&job(&score, spec, &c1), &x, 1.0).unwrap();
    let boundary = at_zero.data().iter().zip(s.data().iter().zip(g1.data())).all(|(a, (b, c))| *a == b + c)
        && at_one.data() == score(&x, 1.0).unwrap().data();

    let mut doubling = g2.data().iter().zip(g1.data()).all(|(a, b)| *a == 2.0 * b);
    for t in [0.1, 0.5, 0.9] {
        let w = GuidanceSchedule::Linear.weight(&spec, t).unwrap();
        let st = score(&x, t).unwrap();
        let a = guided_score_weighted(&job(&score, spec, &c2), &x, t, w).unwrap();
        doubling &= a.data().iter().zip(st.data().iter().zip(g1.data())).all(|(a, (s, g))| *a == s + w * (2.0 * g));
    }

    // `a >= a` has a constant value and an exactly zero gradient
    let none = compiled(&parsed("a >= a", &schema), &norm, 1.0, 1.0);
    let vac = compiled(&parsed("a >= -50 and b <= 50", &schema), &norm, 1.0, 1.0);
    let sampler = SamplerConfig {
        predictor_steps: 200,
        final_langevin_steps: 50,
        rng_seed: 110,
        ..SamplerConfig::default()
    };
    let run = |cc: &CompiledConstraint, seed: u64, count: usize| {
        constrained_sample(&GuidedSampleJob {
            sampler: SamplerConfig { rng_seed: seed, ..sampler },
            count,
            schedule: GuidanceSchedule::Snr,
            ..job(&score, spec, cc)
        })
        .unwrap()
        .samples
    };
    let guided = run(&vac, 110, 3000);
    let plain = run(&none, 111, 6000);
    let half = |i: usize| Array::matrix(3000, 2, plain.data()[i * 6000..(i + 1) * 6000].to_vec()).unwrap();
    let floor = eval::marginal_distances(&half(0), &half(1), eval::DEFAULT_BINS).unwrap();
    let d = eval::marginal_distances(&guided, &half(1), eval::DEFAULT_BINS).unwrap();
    let vacuous = d.iter().zip(&floor).all(|(a, b)| *a <= 2.0 * b.max(0.02));
    Check::new(
        "guidance identities",
        boundary && doubling && vacuous,
        format!("boundary {boundary}, λ doubling {doubling}, vacuous distance {d:.3?} vs floor {floor:.3?}"),
    )
}

pub fn all() -> Vec<Check> {
    vec![
        boundedness(1000, 100),
        stable_or_grid(),
        de_morgan(1000),
        gradients(500),
        oracle_three_state(100_000),
        gaussian_recovery(),
        langevin_stationarity(),
        dsm_target_numeric(),
        guidance_identities(),
    ]
}
