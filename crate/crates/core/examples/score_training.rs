//! Train a score model on two Gaussian blobs in the plane by denoising
//! score matching, then draw from it with the reverse-time sampler.
//!
//! `cargo run --release --example score_training -- [steps]`

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use scoreguide::diffcalc::Array;
use scoreguide::diffusion::{pc_sample, DiffusionSpec, SamplerConfig};
use scoreguide::eval::{corr_l1, marginal_distances, self_distance, Summary};
use scoreguide::scorenet::{train, Architecture, ScoreModel, TrainConfig};

fn blobs(n: usize, seed: u64) -> Array<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = Normal::new(0.0, 1.0).unwrap();
    Array::from_fn(n, 2, |i, j| {
        // correlated blob on the left, round one on the right
        let left = i % 3 != 0;
        match (left, j) {
            (true, 0) => -1.0 + 0.3 * z.sample(&mut rng),
            (true, _) => 0.5 + 0.6 * z.sample(&mut rng),
            (false, 0) => 1.5 + 0.25 * z.sample(&mut rng),
            (false, _) => -0.5 + 0.25 * z.sample(&mut rng),
        }
    })
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let steps = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(10_000);
    let data = blobs(20_000, 1);
    let spec = DiffusionSpec::ve_for_data(&data, 0.01);
    println!("{spec:?}");

    let arch = Architecture {
        hidden: vec![128, 128, 128],
        scale_cap: 3.0,
        ..Architecture::default()
    };
    let mut model = ScoreModel::new(2, spec, arch, 7)?;
    println!("{} parameters", model.parameter_count());
    let config = TrainConfig {
        steps,
        batch_size: 512,
        dequantize: false,
        ema_decay: Some(0.999),
        seed: 2,
        ..TrainConfig::default()
    };
    let t0 = std::time::Instant::now();
    let report = train(&mut model, &data, None, &config)?;
    println!("trained {steps} steps in {:.1?}, final loss {:.4}", t0.elapsed(), report.tail_mean(200));

    let sampler = SamplerConfig {
        predictor_steps: 500,
        rng_seed: 3,
        ..SamplerConfig::default()
    };
    let x = pc_sample(&spec, &model, &sampler, 2, 5000)?;
    let fresh = blobs(5000, 9);
    let hist = marginal_distances(&x, &fresh, 50)?;
    let floor = Summary::of(&self_distance(&blobs(10_000, 4), 50, 5)?);
    println!("marginal l1 distances {:.3?}, noise floor median {:.3}", hist, floor.median);
    println!("correlation l1 {:.3}", corr_l1(&x, &fresh)?.value);
    let left = (0..x.rows()).filter(|&i| x.get(i, 0) < 0.25).count() as f64 / x.rows() as f64;
    println!("mass in the left blob {left:.3} (data 0.667)");
    Ok(())
}
