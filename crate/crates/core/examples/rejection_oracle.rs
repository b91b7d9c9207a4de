//! Exact conditional sampling of simulated epidemics by rejection: draw
//! trajectories from the simulator and keep each with probability e^{c(x)}.
//!
//! `cargo run --release --example rejection_oracle -- [accepted]`

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use scoreguide::data::{decode, encode, esirs_simulate, ESIRSParams, Normalization};
use scoreguide::experiments::compile_constraint;
use scoreguide::config::ConstraintConfig;
use scoreguide::oracle::{rejection_sample, FnProposal, RejectionJob};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let target = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(500);
    let params = ESIRSParams::default();
    let base = esirs_simulate(&params, 20_000, 1)?;
    let schema = base.schema.clone();
    let norm = Normalization::fit(&base);

    // the infection has to peak late: few infected early, many at day 20
    let constraint = ConstraintConfig {
        text: "(forall t in 0..10: I[t] <= 8) and I[20] >= 15".into(),
        k: 2.0,
        lambda: 1.0,
        one_sided: false,
        instances: 1,
    };
    let cc = compile_constraint(&constraint, &schema, &norm)?;

    let width = schema.width();
    let mut source = FnProposal {
        width,
        generate: |count: usize, rng: &mut ChaCha8Rng| {
            let d = esirs_simulate(&params, count, rng.random())?;
            Ok(encode(&d, &norm)?)
        },
    };
    let job = RejectionJob {
        target,
        budget: 20_000_000,
        batch: 20_000,
        seed: 3,
        log_envelope: cc.upper_bound(),
    };
    let t0 = std::time::Instant::now();
    let r = rejection_sample(&job, &cc, &mut source)?;
    println!(
        "accepted {} of {} proposals (rate {:.5}) in {:.1?}",
        r.len(),
        r.proposed,
        r.acceptance_rate(),
        t0.elapsed()
    );

    let kept = decode(&r.accepted, &schema, &norm)?;
    let horizon = params.horizon;
    let mean = |rows: &scoreguide::diffcalc::Array<f64>, j: usize| {
        (0..rows.rows()).map(|i| rows.get(i, j)).sum::<f64>() / rows.rows() as f64
    };
    println!("{:>4} {:>10} {:>10}", "day", "I prior", "I kept");
    for t in (0..horizon).step_by(3) {
        println!("{t:>4} {:>10.2} {:>10.2}", mean(&base.rows, horizon + t), mean(&kept, horizon + t));
    }
    Ok(())
}
