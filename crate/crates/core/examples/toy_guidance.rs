//! Condition a learned 1-D mixture on `x >= 0` without retraining, and
//! compare the Linear and SNR guidance schedules against exact rejection
//! samples.
//!
//! `cargo run --release --example toy_guidance -- [train steps]`

use scoreguide::experiments::{compile_constraint, evaluate, guide, oracle, prepare, preset, train_model};
use scoreguide::guidance::GuidanceSchedule;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut config = preset("toy")?;
    if let Some(steps) = std::env::args().nth(1) {
        config.train.steps = steps.parse()?;
    }
    let prepared = prepare(&config.dataset)?;
    let t0 = std::time::Instant::now();
    let (ck, report) = train_model(&config, &prepared)?;
    println!("trained {} steps in {:.1?}, loss {:.4}", config.train.steps, t0.elapsed(), report.tail_mean(200));

    let schema = &prepared.dataset.schema;
    let cc = compile_constraint(&config.constraint, schema, &prepared.normalization)?;
    let rs = oracle(&config, &ck, &cc)?;
    println!("RS: {} samples, acceptance {:.3}", rs.result.len(), rs.result.acceptance_rate());

    for schedule in [GuidanceSchedule::Linear, GuidanceSchedule::Snr] {
        for langevin in [0, config.sampler.final_langevin_steps] {
            let mut c = config.clone();
            c.schedule = schedule;
            c.sampler.final_langevin_steps = langevin;
            let g = guide(&c, &ck, &cc)?;
            let ev = evaluate(&c, schema, &g, Some(&rs))?;
            println!(
                "{schedule:?}, {langevin:>3} Langevin steps: histogram distance {:.3}, satisfied {:.3}",
                ev.report.hist_l1[0],
                g.satisfaction_rate()
            );
        }
    }
    Ok(())
}
