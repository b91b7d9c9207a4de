//! One constraint over two records at once: pairs of wines where the
//! first is more than one point of alcohol stronger than the second.
//!
//! Uses the UCI white-wine table when `WINE_QUALITY_CSV` points at it and
//! a synthetic stand-in otherwise.
//!
//! `cargo run --release --example multi_instance -- [train steps]`

use scoreguide::experiments::{compile_constraint, evaluate, guide, oracle, prepare, preset, train_model};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut config = preset("wine_multi")?;
    if let Some(steps) = std::env::args().nth(1) {
        config.train.steps = steps.parse()?;
    }
    config.metrics.guided_count = 2000;
    config.oracle.target = 2000;

    let prepared = prepare(&config.dataset)?;
    let schema = &prepared.dataset.schema;
    println!("{} rows, columns {:?}", prepared.dataset.len(), schema.component_labels());
    let (ck, report) = train_model(&config, &prepared)?;
    println!("trained, final loss {:.4}", report.tail_mean(200));

    let cc = compile_constraint(&config.constraint, schema, &prepared.normalization)?;
    println!("constraint `{}` over {} columns", config.constraint.text, cc.width());
    let guided = guide(&config, &ck, &cc)?;
    let rs = oracle(&config, &ck, &cc)?;
    println!("oracle acceptance rate {:.4}", rs.result.acceptance_rate());

    let ev = evaluate(&config, schema, &guided, Some(&rs))?;
    println!("guided satisfaction {:.3}", guided.satisfaction_rate());
    let alcohol: Vec<usize> = ev
        .report
        .labels
        .iter()
        .enumerate()
        .filter(|(_, l)| l.starts_with("alcohol"))
        .map(|(i, _)| i)
        .collect();
    for j in alcohol {
        let mean = |rows: &scoreguide::diffcalc::Array<f64>| (0..rows.rows()).map(|i| rows.get(i, j)).sum::<f64>() / rows.rows() as f64;
        println!(
            "{}: guided mean {:.2}, RS mean {:.2}, histogram distance {:.3}",
            ev.report.labels[j],
            mean(&guided.decoded),
            mean(&rs.decoded),
            ev.report.hist_l1[j]
        );
    }
    for i in 1..=2 {
        let m = ev.metric(&scoreguide::config::Metric::InstanceHistMean { instance: i });
        println!("instance {i} mean marginal distance {:.3}", m.unwrap_or(f64::NAN));
    }
    Ok(())
}
