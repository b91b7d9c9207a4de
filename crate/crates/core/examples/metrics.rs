//! Histogram and correlation distances between samples, and the
//! self-distance noise floor they should be read against.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use scoreguide::diffcalc::Array;
use scoreguide::eval::{corr_l1, l1_hist_distance, self_distance, Histogram, MetricReport, Summary};

fn correlated(n: usize, rho: f64, shift: f64, seed: u64) -> Array<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = Normal::new(0.0, 1.0).unwrap();
    let mut rows = Array::zeros(n, 2);
    for i in 0..n {
        let (a, b) = (z.sample(&mut rng), z.sample(&mut rng));
        rows.set(i, 0, a + shift);
        rows.set(i, 1, rho * a + (1.0 - rho * rho).sqrt() * b);
    }
    rows
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let reference = correlated(5000, 0.8, 0.0, 1);
    let floor = Summary::of(&self_distance(&correlated(10_000, 0.8, 0.0, 2), 50, 3)?);
    println!("self-distance floor: median {:.3} max {:.3}", floor.median, floor.max);

    for (rho, shift) in [(0.8, 0.0), (0.8, 0.3), (0.0, 0.0)] {
        let x = correlated(5000, rho, shift, 4);
        let report = MetricReport::compare(&x, &reference, vec!["a".into(), "b".into()], 50)?;
        println!(
            "rho {rho}, shift {shift}: hist {:.3?} corr {:.3}",
            report.hist_l1,
            corr_l1(&x, &reference)?.value
        );
    }

    // the distance is half the l1 gap of the binned frequencies
    let u: Vec<f64> = (0..1000).map(|i| i as f64 / 1000.0).collect();
    let v: Vec<f64> = u.iter().map(|x| x * x).collect();
    let h = Histogram::new(&u, &v, 10)?;
    println!("uniform vs its square, 10 bins: {:.3}", h.l1());
    for b in 0..h.bins() {
        let (lo, hi) = h.edges(b);
        print!("[{lo:.1},{hi:.1}) ");
    }
    println!();
    println!("same with 50 bins: {:.3}", l1_hist_distance(&u, &v, 50)?);
    Ok(())
}
