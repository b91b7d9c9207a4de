//! Run a named experiment end to end (train, oracle, guide, evaluate) and
//! print its acceptance criteria. Artifacts go to `runs/<name>` unless an
//! output directory is given.
//!
//! `cargo run --release --example reproduce -- toy [out]`

use std::path::PathBuf;

use scoreguide::experiments::{preset, reproduce, NAMES};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let Some(name) = args.next() else {
        eprintln!("usage: reproduce <{}> [out]", NAMES.join("|"));
        std::process::exit(2);
    };
    let config = preset(&name)?;
    let out = args.next().map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs").join(&name));
    let t0 = std::time::Instant::now();
    let summary = reproduce(&config, &out, &mut |line| println!("{line}"))?;
    println!("finished in {:.1?}, artifacts in {}", t0.elapsed(), out.display());
    for o in &summary.outcomes {
        let value = o.value.map_or("n/a".to_string(), |v| format!("{v:.4}"));
        println!("{} {}: {value} ({})", if o.passed { "PASS" } else { "FAIL" }, o.label, o.bound);
    }
    Ok(())
}
