//! Write a preset as an editable JSON config, the format the command-line
//! tool reads with `--config`.
//!
//! `cargo run --example config_file -- esirs_bridging > bridging.json`

use scoreguide::config::ExperimentConfig;
use scoreguide::experiments::{preset, NAMES};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let name = std::env::args().nth(1).unwrap_or_else(|| "toy".into());
    let mut config = preset(&name).map_err(|e| format!("{e} ({})", NAMES.join(", ")))?;
    // a stricter variant of the same experiment
    config.constraint.k *= 2.0;
    config.name = format!("{name}_hard");
    let text = serde_json::to_string_pretty(&config)?;
    let back: ExperimentConfig = serde_json::from_str(&text)?;
    back.validate()?;
    println!("{text}");
    Ok(())
}
