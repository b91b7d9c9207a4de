//! Seeded random formulas over a fixed mixed schema.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use scoreguide::data::{Column, ColumnKind, Normalization, TableSchema};

pub const REALS: [&str; 5] = ["a", "b", "c", "d", "e"];
pub const SERIES_LEN: usize = 4;

/// Five real columns and a real series `s` of length 4; width 9.
pub fn schema() -> TableSchema {
    let mut cols: Vec<Column> = REALS.iter().map(|n| Column::real(*n)).collect();
    cols.push(Column::series("s", ColumnKind::Real, SERIES_LEN));
    TableSchema::new(cols).unwrap()
}

pub fn normalization(rng: &mut ChaCha8Rng, width: usize) -> Normalization {
    Normalization {
        mean: (0..width).map(|_| rng.random_range(-1.0..1.0)).collect(),
        std: (0..width).map(|_| rng.random_range(0.5..2.0)).collect(),
    }
}

fn constant(rng: &mut ChaCha8Rng, scale: f64) -> String {
    format!("{:.3}", rng.random_range(-scale..scale))
}

fn variable(rng: &mut ChaCha8Rng) -> String {
    if rng.random_bool(0.8) {
        REALS[rng.random_range(0..REALS.len())].to_string()
    } else {
        format!("s[{}]", rng.random_range(0..SERIES_LEN))
    }
}

fn linear(rng: &mut ChaCha8Rng, scale: f64) -> String {
    match rng.random_range(0..4) {
        0 => variable(rng),
        1 => format!("{} + {}", variable(rng), variable(rng)),
        2 => format!("{:.2} * {} - {}", rng.random_range(0.5..2.0), variable(rng), variable(rng)),
        _ => format!("{} - {}", variable(rng), constant(rng, scale)),
    }
}

fn cmp(rng: &mut ChaCha8Rng, allow_eq: bool) -> &'static str {
    let ops: &[&str] = if allow_eq {
        &[">=", "<=", ">", "<", "="]
    } else {
        &[">=", "<=", ">", "<"]
    };
    ops[rng.random_range(0..ops.len())]
}

fn atom(rng: &mut ChaCha8Rng, allow_eq: bool, scale: f64) -> String {
    match rng.random_range(0..6) {
        0 | 1 => format!("{} {} {}", linear(rng, scale), cmp(rng, allow_eq), constant(rng, scale)),
        2 => format!("{} {} {}", linear(rng, scale), cmp(rng, allow_eq), linear(rng, scale)),
        3 => {
            let lo: f64 = rng.random_range(-scale..scale);
            format!("{} in [{lo:.3}, {:.3}]", variable(rng), lo + rng.random_range(0.1..scale))
        }
        4 => format!(
            "forall t in 0..{}: s[t] {} s[t + 1] + {}",
            SERIES_LEN - 1,
            cmp(rng, allow_eq),
            constant(rng, scale)
        ),
        _ => format!("exists t in 1..{SERIES_LEN}: s[t] {} {}", cmp(rng, false), constant(rng, scale)),
    }
}

/// Formula text of nesting depth at most `depth`. Equalities only appear
/// in positive positions, where negation normal form can keep them.
pub fn formula(rng: &mut ChaCha8Rng, depth: usize, scale: f64) -> String {
    go(rng, depth, true, scale)
}

fn go(rng: &mut ChaCha8Rng, depth: usize, allow_eq: bool, scale: f64) -> String {
    if depth == 0 || rng.random_bool(0.25) {
        return atom(rng, allow_eq, scale);
    }
    let d = depth - 1;
    match rng.random_range(0..6) {
        0 => format!("not ({})", go(rng, d, false, scale)),
        1 | 2 => format!("({}) and ({})", go(rng, d, allow_eq, scale), go(rng, d, allow_eq, scale)),
        3 => format!("({}) or ({})", go(rng, d, allow_eq, scale), go(rng, d, allow_eq, scale)),
        4 => format!("({}) -> ({})", go(rng, d, false, scale), go(rng, d, allow_eq, scale)),
        _ => format!("({}) @k={:.2}", go(rng, d, allow_eq, scale), rng.random_range(0.5..4.0)),
    }
}

/// A model-space point and its original-units image.
pub fn point(rng: &mut ChaCha8Rng, norm: &Normalization, scale: f64) -> (Vec<f64>, Vec<f64>) {
    let y: Vec<f64> = (0..norm.width()).map(|_| rng.random_range(-scale..scale)).collect();
    let x = y.iter().zip(norm.mean.iter().zip(&norm.std)).map(|(v, (m, s))| m + s * v).collect();
    (y, x)
}
