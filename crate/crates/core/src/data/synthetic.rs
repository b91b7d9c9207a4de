use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{Column, DataError, Dataset, TableSchema};
use crate::diffcalc::Array;

pub const WINE_COLUMNS: [&str; 11] = [
    "fixed_acidity",
    "volatile_acidity",
    "citric_acid",
    "residual_sugar",
    "chlorides",
    "free_sulfur_dioxide",
    "total_sulfur_dioxide",
    "density",
    "pH",
    "sulphates",
    "alcohol",
];

const WINE_MEAN: [f64; 11] = [
    6.855, 0.278, 0.334, 6.391, 0.0458, 35.31, 138.4, 0.99403, 3.188, 0.4898, 10.514,
];
const WINE_STD: [f64; 11] = [
    0.844, 0.1008, 0.121, 5.072, 0.0218, 17.01, 42.5, 0.00300, 0.151, 0.1141, 1.2306,
];

// Upper triangle, row-major, of a white-wine-like correlation matrix.
const WINE_CORR_UPPER: [f64; 55] = [
    -0.02, 0.29, 0.09, 0.02, -0.05, 0.09, 0.27, -0.43, -0.02, -0.12, //
    -0.15, 0.06, 0.07, -0.10, 0.09, 0.03, -0.03, -0.04, 0.07, //
    0.09, 0.11, 0.09, 0.12, 0.15, -0.16, 0.06, -0.08, //
    0.09, 0.30, 0.40, 0.84, -0.19, -0.03, -0.45, //
    0.10, 0.20, 0.26, -0.09, 0.02, -0.36, //
    0.62, 0.29, 0.00, 0.06, -0.25, //
    0.53, 0.00, 0.13, -0.45, //
    -0.09, 0.07, -0.78, //
    0.16, 0.12, //
    -0.02,
];

pub fn wine_schema() -> TableSchema {
    TableSchema::new(WINE_COLUMNS.iter().map(|n| Column::real(*n)).collect()).expect("static schema")
}

fn cholesky(a: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i * n + k] * l[j * n + k]).sum();
            if i == j {
                let d = a[i * n + i] - s;
                if d <= 1e-10 {
                    return None;
                }
                l[i * n + i] = d.sqrt();
            } else {
                l[i * n + j] = (a[i * n + j] - s) / l[j * n + j];
            }
        }
    }
    Some(l)
}

fn wine_cholesky() -> Vec<f64> {
    let n = 11;
    let mut corr = vec![0.0; n * n];
    let mut it = WINE_CORR_UPPER.iter();
    for i in 0..n {
        corr[i * n + i] = 1.0;
        for j in i + 1..n {
            let v = *it.next().expect("55 entries");
            corr[i * n + j] = v;
            corr[j * n + i] = v;
        }
    }
    // shrink toward the identity until positive definite
    let mut shrink = 1.0;
    loop {
        let m: Vec<f64> = corr
            .iter()
            .enumerate()
            .map(|(k, v)| if k / n == k % n { 1.0 } else { v * shrink })
            .collect();
        if let Some(l) = cholesky(&m, n) {
            return l;
        }
        shrink *= 0.95;
    }
}

/// Seeded stand-in for the white-wine table: 11 correlated Gaussian
/// columns with wine-like means, scales and correlations.
pub fn synthetic_wine(count: usize, seed: u64) -> Dataset {
    let n = 11;
    let l = wine_cholesky();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Array::zeros(count, n);
    let mut z = [0.0; 11];
    for r in 0..count {
        for v in z.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        let row = rows.row_slice_mut(r);
        for i in 0..n {
            let c: f64 = (0..=i).map(|k| l[i * n + k] * z[k]).sum();
            row[i] = WINE_MEAN[i] + WINE_STD[i] * c;
        }
    }
    Dataset::new(wine_schema(), rows).expect("width 11")
}

/// One real column `x` drawn from `Σ w_i N(μ_i, σ_i²)`; weights need not
/// be normalized.
pub fn gaussian_mixture_1d(components: &[(f64, f64, f64)], count: usize, seed: u64) -> Result<Dataset, DataError> {
    let total: f64 = components.iter().map(|c| c.0).sum();
    if components.is_empty() || components.iter().any(|c| c.0 < 0.0 || c.2 <= 0.0) || !(total > 0.0) {
        return Err(DataError::InvalidParams(
            "mixture needs non-negative weights with positive sum and positive std".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(count);
    for _ in 0..count {
        let mut u = rng.random::<f64>() * total;
        let mut pick = components.len() - 1;
        for (k, c) in components.iter().enumerate() {
            if u < c.0 {
                pick = k;
                break;
            }
            u -= c.0;
        }
        let (_, mu, sd) = components[pick];
        let z: f64 = rng.sample(StandardNormal);
        data.push(mu + sd * z);
    }
    let schema = TableSchema::new(vec![Column::real("x")])?;
    Dataset::new(schema, Array::column(data))
}
