//! Sample comparison metrics.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffcalc::Array;
use crate::error::{Error, Result};
use crate::logic::{eval_hard, Formula};

pub const DEFAULT_BINS: usize = 50;

/// Empirical probabilities of two samples over one shared equal-width binning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub p_x: Vec<f64>,
    pub p_y: Vec<f64>,
}

impl Histogram {
    pub fn new(x: &[f64], y: &[f64], bins: usize) -> Result<Self> {
        if x.is_empty() || y.is_empty() {
            return Err(Error::Metric("histogram of an empty sample".into()));
        }
        if bins == 0 {
            return Err(Error::Metric("bin count must be positive".into()));
        }
        if x.iter().chain(y).any(|v| !v.is_finite()) {
            return Err(Error::Metric("non-finite value in sample".into()));
        }
        let lo = x.iter().chain(y).copied().fold(f64::INFINITY, f64::min);
        let hi = x.iter().chain(y).copied().fold(f64::NEG_INFINITY, f64::max);
        let count = |s: &[f64]| {
            let mut p = vec![0.0; bins];
            for &v in s {
                let b = if hi > lo {
                    (((v - lo) / (hi - lo)) * bins as f64).floor() as usize
                } else {
                    0
                };
                p[b.min(bins - 1)] += 1.0;
            }
            let n = s.len() as f64;
            p.iter_mut().for_each(|q| *q /= n);
            p
        };
        Ok(Self {
            lo,
            hi,
            p_x: count(x),
            p_y: count(y),
        })
    }

    pub fn bins(&self) -> usize {
        self.p_x.len()
    }

    pub fn edges(&self, b: usize) -> (f64, f64) {
        let w = (self.hi - self.lo) / self.bins() as f64;
        (self.lo + b as f64 * w, self.lo + (b + 1) as f64 * w)
    }

    pub fn l1(&self) -> f64 {
        0.5 * self.p_x.iter().zip(&self.p_y).map(|(a, b)| (a - b).abs()).sum::<f64>()
    }
}

/// `½ Σ_i |p_x(i) − p_y(i)|` over a common binning of `[min, max]`.
pub fn l1_hist_distance(x: &[f64], y: &[f64], bins: usize) -> Result<f64> {
    Ok(Histogram::new(x, y, bins)?.l1())
}

pub fn column(a: &Array<f64>, j: usize) -> Vec<f64> {
    (0..a.rows()).map(|i| a.get(i, j)).collect()
}

/// Per-column histogram distances between two samples of equal width.
pub fn marginal_distances(x: &Array<f64>, y: &Array<f64>, bins: usize) -> Result<Vec<f64>> {
    if x.cols() != y.cols() {
        return Err(Error::Dimension {
            expected: x.cols(),
            got: y.cols(),
        });
    }
    (0..x.cols())
        .map(|j| l1_hist_distance(&column(x, j), &column(y, j), bins))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrDistance {
    /// Mean `|ΔC_ij|` over the usable upper-triangle pairs.
    pub value: f64,
    pub pairs: usize,
    /// Pairs dropped because a column has zero variance in either sample.
    pub excluded: Vec<(usize, usize)>,
}

fn correlation(a: &Array<f64>) -> (Vec<f64>, Vec<bool>) {
    let (n, d) = (a.rows() as f64, a.cols());
    let mean: Vec<f64> = (0..d).map(|j| column(a, j).iter().sum::<f64>() / n).collect();
    let mut cov = vec![0.0; d * d];
    for i in 0..a.rows() {
        let r = a.row_slice(i);
        for p in 0..d {
            let dp = r[p] - mean[p];
            for q in p..d {
                cov[p * d + q] += dp * (r[q] - mean[q]);
            }
        }
    }
    let var: Vec<f64> = (0..d).map(|p| cov[p * d + p]).collect();
    let ok: Vec<bool> = var.iter().map(|v| *v > 0.0).collect();
    let mut c = vec![0.0; d * d];
    for p in 0..d {
        for q in p..d {
            if ok[p] && ok[q] {
                c[p * d + q] = cov[p * d + q] / (var[p] * var[q]).sqrt();
            }
        }
    }
    (c, ok)
}

/// Mean absolute difference of Pearson correlations, upper triangle only.
pub fn corr_l1(x: &Array<f64>, y: &Array<f64>) -> Result<CorrDistance> {
    if x.cols() != y.cols() {
        return Err(Error::Dimension {
            expected: x.cols(),
            got: y.cols(),
        });
    }
    if x.cols() < 2 || x.rows() < 3 || y.rows() < 3 {
        return Err(Error::Metric("correlation needs at least 2 columns and 3 rows".into()));
    }
    let d = x.cols();
    let (cx, okx) = correlation(x);
    let (cy, oky) = correlation(y);
    let mut sum = 0.0;
    let mut pairs = 0;
    let mut excluded = Vec::new();
    for p in 0..d {
        for q in p + 1..d {
            if okx[p] && okx[q] && oky[p] && oky[q] {
                sum += (cx[p * d + q] - cy[p * d + q]).abs();
                pairs += 1;
            } else {
                excluded.push((p, q));
            }
        }
    }
    Ok(CorrDistance {
        value: if pairs > 0 { sum / pairs as f64 } else { 0.0 },
        pairs,
        excluded,
    })
}

pub fn satisfaction(formula: &Formula, rows: &Array<f64>) -> Vec<bool> {
    (0..rows.rows()).map(|i| eval_hard(formula, rows.row_slice(i))).collect()
}

/// Fraction of data-space rows on which the hard formula holds.
pub fn satisfaction_rate(formula: &Formula, rows: &Array<f64>) -> Result<f64> {
    if rows.rows() == 0 {
        return Err(Error::Metric("satisfaction rate of an empty sample".into()));
    }
    Ok(fraction(&satisfaction(formula, rows)))
}

pub fn fraction(flags: &[bool]) -> f64 {
    flags.iter().filter(|f| **f).count() as f64 / flags.len().max(1) as f64
}

fn rows_of(a: &Array<f64>, idx: &[usize]) -> Array<f64> {
    Array::from_fn(idx.len(), a.cols(), |i, j| a.get(idx[i], j))
}

/// Per-column distance between two random halves of `x`.
pub fn self_distance(x: &Array<f64>, bins: usize, split_seed: u64) -> Result<Vec<f64>> {
    if x.rows() < 4 {
        return Err(Error::Metric("self distance needs at least 4 rows".into()));
    }
    let mut idx: Vec<usize> = (0..x.rows()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(split_seed));
    let half = x.rows() / 2;
    marginal_distances(&rows_of(x, &idx[..half]), &rows_of(x, &idx[half..2 * half]), bins)
}

pub fn median(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub median: f64,
    pub mean: f64,
    pub max: f64,
}

impl Summary {
    pub fn of(v: &[f64]) -> Self {
        Self {
            median: median(v),
            mean: mean(v),
            max: v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Binning {
    pub bins: usize,
    pub range: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub labels: Vec<String>,
    pub binning: Binning,
    pub n_samples: usize,
    pub n_reference: usize,
    pub hist_l1: Vec<f64>,
    pub hist_summary: Summary,
    pub corr_l1: Option<CorrDistance>,
    pub self_distance: Option<Summary>,
    pub satisfaction: Option<f64>,
    pub reference_satisfaction: Option<f64>,
    pub acceptance_rate: Option<f64>,
}

impl MetricReport {
    /// Compare `samples` with `reference` column by column.
    pub fn compare(samples: &Array<f64>, reference: &Array<f64>, labels: Vec<String>, bins: usize) -> Result<Self> {
        if labels.len() != samples.cols() {
            return Err(Error::Dimension {
                expected: samples.cols(),
                got: labels.len(),
            });
        }
        let hist_l1 = marginal_distances(samples, reference, bins)?;
        let corr = if samples.cols() >= 2 && samples.rows() >= 3 && reference.rows() >= 3 {
            Some(corr_l1(samples, reference)?)
        } else {
            None
        };
        Ok(Self {
            labels,
            binning: Binning {
                bins,
                range: "equal-width over the pooled min..max of each column".into(),
            },
            n_samples: samples.rows(),
            n_reference: reference.rows(),
            hist_summary: Summary::of(&hist_l1),
            hist_l1,
            corr_l1: corr,
            self_distance: None,
            satisfaction: None,
            reference_satisfaction: None,
            acceptance_rate: None,
        })
    }

    pub fn with_self_distance(mut self, reference: &Array<f64>, seed: u64) -> Result<Self> {
        self.self_distance = Some(Summary::of(&self_distance(reference, self.binning.bins, seed)?));
        Ok(self)
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Long-format histogram table `column,bin_left,bin_right,p_x,p_y`.
pub fn write_histograms_csv(
    path: impl AsRef<Path>,
    x: &Array<f64>,
    y: &Array<f64>,
    labels: &[String],
    bins: usize,
) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Metric(e.to_string()))?;
    let err = |e: csv::Error| Error::Metric(e.to_string());
    w.write_record(["column", "bin_left", "bin_right", "p_x", "p_y"]).map_err(err)?;
    for (j, label) in labels.iter().enumerate().take(x.cols()) {
        let h = Histogram::new(&column(x, j), &column(y, j), bins)?;
        for b in 0..h.bins() {
            let (l, r) = h.edges(b);
            w.write_record([label.clone(), l.to_string(), r.to_string(), h.p_x[b].to_string(), h.p_y[b].to_string()])
                .map_err(err)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}
