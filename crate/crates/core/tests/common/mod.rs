#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sa_core::TraceSet;

/// `n` rows in `d` dims, labels cycling over `classes` then shuffled, values
/// on a coarse grid when `grid` is set so that exact ties occur.
pub fn random_set(seed: u64, n: usize, d: usize, classes: usize, grid: bool) -> TraceSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            (0..d)
                .map(|_| {
                    if grid {
                        f64::from(rng.random_range(-3i32..=3))
                    } else {
                        rng.random_range(-2.0..2.0)
                    }
                })
                .collect()
        })
        .collect();
    let mut labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
    rand::seq::SliceRandom::shuffle(labels.as_mut_slice(), &mut rng);
    TraceSet::from_rows(&rows, labels, Some(classes), "random").unwrap()
}

/// Same as [`random_set`] but with no duplicate rows across classes, so DSA
/// denominators are never zero.
pub fn dsa_train(seed: u64, n: usize, d: usize, classes: usize) -> TraceSet {
    random_set(seed, n, d, classes, false)
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Gaussian KDE log-density by direct summation, written independently of
/// the library: sample variance mask, standardization, Gaussian kernel with
/// scalar bandwidth and the change-of-variables correction.
pub fn kde_oracle(
    train: &[Vec<f64>],
    query: &[f64],
    bandwidth: Option<f64>,
    threshold: f64,
    standardize: bool,
) -> f64 {
    let n = train.len();
    let d_in = train[0].len();
    let mut keep = Vec::new();
    let mut mean = Vec::new();
    let mut sd = Vec::new();
    for j in 0..d_in {
        let m = train.iter().map(|r| r[j]).sum::<f64>() / n as f64;
        let var = if n > 1 {
            train.iter().map(|r| (r[j] - m).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        if var > threshold {
            keep.push(j);
            mean.push(if standardize { m } else { 0.0 });
            sd.push(if standardize { var.sqrt() } else { 1.0 });
        }
    }
    let d = keep.len();
    let h = bandwidth.unwrap_or((n as f64).powf(-1.0 / (d as f64 + 4.0)));
    let tf = |r: &[f64]| -> Vec<f64> {
        keep.iter()
            .enumerate()
            .map(|(k, &j)| (r[j] - mean[k]) / sd[k])
            .collect()
    };
    let q = tf(query);
    let mut total = 0.0;
    for r in train {
        let r = tf(r);
        let sq: f64 = q.iter().zip(&r).map(|(a, b)| (a - b).powi(2)).sum();
        total += (-sq / (2.0 * h * h)).exp();
    }
    let norm = n as f64 * h.powi(d as i32) * (2.0 * std::f64::consts::PI).powf(d as f64 / 2.0);
    let jacobian: f64 = sd.iter().product();
    (total / norm / jacobian).ln()
}
