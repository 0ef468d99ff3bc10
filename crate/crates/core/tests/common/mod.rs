//! Brute-force oracles and random inputs shared by the integration tests.
//!
//! Nothing here calls into the library's aggregation, softmax or binning
//! code; the oracles recompute everything from coordinates and raw values.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use uaction::{ActionGrid, ActionIndex, CalibrationSample, LogitField, MetricKind, ProbField};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Row-major coordinates by repeated division from the last axis.
pub fn coords(dims: &[usize], mut flat: usize) -> Vec<usize> {
    let mut out = vec![0; dims.len()];
    for axis in (0..dims.len()).rev() {
        out[axis] = flat % dims[axis];
        flat /= dims[axis];
    }
    out
}

/// Distance with per-axis length `axis[i]` per cell step.
pub fn dist(kind: MetricKind, a: &[usize], b: &[usize], axis: &[f64]) -> f64 {
    let gaps = (0..a.len()).map(|i| (a[i] as f64 - b[i] as f64).abs() * axis[i]);
    match kind {
        MetricKind::Euclidean => gaps.map(|g| g * g).sum::<f64>().sqrt(),
        MetricKind::Chebyshev => gaps.fold(0.0, f64::max),
        MetricKind::Manhattan => gaps.sum(),
    }
}

/// Every pair, every cell: sum of weights strictly within `tau`.
pub fn brute_sums(dims: &[usize], weights: &[f64], kind: MetricKind, tau: f64) -> Vec<f64> {
    brute_sums_scaled(dims, &vec![1.0; dims.len()], weights, kind, tau)
}

pub fn brute_sums_scaled(
    dims: &[usize],
    axis: &[f64],
    weights: &[f64],
    kind: MetricKind,
    tau: f64,
) -> Vec<f64> {
    let n = weights.len();
    let cs: Vec<Vec<usize>> = (0..n).map(|i| coords(dims, i)).collect();
    (0..n)
        .map(|a| {
            (0..n)
                .filter(|&b| dist(kind, &cs[a], &cs[b], axis) < tau)
                .map(|b| weights[b])
                .sum()
        })
        .collect()
}

/// Lowest index within relative 1e-12 of the maximum.
pub fn lowest_max(scores: &[f64]) -> usize {
    let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    scores
        .iter()
        .position(|&s| s >= m - 1e-12 * m.abs())
        .unwrap()
}

/// Strict linear scan, first maximum wins.
pub fn scan_argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..xs.len() {
        if xs[i] > xs[best] {
            best = i;
        }
    }
    best
}

pub fn naive_softmax(f: &[f64], t: f64) -> Vec<f64> {
    let m = f.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = f.iter().map(|v| ((v - m) / t).exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|v| v / z).collect()
}

pub fn naive_nll(data: &[CalibrationSample], t: f64) -> f64 {
    let mut total = 0.0;
    for s in data {
        let p = naive_softmax(s.logits.values(), t);
        total += -p[s.expert.get()].max(1e-300).ln();
    }
    total / data.len() as f64
}

/// Two passes: score every sample, then bin by scanning all samples per bin.
pub fn naive_ece(data: &[CalibrationSample], t: f64, n_bins: usize) -> f64 {
    let scored: Vec<(f64, bool)> = data
        .iter()
        .map(|s| {
            let p = naive_softmax(s.logits.values(), t);
            let pred = scan_argmax(s.logits.values());
            (p[pred], pred == s.expert.get())
        })
        .collect();
    let mut ece = 0.0;
    for b in 0..n_bins {
        let lo = b as f64 / n_bins as f64;
        let hi = (b + 1) as f64 / n_bins as f64;
        let members: Vec<&(f64, bool)> = scored
            .iter()
            .filter(|(c, _)| *c >= lo && (*c < hi || (b + 1 == n_bins && *c <= 1.0)))
            .collect();
        if members.is_empty() {
            continue;
        }
        let k = members.len() as f64;
        let conf = members.iter().map(|m| m.0).sum::<f64>() / k;
        let acc = members.iter().filter(|m| m.1).count() as f64 / k;
        ece += k / data.len() as f64 * (acc - conf).abs();
    }
    ece
}

/// NLL minimizer over `n` log-spaced temperatures in `[lo, hi]`.
pub fn grid_scan_temperature(data: &[CalibrationSample], lo: f64, hi: f64, n: usize) -> (f64, f64) {
    let step = (hi / lo).ln() / (n - 1) as f64;
    (0..n)
        .map(|i| {
            let t = lo * (step * i as f64).exp();
            (t, naive_nll(data, t))
        })
        .fold((0.0, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a })
}

/// Full 2-D (non-separable) convolution with zero padding and a
/// product Gaussian kernel of radius ceil(3 sigma), normalized.
pub fn direct_blur_2d(rows: usize, cols: usize, p: &[f64], sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as isize;
    let mut w = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            w.push((-((dy * dy + dx * dx) as f64) / (2.0 * sigma * sigma)).exp());
        }
    }
    let total: f64 = w.iter().sum();
    let side = (2 * r + 1) as usize;
    let mut out = vec![0.0; rows * cols];
    for i in 0..rows as isize {
        for j in 0..cols as isize {
            let mut acc = 0.0;
            for dy in -r..=r {
                for dx in -r..=r {
                    let (y, x) = (i + dy, j + dx);
                    if y >= 0 && y < rows as isize && x >= 0 && x < cols as isize {
                        acc += w[(dy + r) as usize * side + (dx + r) as usize] / total
                            * p[y as usize * cols + x as usize];
                    }
                }
            }
            out[i as usize * cols + j as usize] = acc;
        }
    }
    out
}

pub fn random_dims(rng: &mut impl Rng, max_axes: usize, max_side: usize) -> Vec<usize> {
    let n = rng.random_range(1..=max_axes);
    (0..n).map(|_| rng.random_range(1..=max_side)).collect()
}

/// Random probability field; with `sparse`, most cells are exactly zero.
pub fn random_prob(rng: &mut impl Rng, dims: &[usize], sparse: bool) -> ProbField {
    let grid = ActionGrid::new(dims).unwrap();
    let mut w: Vec<f64> = (0..grid.len())
        .map(|_| {
            if sparse && rng.random_bool(0.7) {
                0.0
            } else {
                rng.random::<f64>().powi(3)
            }
        })
        .collect();
    if w.iter().all(|&x| x == 0.0) {
        w[0] = 1.0;
    }
    ProbField::normalize(grid, w).unwrap()
}

pub fn random_logits(rng: &mut impl Rng, dims: &[usize], scale: f64) -> LogitField {
    let grid = ActionGrid::new(dims).unwrap();
    let v = (0..grid.len())
        .map(|_| (rng.random::<f64>() - 0.5) * 2.0 * scale)
        .collect();
    LogitField::new(grid, v).unwrap()
}

pub fn random_samples(
    rng: &mut impl Rng,
    n: usize,
    dims: &[usize],
    scale: f64,
) -> Vec<CalibrationSample> {
    (0..n)
        .map(|i| {
            let f = random_logits(rng, dims, scale);
            let e = rng.random_range(0..f.grid().len());
            CalibrationSample::new(f, ActionIndex(e), (i % 3) as u32).unwrap()
        })
        .collect()
}
