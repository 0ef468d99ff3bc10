//! Action selection from calibrated probabilities.
//!
//! Besides the greedy argmax, every selector scores each candidate action by
//! aggregating probability mass around it and returns the best-scoring
//! candidate:
//!
//! * `ua_select` sums the mass of every action strictly closer than `tau`
//!   under the configured metric (exact, stencil based).
//! * `ua_select_fast` computes the same sums for the Chebyshev metric, whose
//!   balls are axis-aligned boxes, from an inclusive prefix-sum table.
//! * `ua_select_restricted` keeps only actions above a probability threshold
//!   (at most `k` of them), centres a search window on their mean and scores
//!   window cells against the retained actions only.
//! * `gaussian_select` blurs the field with a truncated, normalized Gaussian
//!   and takes the argmax of the result.
//!
//! All selectors break ties towards the lowest flat index.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::action_space::{check_tau, ActionGrid, ActionIndex, Metric, MetricKind, Stencil};
use crate::calibration::ProbField;
use crate::error::{param, Error, Result};
use crate::numeric::{lowest_argmax, pairwise_sum};

pub const DEFAULT_K: usize = 4000;
pub const DEFAULT_TAU: f64 = 2.5;
pub const DEFAULT_WINDOW: usize = 32;
pub const DEFAULT_SIGMA: f64 = 1.0;
/// Kernel radius cap for `gaussian_select`, in cells.
pub const MAX_KERNEL_RADIUS: usize = 1 << 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SelectionMode {
    #[serde(rename = "greedy")]
    Greedy,
    #[serde(rename = "ua")]
    UaExact,
    #[serde(rename = "ua-fast")]
    UaFast,
    #[serde(rename = "ua-restricted")]
    UaRestricted,
    #[serde(rename = "gaussian")]
    Gaussian,
}

impl SelectionMode {
    pub const ALL: [SelectionMode; 5] = [
        SelectionMode::Greedy,
        SelectionMode::UaExact,
        SelectionMode::UaFast,
        SelectionMode::UaRestricted,
        SelectionMode::Gaussian,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SelectionMode::Greedy => "greedy",
            SelectionMode::UaExact => "ua",
            SelectionMode::UaFast => "ua-fast",
            SelectionMode::UaRestricted => "ua-restricted",
            SelectionMode::Gaussian => "gaussian",
        }
    }
}

impl fmt::Display for SelectionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SelectionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('_', "-").as_str() {
            "greedy" => Ok(SelectionMode::Greedy),
            "ua" | "ua-exact" => Ok(SelectionMode::UaExact),
            "ua-fast" => Ok(SelectionMode::UaFast),
            "ua-restricted" => Ok(SelectionMode::UaRestricted),
            "gaussian" => Ok(SelectionMode::Gaussian),
            _ => Err(param(format!("unknown selection mode '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionConfig {
    pub metric: Metric,
    /// Neighborhood radius; neighbors satisfy `d(a, b) < tau`.
    pub tau: f64,
    /// Probability threshold for the restricted search; `None` means `1/|A|`.
    pub alpha: Option<f64>,
    /// Maximum number of retained actions in the restricted search.
    pub k: usize,
    /// Search window edge length in cells for the restricted search.
    pub window: usize,
    /// Gaussian standard deviation in cells.
    pub sigma: f64,
    pub mode: SelectionMode,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig {
            metric: Metric::euclidean(),
            tau: DEFAULT_TAU,
            alpha: None,
            k: DEFAULT_K,
            window: DEFAULT_WINDOW,
            sigma: DEFAULT_SIGMA,
            mode: SelectionMode::UaExact,
        }
    }
}

impl SelectionConfig {
    pub fn with_mode(mut self, mode: SelectionMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn validate(&self) -> Result<()> {
        check_tau(self.tau)?;
        if let Some(a) = self.alpha {
            if !(0.0..=1.0).contains(&a) {
                return Err(param(format!("alpha must lie in [0, 1], got {a}")));
            }
        }
        if self.k == 0 {
            return Err(param("k must be at least 1"));
        }
        if self.window == 0 {
            return Err(param("window must be at least 1 cell"));
        }
        if self.mode == SelectionMode::Gaussian && !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(param(format!("sigma must be positive, got {}", self.sigma)));
        }
        Ok(())
    }

    /// The probability threshold in effect on `grid`.
    pub fn alpha_for(&self, grid: &ActionGrid) -> f64 {
        self.alpha.unwrap_or(1.0 / grid.len() as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionWarning {
    /// `tau = 0`: every neighborhood is empty under the strict test.
    DegenerateNeighborhood,
    /// No action exceeded the restricted search threshold; greedy was used.
    FellBackToGreedy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub action: ActionIndex,
    pub aggregated_score: f64,
    /// Score of the chosen action minus the best score of any other candidate.
    pub runner_up_gap: f64,
    pub candidates_evaluated: usize,
    pub warning: Option<SelectionWarning>,
}

impl SelectionResult {
    fn from_scores(scores: &[f64], to_action: impl Fn(usize) -> ActionIndex) -> Self {
        let (best, score, gap) = lowest_argmax(scores).expect("grids are never empty");
        SelectionResult {
            action: to_action(best),
            aggregated_score: score,
            runner_up_gap: gap,
            candidates_evaluated: scores.len(),
            warning: None,
        }
    }

    fn degenerate(action: ActionIndex, candidates: usize) -> Self {
        SelectionResult {
            action,
            aggregated_score: 0.0,
            runner_up_gap: 0.0,
            candidates_evaluated: candidates,
            warning: Some(SelectionWarning::DegenerateNeighborhood),
        }
    }
}

/// Lowest index of the largest probability.
pub fn greedy_select(p: &ProbField) -> SelectionResult {
    let v = p.values();
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    let runner_up = v
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != best)
        .map(|(_, &x)| x)
        .fold(f64::NEG_INFINITY, f64::max);
    SelectionResult {
        action: ActionIndex(best),
        aggregated_score: v[best],
        runner_up_gap: if runner_up.is_finite() {
            v[best] - runner_up
        } else {
            v[best]
        },
        candidates_evaluated: v.len(),
        warning: None,
    }
}

/// Visits every cell in row-major order with its coordinates.
fn for_each_cell(grid: &ActionGrid, mut f: impl FnMut(usize, &[usize])) {
    let dims = grid.dims();
    let mut coords = vec![0; dims.len()];
    for flat in 0..grid.len() {
        f(flat, &coords);
        for axis in (0..dims.len()).rev() {
            coords[axis] += 1;
            if coords[axis] < dims[axis] {
                break;
            }
            coords[axis] = 0;
        }
    }
}

fn check_weights(grid: &ActionGrid, weights: &[f64]) -> Result<()> {
    if weights.len() != grid.len() {
        return Err(Error::Validation(format!(
            "{} weights for a grid of {} actions",
            weights.len(),
            grid.len()
        )));
    }
    Ok(())
}

/// For every cell, the sum of `weights` over its `tau`-neighborhood, by
/// direct enumeration of the neighborhood stencil.
pub fn neighborhood_sums(
    grid: &ActionGrid,
    weights: &[f64],
    metric: &Metric,
    tau: f64,
) -> Result<Vec<f64>> {
    check_weights(grid, weights)?;
    let stencil = Stencil::new(grid, metric, tau)?;
    let mut out = vec![0.0; grid.len()];
    for_each_cell(grid, |flat, coords| {
        let mut acc = 0.0;
        stencil.for_each_neighbor(grid, coords, flat, |j| acc += weights[j]);
        out[flat] = acc;
    });
    Ok(out)
}

/// Uncertainty-aware selection by exhaustive neighborhood aggregation.
pub fn ua_select(p: &ProbField, cfg: &SelectionConfig) -> Result<SelectionResult> {
    check_tau(cfg.tau)?;
    let grid = p.grid();
    if Stencil::new(grid, &cfg.metric, cfg.tau)?.is_empty() {
        return Ok(SelectionResult::degenerate(ActionIndex(0), grid.len()));
    }
    let scores = neighborhood_sums(grid, p.values(), &cfg.metric, cfg.tau)?;
    Ok(SelectionResult::from_scores(&scores, ActionIndex))
}

/// Largest whole number of cells `n` with `n * weight < tau`, limited to the
/// grid extent; `None` when even the zero offset fails (`tau = 0`).
fn box_half_width(weight: f64, tau: f64, extent: usize) -> Option<usize> {
    if tau <= 0.0 {
        return None;
    }
    let mut n = (tau / weight).floor();
    if !n.is_finite() || n >= extent as f64 {
        n = extent as f64 - 1.0;
    }
    let mut n = n as usize;
    while n > 0 && n as f64 * weight >= tau {
        n -= 1;
    }
    Some(n)
}

/// Inclusive prefix sums over a grid padded to three axes, with a zero
/// border so `table[(i, j, k)]` covers cells strictly below `(i, j, k)`.
struct PrefixVolume {
    dims: [usize; 3],
    table: Vec<f64>,
}

impl PrefixVolume {
    fn new(dims: [usize; 3], weights: &[f64]) -> Self {
        let [n0, n1, n2] = dims;
        let (s1, s0) = (n2 + 1, (n1 + 1) * (n2 + 1));
        let mut table = vec![0.0; (n0 + 1) * s0];
        for i in 0..n0 {
            for j in 0..n1 {
                let row = (i * n1 + j) * n2;
                let base = (i + 1) * s0 + (j + 1) * s1;
                let mut run = 0.0;
                for k in 0..n2 {
                    run += weights[row + k];
                    table[base + k + 1] = run;
                }
            }
        }
        for i in 1..=n0 {
            for j in 2..=n1 {
                for k in 1..=n2 {
                    table[i * s0 + j * s1 + k] += table[i * s0 + (j - 1) * s1 + k];
                }
            }
        }
        for i in 2..=n0 {
            for jk in s1..s0 {
                table[i * s0 + jk] += table[(i - 1) * s0 + jk];
            }
        }
        PrefixVolume { dims, table }
    }

    fn at(&self, i: usize, j: usize, k: usize) -> f64 {
        let [_, n1, n2] = self.dims;
        self.table[(i * (n1 + 1) + j) * (n2 + 1) + k]
    }

    /// Sum over the half-open box `lo..hi` on each axis.
    fn box_sum(&self, lo: [usize; 3], hi: [usize; 3]) -> f64 {
        let [a0, a1, a2] = lo;
        let [b0, b1, b2] = hi;
        self.at(b0, b1, b2) - self.at(a0, b1, b2) - self.at(b0, a1, b2) - self.at(b0, b1, a2)
            + self.at(a0, a1, b2)
            + self.at(a0, b1, a2)
            + self.at(b0, a1, a2)
            - self.at(a0, a1, a2)
    }
}

/// Chebyshev neighborhood sums for 1- to 3-axis grids from a prefix-sum
/// table. Returns `None` when `tau = 0`.
pub fn box_sums(
    grid: &ActionGrid,
    weights: &[f64],
    metric: &Metric,
    tau: f64,
) -> Result<Option<Vec<f64>>> {
    check_weights(grid, weights)?;
    check_tau(tau)?;
    if metric.kind() != MetricKind::Chebyshev {
        return Err(Error::Unsupported(format!(
            "prefix-sum aggregation needs the chebyshev metric, got {:?}",
            metric.kind()
        )));
    }
    if grid.ndim() > 3 {
        return Err(Error::Unsupported(format!(
            "prefix-sum aggregation supports 1 to 3 axes, got {}",
            grid.ndim()
        )));
    }
    let weights_per_axis = metric.axis_weights(grid)?;
    let pad = 3 - grid.ndim();
    let mut dims = [1usize; 3];
    let mut half = [0usize; 3];
    for axis in 0..grid.ndim() {
        dims[pad + axis] = grid.dims()[axis];
        match box_half_width(weights_per_axis[axis], tau, grid.dims()[axis]) {
            Some(h) => half[pad + axis] = h,
            None => return Ok(None),
        }
    }

    let table = PrefixVolume::new(dims, weights);
    let [n0, n1, n2] = dims;
    let span = |c: usize, axis: usize| {
        (
            c.saturating_sub(half[axis]),
            (c + half[axis] + 1).min(dims[axis]),
        )
    };
    let mut out = Vec::with_capacity(grid.len());
    for i in 0..n0 {
        let (a0, b0) = span(i, 0);
        for j in 0..n1 {
            let (a1, b1) = span(j, 1);
            for k in 0..n2 {
                let (a2, b2) = span(k, 2);
                // Differencing can leave tiny negative residue around zero mass.
                out.push(table.box_sum([a0, a1, a2], [b0, b1, b2]).max(0.0));
            }
        }
    }
    Ok(Some(out))
}

/// Same result as [`ua_select`] for the Chebyshev metric, in time linear in
/// the grid size regardless of `tau`.
pub fn ua_select_fast(p: &ProbField, cfg: &SelectionConfig) -> Result<SelectionResult> {
    let grid = p.grid();
    match box_sums(grid, p.values(), &cfg.metric, cfg.tau)? {
        Some(scores) => Ok(SelectionResult::from_scores(&scores, ActionIndex)),
        None => Ok(SelectionResult::degenerate(ActionIndex(0), grid.len())),
    }
}

/// Threshold-and-window restricted search.
pub fn ua_select_restricted(p: &ProbField, cfg: &SelectionConfig) -> Result<SelectionResult> {
    cfg.validate()?;
    let grid = p.grid();
    let values = p.values();
    let alpha = cfg.alpha_for(grid);

    let mut kept: Vec<usize> = (0..values.len()).filter(|&i| values[i] > alpha).collect();
    if kept.is_empty() {
        let mut r = greedy_select(p);
        r.warning = Some(SelectionWarning::FellBackToGreedy);
        return Ok(r);
    }
    if kept.len() > cfg.k {
        kept.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
        kept.truncate(cfg.k);
        kept.sort_unstable();
    }

    let ndim = grid.ndim();
    let mut mean = vec![0.0; ndim];
    let mut coords = vec![0; ndim];
    for &i in &kept {
        grid.coords_into(i, &mut coords);
        for (m, &c) in mean.iter_mut().zip(&coords) {
            *m += c as f64;
        }
    }
    let half = cfg.window / 2;
    let mut lo = vec![0; ndim];
    let mut hi = vec![0; ndim];
    for axis in 0..ndim {
        let extent = grid.dims()[axis];
        let c = (mean[axis] / kept.len() as f64 + 0.5).floor();
        let c = (c.max(0.0) as usize).min(extent - 1);
        lo[axis] = c.saturating_sub(half);
        hi[axis] = c.saturating_add(half).min(extent - 1);
    }

    let mut masked = vec![0.0; values.len()];
    for &i in &kept {
        masked[i] = values[i];
    }
    let stencil = Stencil::new(grid, &cfg.metric, cfg.tau)?;

    let mut window_cells = Vec::new();
    let mut scores = Vec::new();
    let mut cur = lo.clone();
    'cells: loop {
        let flat = grid.flat_index(&cur)?.get();
        let mut acc = 0.0;
        stencil.for_each_neighbor(grid, &cur, flat, |j| acc += masked[j]);
        window_cells.push(flat);
        scores.push(acc);

        for axis in (0..ndim).rev() {
            if cur[axis] < hi[axis] {
                cur[axis] += 1;
                continue 'cells;
            }
            cur[axis] = lo[axis];
        }
        break;
    }

    if stencil.is_empty() {
        return Ok(SelectionResult::degenerate(
            ActionIndex(window_cells[0]),
            window_cells.len(),
        ));
    }
    Ok(SelectionResult::from_scores(&scores, |i| {
        ActionIndex(window_cells[i])
    }))
}

/// Truncated sampled Gaussian of radius `ceil(3 sigma)`, normalized to sum 1.
pub fn gaussian_kernel(sigma: f64) -> Result<Vec<f64>> {
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(param(format!("sigma must be positive, got {sigma}")));
    }
    let r = (3.0 * sigma).ceil();
    if r > MAX_KERNEL_RADIUS as f64 {
        return Err(param(format!(
            "sigma {sigma} gives a kernel wider than supported"
        )));
    }
    let r = r as isize;
    let mut k: Vec<f64> = (-r..=r)
        .map(|x| (-((x * x) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total = pairwise_sum(&k);
    k.iter_mut().for_each(|w| *w /= total);
    Ok(k)
}

/// One zero-padded convolution pass along `axis`.
fn convolve_axis(grid: &ActionGrid, input: &[f64], kernel: &[f64], axis: usize) -> Vec<f64> {
    let r = (kernel.len() / 2) as isize;
    let n = grid.dims()[axis] as isize;
    let stride = grid.strides()[axis];
    let mut out = vec![0.0; input.len()];
    for_each_cell(grid, |flat, coords| {
        let c = coords[axis] as isize;
        let base = flat - coords[axis] * stride;
        let mut acc = 0.0;
        for (t, &w) in kernel.iter().enumerate() {
            let x = c + t as isize - r;
            if x >= 0 && x < n {
                acc += w * input[base + x as usize * stride];
            }
        }
        out[flat] = acc;
    });
    out
}

/// Separable Gaussian blur of a 1- or 2-axis field with zero padding.
pub fn gaussian_blur(grid: &ActionGrid, weights: &[f64], sigma: f64) -> Result<Vec<f64>> {
    check_weights(grid, weights)?;
    if grid.ndim() > 2 {
        return Err(Error::Unsupported(format!(
            "gaussian aggregation supports 1 or 2 axes, got {}",
            grid.ndim()
        )));
    }
    let kernel = gaussian_kernel(sigma)?;
    let mut field = weights.to_vec();
    for axis in (0..grid.ndim()).rev() {
        field = convolve_axis(grid, &field, &kernel, axis);
    }
    Ok(field)
}

pub fn gaussian_select(p: &ProbField, cfg: &SelectionConfig) -> Result<SelectionResult> {
    let blurred = gaussian_blur(p.grid(), p.values(), cfg.sigma)?;
    Ok(SelectionResult::from_scores(&blurred, ActionIndex))
}

/// Dispatch on `cfg.mode`.
pub fn select(p: &ProbField, cfg: &SelectionConfig) -> Result<SelectionResult> {
    cfg.validate()?;
    match cfg.mode {
        SelectionMode::Greedy => Ok(greedy_select(p)),
        SelectionMode::UaExact => ua_select(p, cfg),
        SelectionMode::UaFast => ua_select_fast(p, cfg),
        SelectionMode::UaRestricted => ua_select_restricted(p, cfg),
        SelectionMode::Gaussian => gaussian_select(p, cfg),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prob(dims: &[usize], values: Vec<f64>) -> ProbField {
        ProbField::new(ActionGrid::new(dims).unwrap(), values).unwrap()
    }

    fn cfg(metric: Metric, tau: f64) -> SelectionConfig {
        SelectionConfig {
            metric,
            tau,
            ..SelectionConfig::default()
        }
    }

    /// Spike of 0.30 at (0,0) and a 2x2 blob of 0.175 at (2..4, 2..4).
    fn spike_and_blob() -> ProbField {
        let mut v = vec![0.0; 25];
        v[0] = 0.30;
        for (r, c) in [(2, 2), (2, 3), (3, 2), (3, 3)] {
            v[r * 5 + c] = 0.175;
        }
        prob(&[5, 5], v)
    }

    #[test]
    fn greedy_examples() {
        let r = greedy_select(&prob(&[3], vec![0.1, 0.7, 0.2]));
        assert_eq!(r.action, ActionIndex(1));
        assert_eq!(r.aggregated_score, 0.7);
        assert!((r.runner_up_gap - 0.5).abs() < 1e-15);
        let r = greedy_select(&prob(&[4], vec![0.25; 4]));
        assert_eq!(r.action, ActionIndex(0));
        assert_eq!(r.runner_up_gap, 0.0);
    }

    #[test]
    fn ua_overrides_greedy_in_1d() {
        let p = prob(&[3], vec![0.5, 0.25, 0.25]);
        let sums = neighborhood_sums(p.grid(), p.values(), &Metric::euclidean(), 1.5).unwrap();
        assert_eq!(sums, vec![0.75, 1.0, 0.5]);
        let r = ua_select(&p, &cfg(Metric::euclidean(), 1.5)).unwrap();
        assert_eq!(r.action, ActionIndex(1));
        assert_eq!(r.aggregated_score, 1.0);
        assert!((r.runner_up_gap - 0.25).abs() < 1e-15);
    }

    #[test]
    fn ua_prefers_blob_over_spike() {
        let p = spike_and_blob();
        let r = ua_select(&p, &cfg(Metric::euclidean(), 1.5)).unwrap();
        assert_eq!(r.action, ActionIndex(2 * 5 + 2));
        assert!((r.aggregated_score - 0.70).abs() < 1e-12);
        assert_eq!(r.runner_up_gap, 0.0);
        assert_eq!(greedy_select(&p).action, ActionIndex(0));
    }

    #[test]
    fn tau_zero_is_degenerate() {
        let p = prob(&[3], vec![0.2, 0.5, 0.3]);
        for f in [ua_select, ua_select_fast] {
            let r = f(&p, &cfg(Metric::chebyshev(), 0.0)).unwrap();
            assert_eq!(r.action, ActionIndex(0));
            assert_eq!(r.aggregated_score, 0.0);
            assert_eq!(r.warning, Some(SelectionWarning::DegenerateNeighborhood));
        }
    }

    #[test]
    fn small_tau_is_greedy() {
        let p = prob(&[2, 3], vec![0.1, 0.05, 0.3, 0.2, 0.15, 0.2]);
        let r = ua_select(&p, &cfg(Metric::euclidean(), 0.5)).unwrap();
        assert_eq!(r.action, greedy_select(&p).action);
        assert_eq!(r.aggregated_score, 0.3);
    }

    #[test]
    fn fast_path_uniform_field() {
        let p = prob(&[10, 10], vec![0.01; 100]);
        let c = cfg(Metric::chebyshev(), 1.5);
        let sums = box_sums(p.grid(), p.values(), &c.metric, c.tau)
            .unwrap()
            .unwrap();
        assert!((sums[0] - 0.04).abs() < 1e-15);
        assert!((sums[11] - 0.09).abs() < 1e-15);
        let r = ua_select_fast(&p, &c).unwrap();
        assert_eq!(r.action, ActionIndex(11));
        assert!((r.aggregated_score - 0.09).abs() < 1e-12);
        assert_eq!(ua_select(&p, &c).unwrap().action, ActionIndex(11));
    }

    #[test]
    fn fast_path_rejects_other_metrics_and_4d() {
        let p = prob(&[3], vec![0.2, 0.5, 0.3]);
        let e = ua_select_fast(&p, &cfg(Metric::euclidean(), 1.5)).unwrap_err();
        assert!(matches!(e, Error::Unsupported(_)));
        let p4 = prob(&[2, 2, 2, 2], vec![1.0 / 16.0; 16]);
        assert!(matches!(
            ua_select_fast(&p4, &cfg(Metric::chebyshev(), 1.5)),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn box_half_width_is_strict() {
        assert_eq!(box_half_width(1.0, 1.0, 10), Some(0));
        assert_eq!(box_half_width(1.0, 1.5, 10), Some(1));
        assert_eq!(box_half_width(1.0, 2.0, 10), Some(1));
        assert_eq!(box_half_width(0.5, 2.0, 10), Some(3));
        assert_eq!(box_half_width(1.0, 1e9, 10), Some(9));
        assert_eq!(box_half_width(1.0, f64::INFINITY, 4), Some(3));
        assert_eq!(box_half_width(1.0, 0.0, 10), None);
    }

    #[test]
    fn restricted_worked_example() {
        let p = prob(&[7], vec![0.30, 0.0, 0.0, 0.24, 0.23, 0.23, 0.0]);
        let c = SelectionConfig {
            alpha: Some(0.1),
            k: 7,
            window: 7,
            ..cfg(Metric::euclidean(), 1.5)
        };
        let r = ua_select_restricted(&p, &c).unwrap();
        assert_eq!(r.action, ActionIndex(4));
        assert!((r.aggregated_score - 0.70).abs() < 1e-12);
        assert_eq!(r.candidates_evaluated, 7);
    }

    #[test]
    fn restricted_window_is_clipped_around_rounded_mean() {
        // Retained cells 0 and 3: mean 1.5 rounds half-up to 2, window 3
        // covers cells 1..=3. Cell 1 sees the 0.4 at cell 0.
        let p = prob(&[9], vec![0.4, 0.0, 0.0, 0.35, 0.0, 0.0, 0.0, 0.0, 0.25]);
        let c = SelectionConfig {
            alpha: Some(0.3),
            window: 3,
            ..cfg(Metric::euclidean(), 1.5)
        };
        let r = ua_select_restricted(&p, &c).unwrap();
        assert_eq!(r.candidates_evaluated, 3);
        assert_eq!(r.action, ActionIndex(1));
        assert_eq!(r.aggregated_score, 0.4);
        assert!((r.runner_up_gap - 0.05).abs() < 1e-15);
    }

    #[test]
    fn restricted_top_k_prefers_low_index_on_ties() {
        let p = prob(&[5], vec![0.2; 5]);
        let c = SelectionConfig {
            alpha: Some(0.0),
            k: 2,
            window: 9,
            ..cfg(Metric::euclidean(), 0.5)
        };
        // Kept {0, 1}; singleton neighborhoods; tie between 0 and 1.
        let r = ua_select_restricted(&p, &c).unwrap();
        assert_eq!(r.action, ActionIndex(0));
        assert_eq!(r.candidates_evaluated, 5);
    }

    #[test]
    fn restricted_falls_back_when_nothing_passes() {
        let p = prob(&[3], vec![0.2, 0.5, 0.3]);
        let c = SelectionConfig {
            alpha: Some(0.9),
            ..SelectionConfig::default()
        };
        let r = ua_select_restricted(&p, &c).unwrap();
        assert_eq!(r.action, ActionIndex(1));
        assert_eq!(r.warning, Some(SelectionWarning::FellBackToGreedy));
    }

    #[test]
    fn restricted_k1_singleton_neighborhood_is_greedy() {
        let p = prob(&[2, 3], vec![0.1, 0.05, 0.3, 0.2, 0.15, 0.2]);
        let c = SelectionConfig {
            alpha: Some(0.0),
            k: 1,
            ..cfg(Metric::euclidean(), 0.5)
        };
        assert_eq!(
            ua_select_restricted(&p, &c).unwrap().action,
            greedy_select(&p).action
        );
    }

    #[test]
    fn restricted_k1_with_wider_tau_takes_lowest_tied_neighbor() {
        // Only the greedy cell 3 is retained; cells 2, 3, 4 all score 0.4.
        let p = prob(&[7], vec![0.1, 0.1, 0.1, 0.4, 0.1, 0.1, 0.1]);
        let c = SelectionConfig {
            alpha: Some(0.0),
            k: 1,
            ..cfg(Metric::euclidean(), 1.5)
        };
        let r = ua_select_restricted(&p, &c).unwrap();
        assert_eq!(r.action, ActionIndex(2));
        assert_eq!(r.aggregated_score, 0.4);
    }

    #[test]
    fn kernel_is_normalized_and_symmetric() {
        let k = gaussian_kernel(1.0).unwrap();
        assert_eq!(k.len(), 7);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        for i in 0..3 {
            assert_eq!(k[i], k[6 - i]);
        }
        assert_eq!(gaussian_kernel(1e-6).unwrap(), vec![0.0, 1.0, 0.0]);
        assert!(gaussian_kernel(0.0).is_err());
        assert!(gaussian_kernel(1e9).is_err());
    }

    #[test]
    fn gaussian_tiny_sigma_is_greedy() {
        let p = spike_and_blob();
        let c = SelectionConfig {
            sigma: 1e-6,
            ..SelectionConfig::default()
        };
        let r = gaussian_select(&p, &c).unwrap();
        assert_eq!(r.action, greedy_select(&p).action);
        assert_eq!(r.aggregated_score, 0.30);
    }

    #[test]
    fn gaussian_prefers_blob() {
        let r = gaussian_select(&spike_and_blob(), &SelectionConfig::default()).unwrap();
        let blob = [12, 13, 17, 18].map(ActionIndex);
        assert!(blob.contains(&r.action), "{:?}", r.action);
    }

    #[test]
    fn gaussian_rejects_3d() {
        let p = prob(&[2, 2, 2], vec![0.125; 8]);
        assert!(matches!(
            gaussian_select(&p, &SelectionConfig::default()),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn mass_in_corners_stays_in_grid() {
        let mut v = vec![0.0; 25];
        v[0] = 0.5;
        v[24] = 0.5;
        let p = prob(&[5, 5], v);
        let c = cfg(Metric::chebyshev(), 3.5);
        let sums = box_sums(p.grid(), p.values(), &c.metric, c.tau)
            .unwrap()
            .unwrap();
        assert!(sums.iter().all(|&s| s <= 1.0 + 1e-12));
        let blurred = gaussian_blur(p.grid(), p.values(), 2.0).unwrap();
        assert!(blurred.iter().sum::<f64>() < 1.0);
        assert!(blurred.iter().all(|&b| b >= 0.0));
    }

    #[test]
    fn dispatch() {
        let p = prob(&[3], vec![0.5, 0.25, 0.25]);
        let base = cfg(Metric::euclidean(), 1.5);
        let g = select(&p, &base.clone().with_mode(SelectionMode::Greedy)).unwrap();
        assert_eq!(g, greedy_select(&p));
        let u = select(&p, &base.clone().with_mode(SelectionMode::UaExact)).unwrap();
        assert_eq!(u.action, ActionIndex(1));
        assert!(matches!(
            select(&p, &base.clone().with_mode(SelectionMode::UaFast)),
            Err(Error::Unsupported(_))
        ));
        let bad = SelectionConfig { tau: -1.0, ..base };
        assert!(matches!(select(&p, &bad), Err(Error::Parameter(_))));
    }

    #[test]
    fn mode_names_round_trip() {
        for m in SelectionMode::ALL {
            assert_eq!(m.as_str().parse::<SelectionMode>().unwrap(), m);
        }
        assert_eq!(
            "ua_exact".parse::<SelectionMode>().unwrap(),
            SelectionMode::UaExact
        );
        assert!("nope".parse::<SelectionMode>().is_err());
    }
}
