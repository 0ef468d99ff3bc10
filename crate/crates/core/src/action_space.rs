//! Discretized action grids.
//!
//! An [`ActionGrid`] is a dense box of cells with 1 to 4 axes. Cells are
//! enumerated row-major (last axis fastest), so the flat index of a cell is
//! the usual strided offset. Distances between cells are measured on cell
//! coordinates scaled per axis by the grid's physical cell size and the
//! metric's own scale factors.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};

pub const MAX_AXES: usize = 4;

/// Flat, row-major index of a cell in an [`ActionGrid`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ActionIndex(pub usize);

impl ActionIndex {
    pub fn get(self) -> usize {
        self.0
    }
}

impl From<usize> for ActionIndex {
    fn from(flat: usize) -> Self {
        ActionIndex(flat)
    }
}

impl fmt::Display for ActionIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActionGrid {
    dims: Vec<usize>,
    cell_size: Vec<f64>,
    strides: Vec<usize>,
    len: usize,
}

impl ActionGrid {
    /// Grid with unit cell size on every axis.
    pub fn new(dims: &[usize]) -> Result<Self> {
        Self::with_cell_size(dims, &vec![1.0; dims.len()])
    }

    pub fn with_cell_size(dims: &[usize], cell_size: &[f64]) -> Result<Self> {
        if dims.is_empty() || dims.len() > MAX_AXES {
            return Err(param(format!(
                "grid must have 1 to {MAX_AXES} axes, got {}",
                dims.len()
            )));
        }
        if cell_size.len() != dims.len() {
            return Err(param(format!(
                "cell_size has {} entries for {} axes",
                cell_size.len(),
                dims.len()
            )));
        }
        if let Some(d) = dims.iter().position(|&d| d == 0) {
            return Err(param(format!("axis {d} has zero cells")));
        }
        if let Some(c) = cell_size.iter().find(|c| !(c.is_finite() && **c > 0.0)) {
            return Err(param(format!(
                "cell size must be positive and finite, got {c}"
            )));
        }
        let len = dims
            .iter()
            .try_fold(1u64, |acc, &d| acc.checked_mul(d as u64))
            .and_then(|n| usize::try_from(n).ok())
            .ok_or_else(|| param("action count overflows a 64-bit count"))?;

        let mut strides = vec![1usize; dims.len()];
        for axis in (0..dims.len() - 1).rev() {
            strides[axis] = strides[axis + 1] * dims[axis + 1];
        }
        Ok(ActionGrid {
            dims: dims.to_vec(),
            cell_size: cell_size.to_vec(),
            strides,
            len,
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn ndim(&self) -> usize {
        self.dims.len()
    }

    /// Total number of actions |A|.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn cell_size(&self) -> &[f64] {
        &self.cell_size
    }

    pub fn strides(&self) -> &[usize] {
        &self.strides
    }

    pub fn contains(&self, idx: ActionIndex) -> bool {
        idx.0 < self.len
    }

    pub fn check(&self, idx: ActionIndex) -> Result<()> {
        if self.contains(idx) {
            Ok(())
        } else {
            Err(Error::Bounds(format!(
                "flat index {} outside grid of {} actions",
                idx.0, self.len
            )))
        }
    }

    pub fn flat_index(&self, coords: &[usize]) -> Result<ActionIndex> {
        if coords.len() != self.ndim() {
            return Err(Error::Bounds(format!(
                "expected {} coordinates, got {}",
                self.ndim(),
                coords.len()
            )));
        }
        let mut flat = 0;
        for (axis, (&c, &d)) in coords.iter().zip(&self.dims).enumerate() {
            if c >= d {
                return Err(Error::Bounds(format!(
                    "coordinate {c} on axis {axis} exceeds extent {d}"
                )));
            }
            flat += c * self.strides[axis];
        }
        Ok(ActionIndex(flat))
    }

    pub fn coords_of(&self, idx: ActionIndex) -> Result<Vec<usize>> {
        self.check(idx)?;
        let mut out = vec![0; self.ndim()];
        self.coords_into(idx.0, &mut out);
        Ok(out)
    }

    /// Unchecked decomposition of `flat` into `out`; `flat` must be in range.
    pub(crate) fn coords_into(&self, mut flat: usize, out: &mut [usize]) {
        for (axis, &stride) in self.strides.iter().enumerate() {
            out[axis] = flat / stride;
            flat %= stride;
        }
    }

    pub fn indices(&self) -> impl Iterator<Item = ActionIndex> {
        (0..self.len).map(ActionIndex)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    Euclidean,
    Chebyshev,
    Manhattan,
}

impl std::str::FromStr for MetricKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euclidean" => Ok(MetricKind::Euclidean),
            "chebyshev" => Ok(MetricKind::Chebyshev),
            "manhattan" => Ok(MetricKind::Manhattan),
            other => Err(param(format!("unknown metric '{other}'"))),
        }
    }
}

/// Distance on scaled cell coordinates. An empty `scale` means unit scale on
/// every axis.
#[derive(Debug, Clone, PartialEq)]
pub struct Metric {
    kind: MetricKind,
    scale: Vec<f64>,
}

impl Metric {
    pub fn new(kind: MetricKind) -> Self {
        Metric {
            kind,
            scale: Vec::new(),
        }
    }

    pub fn euclidean() -> Self {
        Self::new(MetricKind::Euclidean)
    }

    pub fn chebyshev() -> Self {
        Self::new(MetricKind::Chebyshev)
    }

    pub fn manhattan() -> Self {
        Self::new(MetricKind::Manhattan)
    }

    pub fn with_scale(kind: MetricKind, scale: Vec<f64>) -> Result<Self> {
        if let Some(s) = scale.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
            return Err(param(format!("metric scale must be positive, got {s}")));
        }
        Ok(Metric { kind, scale })
    }

    pub fn kind(&self) -> MetricKind {
        self.kind
    }

    pub fn scale(&self) -> &[f64] {
        &self.scale
    }

    /// Per-axis length of one cell step: grid cell size times metric scale.
    pub fn axis_weights(&self, grid: &ActionGrid) -> Result<Vec<f64>> {
        if self.scale.is_empty() {
            return Ok(grid.cell_size().to_vec());
        }
        if self.scale.len() != grid.ndim() {
            return Err(param(format!(
                "metric has {} scale factors for a {}-axis grid",
                self.scale.len(),
                grid.ndim()
            )));
        }
        Ok(grid
            .cell_size()
            .iter()
            .zip(&self.scale)
            .map(|(c, s)| c * s)
            .collect())
    }

    /// Length of a cell offset `deltas` given per-axis `weights`.
    pub(crate) fn offset_length(&self, weights: &[f64], deltas: &[isize]) -> f64 {
        let steps = deltas
            .iter()
            .zip(weights)
            .map(|(&d, &w)| d.unsigned_abs() as f64 * w);
        match self.kind {
            MetricKind::Euclidean => steps.map(|s| s * s).sum::<f64>().sqrt(),
            MetricKind::Chebyshev => steps.fold(0.0, f64::max),
            MetricKind::Manhattan => steps.sum(),
        }
    }
}

impl Default for Metric {
    fn default() -> Self {
        Metric::euclidean()
    }
}

pub fn distance(grid: &ActionGrid, metric: &Metric, a: ActionIndex, b: ActionIndex) -> Result<f64> {
    let weights = metric.axis_weights(grid)?;
    let ca = grid.coords_of(a)?;
    let cb = grid.coords_of(b)?;
    let deltas: Vec<isize> = ca
        .iter()
        .zip(&cb)
        .map(|(&x, &y)| y as isize - x as isize)
        .collect();
    Ok(metric.offset_length(&weights, &deltas))
}

/// All `b` with `distance(a, b) < tau`, ascending by flat index.
pub fn neighborhood(
    grid: &ActionGrid,
    metric: &Metric,
    a: ActionIndex,
    tau: f64,
) -> Result<Vec<ActionIndex>> {
    grid.check(a)?;
    let stencil = Stencil::new(grid, metric, tau)?;
    let mut center = vec![0; grid.ndim()];
    grid.coords_into(a.0, &mut center);
    let mut out = Vec::with_capacity(stencil.len());
    stencil.for_each_neighbor(grid, &center, a.0, |flat| out.push(ActionIndex(flat)));
    Ok(out)
}

pub(crate) fn check_tau(tau: f64) -> Result<()> {
    if tau.is_nan() || tau < 0.0 {
        return Err(param(format!("tau must be non-negative, got {tau}")));
    }
    Ok(())
}

/// Cell offsets whose metric length is strictly below `tau`, in row-major
/// order. Because every offset shares the same per-axis weights, one stencil
/// serves every cell of the grid.
#[derive(Debug, Clone)]
pub(crate) struct Stencil {
    ndim: usize,
    radius: Vec<usize>,
    deltas: Vec<isize>,
    flat: Vec<isize>,
}

impl Stencil {
    pub(crate) fn new(grid: &ActionGrid, metric: &Metric, tau: f64) -> Result<Self> {
        check_tau(tau)?;
        let weights = metric.axis_weights(grid)?;
        let ndim = grid.ndim();
        // Every metric here is at least the largest single-axis step.
        let radius: Vec<usize> = weights
            .iter()
            .zip(grid.dims())
            .map(|(&w, &d)| {
                let r = (tau / w).floor();
                if r.is_finite() {
                    (r as usize).min(d.saturating_sub(1))
                } else {
                    d.saturating_sub(1)
                }
            })
            .collect();

        let mut deltas = Vec::new();
        let mut flat = Vec::new();
        let mut cur: Vec<isize> = radius.iter().map(|&r| -(r as isize)).collect();
        'outer: loop {
            if metric.offset_length(&weights, &cur) < tau {
                deltas.extend_from_slice(&cur);
                flat.push(
                    cur.iter()
                        .zip(grid.strides())
                        .map(|(&d, &s)| d * s as isize)
                        .sum(),
                );
            }
            for axis in (0..ndim).rev() {
                if cur[axis] < radius[axis] as isize {
                    cur[axis] += 1;
                    continue 'outer;
                }
                cur[axis] = -(radius[axis] as isize);
            }
            break;
        }
        Ok(Stencil {
            ndim,
            radius,
            deltas,
            flat,
        })
    }

    pub(crate) fn len(&self) -> usize {
        self.flat.len()
    }

    pub(crate) fn is_empty(&self) -> bool {
        self.flat.is_empty()
    }

    /// True when the whole stencil around `center` lies inside the grid.
    pub(crate) fn fits(&self, grid: &ActionGrid, center: &[usize]) -> bool {
        center
            .iter()
            .zip(&self.radius)
            .zip(grid.dims())
            .all(|((&c, &r), &d)| c >= r && c + r < d)
    }

    /// Calls `f` with each in-grid neighbor's flat index, ascending.
    pub(crate) fn for_each_neighbor(
        &self,
        grid: &ActionGrid,
        center: &[usize],
        center_flat: usize,
        mut f: impl FnMut(usize),
    ) {
        if self.fits(grid, center) {
            for &off in &self.flat {
                f((center_flat as isize + off) as usize);
            }
            return;
        }
        let dims = grid.dims();
        for (k, &off) in self.flat.iter().enumerate() {
            let d = &self.deltas[k * self.ndim..(k + 1) * self.ndim];
            let inside = d.iter().zip(center).zip(dims).all(|((&d, &c), &n)| {
                let x = c as isize + d;
                x >= 0 && (x as usize) < n
            });
            if inside {
                f((center_flat as isize + off) as usize);
            }
        }
    }
}
