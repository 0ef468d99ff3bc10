//! Temperature scaling and calibration diagnostics.
//!
//! Logits are divided by a single scalar temperature before the softmax.
//! The temperature is fitted by minimizing the mean negative log-likelihood
//! of expert actions over a calibration set, using golden-section search on
//! `ln T`. Diagnostics follow the usual reliability-diagram convention:
//! confidence is the largest calibrated probability and a prediction is
//! correct when the greedy action equals the expert action.

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::action_space::{ActionGrid, ActionIndex};
use crate::error::{param, Error, Result};
use crate::numeric::{fmt_f64, pairwise_sum};

/// Probabilities are floored here before taking logs.
pub const PROB_FLOOR: f64 = 1e-300;

pub const DEFAULT_BINS: usize = 15;

/// Raw model outputs over an action grid.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitField {
    grid: ActionGrid,
    values: Vec<f64>,
}

impl LogitField {
    pub fn new(grid: ActionGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Validation(format!(
                "{} logits for a grid of {} actions",
                values.len(),
                grid.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "non-finite logit {} at index {i}",
                values[i]
            )));
        }
        Ok(LogitField { grid, values })
    }

    pub fn grid(&self) -> &ActionGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    fn max(&self) -> f64 {
        self.values
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    fn is_constant(&self) -> bool {
        let first = self.values[0];
        self.values.iter().all(|&v| v == first)
    }

    /// Lowest index attaining the largest logit.
    pub fn argmax(&self) -> ActionIndex {
        let mut best = 0;
        for (i, &v) in self.values.iter().enumerate() {
            if v > self.values[best] {
                best = i;
            }
        }
        ActionIndex(best)
    }

    /// Logits divided by `t`, e.g. to bake a fitted temperature into stored data.
    pub fn scaled(&self, t: f64) -> Result<LogitField> {
        check_temperature(t)?;
        LogitField::new(
            self.grid.clone(),
            self.values.iter().map(|v| v / t).collect(),
        )
    }

    /// `ln Σ exp((f_j - max f) / t)`; the shift keeps every exponent ≤ 0.
    fn log_partition_shifted(&self, t: f64) -> f64 {
        let m = self.max();
        self.values
            .iter()
            .map(|&v| ((v - m) / t).exp())
            .sum::<f64>()
            .ln()
    }
}

/// Normalized probabilities over an action grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbField {
    grid: ActionGrid,
    values: Vec<f64>,
}

impl ProbField {
    pub const SUM_TOL: f64 = 1e-9;

    pub fn new(grid: ActionGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Validation(format!(
                "{} probabilities for a grid of {} actions",
                values.len(),
                grid.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Validation(format!(
                "probability {} at index {i} outside [0, 1]",
                values[i]
            )));
        }
        let total = pairwise_sum(&values);
        if (total - 1.0).abs() > Self::SUM_TOL {
            return Err(Error::Validation(format!(
                "probabilities sum to {total}, not 1"
            )));
        }
        Ok(ProbField { grid, values })
    }

    /// Scale non-negative weights to unit mass.
    pub fn normalize(grid: ActionGrid, mut weights: Vec<f64>) -> Result<Self> {
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Validation(
                "weights must be finite and non-negative".into(),
            ));
        }
        let total = pairwise_sum(&weights);
        if total <= 0.0 {
            return Err(Error::Validation("weights have zero total mass".into()));
        }
        weights.iter_mut().for_each(|w| *w /= total);
        ProbField::new(grid, weights)
    }

    pub fn grid(&self) -> &ActionGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

fn check_temperature(t: f64) -> Result<()> {
    if !(t.is_finite() && t > 0.0) {
        return Err(param(format!(
            "temperature must be positive and finite, got {t}"
        )));
    }
    Ok(())
}

fn tempered_softmax(f: &LogitField, t: f64) -> ProbField {
    let m = f.max();
    let mut values: Vec<f64> = f.values.iter().map(|&v| ((v - m) / t).exp()).collect();
    let total = pairwise_sum(&values);
    values.iter_mut().for_each(|v| *v /= total);
    ProbField {
        grid: f.grid.clone(),
        values,
    }
}

pub fn softmax(f: &LogitField) -> ProbField {
    tempered_softmax(f, 1.0)
}

pub fn apply_temperature(f: &LogitField, t: f64) -> Result<ProbField> {
    check_temperature(t)?;
    Ok(tempered_softmax(f, t))
}

/// Shannon entropy in nats, with `0 ln 0 = 0`.
pub fn entropy(p: &ProbField) -> f64 {
    let terms: Vec<f64> = p
        .values
        .iter()
        .map(|&x| if x > 0.0 { -x * x.ln() } else { 0.0 })
        .collect();
    pairwise_sum(&terms).max(0.0)
}

/// One labelled calibration example: the model's logits for an observation,
/// the expert's action and the task it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationSample {
    pub logits: LogitField,
    pub expert: ActionIndex,
    pub task_id: u32,
}

impl CalibrationSample {
    pub fn new(logits: LogitField, expert: ActionIndex, task_id: u32) -> Result<Self> {
        logits.grid().check(expert)?;
        Ok(CalibrationSample {
            logits,
            expert,
            task_id,
        })
    }

    /// `-ln p_expert` under temperature `t`, capped at `-ln PROB_FLOOR`.
    fn neg_log_likelihood(&self, t: f64) -> f64 {
        let f = &self.logits;
        let shifted = (f.values[self.expert.0] - f.max()) / t;
        (f.log_partition_shifted(t) - shifted).min(-PROB_FLOOR.ln())
    }

    /// Largest calibrated probability and whether the greedy pick is the expert.
    fn confidence(&self, t: f64) -> (f64, bool) {
        let conf = (-self.logits.log_partition_shifted(t)).exp();
        (conf, self.logits.argmax() == self.expert)
    }
}

fn check_data(data: &[CalibrationSample]) -> Result<()> {
    if data.is_empty() {
        return Err(param("calibration dataset is empty"));
    }
    Ok(())
}

/// Mean negative log-likelihood of the expert actions at temperature `t`.
pub fn nll(data: &[CalibrationSample], t: f64) -> Result<f64> {
    check_data(data)?;
    check_temperature(t)?;
    Ok(mean_nll(data, t))
}

fn mean_nll(data: &[CalibrationSample], t: f64) -> f64 {
    let terms: Vec<f64> = data.par_iter().map(|s| s.neg_log_likelihood(t)).collect();
    pairwise_sum(&terms) / data.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub t_min: f64,
    pub t_max: f64,
    /// Absolute tolerance on `ln T`.
    pub log_tol: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            t_min: 1e-2,
            t_max: 1e2,
            log_tol: 1e-5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemperatureModel {
    pub temperature: f64,
    pub final_nll: f64,
    pub iterations: u32,
    /// Set when every sample has constant logits, so the objective is flat in T.
    pub degenerate: bool,
}

pub fn fit_temperature(data: &[CalibrationSample]) -> Result<TemperatureModel> {
    fit_temperature_with(data, FitOptions::default())
}

pub fn fit_temperature_with(
    data: &[CalibrationSample],
    opts: FitOptions,
) -> Result<TemperatureModel> {
    check_data(data)?;
    if !(opts.t_min > 0.0 && opts.t_min < opts.t_max && opts.t_max.is_finite()) {
        return Err(param(format!(
            "invalid temperature bracket [{}, {}]",
            opts.t_min, opts.t_max
        )));
    }
    if opts.log_tol.is_nan() || opts.log_tol <= 0.0 {
        return Err(param("log_tol must be positive"));
    }
    if data.iter().all(|s| s.logits.is_constant()) {
        return Ok(TemperatureModel {
            temperature: 1.0,
            final_nll: mean_nll(data, 1.0),
            iterations: 0,
            degenerate: true,
        });
    }

    let objective = |u: f64| mean_nll(data, u.exp());
    let (u, iterations) = golden_section(objective, opts.t_min.ln(), opts.t_max.ln(), opts.log_tol);
    let temperature = u.exp().clamp(opts.t_min, opts.t_max);
    Ok(TemperatureModel {
        temperature,
        final_nll: mean_nll(data, temperature),
        iterations,
        degenerate: false,
    })
}

/// Golden-section search for a minimizer of `f` on `[a, b]`. Stops once the
/// bracket is narrower than `tol` and returns its midpoint and the number of
/// bracket reductions.
fn golden_section(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> (f64, u32) {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;

    let mut x1 = b - INV_PHI * (b - a);
    let mut x2 = a + INV_PHI * (b - a);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    let mut iterations = 0;
    while b - a > tol {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - INV_PHI * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + INV_PHI * (b - a);
            f2 = f(x2);
        }
        iterations += 1;
    }
    (0.5 * (a + b), iterations)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReliabilityBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    /// Zero for empty bins.
    pub mean_confidence: f64,
    /// Zero for empty bins.
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReliabilityTable {
    pub bins: Vec<ReliabilityBin>,
    pub total: usize,
}

impl ReliabilityTable {
    /// Count-weighted mean of `|accuracy - mean confidence|`.
    pub fn ece(&self) -> f64 {
        let n = self.total as f64;
        self.bins
            .iter()
            .filter(|b| b.count > 0)
            .map(|b| b.count as f64 / n * (b.accuracy - b.mean_confidence).abs())
            .sum()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "bin_lo,bin_hi,count,mean_confidence,accuracy")?;
        for b in &self.bins {
            writeln!(
                out,
                "{},{},{},{},{}",
                fmt_f64(b.lo),
                fmt_f64(b.hi),
                b.count,
                fmt_f64(b.mean_confidence),
                fmt_f64(b.accuracy)
            )?;
        }
        Ok(())
    }
}

/// Equal-width reliability bins on `[0, 1]`. A confidence of exactly 1 falls
/// in the top bin.
pub fn reliability_bins(
    data: &[CalibrationSample],
    t: f64,
    n_bins: usize,
) -> Result<ReliabilityTable> {
    check_data(data)?;
    check_temperature(t)?;
    if n_bins == 0 {
        return Err(param("n_bins must be at least 1"));
    }
    let scored: Vec<(f64, bool)> = data.par_iter().map(|s| s.confidence(t)).collect();

    let mut conf_sum = vec![0.0; n_bins];
    let mut correct = vec![0usize; n_bins];
    let mut count = vec![0usize; n_bins];
    for &(conf, ok) in &scored {
        let b = ((conf * n_bins as f64) as usize).min(n_bins - 1);
        conf_sum[b] += conf;
        correct[b] += ok as usize;
        count[b] += 1;
    }

    let bins = (0..n_bins)
        .map(|b| {
            let c = count[b];
            let (mean_confidence, accuracy) = if c > 0 {
                (conf_sum[b] / c as f64, correct[b] as f64 / c as f64)
            } else {
                (0.0, 0.0)
            };
            ReliabilityBin {
                lo: b as f64 / n_bins as f64,
                hi: (b + 1) as f64 / n_bins as f64,
                count: c,
                mean_confidence,
                accuracy,
            }
        })
        .collect();
    Ok(ReliabilityTable {
        bins,
        total: data.len(),
    })
}

pub fn ece(data: &[CalibrationSample], t: f64, n_bins: usize) -> Result<f64> {
    Ok(reliability_bins(data, t, n_bins)?.ece())
}

/// Largest calibrated-distribution entropy seen for each task id.
pub fn max_entropy_by_task(data: &[CalibrationSample], t: f64) -> Result<BTreeMap<u32, f64>> {
    check_temperature(t)?;
    let per_sample: Vec<(u32, f64)> = data
        .par_iter()
        .map(|s| (s.task_id, entropy(&tempered_softmax(&s.logits, t))))
        .collect();
    let mut out = BTreeMap::new();
    for (task, h) in per_sample {
        out.entry(task)
            .and_modify(|m: &mut f64| *m = m.max(h))
            .or_insert(h);
    }
    Ok(out)
}
