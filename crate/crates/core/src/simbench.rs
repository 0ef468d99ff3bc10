//! Seeded synthetic pick-and-place benchmark.
//!
//! A world is a 2-axis grid holding rectangular target and distractor
//! footprints. The synthetic model puts a Gaussian bump of logits (peak 1)
//! on every target, adds per-cell Gaussian noise, and overwrites the centre
//! of the first `spike_count` distractors with a single high logit. Every
//! logit is then multiplied by `gain`, so the model is miscalibrated by a
//! known factor and the ideal temperature equals `gain`.
//!
//! Episode `i` of a run with base seed `s` uses seed
//! `splitmix64(s ^ splitmix64(i))`, which makes episodes independent of each
//! other and of evaluation order.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::action_space::{ActionGrid, ActionIndex};
use crate::calibration::{apply_temperature, CalibrationSample, LogitField};
use crate::error::{param, Error, Result};
use crate::numeric::fmt_f64;
use crate::selection::{select, SelectionConfig, SelectionMode};

const NOISE_STREAM: u64 = 0x6e6f_6973_6520_7631;
const LABEL_STREAM: u64 = 0x6c61_6265_6c20_7631;
const CALIBRATION_STREAM: u64 = 0x6361_6c69_6220_7631;

pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn episode_seed(base_seed: u64, index: u64) -> u64 {
    splitmix64(base_seed ^ splitmix64(index))
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(seed ^ stream))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectKind {
    Target,
    Distractor,
}

/// Axis-aligned footprint covering `center ± half` on each axis, inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub center: [usize; 2],
    pub half: [usize; 2],
    pub kind: ObjectKind,
}

impl Rect {
    pub fn contains(&self, coords: &[usize]) -> bool {
        (0..2).all(|a| coords[a].abs_diff(self.center[a]) <= self.half[a])
    }

    /// True when the footprints, each grown by `gap` cells, intersect.
    pub fn near(&self, other: &Rect, gap: usize) -> bool {
        (0..2)
            .all(|a| self.center[a].abs_diff(other.center[a]) <= self.half[a] + other.half[a] + gap)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskConfig {
    pub dims: [usize; 2],
    pub targets: usize,
    pub distractors: usize,
    /// Inclusive range of target half-extents, in cells.
    pub target_half: [usize; 2],
    /// Inclusive range of distractor half-extents, in cells.
    pub distractor_half: [usize; 2],
    /// Minimum number of free cells between any two footprints.
    pub gap: usize,
    /// Placement attempts per object before giving up.
    pub max_retries: usize,
}

impl Default for TaskConfig {
    fn default() -> Self {
        TaskConfig {
            dims: [64, 64],
            targets: 1,
            distractors: 1,
            target_half: [2, 4],
            distractor_half: [0, 1],
            gap: 2,
            max_retries: 1000,
        }
    }
}

impl TaskConfig {
    fn validate(&self) -> Result<()> {
        if self.targets == 0 {
            return Err(param("a world needs at least one target"));
        }
        for (name, [lo, hi]) in [
            ("target", self.target_half),
            ("distractor", self.distractor_half),
        ] {
            if lo > hi {
                return Err(param(format!(
                    "{name} half-extent range [{lo}, {hi}] is empty"
                )));
            }
            if self.dims.iter().any(|&d| 2 * hi + 1 > d) {
                return Err(param(format!("{name} footprint does not fit the grid")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldState {
    pub grid: ActionGrid,
    /// Targets first, then distractors.
    pub objects: Vec<Rect>,
    pub episode_seed: u64,
}

impl WorldState {
    pub fn targets(&self) -> impl Iterator<Item = &Rect> {
        self.objects.iter().filter(|o| o.kind == ObjectKind::Target)
    }

    pub fn distractors(&self) -> impl Iterator<Item = &Rect> {
        self.objects
            .iter()
            .filter(|o| o.kind == ObjectKind::Distractor)
    }

    /// Kind of the footprint containing `idx`, if any.
    pub fn classify(&self, idx: ActionIndex) -> Result<Option<ObjectKind>> {
        let coords = self.grid.coords_of(idx)?;
        Ok(self
            .objects
            .iter()
            .find(|o| o.contains(&coords))
            .map(|o| o.kind))
    }

    /// Centre of the first target.
    pub fn expert(&self) -> ActionIndex {
        let t = self
            .targets()
            .next()
            .expect("worlds hold at least one target");
        self.grid
            .flat_index(&t.center)
            .expect("centres lie on the grid")
    }
}

pub fn make_world(seed: u64, task: &TaskConfig) -> Result<WorldState> {
    task.validate()?;
    let grid = ActionGrid::new(&task.dims)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut objects: Vec<Rect> = Vec::with_capacity(task.targets + task.distractors);
    let plan = std::iter::repeat_n((ObjectKind::Target, task.target_half), task.targets).chain(
        std::iter::repeat_n(
            (ObjectKind::Distractor, task.distractor_half),
            task.distractors,
        ),
    );
    for (n, (kind, [lo, hi])) in plan.enumerate() {
        let mut placed = None;
        for _ in 0..task.max_retries {
            let half = [rng.random_range(lo..=hi), rng.random_range(lo..=hi)];
            let center = [
                rng.random_range(half[0]..task.dims[0] - half[0]),
                rng.random_range(half[1]..task.dims[1] - half[1]),
            ];
            let rect = Rect { center, half, kind };
            if objects.iter().all(|o| !o.near(&rect, task.gap)) {
                placed = Some(rect);
                break;
            }
        }
        match placed {
            Some(r) => objects.push(r),
            None => {
                return Err(Error::Generation(format!(
                    "could not place object {n} after {} attempts",
                    task.max_retries
                )))
            }
        }
    }
    Ok(WorldState {
        grid,
        objects,
        episode_seed: seed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthModelConfig {
    /// Multiplier applied to every logit; the ideal temperature.
    pub gain: f64,
    pub blob_sigma: f64,
    /// Pre-gain logit written at each spiked distractor centre.
    pub spike_logit: f64,
    pub spike_count: usize,
    pub noise_std: f64,
}

impl Default for SynthModelConfig {
    fn default() -> Self {
        SynthModelConfig {
            gain: 1.0,
            blob_sigma: 2.0,
            spike_logit: 1.2,
            spike_count: 0,
            noise_std: 0.0,
        }
    }
}

impl SynthModelConfig {
    fn validate(&self) -> Result<()> {
        if !(self.gain.is_finite() && self.gain > 0.0) {
            return Err(param(format!("gain must be positive, got {}", self.gain)));
        }
        if !(self.blob_sigma.is_finite() && self.blob_sigma > 0.0) {
            return Err(param(format!(
                "blob_sigma must be positive, got {}",
                self.blob_sigma
            )));
        }
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return Err(param(format!(
                "noise_std must be non-negative, got {}",
                self.noise_std
            )));
        }
        if !self.spike_logit.is_finite() {
            return Err(param("spike_logit must be finite"));
        }
        Ok(())
    }
}

/// Logits of the synthetic model for `world`, and the expert action.
pub fn synthesize_logits(
    world: &WorldState,
    model: &SynthModelConfig,
) -> Result<(LogitField, ActionIndex)> {
    model.validate()?;
    let grid = &world.grid;
    let [rows, cols] = [grid.dims()[0], grid.dims()[1]];
    let inv_two_var = 1.0 / (2.0 * model.blob_sigma * model.blob_sigma);
    let targets: Vec<&Rect> = world.targets().collect();

    let mut rng = rng_for(world.episode_seed, NOISE_STREAM);
    let noise = Normal::new(0.0, model.noise_std).map_err(|e| param(e.to_string()))?;
    let mut values = Vec::with_capacity(grid.len());
    for r in 0..rows {
        for c in 0..cols {
            let blob: f64 = targets
                .iter()
                .map(|t| {
                    let dr = r as f64 - t.center[0] as f64;
                    let dc = c as f64 - t.center[1] as f64;
                    (-(dr * dr + dc * dc) * inv_two_var).exp()
                })
                .sum();
            let eps = if model.noise_std > 0.0 {
                noise.sample(&mut rng)
            } else {
                0.0
            };
            values.push(model.gain * (blob + eps));
        }
    }
    for d in world.distractors().take(model.spike_count) {
        values[d.center[0] * cols + d.center[1]] = model.gain * model.spike_logit;
    }
    Ok((LogitField::new(grid.clone(), values)?, world.expert()))
}

/// Inverse-CDF draw from a probability vector.
fn sample_index(probs: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    Clean,
    DistractorEasy,
    DistractorHard,
}

impl Preset {
    pub fn as_str(self) -> &'static str {
        match self {
            Preset::Clean => "clean",
            Preset::DistractorEasy => "distractor-easy",
            Preset::DistractorHard => "distractor-hard",
        }
    }

    /// World layout and synthetic model for the preset. All presets share an
    /// 8x overconfident model; they differ in distractors and noise.
    pub fn configs(self) -> (TaskConfig, SynthModelConfig) {
        let task = TaskConfig::default();
        let model = SynthModelConfig {
            gain: 8.0,
            ..SynthModelConfig::default()
        };
        match self {
            Preset::Clean => (
                TaskConfig {
                    distractors: 0,
                    ..task
                },
                model,
            ),
            Preset::DistractorEasy => (
                task,
                SynthModelConfig {
                    spike_logit: 0.9,
                    spike_count: 1,
                    noise_std: 0.1,
                    ..model
                },
            ),
            Preset::DistractorHard => (
                task,
                SynthModelConfig {
                    spike_logit: 1.2,
                    spike_count: 1,
                    noise_std: 0.1,
                    ..model
                },
            ),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "clean" => Ok(Preset::Clean),
            "distractor-easy" => Ok(Preset::DistractorEasy),
            "distractor-hard" => Ok(Preset::DistractorHard),
            other => Err(param(format!("unknown preset '{other}'"))),
        }
    }
}

/// Selection config for `mode` derived from `base`. The prefix-sum path only
/// supports the Chebyshev metric, so `ua-fast` switches to it.
pub fn mode_config(base: &SelectionConfig, mode: SelectionMode) -> SelectionConfig {
    let mut cfg = base.clone().with_mode(mode);
    if mode == SelectionMode::UaFast {
        cfg.metric = crate::action_space::Metric::chebyshev();
    }
    cfg
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeOutcome {
    pub episode: u64,
    pub seed: u64,
    pub mode: SelectionMode,
    pub chosen: ActionIndex,
    pub expert: ActionIndex,
    /// Chosen cell lies inside a target footprint.
    pub success: bool,
    /// Chosen cell lies inside a distractor footprint.
    pub hit_distractor: bool,
    pub score: f64,
    pub margin: f64,
}

fn classify_outcome(
    world: &WorldState,
    cfg: &SelectionConfig,
    probs: &crate::calibration::ProbField,
    episode: u64,
) -> Result<EpisodeOutcome> {
    let r = select(probs, cfg)?;
    let kind = world.classify(r.action)?;
    Ok(EpisodeOutcome {
        episode,
        seed: world.episode_seed,
        mode: cfg.mode,
        chosen: r.action,
        expert: world.expert(),
        success: kind == Some(ObjectKind::Target),
        hit_distractor: kind == Some(ObjectKind::Distractor),
        score: r.aggregated_score,
        margin: r.runner_up_gap,
    })
}

/// Logits, temperature, selection, then footprint classification.
pub fn run_episode(
    world: &WorldState,
    model: &SynthModelConfig,
    cfg: &SelectionConfig,
    temperature: f64,
) -> Result<EpisodeOutcome> {
    let (logits, _) = synthesize_logits(world, model)?;
    let probs = apply_temperature(&logits, temperature)?;
    classify_outcome(world, cfg, &probs, 0)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModeSummary {
    pub mode: SelectionMode,
    pub episodes: usize,
    pub successes: usize,
    pub success_rate: f64,
    /// `sqrt(p (1 - p) / n)`.
    pub stderr: f64,
    pub distractor_hits: usize,
    pub mean_margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    /// One row per selection config, in the order given.
    pub rows: Vec<ModeSummary>,
    /// Episode-major: all configs of episode 0, then episode 1, ...
    pub outcomes: Vec<EpisodeOutcome>,
}

impl BenchReport {
    pub fn row(&self, mode: SelectionMode) -> Option<&ModeSummary> {
        self.rows.iter().find(|r| r.mode == mode)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(
            out,
            "mode,episodes,successes,success_rate,stderr,distractor_hits"
        )?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                r.mode,
                r.episodes,
                r.successes,
                fmt_f64(r.success_rate),
                fmt_f64(r.stderr),
                r.distractor_hits
            )?;
        }
        Ok(())
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for o in &self.outcomes {
            serde_json::to_writer(&mut out, o)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Run `n_episodes` seeded episodes and score every config on each.
pub fn evaluate(
    n_episodes: usize,
    base_seed: u64,
    task: &TaskConfig,
    model: &SynthModelConfig,
    configs: &[SelectionConfig],
    temperature: f64,
) -> Result<BenchReport> {
    if n_episodes == 0 {
        return Err(param("n_episodes must be at least 1"));
    }
    if configs.is_empty() {
        return Err(param("no selection configs given"));
    }
    for cfg in configs {
        cfg.validate()?;
    }
    let per_episode: Vec<Vec<EpisodeOutcome>> = (0..n_episodes as u64)
        .into_par_iter()
        .map(|i| {
            let world = make_world(episode_seed(base_seed, i), task)?;
            let (logits, _) = synthesize_logits(&world, model)?;
            let probs = apply_temperature(&logits, temperature)?;
            configs
                .iter()
                .map(|cfg| classify_outcome(&world, cfg, &probs, i))
                .collect()
        })
        .collect::<Result<_>>()?;

    let n = n_episodes as f64;
    let rows = configs
        .iter()
        .enumerate()
        .map(|(c, cfg)| {
            let runs = per_episode.iter().map(|e| &e[c]);
            let successes = runs.clone().filter(|o| o.success).count();
            let distractor_hits = runs.clone().filter(|o| o.hit_distractor).count();
            let margin_sum: f64 = runs.map(|o| o.margin).sum();
            let rate = successes as f64 / n;
            ModeSummary {
                mode: cfg.mode,
                episodes: n_episodes,
                successes,
                success_rate: rate,
                stderr: (rate * (1.0 - rate) / n).sqrt(),
                distractor_hits,
                mean_margin: margin_sum / n,
            }
        })
        .collect();
    Ok(BenchReport {
        rows,
        outcomes: per_episode.into_iter().flatten().collect(),
    })
}

/// Calibration samples from benchmark worlds: each sample stores the
/// synthetic model's logits and a label drawn from `softmax(logits / gain)`,
/// the distribution the model would report if it were calibrated.
pub fn calibration_set(
    n: usize,
    base_seed: u64,
    task: &TaskConfig,
    model: &SynthModelConfig,
) -> Result<Vec<CalibrationSample>> {
    (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let seed = episode_seed(base_seed ^ CALIBRATION_STREAM, i);
            let world = make_world(seed, task)?;
            let (logits, _) = synthesize_logits(&world, model)?;
            let truth = apply_temperature(&logits, model.gain)?;
            let label = sample_index(truth.values(), &mut rng_for(seed, LABEL_STREAM));
            CalibrationSample::new(logits, ActionIndex(label), 0)
        })
        .collect()
}

/// Parameters for [`gain_dataset`].
#[derive(Debug, Clone, PartialEq)]
pub struct GainDatasetConfig {
    pub samples: usize,
    pub dims: Vec<usize>,
    pub gain: f64,
    /// Standard deviation of the pre-gain logits.
    pub logit_std: f64,
    /// Samples are assigned task ids `0..tasks` round-robin.
    pub tasks: u32,
    pub seed: u64,
}

impl Default for GainDatasetConfig {
    fn default() -> Self {
        GainDatasetConfig {
            samples: 2000,
            dims: vec![64],
            gain: 2.0,
            logit_std: 2.0,
            tasks: 1,
            seed: 42,
        }
    }
}

/// Random logit fields with a known miscalibration: draw `f ~ N(0, std^2)`
/// per cell, a label from `softmax(f)`, and store `gain * f`.
pub fn gain_dataset(cfg: &GainDatasetConfig) -> Result<Vec<CalibrationSample>> {
    if !(cfg.gain.is_finite() && cfg.gain > 0.0) {
        return Err(param(format!("gain must be positive, got {}", cfg.gain)));
    }
    if cfg.tasks == 0 {
        return Err(param("tasks must be at least 1"));
    }
    let grid = ActionGrid::new(&cfg.dims)?;
    let normal = Normal::new(0.0, cfg.logit_std).map_err(|e| param(e.to_string()))?;
    (0..cfg.samples as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(episode_seed(cfg.seed, i));
            let f: Vec<f64> = (0..grid.len()).map(|_| normal.sample(&mut rng)).collect();
            let truth = crate::calibration::softmax(&LogitField::new(grid.clone(), f.clone())?);
            let label = sample_index(truth.values(), &mut rng);
            let stored = LogitField::new(grid.clone(), f.iter().map(|v| v * cfg.gain).collect())?;
            CalibrationSample::new(stored, ActionIndex(label), (i % cfg.tasks as u64) as u32)
        })
        .collect()
}
