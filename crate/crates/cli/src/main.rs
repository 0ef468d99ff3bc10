//! `uacal`: calibrate, inspect and benchmark uncertainty-aware action selection.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use uaction::io::{
    checksum_hex, decode_dataset, fnv1a64, write_dataset, write_pgm, DatasetReader, TemperatureFile,
};
use uaction::numeric::fmt_f64;
use uaction::selection::{DEFAULT_K, DEFAULT_SIGMA, DEFAULT_TAU, DEFAULT_WINDOW};
use uaction::simbench::{
    calibration_set, evaluate, gain_dataset, make_world, mode_config, synthesize_logits,
    GainDatasetConfig, Preset,
};
use uaction::{
    apply_temperature, fit_temperature, max_entropy_by_task, reliability_bins, select, ua_select,
    ua_select_fast, ActionGrid, CalibrationSample, Error, Metric, MetricKind, ProbField,
    SelectionConfig, SelectionMode,
};

const EXIT_FORMAT: u8 = 2;
const EXIT_PARAMETER: u8 = 3;
const EXIT_DEGENERATE: u8 = 4;

#[derive(Parser)]
#[command(
    name = "uacal",
    version,
    about = "Temperature calibration and uncertainty-aware action selection"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a temperature to a dataset by minimizing NLL.
    Calibrate {
        #[arg(long)]
        dataset: PathBuf,
        /// Task id to fit on, or `all`.
        #[arg(long, default_value = "all")]
        task: String,
        #[arg(long)]
        out: PathBuf,
        /// Exit with status 4 when the fit is degenerate.
        #[arg(long)]
        strict: bool,
    },
    /// Reliability table, ECE and per-task maximum entropy.
    Report {
        #[arg(long)]
        dataset: PathBuf,
        /// Temperature file or a literal temperature.
        #[arg(long, default_value = "1.0")]
        temperature: String,
        #[arg(long, default_value_t = uaction::calibration::DEFAULT_BINS)]
        bins: usize,
        /// Reliability table CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Select an action for one dataset record.
    Select {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        index: u64,
        #[arg(long, default_value = "ua")]
        mode: SelectionMode,
        #[arg(long, default_value_t = DEFAULT_TAU)]
        tau: f64,
        /// Probability threshold for restricted search; defaults to 1/|A|.
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long, default_value_t = DEFAULT_K)]
        k: usize,
        #[arg(long, default_value_t = DEFAULT_WINDOW)]
        window: usize,
        #[arg(long, default_value_t = DEFAULT_SIGMA)]
        sigma: f64,
        #[arg(long, default_value = "1.0")]
        temperature: String,
        #[arg(long, default_value = "euclidean")]
        metric: MetricKind,
    },
    /// Run the synthetic distractor benchmark.
    Bench {
        #[arg(long, default_value_t = 1000)]
        episodes: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value = "distractor-hard")]
        preset: Preset,
        /// Comma-separated selection modes.
        #[arg(
            long,
            value_delimiter = ',',
            default_value = "greedy,ua,ua-fast,ua-restricted,gaussian"
        )]
        modes: Vec<SelectionMode>,
        #[arg(long, default_value_t = DEFAULT_TAU)]
        tau: f64,
        /// `fit` to calibrate on held-out worlds, or a literal temperature.
        #[arg(long, default_value = "fit")]
        temperature: String,
        #[arg(long, default_value_t = 1000)]
        cal_samples: usize,
        /// Summary CSV; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Per-episode JSON lines.
        #[arg(long)]
        log: Option<PathBuf>,
        /// PGM image of the first episode's tempered probabilities.
        #[arg(long)]
        heatmap: Option<PathBuf>,
    },
    /// Time exact against prefix-sum neighborhood aggregation.
    Perf {
        /// Comma-separated grid extents.
        #[arg(long, value_delimiter = ',', default_value = "100,100,100")]
        grid: Vec<usize>,
        #[arg(long, default_value_t = 4.5)]
        tau: f64,
        #[arg(long, default_value_t = 5)]
        repeat: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write a synthetic dataset whose logits are `gain` times too sharp.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2000)]
        samples: usize,
        #[arg(long, value_delimiter = ',', default_value = "64")]
        dims: Vec<usize>,
        #[arg(long, default_value_t = 2.0)]
        gain: f64,
        #[arg(long, default_value_t = 2.0)]
        logit_std: f64,
        #[arg(long, default_value_t = 1)]
        tasks: u32,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
}

enum Failure {
    Lib(Error),
    Degenerate,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Lib(Error::Io(e))
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_PARAMETER)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let mut stdout = std::io::stdout().lock();
    match run(cli.command, &mut stdout).and_then(|()| Ok(stdout.flush()?)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Degenerate) => {
            eprintln!("error: degenerate temperature fit (constant logits)");
            ExitCode::from(EXIT_DEGENERATE)
        }
        Err(Failure::Lib(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_format() {
                EXIT_FORMAT
            } else {
                EXIT_PARAMETER
            })
        }
    }
}

fn run(command: Command, out: &mut impl Write) -> Outcome {
    match command {
        Command::Calibrate {
            dataset,
            task,
            out: path,
            strict,
        } => calibrate(&dataset, &task, &path, strict, out),
        Command::Report {
            dataset,
            temperature,
            bins,
            out: csv,
        } => report(&dataset, &temperature, bins, csv.as_deref(), out),
        Command::Select {
            dataset,
            index,
            mode,
            tau,
            alpha,
            k,
            window,
            sigma,
            temperature,
            metric,
        } => {
            let cfg = SelectionConfig {
                metric: Metric::new(metric),
                tau,
                alpha,
                k,
                window,
                sigma,
                mode,
            };
            select_record(&dataset, index, &cfg, &temperature, out)
        }
        Command::Bench {
            episodes,
            seed,
            preset,
            modes,
            tau,
            temperature,
            cal_samples,
            out: csv,
            log,
            heatmap,
        } => {
            let opts = BenchOptions {
                episodes,
                seed,
                preset,
                modes,
                tau,
                temperature,
                cal_samples,
            };
            bench(
                &opts,
                csv.as_deref(),
                log.as_deref(),
                heatmap.as_deref(),
                out,
            )
        }
        Command::Perf {
            grid,
            tau,
            repeat,
            seed,
        } => perf(&grid, tau, repeat, seed, out),
        Command::Synth {
            out: path,
            samples,
            dims,
            gain,
            logit_std,
            tasks,
            seed,
        } => {
            let cfg = GainDatasetConfig {
                samples,
                dims,
                gain,
                logit_std,
                tasks,
                seed,
            };
            synth(&cfg, &path, out)
        }
    }
}

/// Samples plus the checksum of the bytes they were decoded from.
fn load(path: &Path) -> Result<(ActionGrid, Vec<CalibrationSample>, u64), Error> {
    let bytes = std::fs::read(path)?;
    let (grid, samples) = decode_dataset(&bytes)?;
    Ok((grid, samples, fnv1a64(&bytes)))
}

/// A literal positive number, or the path of a temperature file.
fn resolve_temperature(arg: &str, checksum: Option<u64>) -> Result<f64, Error> {
    if let Ok(t) = arg.parse::<f64>() {
        if !(t.is_finite() && t > 0.0) {
            return Err(Error::Parameter(format!(
                "temperature must be positive, got {arg}"
            )));
        }
        return Ok(t);
    }
    let file = TemperatureFile::read(arg)?;
    if let Some(sum) = checksum {
        if file.dataset_checksum != checksum_hex(sum) {
            eprintln!(
                "warning: {arg} was fitted on dataset {}, not this one ({})",
                file.dataset_checksum,
                checksum_hex(sum)
            );
        }
    }
    Ok(file.temperature)
}

fn calibrate(
    dataset: &Path,
    task: &str,
    path: &Path,
    strict: bool,
    out: &mut impl Write,
) -> Outcome {
    let (_, mut samples, sum) = load(dataset)?;
    if task != "all" {
        let id: u32 = task.parse().map_err(|_| {
            Error::Parameter(format!("task must be an integer id or 'all', got '{task}'"))
        })?;
        samples.retain(|s| s.task_id == id);
        if samples.is_empty() {
            return Err(Error::Parameter(format!("no samples with task id {id}")).into());
        }
    }
    let model = fit_temperature(&samples)?;
    TemperatureFile::new(&model, task, sum).write(path)?;
    writeln!(out, "samples={}", samples.len())?;
    writeln!(out, "temperature={}", fmt_f64(model.temperature))?;
    writeln!(out, "final_nll={}", fmt_f64(model.final_nll))?;
    writeln!(out, "iterations={}", model.iterations)?;
    writeln!(out, "degenerate={}", model.degenerate)?;
    writeln!(out, "dataset_checksum={}", checksum_hex(sum))?;
    if model.degenerate {
        eprintln!("warning: all logits are constant; the temperature is arbitrary");
        if strict {
            return Err(Failure::Degenerate);
        }
    }
    Ok(())
}

fn report(
    dataset: &Path,
    temperature: &str,
    bins: usize,
    csv: Option<&Path>,
    out: &mut impl Write,
) -> Outcome {
    let (_, samples, sum) = load(dataset)?;
    let t = resolve_temperature(temperature, Some(sum))?;
    let table = reliability_bins(&samples, t, bins)?;
    if let Some(path) = csv {
        let mut w = BufWriter::new(File::create(path)?);
        table.write_csv(&mut w)?;
        w.flush()?;
    }
    writeln!(out, "samples={}", samples.len())?;
    writeln!(out, "temperature={}", fmt_f64(t))?;
    writeln!(out, "bins={bins}")?;
    writeln!(out, "ece={}", fmt_f64(table.ece()))?;
    for (task, h) in max_entropy_by_task(&samples, t)? {
        writeln!(out, "max_entropy[{task}]={}", fmt_f64(h))?;
    }
    Ok(())
}

fn select_record(
    dataset: &Path,
    index: u64,
    cfg: &SelectionConfig,
    temperature: &str,
    out: &mut impl Write,
) -> Outcome {
    let sum = fnv1a64(&std::fs::read(dataset)?);
    let t = resolve_temperature(temperature, Some(sum))?;
    let mut reader = DatasetReader::open(dataset)?;
    let sample = reader.record(index)?;
    let probs = apply_temperature(&sample.logits, t)?;
    let r = select(&probs, cfg)?;
    let coords = probs.grid().coords_of(r.action)?;
    let coords: Vec<String> = coords.iter().map(|c| c.to_string()).collect();
    writeln!(out, "mode={}", cfg.mode)?;
    writeln!(out, "action={}", r.action)?;
    writeln!(out, "coords={}", coords.join(","))?;
    writeln!(out, "score={}", fmt_f64(r.aggregated_score))?;
    writeln!(out, "margin={}", fmt_f64(r.runner_up_gap))?;
    writeln!(out, "candidates={}", r.candidates_evaluated)?;
    if let Some(w) = r.warning {
        writeln!(out, "warning={w:?}")?;
    }
    Ok(())
}

struct BenchOptions {
    episodes: usize,
    seed: u64,
    preset: Preset,
    modes: Vec<SelectionMode>,
    tau: f64,
    temperature: String,
    cal_samples: usize,
}

fn bench(
    opts: &BenchOptions,
    csv: Option<&Path>,
    log: Option<&Path>,
    heatmap: Option<&Path>,
    out: &mut impl Write,
) -> Outcome {
    let (task, model) = opts.preset.configs();
    let t = if opts.temperature == "fit" {
        if opts.cal_samples == 0 {
            return Err(Error::Parameter("--cal-samples must be at least 1 to fit".into()).into());
        }
        fit_temperature(&calibration_set(
            opts.cal_samples,
            opts.seed,
            &task,
            &model,
        )?)?
        .temperature
    } else {
        resolve_temperature(&opts.temperature, None)?
    };
    let base = SelectionConfig {
        tau: opts.tau,
        ..SelectionConfig::default()
    };
    let configs: Vec<SelectionConfig> = opts.modes.iter().map(|&m| mode_config(&base, m)).collect();
    let report = evaluate(opts.episodes, opts.seed, &task, &model, &configs, t)?;

    eprintln!("preset={} temperature={}", opts.preset, fmt_f64(t));
    match csv {
        Some(path) => {
            let mut w = BufWriter::new(File::create(path)?);
            report.write_csv(&mut w)?;
            w.flush()?;
        }
        None => report.write_csv(&mut *out)?,
    }
    if let Some(path) = log {
        let mut w = BufWriter::new(File::create(path)?);
        report.write_jsonl(&mut w)?;
        w.flush()?;
    }
    if let Some(path) = heatmap {
        let world = make_world(uaction::simbench::episode_seed(opts.seed, 0), &task)?;
        let (logits, _) = synthesize_logits(&world, &model)?;
        let probs = apply_temperature(&logits, t)?;
        let mut w = BufWriter::new(File::create(path)?);
        write_pgm(&mut w, probs.grid(), probs.values())?;
        w.flush()?;
    }
    Ok(())
}

fn perf(dims: &[usize], tau: f64, repeat: usize, seed: u64, out: &mut impl Write) -> Outcome {
    if repeat == 0 {
        return Err(Error::Parameter("--repeat must be at least 1".into()).into());
    }
    let grid = ActionGrid::new(dims)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights: Vec<f64> = (0..grid.len()).map(|_| rng.random()).collect();
    let probs = ProbField::normalize(grid, weights)?;
    let cfg = SelectionConfig {
        metric: Metric::chebyshev(),
        tau,
        ..SelectionConfig::default()
    };

    let time = |f: &dyn Fn() -> uaction::Result<uaction::SelectionResult>| -> uaction::Result<(f64, uaction::SelectionResult)> {
        let mut times = Vec::with_capacity(repeat);
        let mut last = None;
        for _ in 0..repeat {
            let start = Instant::now();
            last = Some(f()?);
            times.push(start.elapsed().as_secs_f64() * 1e3);
        }
        times.sort_by(f64::total_cmp);
        Ok((times[repeat / 2], last.expect("repeat >= 1")))
    };
    let (exact_ms, exact) = time(&|| ua_select(&probs, &cfg))?;
    let (fast_ms, fast) = time(&|| ua_select_fast(&probs, &cfg))?;

    writeln!(out, "cells={}", probs.grid().len())?;
    writeln!(out, "exact_ms={exact_ms:.3}")?;
    writeln!(out, "fast_ms={fast_ms:.3}")?;
    writeln!(out, "speedup={:.1}", exact_ms / fast_ms)?;
    writeln!(out, "same_action={}", exact.action == fast.action)?;
    writeln!(
        out,
        "score_diff={:.3e}",
        (exact.aggregated_score - fast.aggregated_score).abs()
    )?;
    Ok(())
}

fn synth(cfg: &GainDatasetConfig, path: &Path, out: &mut impl Write) -> Outcome {
    let samples = gain_dataset(cfg)?;
    let grid = ActionGrid::new(&cfg.dims)?;
    let sum = write_dataset(path, &grid, &samples)?;
    writeln!(out, "samples={}", samples.len())?;
    writeln!(out, "dataset_checksum={}", checksum_hex(sum))?;
    Ok(())
}
