//! Temperature-scaled calibration of discrete-action policy outputs and
//! uncertainty-aware action selection by neighborhood aggregation.
//!
//! The crate is organized bottom-up:
//!
//! * [`action_space`]: grids, flat indexing, metrics and neighborhoods.
//! * [`calibration`]: softmax, temperature fitting, NLL, ECE, reliability
//!   tables and entropy.
//! * [`selection`]: greedy, exact and prefix-sum neighborhood selection, the
//!   threshold-and-window restricted search and Gaussian smoothing.
//! * [`simbench`]: a seeded synthetic pick-and-place benchmark with
//!   distractor spikes.
//! * [`io`]: the `UACL` dataset container, temperature files and PGM dumps.

pub mod action_space;
pub mod calibration;
pub mod error;
pub mod io;
pub mod numeric;
pub mod selection;
pub mod simbench;

pub use action_space::{distance, neighborhood, ActionGrid, ActionIndex, Metric, MetricKind};
pub use calibration::{
    apply_temperature, ece, entropy, fit_temperature, fit_temperature_with, max_entropy_by_task,
    nll, reliability_bins, softmax, CalibrationSample, FitOptions, LogitField, ProbField,
    ReliabilityBin, ReliabilityTable, TemperatureModel,
};
pub use error::{Error, Result};
pub use selection::{
    gaussian_select, greedy_select, select, ua_select, ua_select_fast, ua_select_restricted,
    SelectionConfig, SelectionMode, SelectionResult, SelectionWarning,
};
