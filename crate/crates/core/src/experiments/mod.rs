//! Seeded experiment harness: prediction and control runs, run statistics,
//! CSV output and the randomized checks of the operator theory.
//!
//! Run `r` of every experiment draws from `ChaCha8Rng::seed_from_u64(seed + r)`,
//! so variants of one experiment share random numbers run by run. Runs execute
//! on the rayon pool and are merged in run order, which makes parallel and
//! serial execution byte-identical.

mod control;
mod prediction;
mod stats;
mod sweep;
mod theory;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};

pub use control::{run_control_experiment, run_control_variant, ControlConfig, ControlVariant, SigmaSetting};
pub use prediction::{
    default_alpha, random_walk_rms, run_prediction_experiment, run_prediction_variant, sigma_grid,
    PredictionConfig, ALPHA_ACCUMULATING, ALPHA_REPLACING,
};
pub use stats::{mean_confidence, moving_average, summarize, SummaryStats};
pub use sweep::{run_sweep, write_sweep_csv, SweepConfig, SweepRow};
pub use theory::{
    verify_theory, CheckOutcome, ConvergenceConfig, Measurement, TheoryConfig, TheoryReport,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    RmsError,
    EpisodeReturn,
    SmoothedReturn,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::RmsError => "rms_error",
            Metric::EpisodeReturn => "episode_return",
            Metric::SmoothedReturn => "smoothed_return",
        }
    }
}

/// One `(run, episode, metric)` measurement. Episodes are numbered from 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExperimentRecord {
    pub run: usize,
    pub episode: usize,
    pub metric: Metric,
    pub value: f64,
}

/// All records of one experiment variant, ordered by run, then episode.
#[derive(Debug, Clone, PartialEq)]
pub struct VariantRecords {
    pub label: String,
    pub records: Vec<ExperimentRecord>,
}

impl VariantRecords {
    /// Per-run series of `metric`, runs in index order.
    pub fn series(&self, metric: Metric) -> Vec<Vec<f64>> {
        let mut out: Vec<Vec<f64>> = Vec::new();
        for r in self.records.iter().filter(|r| r.metric == metric) {
            if out.len() <= r.run {
                out.resize_with(r.run + 1, Vec::new);
            }
            out[r.run].push(r.value);
        }
        out
    }

    /// Across-run mean of `metric` at each episode index.
    pub fn episode_means(&self, metric: Metric) -> Vec<f64> {
        let series = self.series(metric);
        let episodes = series.iter().map(Vec::len).min().unwrap_or(0);
        (0..episodes)
            .map(|e| series.iter().map(|s| s[e]).sum::<f64>() / series.len() as f64)
            .collect()
    }
}

/// Generator for run `run` of an experiment seeded with `seed`.
pub fn run_rng(seed: u64, run: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_add(run as u64))
}

pub(crate) fn run_parallel<T, F>(runs: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    (0..runs).into_par_iter().map(f).collect()
}

pub(crate) fn check_counts(runs: usize, episodes: usize) -> Result<()> {
    if runs == 0 || episodes == 0 {
        return Err(Error::Config("runs and episodes must be at least 1".into()));
    }
    Ok(())
}

pub fn write_records<W: Write>(writer: W, records: &[ExperimentRecord]) -> Result<()> {
    let mut csv = csv::Writer::from_writer(writer);
    csv.write_record(["run", "episode", "metric", "value"])?;
    for r in records {
        csv.write_record([r.run.to_string(), r.episode.to_string(), r.metric.name().to_string(), r.value.to_string()])?;
    }
    csv.flush()?;
    Ok(())
}

/// Writes `<dir>/<experiment>-<label>.csv` per variant and returns the paths.
pub fn write_variants(dir: &Path, experiment: &str, variants: &[VariantRecords]) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    variants
        .iter()
        .map(|v| {
            let path = dir.join(format!("{experiment}-{}.csv", v.label));
            write_records(fs::File::create(&path)?, &v.records)?;
            Ok(path)
        })
        .collect()
}

/// Writes `<dir>/<experiment>-metadata.toml` describing the configuration.
pub fn write_metadata<C: Serialize>(dir: &Path, experiment: &str, config: &C) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let path = dir.join(format!("{experiment}-metadata.toml"));
    let text = toml::to_string(config).map_err(|e| Error::Config(e.to_string()))?;
    fs::write(&path, text)?;
    Ok(path)
}
