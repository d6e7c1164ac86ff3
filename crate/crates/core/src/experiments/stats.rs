use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::{ExperimentRecord, Metric};
use crate::error::{Error, Result};

/// Mean with a two-sided 95% Student-t interval; `lower <= mean <= upper`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SummaryStats {
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
    pub n: usize,
}

impl SummaryStats {
    pub fn contains(&self, x: f64) -> bool {
        self.lower <= x && x <= self.upper
    }

    pub fn overlaps(&self, other: &SummaryStats) -> bool {
        self.lower <= other.upper && other.lower <= self.upper
    }
}

impl fmt::Display for SummaryStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{mean: {:.4}, lb: {:.4}, ub: {:.4}, n: {}}}", self.mean, self.lower, self.upper, self.n)
    }
}

/// 95% Student-t interval of the mean of `values` (at least two).
///
/// Values are summed in sorted order, so the result does not depend on their order.
pub fn mean_confidence(values: &[f64]) -> Result<SummaryStats> {
    let n = values.len();
    if n < 2 {
        return Err(Error::Insufficient(format!("need at least 2 samples, got {n}")));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Parameter("samples must be finite".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mean = sorted.iter().sum::<f64>() / n as f64;
    let var = sorted.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .map_err(|e| Error::Parameter(e.to_string()))?
        .inverse_cdf(0.975);
    let half = t * (var / n as f64).sqrt();
    Ok(SummaryStats { mean, lower: mean - half, upper: mean + half, n })
}

/// Per-run mean of `metric` over the first `after_episode` episodes, then the
/// across-run mean with its 95% interval.
pub fn summarize(records: &[ExperimentRecord], metric: Metric, after_episode: usize) -> Result<SummaryStats> {
    if after_episode == 0 {
        return Err(Error::Parameter("after_episode must be at least 1".into()));
    }
    let mut runs: BTreeMap<usize, Vec<(usize, f64)>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.metric == metric && r.episode < after_episode) {
        runs.entry(r.run).or_default().push((r.episode, r.value));
    }
    let means = runs
        .into_iter()
        .map(|(run, mut values)| {
            if values.len() != after_episode {
                return Err(Error::Insufficient(format!(
                    "run {run} has {} of the first {after_episode} episodes",
                    values.len()
                )));
            }
            values.sort_by_key(|(e, _)| *e);
            Ok(values.iter().map(|(_, v)| v).sum::<f64>() / after_episode as f64)
        })
        .collect::<Result<Vec<f64>>>()?;
    mean_confidence(&means)
}

/// Trailing moving average: element `i` averages the last `min(i + 1, window)` values.
pub fn moving_average(series: &[f64], window: usize) -> Result<Vec<f64>> {
    if window == 0 {
        return Err(Error::Parameter("window must be at least 1".into()));
    }
    let mut out = Vec::with_capacity(series.len());
    let mut sum = 0.0;
    for i in 0..series.len() {
        sum += series[i];
        if i >= window {
            sum -= series[i - window];
        }
        out.push(sum / (i + 1).min(window) as f64);
    }
    Ok(out)
}
