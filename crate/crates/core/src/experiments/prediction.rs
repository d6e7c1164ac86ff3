use serde::{Deserialize, Serialize};

use super::{check_counts, run_parallel, run_rng, ExperimentRecord, Metric, VariantRecords};
use crate::envs::{random_walk_true_values, RandomWalk19, WALK_INTERIOR, WALK_RIGHT_END};
use crate::error::{Error, Result};
use crate::mdp::{QTable, StochasticPolicy};
use crate::td::{LearnerConfig, StepSize, TabularLearner, TraceKind};

pub const ALPHA_ACCUMULATING: f64 = 0.4;
pub const ALPHA_REPLACING: f64 = 0.9;

pub fn default_alpha(trace: TraceKind) -> f64 {
    match trace {
        TraceKind::Accumulating => ALPHA_ACCUMULATING,
        TraceKind::Replacing => ALPHA_REPLACING,
    }
}

/// `0, step, 2 step, ..., 1`; `step` must divide 1.
pub fn sigma_grid(step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && step <= 1.0) {
        return Err(Error::Parameter(format!("sigma step must lie in (0, 1], got {step}")));
    }
    let n = (1.0 / step).round();
    if (n * step - 1.0).abs() > 1e-9 {
        return Err(Error::Parameter(format!("sigma step {step} does not divide 1")));
    }
    let n = n as usize;
    Ok((0..=n).map(|k| k as f64 / n as f64).collect())
}

/// Random-walk prediction with `pi = mu = uniform`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictionConfig {
    pub seed: u64,
    pub runs: usize,
    pub episodes: usize,
    pub lambda: f64,
    pub gamma: f64,
    /// Falls back to [`default_alpha`] of each trace kind.
    pub alpha: Option<f64>,
    pub sigmas: Vec<f64>,
    pub traces: Vec<TraceKind>,
}

impl Default for PredictionConfig {
    fn default() -> Self {
        PredictionConfig {
            seed: 0,
            runs: 200,
            episodes: 50,
            lambda: 0.8,
            gamma: 1.0,
            alpha: None,
            sigmas: sigma_grid(0.2).expect("0.2 divides 1"),
            traces: vec![TraceKind::Accumulating, TraceKind::Replacing],
        }
    }
}

impl PredictionConfig {
    pub fn learner_config(&self, sigma: f64, trace: TraceKind) -> Result<LearnerConfig> {
        let alpha = self.alpha.unwrap_or_else(|| default_alpha(trace));
        Ok(LearnerConfig::new(sigma, self.lambda, self.gamma, StepSize::Constant(alpha))?.with_trace(trace))
    }

    pub fn validate(&self) -> Result<()> {
        check_counts(self.runs, self.episodes)?;
        if self.sigmas.is_empty() || self.traces.is_empty() {
            return Err(Error::Config("need at least one sigma and one trace kind".into()));
        }
        for &trace in &self.traces {
            for &sigma in &self.sigmas {
                self.learner_config(sigma, trace).map_err(|e| Error::Config(e.to_string()))?;
            }
        }
        Ok(())
    }
}

/// RMS error of `v(s) = sum_a pi(s,a) Q(s,a)` against the true values over the
/// 19 interior states.
pub fn random_walk_rms(q: &QTable, pi: &StochasticPolicy) -> f64 {
    let truth = random_walk_true_values();
    let sum: f64 = (1..WALK_RIGHT_END).map(|s| (q.expected(s, pi) - truth[s - 1]).powi(2)).sum();
    (sum / WALK_INTERIOR as f64).sqrt()
}

/// Record for episode `e` is the RMS error before episode `e` runs.
pub fn run_prediction_variant(cfg: &PredictionConfig, sigma: f64, trace: TraceKind) -> Result<VariantRecords> {
    cfg.validate()?;
    let learner_cfg = cfg.learner_config(sigma, trace)?;
    let states = WALK_RIGHT_END + 1;
    let pi = StochasticPolicy::uniform(states, 2);
    let runs = run_parallel(cfg.runs, |run| {
        let mut rng = run_rng(cfg.seed, run);
        let mut learner = TabularLearner::new(learner_cfg, QTable::zeros(states, 2))?;
        let mut out = Vec::with_capacity(cfg.episodes);
        for episode in 0..cfg.episodes {
            let value = random_walk_rms(learner.q(), &pi);
            out.push(ExperimentRecord { run, episode, metric: Metric::RmsError, value });
            learner.run_episode(&RandomWalk19, &pi, &pi, &mut rng)?;
        }
        Ok(out)
    })?;
    Ok(VariantRecords { label: format!("{}-sigma-{sigma}", trace.name()), records: runs.concat() })
}

/// One variant per (trace kind, sigma), traces outermost.
pub fn run_prediction_experiment(cfg: &PredictionConfig) -> Result<Vec<VariantRecords>> {
    cfg.validate()?;
    let mut out = Vec::new();
    for &trace in &cfg.traces {
        for &sigma in &cfg.sigmas {
            out.push(run_prediction_variant(cfg, sigma, trace)?);
        }
    }
    Ok(out)
}
