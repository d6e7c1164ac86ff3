use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{
    run_control_variant, run_prediction_variant, summarize, ControlConfig, ControlVariant, Metric, PredictionConfig,
    SigmaSetting, SummaryStats,
};
use crate::envs::EnvId;
use crate::error::{Error, Result};
use crate::td::TraceKind;

/// Grid over (sigma, lambda, alpha). Everything else comes from the
/// prediction or control configuration of the selected environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub env: EnvId,
    pub sigmas: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub alphas: Vec<f64>,
    pub prediction: PredictionConfig,
    pub control: ControlConfig,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            env: EnvId::RandomWalk19,
            sigmas: vec![0.0, 0.5, 1.0],
            lambdas: vec![0.0, 0.4, 0.8],
            alphas: vec![0.1, 0.2, 0.4, 0.6, 0.8],
            prediction: PredictionConfig::default(),
            control: ControlConfig::default(),
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sigmas.is_empty() || self.lambdas.is_empty() || self.alphas.is_empty() {
            return Err(Error::Config("sweep grid has an empty axis".into()));
        }
        match self.env {
            EnvId::RandomWalk19 => self.prediction.validate(),
            EnvId::MountainCar => self.control.validate(),
        }
    }
}

/// One grid point, summarized over all episodes: mean RMS error for
/// prediction, mean return for control.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub sigma: f64,
    pub lambda: f64,
    pub alpha: f64,
    pub trace: TraceKind,
    pub stats: SummaryStats,
}

pub fn run_sweep(cfg: &SweepConfig) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    let traces = match cfg.env {
        EnvId::RandomWalk19 => cfg.prediction.traces.clone(),
        EnvId::MountainCar => vec![cfg.control.trace],
    };
    let mut rows = Vec::new();
    for &trace in &traces {
        for &sigma in &cfg.sigmas {
            for &lambda in &cfg.lambdas {
                for &alpha in &cfg.alphas {
                    let stats = match cfg.env {
                        EnvId::RandomWalk19 => {
                            let p = PredictionConfig { lambda, alpha: Some(alpha), ..cfg.prediction.clone() };
                            let v = run_prediction_variant(&p, sigma, trace)?;
                            summarize(&v.records, Metric::RmsError, p.episodes)?
                        }
                        EnvId::MountainCar => {
                            let c = ControlConfig { alpha, ..cfg.control.clone() };
                            let variant =
                                ControlVariant { label: String::new(), sigma: SigmaSetting::Fixed(sigma), lambda };
                            let v = run_control_variant(&c, &variant)?;
                            summarize(&v.records, Metric::EpisodeReturn, c.episodes)?
                        }
                    };
                    rows.push(SweepRow { sigma, lambda, alpha, trace, stats });
                }
            }
        }
    }
    Ok(rows)
}

pub fn write_sweep_csv<W: Write>(writer: W, rows: &[SweepRow]) -> Result<()> {
    let mut csv = csv::Writer::from_writer(writer);
    csv.write_record(["trace", "sigma", "lambda", "alpha", "mean", "lb", "ub", "n"])?;
    for r in rows {
        csv.write_record([
            r.trace.name().to_string(),
            r.sigma.to_string(),
            r.lambda.to_string(),
            r.alpha.to_string(),
            r.stats.mean.to_string(),
            r.stats.lower.to_string(),
            r.stats.upper.to_string(),
            r.stats.n.to_string(),
        ])?;
    }
    csv.flush()?;
    Ok(())
}
