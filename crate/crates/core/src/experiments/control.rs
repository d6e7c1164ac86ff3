use serde::{Deserialize, Serialize};

use super::{check_counts, moving_average, run_parallel, run_rng, ExperimentRecord, Metric, VariantRecords};
use crate::envs::{MountainCar, MOUNTAIN_CAR_STEP_CAP};
use crate::error::{Error, Result};
use crate::linear::{LinearConfig, LinearLearner, TileCoder};
use crate::td::{LearnerConfig, SigmaSchedule, StepSize, TraceKind, DEFAULT_SIGMA_DECAY};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SigmaSetting {
    Fixed(f64),
    /// Starts at 1 and decays per episode.
    Dynamic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlVariant {
    pub label: String,
    pub sigma: SigmaSetting,
    pub lambda: f64,
}

/// Mountain-car control with tile coding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlConfig {
    pub seed: u64,
    pub runs: usize,
    pub episodes: usize,
    pub lambda: f64,
    pub gamma: f64,
    pub alpha: f64,
    pub alpha_per_tiling: bool,
    pub epsilon: f64,
    pub trace: TraceKind,
    pub tilings: usize,
    pub tiles_per_dim: usize,
    pub hash_size: usize,
    pub sigmas: Vec<f64>,
    pub dynamic: bool,
    pub sigma_decay: f64,
    /// Also run every variant with `lambda = 0`.
    pub one_step_baseline: bool,
    pub max_steps: usize,
    pub window: usize,
}

impl Default for ControlConfig {
    fn default() -> Self {
        ControlConfig {
            seed: 0,
            runs: 100,
            episodes: 200,
            lambda: 0.95,
            gamma: 0.99,
            alpha: 0.3,
            alpha_per_tiling: true,
            epsilon: 0.01,
            trace: TraceKind::Replacing,
            tilings: 8,
            tiles_per_dim: 8,
            hash_size: 4096,
            sigmas: vec![0.0, 0.5, 1.0],
            dynamic: true,
            sigma_decay: DEFAULT_SIGMA_DECAY,
            one_step_baseline: true,
            max_steps: MOUNTAIN_CAR_STEP_CAP,
            window: 20,
        }
    }
}

impl ControlConfig {
    /// Q(sigma, lambda) variants first, then their one-step baselines.
    pub fn variants(&self) -> Vec<ControlVariant> {
        let mut settings: Vec<SigmaSetting> = self.sigmas.iter().map(|s| SigmaSetting::Fixed(*s)).collect();
        if self.dynamic {
            settings.push(SigmaSetting::Dynamic);
        }
        let name = |s: &SigmaSetting| match s {
            SigmaSetting::Fixed(sigma) => format!("sigma-{sigma}"),
            SigmaSetting::Dynamic => "dynamic".to_string(),
        };
        let mut out: Vec<ControlVariant> = settings
            .iter()
            .map(|s| ControlVariant { label: name(s), sigma: *s, lambda: self.lambda })
            .collect();
        if self.one_step_baseline {
            out.extend(settings.iter().map(|s| ControlVariant {
                label: format!("one-step-{}", name(s)),
                sigma: *s,
                lambda: 0.0,
            }));
        }
        out
    }

    pub fn linear_config(&self, variant: &ControlVariant) -> Result<LinearConfig> {
        let (sigma, schedule) = match variant.sigma {
            SigmaSetting::Fixed(sigma) => (sigma, SigmaSchedule::Constant),
            SigmaSetting::Dynamic => (1.0, SigmaSchedule::Decay { factor: self.sigma_decay }),
        };
        let learner = LearnerConfig::new(sigma, variant.lambda, self.gamma, StepSize::Constant(self.alpha))?
            .with_trace(self.trace)
            .with_sigma_schedule(schedule)
            .with_max_steps(self.max_steps);
        let cfg = LinearConfig { learner, epsilon: self.epsilon, alpha_per_tiling: self.alpha_per_tiling };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn coder(&self) -> Result<TileCoder> {
        TileCoder::mountain_car(self.tilings, self.tiles_per_dim, self.hash_size)
    }

    pub fn validate(&self) -> Result<()> {
        check_counts(self.runs, self.episodes)?;
        if self.window == 0 {
            return Err(Error::Config("smoothing window must be at least 1".into()));
        }
        if self.sigmas.is_empty() && !self.dynamic {
            return Err(Error::Config("no control variants selected".into()));
        }
        let as_config = |e: Error| Error::Config(e.to_string());
        self.coder().map_err(as_config)?;
        for v in self.variants() {
            self.linear_config(&v).map_err(as_config)?;
        }
        Ok(())
    }
}

/// Per run and episode: the episode return, then its trailing moving average.
pub fn run_control_variant(cfg: &ControlConfig, variant: &ControlVariant) -> Result<VariantRecords> {
    cfg.validate()?;
    let linear = cfg.linear_config(variant)?;
    let coder = cfg.coder()?;
    let runs = run_parallel(cfg.runs, |run| {
        let mut rng = run_rng(cfg.seed, run);
        let mut learner = LinearLearner::new(coder.clone(), linear)?;
        let returns = (0..cfg.episodes)
            .map(|_| learner.run_episode(&MountainCar, &mut rng).map(|s| s.episode_return))
            .collect::<Result<Vec<f64>>>()?;
        let smoothed = moving_average(&returns, cfg.window)?;
        let mut out = Vec::with_capacity(2 * cfg.episodes);
        for (episode, (r, s)) in returns.into_iter().zip(smoothed).enumerate() {
            out.push(ExperimentRecord { run, episode, metric: Metric::EpisodeReturn, value: r });
            out.push(ExperimentRecord { run, episode, metric: Metric::SmoothedReturn, value: s });
        }
        Ok(out)
    })?;
    Ok(VariantRecords { label: variant.label.clone(), records: runs.concat() })
}

pub fn run_control_experiment(cfg: &ControlConfig) -> Result<Vec<VariantRecords>> {
    cfg.validate()?;
    cfg.variants().iter().map(|v| run_control_variant(cfg, v)).collect()
}
