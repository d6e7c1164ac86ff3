//! Flat settings shared by every subcommand. The same struct parses the
//! command line and the `--config` TOML file; flags win over the file.

use std::path::{Path, PathBuf};

use clap::Args;
use qsigma::envs::EnvId;
use qsigma::td::TraceKind;
use serde::Deserialize;

#[derive(Debug, Clone, Default, PartialEq, Args, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct Settings {
    /// Base seed; run `i` uses `seed + i`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub runs: Option<usize>,
    #[arg(long, global = true)]
    pub episodes: Option<usize>,
    /// Output directory (default `results`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    /// Environment for `sweep`: random-walk-19 or mountain-car.
    #[arg(long, global = true)]
    pub env: Option<EnvId>,
    /// Plain-text MDP used by `verify-theory` instead of random models.
    #[arg(long, global = true)]
    pub mdp_file: Option<PathBuf>,

    #[arg(long, global = true)]
    pub lambda: Option<f64>,
    #[arg(long, global = true)]
    pub gamma: Option<f64>,
    #[arg(long, global = true)]
    pub alpha: Option<f64>,
    /// Sampling degrees, comma separated.
    #[arg(long, global = true, value_delimiter = ',')]
    pub sigmas: Option<Vec<f64>>,
    /// Grid `0, step, ..., 1` for the prediction sigmas.
    #[arg(long, global = true, conflicts_with = "sigmas")]
    pub sigma_step: Option<f64>,
    /// Trace kinds, comma separated: accumulating, replacing.
    #[arg(long, global = true, value_delimiter = ',')]
    pub traces: Option<Vec<TraceKind>>,

    #[arg(long, global = true)]
    pub tilings: Option<usize>,
    #[arg(long, global = true)]
    pub tiles_per_dim: Option<usize>,
    #[arg(long, global = true)]
    pub hash_size: Option<usize>,
    /// Exploration of the epsilon-greedy behavior policy.
    #[arg(long, global = true)]
    pub epsilon: Option<f64>,
    /// Divide alpha by the number of tilings (true or false).
    #[arg(long, global = true)]
    pub alpha_per_tiling: Option<bool>,
    /// Include the decaying-sigma variant (true or false).
    #[arg(long, global = true)]
    pub dynamic: Option<bool>,
    #[arg(long, global = true)]
    pub sigma_decay: Option<f64>,
    /// Also run every control variant with lambda = 0 (true or false).
    #[arg(long, global = true)]
    pub one_step_baseline: Option<bool>,
    #[arg(long, global = true)]
    pub max_steps: Option<usize>,
    /// Moving-average window for smoothed returns.
    #[arg(long, global = true)]
    pub window: Option<usize>,

    /// Sweep axes, comma separated.
    #[arg(long, global = true, value_delimiter = ',')]
    pub lambdas: Option<Vec<f64>>,
    #[arg(long, global = true, value_delimiter = ',')]
    pub alphas: Option<Vec<f64>>,

    /// Exploration of the behavior sequence in the control-rate check.
    #[arg(long, global = true)]
    pub behavior_epsilon: Option<f64>,
    /// Seeds of the on-line control convergence check.
    #[arg(long, global = true)]
    pub convergence_seeds: Option<usize>,
}

macro_rules! overlay {
    ($base:expr, $top:expr, $($field:ident),+ $(,)?) => {
        $( if $top.$field.is_some() { $base.$field = $top.$field.clone(); } )+
    };
}

impl Settings {
    pub fn from_file(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
        toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    /// `self` with every value set in `flags` replaced.
    pub fn overridden_by(mut self, flags: &Settings) -> Settings {
        overlay!(
            self, flags, seed, runs, episodes, out, env, mdp_file, lambda, gamma, alpha, sigmas, sigma_step, traces,
            tilings, tiles_per_dim, hash_size, epsilon, alpha_per_tiling, dynamic, sigma_decay, one_step_baseline,
            max_steps, window, lambdas, alphas, behavior_epsilon, convergence_seeds,
        );
        // An explicit list on the command line beats a grid step from the file, and vice versa.
        if flags.sigmas.is_some() {
            self.sigma_step = None;
        } else if flags.sigma_step.is_some() {
            self.sigmas = None;
        }
        self
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("results"))
    }
}
