use std::fs;
use std::path::Path;

use qsigma::envs::EnvId;
use qsigma::experiments::{
    run_control_experiment, run_prediction_experiment, run_sweep, sigma_grid, summarize, verify_theory,
    write_metadata, write_sweep_csv, write_variants, ControlConfig, Metric, PredictionConfig, SweepConfig,
    TheoryConfig, VariantRecords,
};
use qsigma::mdp::load_mdp;
use qsigma::Error;

use crate::settings::Settings;

/// Why a command did not succeed.
#[derive(Debug)]
pub enum Failure {
    /// Bad flags, config file or model file.
    Config(String),
    /// A checked property did not hold.
    Property(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_)
            | Error::Parameter(_)
            | Error::Parse { .. }
            | Error::InvalidModel(_)
            | Error::Shape(_)
            | Error::Index(_) => Failure::Config(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

type Outcome = Result<(), Failure>;

fn sigmas(s: &Settings) -> Result<Option<Vec<f64>>, Failure> {
    match (&s.sigmas, s.sigma_step) {
        (Some(list), _) => Ok(Some(list.clone())),
        (None, Some(step)) => Ok(Some(sigma_grid(step)?)),
        (None, None) => Ok(None),
    }
}

pub fn prediction_config(s: &Settings) -> Result<PredictionConfig, Failure> {
    let mut cfg = PredictionConfig::default();
    cfg.seed = s.seed.unwrap_or(cfg.seed);
    cfg.runs = s.runs.unwrap_or(cfg.runs);
    cfg.episodes = s.episodes.unwrap_or(cfg.episodes);
    cfg.lambda = s.lambda.unwrap_or(cfg.lambda);
    cfg.gamma = s.gamma.unwrap_or(cfg.gamma);
    cfg.alpha = s.alpha.or(cfg.alpha);
    if let Some(list) = sigmas(s)? {
        cfg.sigmas = list;
    }
    if let Some(traces) = &s.traces {
        cfg.traces = traces.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn control_config(s: &Settings) -> Result<ControlConfig, Failure> {
    let mut cfg = ControlConfig::default();
    cfg.seed = s.seed.unwrap_or(cfg.seed);
    cfg.runs = s.runs.unwrap_or(cfg.runs);
    cfg.episodes = s.episodes.unwrap_or(cfg.episodes);
    cfg.lambda = s.lambda.unwrap_or(cfg.lambda);
    cfg.gamma = s.gamma.unwrap_or(cfg.gamma);
    cfg.alpha = s.alpha.unwrap_or(cfg.alpha);
    cfg.alpha_per_tiling = s.alpha_per_tiling.unwrap_or(cfg.alpha_per_tiling);
    cfg.epsilon = s.epsilon.unwrap_or(cfg.epsilon);
    cfg.tilings = s.tilings.unwrap_or(cfg.tilings);
    cfg.tiles_per_dim = s.tiles_per_dim.unwrap_or(cfg.tiles_per_dim);
    cfg.hash_size = s.hash_size.unwrap_or(cfg.hash_size);
    cfg.dynamic = s.dynamic.unwrap_or(cfg.dynamic);
    cfg.sigma_decay = s.sigma_decay.unwrap_or(cfg.sigma_decay);
    cfg.one_step_baseline = s.one_step_baseline.unwrap_or(cfg.one_step_baseline);
    cfg.max_steps = s.max_steps.unwrap_or(cfg.max_steps);
    cfg.window = s.window.unwrap_or(cfg.window);
    if let Some(list) = sigmas(s)? {
        cfg.sigmas = list;
    }
    match s.traces.as_deref() {
        None => {}
        Some([trace]) => cfg.trace = *trace,
        Some(_) => return Err(Failure::Config("mountain-car control takes exactly one trace kind".into())),
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn theory_config(s: &Settings) -> Result<TheoryConfig, Failure> {
    let mut cfg = TheoryConfig::default();
    cfg.seed = s.seed.unwrap_or(cfg.seed);
    cfg.behavior_epsilon = s.behavior_epsilon.unwrap_or(cfg.behavior_epsilon);
    cfg.convergence.seeds = s.convergence_seeds.unwrap_or(cfg.convergence.seeds);
    if let Some(path) = &s.mdp_file {
        cfg.mdp = Some(load_mdp(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?);
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn sweep_config(s: &Settings) -> Result<SweepConfig, Failure> {
    let mut cfg = SweepConfig { env: s.env.unwrap_or(EnvId::RandomWalk19), ..SweepConfig::default() };
    if let Some(list) = sigmas(s)? {
        cfg.sigmas = list;
    }
    cfg.lambdas = s.lambdas.clone().unwrap_or(cfg.lambdas);
    cfg.alphas = s.alphas.clone().unwrap_or(cfg.alphas);
    cfg.prediction = prediction_config(s)?;
    cfg.control = control_config(s)?;
    cfg.validate()?;
    Ok(cfg)
}

fn write_experiment<C: serde::Serialize>(
    out: &Path,
    name: &str,
    cfg: &C,
    variants: &[VariantRecords],
    metric: Metric,
) -> Outcome {
    write_variants(out, name, variants)?;
    write_metadata(out, name, cfg)?;
    for v in variants {
        let episodes = v.series(metric).first().map_or(0, Vec::len);
        let stats = summarize(&v.records, metric, episodes)?;
        println!("{} {} {stats}", v.label, metric.name());
    }
    println!("wrote {} variants to {}", variants.len(), out.display());
    Ok(())
}

pub fn predict_random_walk(s: &Settings) -> Outcome {
    let cfg = prediction_config(s)?;
    let variants = run_prediction_experiment(&cfg)?;
    write_experiment(&s.out_dir(), "predict-random-walk", &cfg, &variants, Metric::RmsError)
}

pub fn control_mountain_car(s: &Settings) -> Outcome {
    let cfg = control_config(s)?;
    let variants = run_control_experiment(&cfg)?;
    write_experiment(&s.out_dir(), "control-mountain-car", &cfg, &variants, Metric::EpisodeReturn)
}

pub fn sweep(s: &Settings) -> Outcome {
    let cfg = sweep_config(s)?;
    let rows = run_sweep(&cfg)?;
    let out = s.out_dir();
    fs::create_dir_all(&out).map_err(Error::from)?;
    let path = out.join(format!("sweep-{}.csv", cfg.env));
    write_sweep_csv(fs::File::create(&path).map_err(Error::from)?, &rows)?;
    write_metadata(&out, &format!("sweep-{}", cfg.env), &cfg)?;
    for r in &rows {
        println!("{} sigma {} lambda {} alpha {} {}", r.trace.name(), r.sigma, r.lambda, r.alpha, r.stats);
    }
    println!("wrote {}", path.display());
    Ok(())
}

pub fn verify(s: &Settings) -> Outcome {
    let cfg = theory_config(s)?;
    let report = verify_theory(&cfg)?;
    let out = s.out_dir();
    fs::create_dir_all(&out).map_err(Error::from)?;
    let json = serde_json::to_string_pretty(&report.checks).map_err(|e| Failure::Runtime(e.to_string()))?;
    fs::write(out.join("theory-report.json"), json).map_err(Error::from)?;
    report.write_measurements_csv(fs::File::create(out.join("theory-measurements.csv")).map_err(Error::from)?)?;
    write_metadata(&out, "theory", &cfg)?;
    for c in &report.checks {
        let verdict = match (c.passed, c.required) {
            (true, _) => "ok",
            (false, true) => "FAILED",
            (false, false) => "failed (not required)",
        };
        println!("{}: {verdict}, {}/{} violations, worst {:.6}; {}", c.name, c.violations, c.trials, c.worst, c.note);
    }
    if report.passed() {
        Ok(())
    } else {
        let failed: Vec<&str> =
            report.checks.iter().filter(|c| c.required && !c.passed).map(|c| c.name.as_str()).collect();
        Err(Failure::Property(format!("required checks failed: {}", failed.join(", "))))
    }
}
