use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::run_parallel;
use crate::envs::{MdpEnv, StartState};
use crate::error::{Error, Result};
use crate::mdp::{exact_q_pi, exact_q_star, policy_distance, QTable, StochasticPolicy, TabularMdp};
use crate::operators::{
    control_iterate, control_rate_bound, evaluation_error_bound, mixed_fixed_point, BehaviorSequence,
    ErrorBoundParams, MixedOpParams, MixedOperator,
};
use crate::td::{LearnerConfig, StepSize, TabularLearner};

pub const CONTRACTION_TOL: f64 = 1e-10;
pub const DECOMPOSITION_TOL: f64 = 1e-10;
pub const ENDPOINT_TOL: f64 = 1e-7;
pub const RATE_TOL: f64 = 1e-8;

/// Tabular on-line control on random MDPs, checked against `q*`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvergenceConfig {
    pub seeds: usize,
    /// Environment steps per seed.
    pub budget: usize,
    pub states: usize,
    pub actions: usize,
    pub gamma: f64,
    pub sigma: f64,
    pub lambda: f64,
    /// Exploration of the epsilon-greedy behavior policy.
    pub epsilon: f64,
    /// Episodes start uniformly and are cut after this many steps.
    pub episode_steps: usize,
    pub tolerance: f64,
    /// Fraction of seeds that must end within `tolerance` of `q*`.
    pub min_success: f64,
}

impl Default for ConvergenceConfig {
    fn default() -> Self {
        ConvergenceConfig {
            seeds: 50,
            budget: 50_000,
            states: 5,
            actions: 2,
            gamma: 0.5,
            sigma: 0.0,
            lambda: 0.8,
            epsilon: 0.5,
            episode_steps: 50,
            tolerance: 0.05,
            min_success: 0.95,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TheoryConfig {
    pub seed: u64,
    pub contraction_trials: usize,
    pub decomposition_trials: usize,
    pub endpoint_trials: usize,
    pub rate_trials: usize,
    pub rate_iterations: usize,
    pub bound_trials: usize,
    pub max_states: usize,
    pub max_actions: usize,
    /// Exploration of the default behavior sequence in the rate check.
    pub behavior_epsilon: f64,
    pub convergence: ConvergenceConfig,
    /// Fixed model for every randomized check instead of random ones.
    #[serde(skip)]
    pub mdp: Option<TabularMdp>,
}

impl Default for TheoryConfig {
    fn default() -> Self {
        TheoryConfig {
            seed: 0,
            contraction_trials: 1000,
            decomposition_trials: 200,
            endpoint_trials: 50,
            rate_trials: 100,
            rate_iterations: 50,
            bound_trials: 50,
            max_states: 6,
            max_actions: 3,
            behavior_epsilon: 0.1,
            convergence: ConvergenceConfig::default(),
            mdp: None,
        }
    }
}

impl TheoryConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_states < 1 || self.max_actions < 1 || self.rate_iterations < 1 {
            return Err(Error::Config("states, actions and rate iterations must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.behavior_epsilon) {
            return Err(Error::Config("behavior epsilon must lie in [0, 1]".into()));
        }
        let c = &self.convergence;
        if c.states < 1 || c.actions < 1 || c.episode_steps < 1 || !(0.0..1.0).contains(&c.gamma) {
            return Err(Error::Config("invalid convergence problem".into()));
        }
        if let Some(mdp) = &self.mdp {
            if mdp.gamma() >= 1.0 {
                return Err(Error::Config("theory checks need a discount below 1".into()));
            }
        }
        Ok(())
    }
}

/// Result of one randomized check. Only `required` checks decide the verdict.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub name: String,
    pub required: bool,
    pub trials: usize,
    pub violations: usize,
    /// Largest measured/bound ratio, or largest error for tolerance checks.
    pub worst: f64,
    pub passed: bool,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Measurement {
    pub check: String,
    pub trial: usize,
    pub measured: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TheoryReport {
    pub checks: Vec<CheckOutcome>,
    pub measurements: Vec<Measurement>,
}

impl TheoryReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed || !c.required)
    }

    pub fn check(&self, name: &str) -> Option<&CheckOutcome> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn write_measurements_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut csv = csv::Writer::from_writer(writer);
        csv.write_record(["check", "trial", "measured", "bound"])?;
        for m in &self.measurements {
            csv.write_record([m.check.clone(), m.trial.to_string(), m.measured.to_string(), m.bound.to_string()])?;
        }
        csv.flush()?;
        Ok(())
    }
}

struct Instance {
    mdp: TabularMdp,
    pi: StochasticPolicy,
    mu: StochasticPolicy,
}

fn instance<R: Rng>(cfg: &TheoryConfig, rng: &mut R, gamma_range: (f64, f64)) -> Result<Instance> {
    let mdp = match &cfg.mdp {
        Some(m) => m.clone(),
        None => {
            let ns = rng.gen_range(1..=cfg.max_states);
            let na = rng.gen_range(1..=cfg.max_actions);
            let gamma = rng.gen_range(gamma_range.0..gamma_range.1);
            TabularMdp::random(rng, ns, na, gamma)?
        }
    };
    let (ns, na) = (mdp.num_states(), mdp.num_actions());
    let pi = StochasticPolicy::random(rng, ns, na);
    let mu = StochasticPolicy::random(rng, ns, na);
    Ok(Instance { mdp, pi, mu })
}

fn stream(seed: u64, check: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(check);
    rng
}

struct Tally {
    outcome: CheckOutcome,
    measurements: Vec<Measurement>,
}

impl Tally {
    fn new(name: &str, required: bool) -> Self {
        Tally {
            outcome: CheckOutcome {
                name: name.into(),
                required,
                trials: 0,
                violations: 0,
                worst: 0.0,
                passed: true,
                note: String::new(),
            },
            measurements: Vec::new(),
        }
    }

    fn record(&mut self, measured: f64, bound: f64, violated: bool, worst: f64) {
        let trial = self.outcome.trials;
        self.measurements.push(Measurement { check: self.outcome.name.clone(), trial, measured, bound });
        self.outcome.trials += 1;
        self.outcome.violations += usize::from(violated);
        if !(worst <= self.outcome.worst) {
            self.outcome.worst = worst;
        }
    }

    fn finish(mut self, note: impl Into<String>) -> Self {
        self.outcome.passed = self.outcome.violations == 0;
        self.outcome.note = note.into();
        self
    }
}

/// `||T q1 - T q2|| <= gamma ||q1 - q2||` on random instances. With
/// `close_policies` sigma is drawn so that `(1 - sigma) eps <= 1 - gamma`.
fn contraction(cfg: &TheoryConfig, close_policies: bool) -> Result<Tally> {
    let (name, required, id) =
        if close_policies { ("contraction-close-policies", false, 1) } else { ("contraction", true, 0) };
    let mut rng = stream(cfg.seed, id);
    let mut tally = Tally::new(name, required);
    for _ in 0..cfg.contraction_trials {
        let Instance { mdp, pi, mu } = instance(cfg, &mut rng, (0.05, 0.99))?;
        let gamma = mdp.gamma();
        let eps = policy_distance(&pi, &mu)?;
        let sigma = if close_policies {
            let floor = if eps > 0.0 { (1.0 - (1.0 - gamma) / eps).max(0.0) } else { 0.0 };
            rng.gen_range(floor..=1.0)
        } else {
            rng.gen()
        };
        let params = MixedOpParams::new(sigma, rng.gen())?;
        let (ns, na) = (mdp.num_states(), mdp.num_actions());
        let q1 = QTable::random(&mut rng, ns, na, 5.0);
        let q2 = QTable::random(&mut rng, ns, na, 5.0);
        let op = MixedOperator::new(&mdp, &pi, &mu, params)?;
        let measured = op.apply(&q1)?.distance(&op.apply(&q2)?);
        let gap = q1.distance(&q2);
        let bound = gamma * gap;
        let ratio = if gap > 0.0 { measured / bound } else { 0.0 };
        tally.record(measured, bound, measured > bound + CONTRACTION_TOL, ratio);
    }
    Ok(tally.finish("worst = largest ||Tq1 - Tq2|| / (gamma ||q1 - q2||)"))
}

fn decomposition(cfg: &TheoryConfig) -> Result<Tally> {
    let mut rng = stream(cfg.seed, 2);
    let mut tally = Tally::new("decomposition", true);
    for _ in 0..cfg.decomposition_trials {
        let Instance { mdp, pi, mu } = instance(cfg, &mut rng, (0.0, 0.99))?;
        let params = MixedOpParams::new(rng.gen(), rng.gen())?;
        let q = QTable::random(&mut rng, mdp.num_states(), mdp.num_actions(), 5.0);
        let op = MixedOperator::new(&mdp, &pi, &mu, params)?;
        let (sarsa, expected) = op.components(&q)?;
        let combined = QTable::from_vec(
            q.num_states(),
            q.num_actions(),
            sarsa
                .as_slice()
                .iter()
                .zip(expected.as_slice())
                .map(|(s, e)| params.sigma * s + (1.0 - params.sigma) * e)
                .collect(),
        )?;
        let err = op.apply(&q)?.distance(&combined);
        tally.record(err, DECOMPOSITION_TOL, err > DECOMPOSITION_TOL, err);
    }
    Ok(tally.finish("worst = largest sup-norm gap"))
}

fn endpoints(cfg: &TheoryConfig) -> Result<Tally> {
    let mut rng = stream(cfg.seed, 3);
    let mut tally = Tally::new("fixed-point-endpoints", true);
    for _ in 0..cfg.endpoint_trials {
        let Instance { mdp, pi, mu } = instance(cfg, &mut rng, (0.0, 0.95))?;
        let lambda = rng.gen();
        let q0 = QTable::zeros(mdp.num_states(), mdp.num_actions());
        let mut err: f64 = 0.0;
        for (sigma, target) in [(0.0, &pi), (1.0, &mu)] {
            let params = MixedOpParams::new(sigma, lambda)?;
            err = match mixed_fixed_point(&mdp, &pi, &mu, params, &q0, 1e-12, 200_000) {
                Ok(fixed) => err.max(fixed.distance(&exact_q_pi(&mdp, target)?)),
                Err(Error::IterationLimit { .. }) => f64::INFINITY,
                Err(e) => return Err(e),
            };
        }
        tally.record(err, ENDPOINT_TOL, !(err <= ENDPOINT_TOL), err);
    }
    Ok(tally.finish("sigma = 0 against q^pi and sigma = 1 against q^mu"))
}

/// Per-step rate of the control iteration toward `q*`. With `sigma_zero` the
/// target rate is `gamma (1 + lambda) / (1 - lambda gamma)` for any behavior.
fn control_rate(cfg: &TheoryConfig, sigma_zero: bool) -> Result<Tally> {
    let (name, required, id) = if sigma_zero { ("control-rate-sigma-0", false, 5) } else { ("control-rate", true, 4) };
    let mut rng = stream(cfg.seed, id);
    let mut tally = Tally::new(name, required);
    let behavior = BehaviorSequence::EpsilonGreedy { epsilon: cfg.behavior_epsilon };
    for _ in 0..cfg.rate_trials {
        let Instance { mdp, .. } = instance(cfg, &mut rng, (0.05, 0.95))?;
        let gamma = mdp.gamma();
        let lambda = rng.gen_range(0.0..1.0) * ((1.0 - gamma) / (2.0 * gamma)).min(1.0);
        let sigma = if sigma_zero { 0.0 } else { rng.gen() };
        let params = MixedOpParams::new(sigma, lambda)?;
        let rate = control_rate_bound(params, gamma)?;
        let star = exact_q_star(&mdp, 1e-13)?;
        let q0 = QTable::random(&mut rng, mdp.num_states(), mdp.num_actions(), 5.0);
        let mut prev = q0.distance(&star);
        let (mut violated, mut worst) = (false, 0.0f64);
        for step in control_iterate(&mdp, &behavior, params, &q0, cfg.rate_iterations)? {
            let d = step.q.distance(&star);
            violated |= d > rate * prev + RATE_TOL;
            if prev > 1e-9 {
                worst = worst.max(d / prev);
            }
            prev = d;
        }
        tally.record(worst, rate, violated, if rate > 0.0 { worst / rate } else { 0.0 });
    }
    Ok(tally.finish(format!(
        "measured = largest ||Q_k+1 - q*|| / ||Q_k - q*||; behavior epsilon-greedy({})",
        cfg.behavior_epsilon
    )))
}

/// Reported only: distance of the sigma fixed point from `q^pi` against the bound.
fn evaluation_bound(cfg: &TheoryConfig) -> Result<Tally> {
    let mut rng = stream(cfg.seed, 6);
    let mut tally = Tally::new("evaluation-error-bound", false);
    let mut within = 0;
    for _ in 0..cfg.bound_trials {
        let Instance { mdp, pi, mu } = instance(cfg, &mut rng, (0.05, 0.9))?;
        let gamma = mdp.gamma();
        let lambda = rng.gen_range(0.0..1.0) * ((1.0 - gamma) / (2.0 * gamma)).min(1.0);
        let params = MixedOpParams::new(rng.gen(), lambda)?;
        let q0 = QTable::zeros(mdp.num_states(), mdp.num_actions());
        let measured = match mixed_fixed_point(&mdp, &pi, &mu, params, &q0, 1e-12, 200_000) {
            Ok(fixed) => fixed.distance(&exact_q_pi(&mdp, &pi)?),
            Err(Error::IterationLimit { .. }) => f64::INFINITY,
            Err(e) => return Err(e),
        };
        let bound = evaluation_error_bound(ErrorBoundParams::from_problem(&mdp, &pi, &mu)?, params, gamma)?;
        within += usize::from(measured <= bound);
        tally.record(measured, bound, false, measured);
    }
    let trials = tally.outcome.trials;
    Ok(tally.finish(format!("not asserted; measured <= bound in {within} of {trials} trials")))
}

/// Final `||Q - q*||` of on-line control after the step budget, per seed.
pub(crate) fn convergence_errors(cfg: &ConvergenceConfig, fixed: Option<&TabularMdp>, seed: u64) -> Result<Vec<f64>> {
    run_parallel(cfg.seeds, |run| {
        let mut rng = stream(seed.wrapping_add(run as u64), 7);
        let mdp = match fixed {
            Some(m) => m.clone(),
            None => TabularMdp::random(&mut rng, cfg.states, cfg.actions, cfg.gamma)?,
        };
        let star = exact_q_star(&mdp, 1e-12)?;
        let (ns, na) = (mdp.num_states(), mdp.num_actions());
        let learner_cfg = LearnerConfig::new(cfg.sigma, cfg.lambda, mdp.gamma(), StepSize::InverseVisitCount)?
            .with_max_steps(cfg.episode_steps);
        let env = MdpEnv::new(mdp, StartState::Uniform)?;
        let mut learner = TabularLearner::new(learner_cfg, QTable::zeros(ns, na))?;
        let mut steps = 0;
        while steps < cfg.budget {
            steps += learner.run_control_episode(&env, cfg.epsilon, &mut rng)?.steps;
        }
        Ok(learner.q().distance(&star))
    })
}

fn convergence(cfg: &TheoryConfig) -> Result<Tally> {
    let c = &cfg.convergence;
    let mut tally = Tally::new("online-control-convergence", true);
    for err in convergence_errors(c, cfg.mdp.as_ref(), cfg.seed)? {
        tally.record(err, c.tolerance, !(err <= c.tolerance), err);
    }
    let allowed = ((1.0 - c.min_success) * c.seeds as f64 + 1e-9).floor() as usize;
    let violations = tally.outcome.violations;
    let mut tally = tally.finish(format!(
        "{} of {} seeds within {} after {} steps; at most {allowed} may miss",
        c.seeds - violations,
        c.seeds,
        c.tolerance,
        c.budget
    ));
    tally.outcome.passed = violations <= allowed;
    Ok(tally)
}

/// Runs every randomized check. The verdict ignores checks with `required == false`.
pub fn verify_theory(cfg: &TheoryConfig) -> Result<TheoryReport> {
    cfg.validate()?;
    let tallies = [
        contraction(cfg, false)?,
        contraction(cfg, true)?,
        decomposition(cfg)?,
        endpoints(cfg)?,
        control_rate(cfg, false)?,
        control_rate(cfg, true)?,
        evaluation_bound(cfg)?,
        convergence(cfg)?,
    ];
    let mut report = TheoryReport { checks: Vec::new(), measurements: Vec::new() };
    for t in tallies {
        report.checks.push(t.outcome);
        report.measurements.extend(t.measurements);
    }
    Ok(report)
}
