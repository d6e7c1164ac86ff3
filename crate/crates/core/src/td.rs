//! Sampled Q(sigma) learners: one-step errors and updates, the on-line
//! Q(sigma, lambda) learner with eligibility traces, and the off-line
//! lambda-return (forward view) update it approximates.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::envs::DiscreteEnv;
use crate::error::{check_unit_interval, Error, Result};
use crate::mdp::{greedy_policy, QTable, StochasticPolicy};

/// Default per-episode step cap guarding against non-terminating episodes.
pub const DEFAULT_STEP_CAP: usize = 100_000;
/// Default multiplicative decay of the dynamic sampling degree.
pub const DEFAULT_SIGMA_DECAY: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepSize {
    Constant(f64),
    /// `1 / N(s,a)` where `N` counts visits to the pair so far.
    InverseVisitCount,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TraceKind {
    Accumulating,
    Replacing,
}

impl TraceKind {
    pub fn name(self) -> &'static str {
        match self {
            TraceKind::Accumulating => "accumulating",
            TraceKind::Replacing => "replacing",
        }
    }
}

impl std::str::FromStr for TraceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "accumulating" => Ok(TraceKind::Accumulating),
            "replacing" => Ok(TraceKind::Replacing),
            other => Err(Error::Config(format!("unknown trace kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SigmaSchedule {
    Constant,
    /// `sigma_0 * factor^episode`.
    Decay { factor: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LearnerConfig {
    pub sigma: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub alpha: StepSize,
    pub trace: TraceKind,
    pub sigma_schedule: SigmaSchedule,
    pub max_steps: usize,
}

impl LearnerConfig {
    pub fn new(sigma: f64, lambda: f64, gamma: f64, alpha: StepSize) -> Result<Self> {
        let cfg = LearnerConfig {
            sigma,
            lambda,
            gamma,
            alpha,
            trace: TraceKind::Accumulating,
            sigma_schedule: SigmaSchedule::Constant,
            max_steps: DEFAULT_STEP_CAP,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_trace(mut self, trace: TraceKind) -> Self {
        self.trace = trace;
        self
    }

    pub fn with_sigma_schedule(mut self, schedule: SigmaSchedule) -> Self {
        self.sigma_schedule = schedule;
        self
    }

    pub fn with_max_steps(mut self, max_steps: usize) -> Self {
        self.max_steps = max_steps;
        self
    }

    pub fn validate(&self) -> Result<()> {
        check_unit_interval("sigma", self.sigma)?;
        check_unit_interval("lambda", self.lambda)?;
        check_unit_interval("gamma", self.gamma)?;
        if let StepSize::Constant(alpha) = self.alpha {
            if !(alpha > 0.0 && alpha.is_finite()) {
                return Err(Error::Parameter(format!("step size must be positive, got {alpha}")));
            }
        }
        if let SigmaSchedule::Decay { factor } = self.sigma_schedule {
            if !(factor > 0.0 && factor <= 1.0) {
                return Err(Error::Parameter(format!("sigma decay factor must be in (0, 1], got {factor}")));
            }
        }
        if self.max_steps == 0 {
            return Err(Error::Parameter("step cap must be positive".into()));
        }
        Ok(())
    }

    fn constant_alpha(&self) -> Result<f64> {
        match self.alpha {
            StepSize::Constant(a) => Ok(a),
            StepSize::InverseVisitCount => {
                Err(Error::Parameter("this update needs a constant step size".into()))
            }
        }
    }
}

/// Sampling degree used in episode `episode` (0-based).
pub fn sigma_schedule_step(cfg: &LearnerConfig, episode: usize) -> f64 {
    match cfg.sigma_schedule {
        SigmaSchedule::Constant => cfg.sigma,
        SigmaSchedule::Decay { factor } => {
            cfg.sigma * factor.powi(i32::try_from(episode).unwrap_or(i32::MAX))
        }
    }
}

/// A sampled transition `(S, A, R, S', A')`. `next_action` is `None` when `S'` is terminal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub state: usize,
    pub action: usize,
    pub reward: f64,
    pub next_state: usize,
    pub next_action: Option<usize>,
    pub terminal: bool,
}

impl Transition {
    fn check(&self, q: &QTable) -> Result<()> {
        let (ns, na) = (q.num_states(), q.num_actions());
        if self.state >= ns || self.next_state >= ns || self.action >= na {
            return Err(Error::Index(format!("transition {self:?} outside {ns}x{na} table")));
        }
        match self.next_action {
            Some(a) if a >= na => Err(Error::Index(format!("next action {a}"))),
            None if !self.terminal => Err(Error::Index("missing next action".into())),
            _ => Ok(()),
        }
    }
}

/// `R + gamma Q(S',A') - Q(S,A)`, with no bootstrap from a terminal `S'`.
pub fn sarsa_td_error(q: &QTable, tr: &Transition, gamma: f64) -> Result<f64> {
    tr.check(q)?;
    let bootstrap = match (tr.terminal, tr.next_action) {
        (false, Some(a)) => q.get(tr.next_state, a),
        _ => 0.0,
    };
    Ok(tr.reward + gamma * bootstrap - q.get(tr.state, tr.action))
}

/// `R + gamma sum_a pi(S',a) Q(S',a) - Q(S,A)`.
pub fn expected_td_error(q: &QTable, tr: &Transition, pi: &StochasticPolicy, gamma: f64) -> Result<f64> {
    tr.check(q)?;
    check_policy_shape(q, pi)?;
    let bootstrap = if tr.terminal { 0.0 } else { q.expected(tr.next_state, pi) };
    Ok(tr.reward + gamma * bootstrap - q.get(tr.state, tr.action))
}

/// `sigma * sarsa + (1 - sigma) * expected`.
pub fn q_sigma_td_error(
    q: &QTable,
    tr: &Transition,
    pi: &StochasticPolicy,
    sigma: f64,
    gamma: f64,
) -> Result<f64> {
    check_unit_interval("sigma", sigma)?;
    let sampled = sarsa_td_error(q, tr, gamma)?;
    let expected = expected_td_error(q, tr, pi, gamma)?;
    Ok(sigma * sampled + (1.0 - sigma) * expected)
}

/// `Q(S,A) += alpha * delta^sigma`; no other entry changes.
pub fn one_step_update(q: &QTable, tr: &Transition, pi: &StochasticPolicy, cfg: &LearnerConfig) -> Result<QTable> {
    cfg.validate()?;
    let alpha = cfg.constant_alpha()?;
    let delta = q_sigma_td_error(q, tr, pi, cfg.sigma, cfg.gamma)?;
    let mut out = q.clone();
    out.set(tr.state, tr.action, q.get(tr.state, tr.action) + alpha * delta);
    Ok(out)
}

fn check_policy_shape(q: &QTable, pi: &StochasticPolicy) -> Result<()> {
    if pi.num_states() != q.num_states() || pi.num_actions() != q.num_actions() {
        return Err(Error::Shape("policy and table differ in shape".into()));
    }
    Ok(())
}

/// Per-pair eligibility over a dense index space.
#[derive(Debug, Clone, PartialEq)]
pub struct EligibilityTrace {
    kind: TraceKind,
    values: Vec<f64>,
}

impl EligibilityTrace {
    pub fn new(kind: TraceKind, len: usize) -> Self {
        EligibilityTrace { kind, values: vec![0.0; len] }
    }

    pub fn kind(&self) -> TraceKind {
        self.kind
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn reset(&mut self) {
        self.values.iter_mut().for_each(|z| *z = 0.0);
    }

    /// Decays every entry by `factor`, then credits `index`.
    pub fn decay_and_mark(&mut self, factor: f64, index: usize) {
        self.values.iter_mut().for_each(|z| *z *= factor);
        match self.kind {
            TraceKind::Accumulating => self.values[index] += 1.0,
            TraceKind::Replacing => self.values[index] = 1.0,
        }
    }

    /// Accumulating traces are non-negative; replacing traces stay in `[0, 1]`.
    pub fn within_bounds(&self) -> bool {
        self.values.iter().all(|z| match self.kind {
            TraceKind::Accumulating => *z >= 0.0,
            TraceKind::Replacing => (0.0..=1.0).contains(z),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeStats {
    /// Undiscounted sum of rewards.
    pub episode_return: f64,
    pub steps: usize,
    /// The step cap ended the episode.
    pub truncated: bool,
}

/// What an observer sees after each on-line step's update.
pub struct StepView<'a> {
    pub t: usize,
    pub transition: &'a Transition,
    pub delta: f64,
    pub q: &'a QTable,
    pub trace: &'a EligibilityTrace,
}

/// On-line tabular Q(sigma, lambda) learner.
#[derive(Debug, Clone)]
pub struct TabularLearner {
    cfg: LearnerConfig,
    q: QTable,
    trace: EligibilityTrace,
    visits: Vec<u64>,
    episodes: usize,
}

impl TabularLearner {
    pub fn new(cfg: LearnerConfig, q0: QTable) -> Result<Self> {
        cfg.validate()?;
        let n = q0.num_states() * q0.num_actions();
        Ok(TabularLearner {
            cfg,
            trace: EligibilityTrace::new(cfg.trace, n),
            q: q0,
            visits: vec![0; n],
            episodes: 0,
        })
    }

    pub fn config(&self) -> &LearnerConfig {
        &self.cfg
    }

    pub fn q(&self) -> &QTable {
        &self.q
    }

    pub fn into_q(self) -> QTable {
        self.q
    }

    pub fn episodes_completed(&self) -> usize {
        self.episodes
    }

    pub fn run_episode<E, R>(
        &mut self,
        env: &E,
        pi: &StochasticPolicy,
        mu: &StochasticPolicy,
        rng: &mut R,
    ) -> Result<EpisodeStats>
    where
        E: DiscreteEnv,
        R: Rng + ?Sized,
    {
        self.run_episode_observed(env, pi, mu, rng, |_| {})
    }

    /// One control episode: `pi` is greedy and `mu` epsilon-greedy with respect
    /// to the table at the start of the episode.
    pub fn run_control_episode<E, R>(&mut self, env: &E, epsilon: f64, rng: &mut R) -> Result<EpisodeStats>
    where
        E: DiscreteEnv,
        R: Rng + ?Sized,
    {
        let pi = greedy_policy(&self.q);
        let mu = StochasticPolicy::epsilon_greedy(&self.q, epsilon)?;
        self.run_episode(env, &pi, &mu, rng)
    }

    /// One episode of on-line Q(sigma, lambda). Actions come from `mu`; the
    /// expected part of the bootstrap uses `pi` and the current table.
    pub fn run_episode_observed<E, R, F>(
        &mut self,
        env: &E,
        pi: &StochasticPolicy,
        mu: &StochasticPolicy,
        rng: &mut R,
        mut observe: F,
    ) -> Result<EpisodeStats>
    where
        E: DiscreteEnv,
        R: Rng + ?Sized,
        F: FnMut(&StepView<'_>),
    {
        let (ns, na) = (self.q.num_states(), self.q.num_actions());
        if env.state_count() != ns || env.action_count() != na {
            return Err(Error::Shape(format!(
                "environment is {}x{}, table is {ns}x{na}",
                env.state_count(),
                env.action_count()
            )));
        }
        check_policy_shape(&self.q, pi)?;
        check_policy_shape(&self.q, mu)?;

        let sigma = sigma_schedule_step(&self.cfg, self.episodes);
        let gamma = self.cfg.gamma;
        let decay = gamma * self.cfg.lambda;
        self.trace.reset();

        let mut state = env.reset(rng);
        let mut action = mu.sample(state, rng);
        let mut stats = EpisodeStats { episode_return: 0.0, steps: 0, truncated: false };

        loop {
            let step = env.step(&state, action, rng)?;
            let next_action = (!step.terminal).then(|| mu.sample(step.next, rng));
            let tr = Transition {
                state,
                action,
                reward: step.reward,
                next_state: step.next,
                next_action,
                terminal: step.terminal,
            };
            let bootstrap = match next_action {
                Some(b) => (1.0 - sigma) * self.q.expected(step.next, pi) + sigma * self.q.get(step.next, b),
                None => 0.0,
            };
            let delta = step.reward + gamma * bootstrap - self.q.get(state, action);

            let pair = state * na + action;
            self.trace.decay_and_mark(decay, pair);
            self.visits[pair] += 1;
            let values = self.q.as_mut_slice();
            for (i, z) in self.trace.values().iter().enumerate() {
                if *z != 0.0 {
                    let alpha = match self.cfg.alpha {
                        StepSize::Constant(a) => a,
                        StepSize::InverseVisitCount => 1.0 / self.visits[i] as f64,
                    };
                    values[i] += alpha * delta * z;
                }
            }

            stats.episode_return += step.reward;
            stats.steps += 1;
            observe(&StepView { t: stats.steps - 1, transition: &tr, delta, q: &self.q, trace: &self.trace });

            match next_action {
                None => break,
                Some(_) if stats.steps >= self.cfg.max_steps => {
                    stats.truncated = true;
                    break;
                }
                Some(b) => {
                    state = step.next;
                    action = b;
                }
            }
        }
        self.episodes += 1;
        Ok(stats)
    }
}

/// Runs a single on-line episode from `q` with a fresh learner.
pub fn run_online_episode<E, R>(
    q: &QTable,
    env: &E,
    pi: &StochasticPolicy,
    mu: &StochasticPolicy,
    cfg: &LearnerConfig,
    rng: &mut R,
) -> Result<(QTable, EpisodeStats)>
where
    E: DiscreteEnv,
    R: Rng + ?Sized,
{
    let mut learner = TabularLearner::new(*cfg, q.clone())?;
    let stats = learner.run_episode(env, pi, mu, rng)?;
    Ok((learner.into_q(), stats))
}

/// Forward-view lambda-return errors, one per time step, with `q` held fixed.
///
/// Entry `k` is `sum_{t >= k} (gamma lambda)^{t-k} delta_t` where `delta_t` uses
/// the mixed bootstrap. With replacing traces the sum for a visit stops just
/// before the next visit to the same pair, which is what a replacing trace
/// credits.
pub fn lambda_return_errors(
    trajectory: &[Transition],
    q: &QTable,
    pi: &StochasticPolicy,
    cfg: &LearnerConfig,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    let deltas = trajectory
        .iter()
        .map(|tr| q_sigma_td_error(q, tr, pi, cfg.sigma, cfg.gamma))
        .collect::<Result<Vec<f64>>>()?;
    let decay = cfg.gamma * cfg.lambda;
    let len = deltas.len();

    let mut errors = vec![0.0; len];
    match cfg.trace {
        TraceKind::Accumulating => {
            let mut acc = 0.0;
            for k in (0..len).rev() {
                acc = deltas[k] + decay * acc;
                errors[k] = acc;
            }
        }
        TraceKind::Replacing => {
            let na = q.num_actions();
            let mut next_visit = vec![len; q.num_states() * na];
            let mut stop = vec![len; len];
            for k in (0..len).rev() {
                let pair = trajectory[k].state * na + trajectory[k].action;
                stop[k] = next_visit[pair];
                next_visit[pair] = k;
            }
            for k in 0..len {
                let mut weight = 1.0;
                let mut sum = 0.0;
                for delta in &deltas[k..stop[k]] {
                    sum += weight * delta;
                    weight *= decay;
                }
                errors[k] = sum;
            }
        }
    }
    Ok(errors)
}

/// Off-line lambda-return update applied once at episode end:
/// `Q(S_k, A_k) += alpha * error_k` for every step `k`.
pub fn offline_lambda_return_update(
    trajectory: &[Transition],
    q: &QTable,
    pi: &StochasticPolicy,
    cfg: &LearnerConfig,
) -> Result<QTable> {
    if trajectory.is_empty() {
        return Ok(q.clone());
    }
    let alpha = cfg.constant_alpha()?;
    let errors = lambda_return_errors(trajectory, q, pi, cfg)?;
    let mut out = q.clone();
    for (tr, err) in trajectory.iter().zip(errors) {
        out.set(tr.state, tr.action, out.get(tr.state, tr.action) + alpha * err);
    }
    Ok(out)
}
