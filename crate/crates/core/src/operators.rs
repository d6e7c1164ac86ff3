//! Exact mixed-sampling operators and the evaluation and control iterations built on them.
//!
//! For target `pi`, behavior `mu`, sampling degree `sigma` and trace decay
//! `lambda`, the operator is
//!
//! ```text
//! T q = sigma * (q + B [T^mu q - q]) + (1 - sigma) * (q + B [T^pi q - q]),
//! B   = (I - gamma * lambda * P^mu)^-1
//! ```
//!
//! The first term is the sampled (Sarsa-style) lambda-operator under `mu`,
//! the second the expected lambda-operator toward `pi` with trajectories
//! drawn from `mu`. Because `B` is linear both are applied with one solve.

use nalgebra::{DMatrix, DVector, Dyn, LU};

use crate::error::{check_unit_interval, Error, Result};
use crate::mdp::{
    bellman_op, exact_q_pi, greedy_policy, induce_model, policy_distance, QTable,
    StochasticPolicy, TabularMdp,
};

/// Default exploration of the behavior sequence in [`control_iterate`].
pub const DEFAULT_BEHAVIOR_EPSILON: f64 = 0.1;

/// Sampling degree and trace decay of a mixed operator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixedOpParams {
    pub sigma: f64,
    pub lambda: f64,
}

impl MixedOpParams {
    pub fn new(sigma: f64, lambda: f64) -> Result<Self> {
        check_unit_interval("sigma", sigma)?;
        check_unit_interval("lambda", lambda)?;
        Ok(MixedOpParams { sigma, lambda })
    }

    fn validate(&self) -> Result<()> {
        check_unit_interval("sigma", self.sigma)?;
        check_unit_interval("lambda", self.lambda)
    }
}

/// Factorization of `I - gamma * lambda * P^mu` over state-action pairs.
pub struct Resolvent {
    lu: LU<f64, Dyn, Dyn>,
    n: usize,
}

impl Resolvent {
    pub fn new(mdp: &TabularMdp, mu: &StochasticPolicy, lambda: f64) -> Result<Self> {
        check_unit_interval("lambda", lambda)?;
        let decay = mdp.gamma() * lambda;
        if decay >= 1.0 {
            return Err(Error::Parameter("gamma * lambda must be below 1".into()));
        }
        let model = induce_model(mdp, mu)?;
        let n = mdp.num_pairs();
        let system = DMatrix::identity(n, n) - model.p_pi * decay;
        let lu = system.lu();
        let min_pivot = lu.u().diagonal().iter().fold(f64::INFINITY, |m, d| m.min(d.abs()));
        if min_pivot <= 1e-12 {
            return Err(Error::Singular(format!("resolvent pivot {min_pivot:e}")));
        }
        Ok(Resolvent { lu, n })
    }

    /// `B x` via the stored factorization.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.n {
            return Err(Error::Shape(format!("resolvent is {0}x{0}, vector has {1}", self.n, x.len())));
        }
        let solved = self
            .lu
            .solve(&DVector::from_column_slice(x))
            .ok_or_else(|| Error::Singular("resolvent solve failed".into()))?;
        Ok(solved.iter().copied().collect())
    }

    /// Explicit `B`, for audits only.
    pub fn matrix(&self) -> Result<DMatrix<f64>> {
        self.lu.try_inverse().ok_or_else(|| Error::Singular("resolvent inverse failed".into()))
    }
}

/// Mixed operator with its resolvent factored once for repeated application.
pub struct MixedOperator<'a> {
    mdp: &'a TabularMdp,
    pi: &'a StochasticPolicy,
    mu: &'a StochasticPolicy,
    params: MixedOpParams,
    resolvent: Resolvent,
}

impl<'a> MixedOperator<'a> {
    pub fn new(
        mdp: &'a TabularMdp,
        pi: &'a StochasticPolicy,
        mu: &'a StochasticPolicy,
        params: MixedOpParams,
    ) -> Result<Self> {
        params.validate()?;
        mdp.check_policy(pi)?;
        let resolvent = Resolvent::new(mdp, mu, params.lambda)?;
        Ok(MixedOperator { mdp, pi, mu, params, resolvent })
    }

    pub fn params(&self) -> MixedOpParams {
        self.params
    }

    pub fn apply(&self, q: &QTable) -> Result<QTable> {
        let sampled = bellman_op(self.mdp, self.mu, q)?;
        let expected = bellman_op(self.mdp, self.pi, q)?;
        let sigma = self.params.sigma;
        let target: Vec<f64> = sampled
            .as_slice()
            .iter()
            .zip(expected.as_slice())
            .zip(q.as_slice())
            .map(|((s, e), v)| sigma * s + (1.0 - sigma) * e - v)
            .collect();
        self.shifted(q, &target)
    }

    /// The two lambda-operators the mixed operator interpolates:
    /// `(q + B[T^mu q - q], q + B[T^pi q - q])`.
    pub fn components(&self, q: &QTable) -> Result<(QTable, QTable)> {
        let diff = |t: QTable| -> Vec<f64> {
            t.as_slice().iter().zip(q.as_slice()).map(|(a, b)| a - b).collect()
        };
        let sampled = self.shifted(q, &diff(bellman_op(self.mdp, self.mu, q)?))?;
        let expected = self.shifted(q, &diff(bellman_op(self.mdp, self.pi, q)?))?;
        Ok((sampled, expected))
    }

    fn shifted(&self, q: &QTable, target: &[f64]) -> Result<QTable> {
        let correction = self.resolvent.apply(target)?;
        let values = q.as_slice().iter().zip(&correction).map(|(v, c)| v + c).collect();
        QTable::from_vec(q.num_states(), q.num_actions(), values)
    }
}

/// One application of the lambda-version mixed operator.
pub fn mixed_sampling_lambda_op(
    mdp: &TabularMdp,
    pi: &StochasticPolicy,
    mu: &StochasticPolicy,
    params: MixedOpParams,
    q: &QTable,
) -> Result<QTable> {
    mdp.check_q(q)?;
    MixedOperator::new(mdp, pi, mu, params)?.apply(q)
}

/// The mixed operator without trace decay on the TD errors, i.e. `lambda = 1`.
pub fn mixed_sampling_op(
    mdp: &TabularMdp,
    pi: &StochasticPolicy,
    mu: &StochasticPolicy,
    sigma: f64,
    q: &QTable,
) -> Result<QTable> {
    mixed_sampling_lambda_op(mdp, pi, mu, MixedOpParams::new(sigma, 1.0)?, q)
}

/// `Q_1 .. Q_k` from repeated application starting at `q0`.
pub fn policy_evaluation_iterate(
    mdp: &TabularMdp,
    pi: &StochasticPolicy,
    mu: &StochasticPolicy,
    params: MixedOpParams,
    q0: &QTable,
    k: usize,
) -> Result<Vec<QTable>> {
    if k == 0 {
        return Err(Error::Parameter("iteration count must be at least 1".into()));
    }
    mdp.check_q(q0)?;
    let op = MixedOperator::new(mdp, pi, mu, params)?;
    let mut out: Vec<QTable> = Vec::with_capacity(k);
    for _ in 0..k {
        let next = op.apply(out.last().unwrap_or(q0))?;
        out.push(next);
    }
    Ok(out)
}

/// Fixed point of the mixed operator, found by iterating until successive
/// iterates differ by at most `tol` in sup norm.
pub fn mixed_fixed_point(
    mdp: &TabularMdp,
    pi: &StochasticPolicy,
    mu: &StochasticPolicy,
    params: MixedOpParams,
    q0: &QTable,
    tol: f64,
    max_iterations: usize,
) -> Result<QTable> {
    mdp.check_q(q0)?;
    let op = MixedOperator::new(mdp, pi, mu, params)?;
    let mut q = q0.clone();
    let mut change = f64::INFINITY;
    for _ in 0..max_iterations {
        let next = op.apply(&q)?;
        change = next.distance(&q);
        q = next;
        if change <= tol {
            return Ok(q);
        }
    }
    Err(Error::IterationLimit { iterations: max_iterations, last_change: change })
}

/// Source of the behavior policies `mu_k` in the control iteration.
#[derive(Debug, Clone)]
pub enum BehaviorSequence {
    /// `mu_k` is epsilon-greedy with respect to `Q_k`.
    EpsilonGreedy { epsilon: f64 },
    /// `mu_k` is greedy with respect to `Q_k`, i.e. `mu_k = pi_k`.
    Greedy,
    /// Caller-supplied `mu_0, mu_1, ...`; the last entry repeats once exhausted.
    Explicit(Vec<StochasticPolicy>),
}

impl Default for BehaviorSequence {
    fn default() -> Self {
        BehaviorSequence::EpsilonGreedy { epsilon: DEFAULT_BEHAVIOR_EPSILON }
    }
}

impl BehaviorSequence {
    fn policy(&self, k: usize, q: &QTable) -> Result<StochasticPolicy> {
        match self {
            BehaviorSequence::EpsilonGreedy { epsilon } => StochasticPolicy::epsilon_greedy(q, *epsilon),
            BehaviorSequence::Greedy => Ok(greedy_policy(q)),
            BehaviorSequence::Explicit(seq) => seq
                .get(k)
                .or(seq.last())
                .cloned()
                .ok_or_else(|| Error::Parameter("empty behavior sequence".into())),
        }
    }
}

/// One step of the control iteration: `q` is `Q_{k+1}`, `target` is the greedy
/// `pi_{k+1}`, `behavior` is the `mu_k` used to produce `q`.
#[derive(Debug, Clone)]
pub struct ControlStep {
    pub q: QTable,
    pub target: StochasticPolicy,
    pub behavior: StochasticPolicy,
}

/// Alternates `Q_{k+1} = T^{pi_k, mu_k} Q_k` with greedy improvement, `pi_0 = greedy(Q_0)`.
pub fn control_iterate(
    mdp: &TabularMdp,
    behavior: &BehaviorSequence,
    params: MixedOpParams,
    q0: &QTable,
    k: usize,
) -> Result<Vec<ControlStep>> {
    if k == 0 {
        return Err(Error::Parameter("iteration count must be at least 1".into()));
    }
    mdp.check_q(q0)?;
    let mut q = q0.clone();
    let mut target = greedy_policy(&q);
    let mut out = Vec::with_capacity(k);
    for step in 0..k {
        let mu = behavior.policy(step, &q)?;
        q = MixedOperator::new(mdp, &target, &mu, params)?.apply(&q)?;
        target = greedy_policy(&q);
        out.push(ControlStep { q: q.clone(), target: target.clone(), behavior: mu });
    }
    Ok(out)
}

/// `gamma (1 + lambda - 2 lambda sigma) / (1 - lambda gamma)`, the claimed
/// per-step contraction of the control iteration toward `q*`.
pub fn control_rate_bound(params: MixedOpParams, gamma: f64) -> Result<f64> {
    params.validate()?;
    check_unit_interval("gamma", gamma)?;
    let MixedOpParams { sigma, lambda } = params;
    if lambda * gamma >= 1.0 {
        return Err(Error::Parameter("lambda * gamma must be below 1".into()));
    }
    Ok(gamma * (1.0 + lambda - 2.0 * lambda * sigma) / (1.0 - lambda * gamma))
}

/// Constants of the off-policy evaluation error bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorBoundParams {
    /// `max_s |A| * max_a |R(s,a)|`.
    pub m_const: f64,
    /// `||q^pi||_inf`.
    pub c_const: f64,
    /// `max_s ||pi(s,.) - mu(s,.)||_1`.
    pub epsilon: f64,
}

impl ErrorBoundParams {
    pub fn new(m_const: f64, c_const: f64, epsilon: f64) -> Result<Self> {
        for (name, v) in [("M", m_const), ("C", c_const), ("epsilon", epsilon)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Parameter(format!("{name} must be finite and non-negative, got {v}")));
            }
        }
        Ok(ErrorBoundParams { m_const, c_const, epsilon })
    }

    pub fn from_problem(mdp: &TabularMdp, pi: &StochasticPolicy, mu: &StochasticPolicy) -> Result<Self> {
        let na = mdp.num_actions() as f64;
        let m_const = (0..mdp.num_states())
            .map(|s| {
                na * (0..mdp.num_actions())
                    .map(|a| mdp.expected_reward(s, a).abs())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max);
        let c_const = exact_q_pi(mdp, pi)?.sup_norm();
        ErrorBoundParams::new(m_const, c_const, policy_distance(pi, mu)?)
    }

    /// Whether `epsilon < (1 - gamma) / (lambda gamma)`, the closeness condition
    /// attached to the bound. Only reported; the bound is evaluated regardless.
    pub fn closeness_holds(&self, lambda: f64, gamma: f64) -> bool {
        lambda * gamma == 0.0 || self.epsilon < (1.0 - gamma) / (lambda * gamma)
    }
}

/// `sigma * eps * [(M + gamma C) / (gamma (1 + 2 lambda) - 1) + 1]`, evaluated as written.
///
/// Under its own hypothesis `gamma (1 + 2 lambda) < 1` the denominator is
/// negative, so the value can be negative. Callers report it next to measured
/// errors rather than asserting it.
pub fn evaluation_error_bound(bound: ErrorBoundParams, params: MixedOpParams, gamma: f64) -> Result<f64> {
    params.validate()?;
    let denom = gamma * (1.0 + 2.0 * params.lambda) - 1.0;
    if denom == 0.0 {
        return Err(Error::Parameter("gamma (1 + 2 lambda) = 1 makes the bound undefined".into()));
    }
    Ok(params.sigma * bound.epsilon * ((bound.m_const + gamma * bound.c_const) / denom + 1.0))
}
