use nalgebra::{DMatrix, DVector};

use super::model::{QTable, StochasticPolicy, TabularMdp};
use crate::error::{Error, Result};

/// Residual bound every exact solve must meet.
pub const SOLVE_RESIDUAL_TOL: f64 = 1e-9;

const VALUE_ITERATION_CAP: usize = 1_000_000;

/// Reward vector and pair-to-pair transition matrix induced by a policy.
#[derive(Debug, Clone)]
pub struct InducedModel {
    /// R(s,a), expected one-step reward per pair.
    pub r_pi: DVector<f64>,
    /// Entry `((s,a),(s',a'))` is `P[s][a][s'] * pi[s'][a']`.
    pub p_pi: DMatrix<f64>,
}

pub fn induce_model(mdp: &TabularMdp, pi: &StochasticPolicy) -> Result<InducedModel> {
    mdp.check_policy(pi)?;
    let (ns, na) = (mdp.num_states(), mdp.num_actions());
    let n = mdp.num_pairs();
    let r_pi = DVector::from_fn(n, |i, _| mdp.expected_reward(i / na, i % na));
    let mut p_pi = DMatrix::zeros(n, n);
    for s in 0..ns {
        for a in 0..na {
            let row = mdp.pair_index(s, a);
            for (next, p) in mdp.transition_row(s, a).iter().enumerate() {
                if *p == 0.0 {
                    continue;
                }
                for (b, w) in pi.row(next).iter().enumerate() {
                    p_pi[(row, mdp.pair_index(next, b))] += p * w;
                }
            }
        }
    }
    Ok(InducedModel { r_pi, p_pi })
}

/// `T^pi q = R + gamma * P^pi q`.
pub fn bellman_op(mdp: &TabularMdp, pi: &StochasticPolicy, q: &QTable) -> Result<QTable> {
    mdp.check_policy(pi)?;
    mdp.check_q(q)?;
    let next_values = q.state_values(pi);
    Ok(backup(mdp, q, &next_values))
}

/// `(T* q)(s,a) = R(s,a) + gamma * sum_s' P[s][a][s'] * max_a' q(s',a')`.
pub fn bellman_optimality_op(mdp: &TabularMdp, q: &QTable) -> Result<QTable> {
    mdp.check_q(q)?;
    let next_values: Vec<f64> = (0..mdp.num_states()).map(|s| q.max(s)).collect();
    Ok(backup(mdp, q, &next_values))
}

/// One-step backup through `P` given per-state bootstrap values.
pub(crate) fn backup(mdp: &TabularMdp, q: &QTable, next_values: &[f64]) -> QTable {
    let (ns, na) = (mdp.num_states(), mdp.num_actions());
    let gamma = mdp.gamma();
    let mut out = QTable::zeros(ns, na);
    for s in 0..ns {
        for a in 0..na {
            let value = mdp
                .transition_row(s, a)
                .iter()
                .zip(mdp.reward_row(s, a))
                .zip(next_values)
                .map(|((p, r), v)| p * (r + gamma * v))
                .sum();
            out.set(s, a, value);
        }
    }
    debug_assert_eq!(out.num_actions(), q.num_actions());
    out
}

/// Deterministic greedy policy; ties go to the lowest action index.
pub fn greedy_policy(q: &QTable) -> StochasticPolicy {
    let actions: Vec<usize> = (0..q.num_states()).map(|s| q.argmax(s)).collect();
    StochasticPolicy::deterministic(q.num_actions(), &actions)
        .expect("argmax is always a valid action")
}

/// Solves `(I - gamma P^pi) q = R^pi` by LU factorization.
///
/// Terminal pairs are pinned to zero, which keeps the system regular for
/// absorbing chains with `gamma = 1`.
pub fn exact_q_pi(mdp: &TabularMdp, pi: &StochasticPolicy) -> Result<QTable> {
    let model = induce_model(mdp, pi)?;
    let n = mdp.num_pairs();
    let na = mdp.num_actions();
    let mut system = DMatrix::identity(n, n) - model.p_pi * mdp.gamma();
    let mut rhs = model.r_pi;
    for s in mdp.terminal_states() {
        for a in 0..na {
            let i = mdp.pair_index(s, a);
            system.row_mut(i).fill(0.0);
            system[(i, i)] = 1.0;
            rhs[i] = 0.0;
        }
    }
    let solution = solve_dense(system, &rhs)?;
    let q = QTable::from_vec(mdp.num_states(), na, solution.iter().copied().collect())
        .map_err(|_| Error::Singular("policy evaluation produced non-finite values".into()))?;
    let residual = bellman_op(mdp, pi, &q)?.distance(&q);
    if residual > SOLVE_RESIDUAL_TOL {
        return Err(Error::Singular(format!(
            "policy evaluation residual {residual:e} exceeds {SOLVE_RESIDUAL_TOL:e}"
        )));
    }
    Ok(q)
}

/// Value iteration on `T*` until the Bellman residual is at most `tol`.
///
/// The result is polished by exactly evaluating its greedy policy whenever
/// that lowers the residual, which usually lands on `q*` to round-off.
pub fn exact_q_star(mdp: &TabularMdp, tol: f64) -> Result<QTable> {
    let gamma = mdp.gamma();
    if gamma >= 1.0 {
        return Err(Error::Parameter("optimal value iteration requires gamma < 1".into()));
    }
    if tol <= 0.0 {
        return Err(Error::Parameter(format!("tolerance must be positive, got {tol}")));
    }
    let stop = if gamma == 0.0 { f64::INFINITY } else { tol * (1.0 - gamma) / gamma };
    let mut q = QTable::zeros(mdp.num_states(), mdp.num_actions());
    let mut change = f64::INFINITY;
    for _ in 0..VALUE_ITERATION_CAP {
        let next = bellman_optimality_op(mdp, &q)?;
        change = next.distance(&q);
        q = next;
        if change <= stop {
            let residual = bellman_optimality_op(mdp, &q)?.distance(&q);
            if let Ok(polished) = exact_q_pi(mdp, &greedy_policy(&q)) {
                let polished_residual = bellman_optimality_op(mdp, &polished)?.distance(&polished);
                if polished_residual <= residual {
                    return Ok(polished);
                }
            }
            return Ok(q);
        }
    }
    Err(Error::IterationLimit { iterations: VALUE_ITERATION_CAP, last_change: change })
}

/// max over states of the l1 distance between the action distributions.
pub fn policy_distance(pi: &StochasticPolicy, mu: &StochasticPolicy) -> Result<f64> {
    if pi.num_states() != mu.num_states() || pi.num_actions() != mu.num_actions() {
        return Err(Error::Shape("policies differ in shape".into()));
    }
    Ok((0..pi.num_states())
        .map(|s| pi.row(s).iter().zip(mu.row(s)).map(|(a, b)| (a - b).abs()).sum::<f64>())
        .fold(0.0, f64::max))
}

/// LU solve with an explicit singularity check on the pivots.
pub(crate) fn solve_dense(system: DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    let scale = system.amax().max(1.0);
    let lu = system.lu();
    let min_pivot = lu.u().diagonal().iter().fold(f64::INFINITY, |m, d| m.min(d.abs()));
    if min_pivot <= 1e-12 * scale {
        return Err(Error::Singular(format!("smallest pivot {min_pivot:e}")));
    }
    lu.solve(rhs)
        .filter(|x| x.iter().all(|v| v.is_finite()))
        .ok_or_else(|| Error::Singular("LU solve failed".into()))
}
