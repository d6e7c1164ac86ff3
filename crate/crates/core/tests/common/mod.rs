//! Independent reference computations used as oracles by the integration tests.
//! None of them call the library's solvers or operators.

#![allow(dead_code)]

use qsigma::mdp::{QTable, StochasticPolicy, TabularMdp};
use rand::Rng;

/// Random instance drawn the same way across tests.
pub struct Problem {
    pub mdp: TabularMdp,
    pub pi: StochasticPolicy,
    pub mu: StochasticPolicy,
}

pub fn problem<R: Rng>(rng: &mut R, gamma_lo: f64, gamma_hi: f64) -> Problem {
    let ns = rng.gen_range(2..=6);
    let na = rng.gen_range(2..=3);
    let gamma = rng.gen_range(gamma_lo..gamma_hi);
    let mdp = TabularMdp::random(rng, ns, na, gamma).unwrap();
    let pi = StochasticPolicy::random(rng, ns, na);
    let mu = StochasticPolicy::random(rng, ns, na);
    Problem { mdp, pi, mu }
}

/// `P^pi[(s,a), (s',a')] = P(s'|s,a) pi(s',a')` as a dense row-major matrix.
pub fn pair_transition(mdp: &TabularMdp, pi: &StochasticPolicy) -> Vec<Vec<f64>> {
    let (ns, na) = (mdp.num_states(), mdp.num_actions());
    let n = ns * na;
    let mut p = vec![vec![0.0; n]; n];
    for s in 0..ns {
        for a in 0..na {
            for s2 in 0..ns {
                for a2 in 0..na {
                    p[s * na + a][s2 * na + a2] = mdp.prob(s, a, s2) * pi.prob(s2, a2);
                }
            }
        }
    }
    p
}

pub fn expected_rewards(mdp: &TabularMdp) -> Vec<f64> {
    let (ns, na) = (mdp.num_states(), mdp.num_actions());
    let mut r = Vec::with_capacity(ns * na);
    for s in 0..ns {
        for a in 0..na {
            r.push((0..ns).map(|s2| mdp.prob(s, a, s2) * mdp.reward(s, a, s2)).sum());
        }
    }
    r
}

pub fn mat_vec(m: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    m.iter().map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum()).collect()
}

/// `T^pi q = r + gamma P^pi q`, written out by hand.
pub fn backup(mdp: &TabularMdp, pi: &StochasticPolicy, q: &[f64]) -> Vec<f64> {
    let p = pair_transition(mdp, pi);
    let r = expected_rewards(mdp);
    mat_vec(&p, q).iter().zip(&r).map(|(pq, r)| r + mdp.gamma() * pq).collect()
}

/// `sum_{k>=0} (c P)^k x`, truncated once the terms are below 1e-16 in size.
pub fn neumann_apply(p: &[Vec<f64>], c: f64, x: &[f64]) -> Vec<f64> {
    assert!(c < 1.0, "series needs c < 1");
    let mut term = x.to_vec();
    let mut sum = x.to_vec();
    for _ in 0..200_000 {
        term = mat_vec(p, &term).into_iter().map(|v| c * v).collect();
        let size = term.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (s, t) in sum.iter_mut().zip(&term) {
            *s += t;
        }
        if size < 1e-16 {
            return sum;
        }
    }
    panic!("Neumann series did not converge");
}

/// Mixed operator from its definition: `sigma (q + B[T^mu q - q]) + (1 - sigma)(q + B[T^pi q - q])`
/// with `B` applied as a Neumann series.
pub fn mixed_op_reference(
    mdp: &TabularMdp,
    pi: &StochasticPolicy,
    mu: &StochasticPolicy,
    sigma: f64,
    lambda: f64,
    q: &[f64],
) -> Vec<f64> {
    let p_mu = pair_transition(mdp, mu);
    let c = mdp.gamma() * lambda;
    let part = |policy: &StochasticPolicy| {
        let diff: Vec<f64> = backup(mdp, policy, q).iter().zip(q).map(|(t, q)| t - q).collect();
        let corr = neumann_apply(&p_mu, c, &diff);
        q.iter().zip(corr).map(|(q, c)| q + c).collect::<Vec<f64>>()
    };
    let (sarsa, expected) = (part(mu), part(pi));
    sarsa.iter().zip(&expected).map(|(s, e)| sigma * s + (1.0 - sigma) * e).collect()
}

/// `q^pi` by iterating the hand-written backup (needs `gamma < 1`).
pub fn evaluate(mdp: &TabularMdp, pi: &StochasticPolicy, tol: f64) -> Vec<f64> {
    assert!(mdp.gamma() < 1.0);
    let p = pair_transition(mdp, pi);
    let r = expected_rewards(mdp);
    let mut q = vec![0.0; r.len()];
    loop {
        let next: Vec<f64> = mat_vec(&p, &q).iter().zip(&r).map(|(pq, r)| r + mdp.gamma() * pq).collect();
        let change = next.iter().zip(&q).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        q = next;
        if change <= tol * (1.0 - mdp.gamma()) {
            return q;
        }
    }
}

/// `q*` by value iteration (needs `gamma < 1`).
pub fn optimal(mdp: &TabularMdp, tol: f64) -> Vec<f64> {
    assert!(mdp.gamma() < 1.0);
    let (ns, na) = (mdp.num_states(), mdp.num_actions());
    let r = expected_rewards(mdp);
    let mut q = vec![0.0; ns * na];
    loop {
        let v: Vec<f64> = (0..ns).map(|s| q[s * na..(s + 1) * na].iter().cloned().fold(f64::MIN, f64::max)).collect();
        let mut next = vec![0.0; ns * na];
        for s in 0..ns {
            for a in 0..na {
                next[s * na + a] =
                    r[s * na + a] + mdp.gamma() * (0..ns).map(|s2| mdp.prob(s, a, s2) * v[s2]).sum::<f64>();
            }
        }
        let change = next.iter().zip(&q).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        q = next;
        if change <= tol * (1.0 - mdp.gamma()) {
            return q;
        }
    }
}

pub fn sup_distance(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

pub fn to_table(mdp: &TabularMdp, values: Vec<f64>) -> QTable {
    QTable::from_vec(mdp.num_states(), mdp.num_actions(), values).unwrap()
}

/// Copy of `mdp` whose state `terminal` absorbs. The other rows are tilted
/// toward it so that episodes end quickly.
pub fn with_terminal(mdp: &TabularMdp, terminal: usize, exit_prob: f64) -> TabularMdp {
    let (ns, na) = (mdp.num_states(), mdp.num_actions());
    let mut transition = Vec::with_capacity(ns * na * ns);
    let mut reward = Vec::with_capacity(ns * na * ns);
    for s in 0..ns {
        for a in 0..na {
            for s2 in 0..ns {
                let mut p = (1.0 - exit_prob) * mdp.prob(s, a, s2);
                if s2 == terminal {
                    p += exit_prob;
                }
                transition.push(p);
                reward.push(mdp.reward(s, a, s2));
            }
        }
    }
    let mut flags = vec![false; ns];
    flags[terminal] = true;
    TabularMdp::new(ns, na, transition, reward, flags, mdp.gamma()).unwrap()
}
