use rand::Rng;

use crate::error::{check_unit_interval, Error, Result};

/// Tolerance for row-stochastic checks on transition tensors and policies.
pub const STOCHASTIC_TOL: f64 = 1e-12;

/// Explicit finite MDP with transition-dependent rewards.
///
/// Tensors are stored flat in `[s][a][s']` order. Terminal states are
/// rewritten to absorb with zero reward so every operator is total.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    num_states: usize,
    num_actions: usize,
    transition: Vec<f64>,
    reward: Vec<f64>,
    terminal: Vec<bool>,
    gamma: f64,
}

impl TabularMdp {
    pub fn new(
        num_states: usize,
        num_actions: usize,
        mut transition: Vec<f64>,
        mut reward: Vec<f64>,
        terminal: Vec<bool>,
        gamma: f64,
    ) -> Result<Self> {
        if num_states == 0 || num_actions == 0 {
            return Err(Error::InvalidModel("state and action counts must be positive".into()));
        }
        let len = num_states * num_actions * num_states;
        if transition.len() != len || reward.len() != len {
            return Err(Error::Shape(format!(
                "expected {len} transition and reward entries, got {} and {}",
                transition.len(),
                reward.len()
            )));
        }
        if terminal.len() != num_states {
            return Err(Error::Shape(format!(
                "expected {num_states} terminal flags, got {}",
                terminal.len()
            )));
        }
        check_unit_interval("gamma", gamma)?;

        for s in 0..num_states {
            for a in 0..num_actions {
                let base = (s * num_actions + a) * num_states;
                let row = &mut transition[base..base + num_states];
                if terminal[s] {
                    row.iter_mut().for_each(|p| *p = 0.0);
                    row[s] = 1.0;
                    reward[base..base + num_states].iter_mut().for_each(|r| *r = 0.0);
                    continue;
                }
                if let Some(p) = row.iter().find(|p| !(0.0..=1.0).contains(*p)) {
                    return Err(Error::InvalidModel(format!(
                        "probability {p} out of [0, 1] at state {s}, action {a}"
                    )));
                }
                let total: f64 = row.iter().sum();
                if (total - 1.0).abs() > STOCHASTIC_TOL {
                    return Err(Error::InvalidModel(format!(
                        "transition row for state {s}, action {a} sums to {total}"
                    )));
                }
            }
        }
        if let Some(r) = reward.iter().find(|r| !r.is_finite()) {
            return Err(Error::InvalidModel(format!("non-finite reward {r}")));
        }

        Ok(TabularMdp { num_states, num_actions, transition, reward, terminal, gamma })
    }

    /// Random dense MDP without terminal states, rewards uniform in `[-1, 1]`.
    pub fn random<R: Rng + ?Sized>(
        rng: &mut R,
        num_states: usize,
        num_actions: usize,
        gamma: f64,
    ) -> Result<Self> {
        let len = num_states * num_actions * num_states;
        let mut transition = Vec::with_capacity(len);
        for _ in 0..num_states * num_actions {
            transition.extend(random_simplex(rng, num_states));
        }
        let reward = (0..len).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        TabularMdp::new(
            num_states,
            num_actions,
            transition,
            reward,
            vec![false; num_states],
            gamma,
        )
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    /// Number of state-action pairs, the dimension of every matrix form.
    pub fn num_pairs(&self) -> usize {
        self.num_states * self.num_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Same model with a different discount.
    pub fn with_gamma(&self, gamma: f64) -> Result<Self> {
        check_unit_interval("gamma", gamma)?;
        Ok(TabularMdp { gamma, ..self.clone() })
    }

    pub fn is_terminal(&self, s: usize) -> bool {
        self.terminal[s]
    }

    pub fn terminal_states(&self) -> impl Iterator<Item = usize> + '_ {
        self.terminal.iter().enumerate().filter(|(_, t)| **t).map(|(s, _)| s)
    }

    /// Flat index of `(s, a)` in s-major order.
    pub fn pair_index(&self, s: usize, a: usize) -> usize {
        s * self.num_actions + a
    }

    pub fn prob(&self, s: usize, a: usize, next: usize) -> f64 {
        self.transition[(s * self.num_actions + a) * self.num_states + next]
    }

    pub fn reward(&self, s: usize, a: usize, next: usize) -> f64 {
        self.reward[(s * self.num_actions + a) * self.num_states + next]
    }

    pub fn transition_row(&self, s: usize, a: usize) -> &[f64] {
        let base = (s * self.num_actions + a) * self.num_states;
        &self.transition[base..base + self.num_states]
    }

    pub fn reward_row(&self, s: usize, a: usize) -> &[f64] {
        let base = (s * self.num_actions + a) * self.num_states;
        &self.reward[base..base + self.num_states]
    }

    /// R(s,a) = sum over s' of P[s][a][s'] * R[s][a][s'].
    pub fn expected_reward(&self, s: usize, a: usize) -> f64 {
        self.transition_row(s, a)
            .iter()
            .zip(self.reward_row(s, a))
            .map(|(p, r)| p * r)
            .sum()
    }

    /// Draws `(reward, next_state)` for taking `a` in `s`.
    pub fn sample<R: Rng + ?Sized>(&self, s: usize, a: usize, rng: &mut R) -> (f64, usize) {
        let next = sample_index(self.transition_row(s, a), rng);
        (self.reward(s, a, next), next)
    }

    pub(crate) fn check_policy(&self, pi: &StochasticPolicy) -> Result<()> {
        if pi.num_states() != self.num_states || pi.num_actions() != self.num_actions {
            return Err(Error::Shape(format!(
                "policy is {}x{}, model is {}x{}",
                pi.num_states(),
                pi.num_actions(),
                self.num_states,
                self.num_actions
            )));
        }
        Ok(())
    }

    pub(crate) fn check_q(&self, q: &QTable) -> Result<()> {
        if q.num_states() != self.num_states || q.num_actions() != self.num_actions {
            return Err(Error::Shape(format!(
                "table is {}x{}, model is {}x{}",
                q.num_states(),
                q.num_actions(),
                self.num_states,
                self.num_actions
            )));
        }
        Ok(())
    }
}

/// Row-stochastic state-to-action distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct StochasticPolicy {
    num_states: usize,
    num_actions: usize,
    probs: Vec<f64>,
}

impl StochasticPolicy {
    pub fn new(num_states: usize, num_actions: usize, probs: Vec<f64>) -> Result<Self> {
        if num_states == 0 || num_actions == 0 {
            return Err(Error::Shape("policy needs at least one state and action".into()));
        }
        if probs.len() != num_states * num_actions {
            return Err(Error::Shape(format!(
                "expected {} policy entries, got {}",
                num_states * num_actions,
                probs.len()
            )));
        }
        for (s, row) in probs.chunks(num_actions).enumerate() {
            if let Some(p) = row.iter().find(|p| !(0.0..=1.0).contains(*p)) {
                return Err(Error::Parameter(format!("probability {p} out of [0, 1] in state {s}")));
            }
            let total: f64 = row.iter().sum();
            if (total - 1.0).abs() > STOCHASTIC_TOL {
                return Err(Error::Parameter(format!("policy row {s} sums to {total}")));
            }
        }
        Ok(StochasticPolicy { num_states, num_actions, probs })
    }

    pub fn uniform(num_states: usize, num_actions: usize) -> Self {
        let p = 1.0 / num_actions as f64;
        StochasticPolicy { num_states, num_actions, probs: vec![p; num_states * num_actions] }
    }

    /// One action per state with probability one.
    pub fn deterministic(num_actions: usize, actions: &[usize]) -> Result<Self> {
        let mut probs = vec![0.0; actions.len() * num_actions];
        for (s, &a) in actions.iter().enumerate() {
            if a >= num_actions {
                return Err(Error::Index(format!("action {a} in state {s}")));
            }
            probs[s * num_actions + a] = 1.0;
        }
        StochasticPolicy::new(actions.len(), num_actions, probs)
    }

    /// Random policy with rows drawn uniformly from the simplex.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, num_states: usize, num_actions: usize) -> Self {
        let mut probs = Vec::with_capacity(num_states * num_actions);
        for _ in 0..num_states {
            probs.extend(random_simplex(rng, num_actions));
        }
        StochasticPolicy { num_states, num_actions, probs }
    }

    /// Greedy with respect to `q` with probability `1 - epsilon`, uniform otherwise.
    pub fn epsilon_greedy(q: &QTable, epsilon: f64) -> Result<Self> {
        check_unit_interval("epsilon", epsilon)?;
        let n = q.num_actions();
        let mut probs = vec![epsilon / n as f64; q.num_states() * n];
        for s in 0..q.num_states() {
            probs[s * n + q.argmax(s)] += 1.0 - epsilon;
        }
        Ok(StochasticPolicy { num_states: q.num_states(), num_actions: n, probs })
    }

    /// Convex mixture `weight * self + (1 - weight) * other`.
    pub fn mix(&self, other: &StochasticPolicy, weight: f64) -> Result<Self> {
        check_unit_interval("weight", weight)?;
        if self.num_states != other.num_states || self.num_actions != other.num_actions {
            return Err(Error::Shape("cannot mix policies of different shape".into()));
        }
        let probs = self
            .probs
            .iter()
            .zip(&other.probs)
            .map(|(a, b)| weight * a + (1.0 - weight) * b)
            .collect();
        Ok(StochasticPolicy { probs, ..self.clone() })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[s * self.num_actions + a]
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.probs[s * self.num_actions..(s + 1) * self.num_actions]
    }

    pub fn sample<R: Rng + ?Sized>(&self, s: usize, rng: &mut R) -> usize {
        sample_index(self.row(s), rng)
    }

    /// True when every action has positive probability in every state.
    pub fn has_full_support(&self) -> bool {
        self.probs.iter().all(|p| *p > 0.0)
    }
}

/// Tabular action-value function, flat in s-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    num_states: usize,
    num_actions: usize,
    values: Vec<f64>,
}

impl QTable {
    pub fn zeros(num_states: usize, num_actions: usize) -> Self {
        QTable { num_states, num_actions, values: vec![0.0; num_states * num_actions] }
    }

    pub fn from_vec(num_states: usize, num_actions: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != num_states * num_actions {
            return Err(Error::Shape(format!(
                "expected {} values, got {}",
                num_states * num_actions,
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Parameter(format!("non-finite action value {v}")));
        }
        Ok(QTable { num_states, num_actions, values })
    }

    pub fn random<R: Rng + ?Sized>(
        rng: &mut R,
        num_states: usize,
        num_actions: usize,
        scale: f64,
    ) -> Self {
        let values = (0..num_states * num_actions).map(|_| rng.gen_range(-scale..=scale)).collect();
        QTable { num_states, num_actions, values }
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.values[s * self.num_actions + a]
    }

    pub fn set(&mut self, s: usize, a: usize, value: f64) {
        self.values[s * self.num_actions + a] = value;
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.values[s * self.num_actions..(s + 1) * self.num_actions]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    /// Lowest-index maximizing action in `s`.
    pub fn argmax(&self, s: usize) -> usize {
        let row = self.row(s);
        let mut best = 0;
        for (a, v) in row.iter().enumerate().skip(1) {
            if *v > row[best] {
                best = a;
            }
        }
        best
    }

    pub fn max(&self, s: usize) -> f64 {
        self.row(s).iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// sum over a of pi(s,a) * Q(s,a).
    pub fn expected(&self, s: usize, pi: &StochasticPolicy) -> f64 {
        self.row(s).iter().zip(pi.row(s)).map(|(q, p)| q * p).sum()
    }

    /// Induced state values v(s) = sum over a of pi(s,a) * Q(s,a).
    pub fn state_values(&self, pi: &StochasticPolicy) -> Vec<f64> {
        (0..self.num_states).map(|s| self.expected(s, pi)).collect()
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| f64::max(m, v.abs()))
    }

    /// Sup-norm distance between two tables of the same shape.
    pub fn distance(&self, other: &QTable) -> f64 {
        debug_assert_eq!(self.values.len(), other.values.len());
        self.values
            .iter()
            .zip(&other.values)
            .fold(0.0, |m, (a, b)| f64::max(m, (a - b).abs()))
    }

    /// Elementwise `a * self + b`.
    pub fn affine(&self, a: f64, b: f64) -> QTable {
        QTable { values: self.values.iter().map(|v| a * v + b).collect(), ..self.clone() }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

pub(crate) fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // Rounding can leave acc slightly below one; fall back to the last supported entry.
    probs.iter().rposition(|p| *p > 0.0).unwrap_or(probs.len() - 1)
}

fn random_simplex<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
    let total: f64 = raw.iter().sum();
    let mut row: Vec<f64> = raw.iter().map(|x| x / total).collect();
    // Push the rounding residue onto the largest entry so the row sums to one.
    let residue = 1.0 - row.iter().sum::<f64>();
    let largest = (0..n).max_by(|&i, &j| row[i].total_cmp(&row[j])).unwrap_or(0);
    row[largest] += residue;
    row
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rejects_non_stochastic_rows() {
        let err = TabularMdp::new(1, 1, vec![0.5], vec![0.0], vec![false], 0.9);
        assert!(matches!(err, Err(Error::InvalidModel(_))));
    }

    #[test]
    fn rejects_bad_gamma_and_shapes() {
        assert!(TabularMdp::new(1, 1, vec![1.0], vec![0.0], vec![false], 1.5).is_err());
        assert!(matches!(
            TabularMdp::new(2, 1, vec![1.0], vec![0.0], vec![false; 2], 0.5),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn terminal_rows_become_zero_reward_self_loops() {
        let mdp = TabularMdp::new(
            2,
            1,
            vec![0.0, 1.0, 1.0, 0.0],
            vec![5.0, 5.0, 5.0, 5.0],
            vec![false, true],
            1.0,
        )
        .unwrap();
        assert_eq!(mdp.transition_row(1, 0), &[0.0, 1.0]);
        assert_eq!(mdp.reward_row(1, 0), &[0.0, 0.0]);
        assert_eq!(mdp.expected_reward(0, 0), 5.0);
    }

    #[test]
    fn random_models_are_stochastic() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let mdp = TabularMdp::random(&mut rng, 4, 3, 0.9).unwrap();
            for s in 0..4 {
                for a in 0..3 {
                    let total: f64 = mdp.transition_row(s, a).iter().sum();
                    assert!((total - 1.0).abs() <= STOCHASTIC_TOL);
                }
            }
        }
    }

    #[test]
    fn epsilon_greedy_rows() {
        let q = QTable::from_vec(2, 2, vec![1.0, 0.0, 0.0, 2.0]).unwrap();
        let mu = StochasticPolicy::epsilon_greedy(&q, 0.1).unwrap();
        assert!((mu.prob(0, 0) - 0.95).abs() < 1e-15);
        assert!((mu.prob(1, 1) - 0.95).abs() < 1e-15);
        assert!(mu.has_full_support());
    }

    #[test]
    fn policy_row_validation() {
        assert!(StochasticPolicy::new(1, 2, vec![0.7, 0.7]).is_err());
        assert!(StochasticPolicy::new(1, 2, vec![1.2, -0.2]).is_err());
        assert!(StochasticPolicy::deterministic(2, &[0, 2]).is_err());
    }

    #[test]
    fn sampling_follows_row() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pi = StochasticPolicy::new(1, 3, vec![0.2, 0.0, 0.8]).unwrap();
        let n = 20_000;
        let mut counts = [0usize; 3];
        for _ in 0..n {
            counts[pi.sample(0, &mut rng)] += 1;
        }
        assert_eq!(counts[1], 0);
        let freq = counts[0] as f64 / n as f64;
        // 4 standard errors
        assert!((freq - 0.2).abs() < 4.0 * (0.2f64 * 0.8 / n as f64).sqrt());
    }
}
