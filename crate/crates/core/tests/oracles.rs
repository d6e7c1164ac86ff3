//! Library results checked against independently written references.

mod common;

use common::{mixed_op_reference, problem, sup_distance, to_table, with_terminal};
use qsigma::envs::{EpisodicEnv, MdpEnv, MountainCar, StartState};
use qsigma::linear::{LinearConfig, LinearLearner, TileCoder};
use qsigma::mdp::{exact_q_pi, QTable, StochasticPolicy, TabularMdp};
use qsigma::operators::{mixed_fixed_point, mixed_sampling_lambda_op, MixedOpParams};
use qsigma::td::{lambda_return_errors, LearnerConfig, StepSize, TabularLearner, TraceKind, Transition};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn episodic_problem(seed: u64) -> (TabularMdp, StochasticPolicy, StochasticPolicy) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Enough states that episodes run several steps before absorbing.
    let p = loop {
        let p = problem(&mut rng, 0.5, 0.95);
        if p.mdp.num_states() >= 4 {
            break p;
        }
    };
    let terminal = p.mdp.num_states() - 1;
    (with_terminal(&p.mdp, terminal, 0.05), p.pi, p.mu)
}

/// Q values with terminal rows pinned to zero.
fn random_q(mdp: &TabularMdp, rng: &mut ChaCha8Rng) -> QTable {
    let na = mdp.num_actions();
    let values = (0..mdp.num_pairs())
        .map(|i| if mdp.is_terminal(i / na) { 0.0 } else { rng.gen_range(-2.0..2.0) })
        .collect();
    QTable::from_vec(mdp.num_states(), na, values).unwrap()
}

/// Textbook on-line tabular learner with dense traces, stepping in lockstep
/// with the library. `bootstrap(q, s', a')` returns the value backed up from
/// the next pair.
struct Reference<'a> {
    q: Vec<f64>,
    z: Vec<f64>,
    visits: Vec<f64>,
    na: usize,
    gamma: f64,
    lambda: f64,
    alpha: Option<f64>,
    replacing: bool,
    bootstrap: &'a dyn Fn(&[f64], usize, usize) -> f64,
}

impl Reference<'_> {
    fn step(&mut self, tr: &Transition) -> f64 {
        let target = match tr.next_action {
            Some(b) if !tr.terminal => (self.bootstrap)(&self.q, tr.next_state, b),
            _ => 0.0,
        };
        let i = tr.state * self.na + tr.action;
        let delta = tr.reward + self.gamma * target - self.q[i];
        for z in self.z.iter_mut() {
            *z *= self.gamma * self.lambda;
        }
        if self.replacing {
            self.z[i] = 1.0;
        } else {
            self.z[i] += 1.0;
        }
        self.visits[i] += 1.0;
        for j in 0..self.q.len() {
            let alpha = self.alpha.unwrap_or(1.0 / self.visits[j].max(1.0));
            self.q[j] += alpha * delta * self.z[j];
        }
        delta
    }
}

/// Runs the library learner and the reference side by side on identical
/// transitions and returns the largest table disagreement seen.
fn lockstep(
    mdp: &TabularMdp,
    pi: &StochasticPolicy,
    mu: &StochasticPolicy,
    cfg: LearnerConfig,
    reference: &mut Reference<'_>,
    episodes: usize,
    seed: u64,
) -> f64 {
    let env = MdpEnv::new(mdp.clone(), StartState::Uniform).unwrap();
    let q0 = QTable::from_vec(mdp.num_states(), mdp.num_actions(), reference.q.clone()).unwrap();
    let mut learner = TabularLearner::new(cfg, q0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let mut steps = 0;
    for _ in 0..episodes {
        reference.z.iter_mut().for_each(|z| *z = 0.0);
        learner
            .run_episode_observed(&env, pi, mu, &mut rng, |view| {
                let delta = reference.step(view.transition);
                assert!((delta - view.delta).abs() <= 1e-12, "delta {} vs {}", view.delta, delta);
                worst = worst.max(sup_distance(view.q.as_slice(), &reference.q));
                steps += 1;
            })
            .unwrap();
    }
    assert!(steps >= 2 * episodes, "episodes were too short to exercise traces: {steps}");
    worst
}

#[test]
fn sigma_one_matches_textbook_sarsa_lambda() {
    for seed in 0..10 {
        let (mdp, pi, mu) = episodic_problem(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let q0 = random_q(&mdp, &mut rng);
        let sarsa = |q: &[f64], s: usize, b: usize| q[s * mdp.num_actions() + b];
        for trace in [TraceKind::Accumulating, TraceKind::Replacing] {
            let cfg = LearnerConfig::new(1.0, 0.7, mdp.gamma(), StepSize::Constant(0.1)).unwrap().with_trace(trace);
            let mut reference = Reference {
                q: q0.as_slice().to_vec(),
                z: vec![0.0; mdp.num_pairs()],
                visits: vec![0.0; mdp.num_pairs()],
                na: mdp.num_actions(),
                gamma: mdp.gamma(),
                lambda: 0.7,
                alpha: Some(0.1),
                replacing: trace == TraceKind::Replacing,
                bootstrap: &sarsa,
            };
            // pi differs from mu and must not matter when sigma = 1.
            let worst = lockstep(&mdp, &pi, &mu, cfg, &mut reference, 20, seed);
            assert!(worst <= 1e-12, "seed {seed} {trace:?}: {worst}");
        }
    }
}

#[test]
fn sigma_zero_matches_expected_reference_off_policy() {
    for seed in 0..10 {
        let (mdp, pi, mu) = episodic_problem(50 + seed);
        let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
        let q0 = random_q(&mdp, &mut rng);
        let na = mdp.num_actions();
        let expected = |q: &[f64], s: usize, _b: usize| (0..na).map(|a| pi.prob(s, a) * q[s * na + a]).sum::<f64>();
        for (trace, alpha) in [
            (TraceKind::Accumulating, StepSize::Constant(0.05)),
            (TraceKind::Replacing, StepSize::InverseVisitCount),
        ] {
            let cfg = LearnerConfig::new(0.0, 0.9, mdp.gamma(), alpha).unwrap().with_trace(trace);
            let mut reference = Reference {
                q: q0.as_slice().to_vec(),
                z: vec![0.0; mdp.num_pairs()],
                visits: vec![0.0; mdp.num_pairs()],
                na,
                gamma: mdp.gamma(),
                lambda: 0.9,
                alpha: match alpha {
                    StepSize::Constant(a) => Some(a),
                    StepSize::InverseVisitCount => None,
                },
                replacing: trace == TraceKind::Replacing,
                bootstrap: &expected,
            };
            let worst = lockstep(&mdp, &pi, &mu, cfg, &mut reference, 20, seed);
            assert!(worst <= 1e-12, "seed {seed} {trace:?}: {worst}");
        }
    }
}

#[test]
fn mixed_operator_matches_neumann_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..50 {
        let p = problem(&mut rng, 0.1, 0.95);
        let sigma = rng.gen_range(0.0..=1.0);
        let lambda = rng.gen_range(0.0..=1.0);
        let q = QTable::random(&mut rng, p.mdp.num_states(), p.mdp.num_actions(), 3.0);
        let got = mixed_sampling_lambda_op(&p.mdp, &p.pi, &p.mu, MixedOpParams::new(sigma, lambda).unwrap(), &q).unwrap();
        let want = mixed_op_reference(&p.mdp, &p.pi, &p.mu, sigma, lambda, q.as_slice());
        assert!(sup_distance(got.as_slice(), &want) <= 1e-10);
    }
}

#[test]
fn fixed_point_is_value_of_mixed_policy() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..30 {
        let p = problem(&mut rng, 0.1, 0.9);
        let sigma = rng.gen_range(0.0..=1.0);
        let lambda = rng.gen_range(0.0..=1.0);
        let params = MixedOpParams::new(sigma, lambda).unwrap();
        let q0 = QTable::zeros(p.mdp.num_states(), p.mdp.num_actions());
        let fixed = mixed_fixed_point(&p.mdp, &p.pi, &p.mu, params, &q0, 1e-12, 100_000).unwrap();
        let nu = p.mu.mix(&p.pi, sigma).unwrap();
        let want = common::evaluate(&p.mdp, &nu, 1e-12);
        assert!(sup_distance(fixed.as_slice(), &want) <= 1e-9);
    }
}

#[test]
fn exact_evaluation_matches_iterated_backup() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..30 {
        let p = problem(&mut rng, 0.1, 0.95);
        let q = exact_q_pi(&p.mdp, &p.pi).unwrap();
        let want = to_table(&p.mdp, common::evaluate(&p.mdp, &p.pi, 1e-12));
        assert!(q.distance(&want) <= 1e-9);
    }
}

/// Samples an episode from `mu` by hand.
fn trajectory(env: &MdpEnv, mu: &StochasticPolicy, rng: &mut ChaCha8Rng) -> Vec<Transition> {
    let mut out = Vec::new();
    let mut s = env.reset(rng);
    let mut a = mu.sample(s, rng);
    loop {
        let step = env.step(&s, a, rng).unwrap();
        let next_action = (!step.terminal).then(|| mu.sample(step.next, rng));
        out.push(Transition {
            state: s,
            action: a,
            reward: step.reward,
            next_state: step.next,
            next_action,
            terminal: step.terminal,
        });
        match next_action {
            None => return out,
            Some(b) => {
                s = step.next;
                a = b;
            }
        }
    }
}

#[test]
fn td_error_has_zero_mean_at_the_true_values() {
    // With q = q^nu the mixed TD error averages to zero from every pair.
    let (mdp, pi, mu) = episodic_problem(11);
    let sigma = 0.4;
    let nu = mu.mix(&pi, sigma).unwrap();
    let q = to_table(&mdp, common::evaluate(&mdp, &nu, 1e-13));
    let env = MdpEnv::new(mdp.clone(), StartState::Uniform).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let na = mdp.num_actions();
    let (mut sum, mut sq, mut n) = (vec![0.0; mdp.num_pairs()], vec![0.0; mdp.num_pairs()], vec![0.0; mdp.num_pairs()]);
    let cfg = LearnerConfig::new(sigma, 0.0, mdp.gamma(), StepSize::Constant(0.1)).unwrap();
    let live: Vec<usize> = (0..mdp.num_pairs()).filter(|i| !mdp.is_terminal(i / na)).collect();
    while live.iter().map(|&i| n[i]).fold(f64::INFINITY, f64::min) < 20_000.0 {
        for tr in trajectory(&env, &mu, &mut rng) {
            let delta = lambda_return_errors(std::slice::from_ref(&tr), &q, &pi, &cfg).unwrap()[0];
            let i = tr.state * na + tr.action;
            sum[i] += delta;
            sq[i] += delta * delta;
            n[i] += 1.0;
        }
    }
    for &i in &live {
        let mean = sum[i] / n[i];
        let se = ((sq[i] / n[i] - mean * mean).max(0.0) / n[i]).sqrt();
        assert!(mean.abs() <= 4.0 * se + 1e-12, "pair {i}: mean {mean}, se {se}");
    }
}

#[test]
fn forward_view_averages_to_operator_correction() {
    // E[sum_t (gamma lambda)^t delta_t | S_0, A_0] = (T q - q)(S_0, A_0).
    let (mdp, pi, mu) = episodic_problem(13);
    let (sigma, lambda) = (0.6, 0.7);
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let q = random_q(&mdp, &mut rng);
    let want = mixed_op_reference(&mdp, &pi, &mu, sigma, lambda, q.as_slice());
    let cfg = LearnerConfig::new(sigma, lambda, mdp.gamma(), StepSize::Constant(0.1)).unwrap();
    let env = MdpEnv::new(mdp.clone(), StartState::Uniform).unwrap();
    let na = mdp.num_actions();
    let decay = mdp.gamma() * lambda;
    let mut stats = vec![(0.0, 0.0, 0.0); mdp.num_pairs()];
    for _ in 0..200_000 {
        let traj = trajectory(&env, &mu, &mut rng);
        let errors = lambda_return_errors(&traj, &q, &pi, &cfg).unwrap();
        // Hand-computed forward sum from the first step.
        let mut by_hand = 0.0;
        let mut weight = 1.0;
        for tr in &traj {
            let bootstrap = match tr.next_action {
                Some(b) => {
                    let expected: f64 = (0..na).map(|a| pi.prob(tr.next_state, a) * q.get(tr.next_state, a)).sum();
                    sigma * q.get(tr.next_state, b) + (1.0 - sigma) * expected
                }
                None => 0.0,
            };
            by_hand += weight * (tr.reward + mdp.gamma() * bootstrap - q.get(tr.state, tr.action));
            weight *= decay;
        }
        assert!((errors[0] - by_hand).abs() <= 1e-10);
        let i = traj[0].state * na + traj[0].action;
        let e = &mut stats[i];
        e.0 += by_hand;
        e.1 += by_hand * by_hand;
        e.2 += 1.0;
    }
    for (i, &(sum, sq, n)) in stats.iter().enumerate() {
        if n == 0.0 {
            continue;
        }
        let mean = sum / n;
        let se = ((sq / n - mean * mean).max(0.0) / n).sqrt();
        let target = want[i] - q.as_slice()[i];
        assert!((mean - target).abs() <= 4.0 * se + 1e-9, "pair {i}: {mean} vs {target} (se {se})");
    }
}

/// Linear learner against a dense-weight reference written from the update rule.
fn linear_lockstep(sigma: f64, lambda: f64, trace: TraceKind, tol: f64) {
    let coder = TileCoder::mountain_car(8, 8, 4096).unwrap();
    let alpha = 0.5;
    let learner_cfg = LearnerConfig::new(sigma, lambda, 1.0, StepSize::Constant(alpha))
        .unwrap()
        .with_trace(trace)
        .with_max_steps(1500);
    let cfg = LinearConfig { learner: learner_cfg, epsilon: 0.1, alpha_per_tiling: true };
    let mut learner = LinearLearner::new(coder.clone(), cfg).unwrap();
    let step_size = alpha / 8.0;

    let mut w = vec![0.0; coder.hash_size()];
    let mut z = vec![0.0; coder.hash_size()];
    let value = |w: &[f64], f: &[usize]| f.iter().map(|&i| w[i]).sum::<f64>();
    let choose = |vals: &[f64], rng: &mut ChaCha8Rng| {
        if rng.gen::<f64>() < 0.1 {
            rng.gen_range(0..3)
        } else {
            let mut best = 0;
            for (a, v) in vals.iter().enumerate() {
                if *v > vals[best] {
                    best = a;
                }
            }
            best
        }
    };

    let mut lib_rng = ChaCha8Rng::seed_from_u64(21);
    let mut ref_rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..5 {
        z.iter_mut().for_each(|v| *v = 0.0);
        let mut s = MountainCar.reset(&mut ref_rng);
        let feats = |s: &[f64]| (0..3).map(|a| coder.features(s, a).unwrap()).collect::<Vec<_>>();
        let mut f = feats(&s.as_array());
        let vals: Vec<f64> = f.iter().map(|x| value(&w, x)).collect();
        let mut a = choose(&vals, &mut ref_rng);
        let mut ref_steps = Vec::new();
        for t in 0..1500 {
            let q_sa = value(&w, &f[a]);
            let step = MountainCar.step(&s, a, &mut ref_rng).unwrap();
            let (target, next) = if step.terminal {
                (0.0, None)
            } else {
                let nf = feats(&step.next.as_array());
                let vals: Vec<f64> = nf.iter().map(|x| value(&w, x)).collect();
                let b = choose(&vals, &mut ref_rng);
                let max = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                (sigma * vals[b] + (1.0 - sigma) * max, Some((nf, b)))
            };
            let delta = step.reward + target - q_sa;
            for v in z.iter_mut() {
                *v *= lambda;
            }
            for &i in &f[a] {
                z[i] = if trace == TraceKind::Replacing { 1.0 } else { z[i] + 1.0 };
            }
            for i in 0..w.len() {
                w[i] += step_size * delta * z[i];
            }
            ref_steps.push((a, delta));
            match next {
                Some((nf, b)) if t + 1 < 1500 => {
                    s = step.next;
                    f = nf;
                    a = b;
                }
                _ => break,
            }
        }

        let mut lib_steps = Vec::new();
        learner
            .run_episode_observed(&MountainCar, &mut lib_rng, |view| lib_steps.push((view.action, view.delta)))
            .unwrap();
        assert_eq!(lib_steps.len(), ref_steps.len());
        for ((la, ld), (ra, rd)) in lib_steps.iter().zip(&ref_steps) {
            assert_eq!(la, ra);
            assert!((ld - rd).abs() <= tol, "delta {ld} vs {rd}");
        }
        assert!(sup_distance(&learner.q().weights, &w) <= tol);
    }
}

#[test]
fn linear_sigma_one_lambda_zero_is_semi_gradient_sarsa() {
    linear_lockstep(1.0, 0.0, TraceKind::Accumulating, 1e-12);
}

#[test]
fn linear_sigma_zero_lambda_zero_is_q_learning() {
    linear_lockstep(0.0, 0.0, TraceKind::Replacing, 1e-12);
}

#[test]
fn linear_traces_match_dense_reference() {
    // The sparse trace drops entries below a floor, so agreement is approximate.
    linear_lockstep(0.5, 0.9, TraceKind::Replacing, 1e-6);
}
