//! Invariants checked over generated inputs.

mod common;

use common::problem;
use proptest::prelude::*;
use qsigma::envs::{MdpEnv, StartState};
use qsigma::experiments::{moving_average, run_rng, summarize, ExperimentRecord, Metric};
use qsigma::linear::TileCoder;
use qsigma::mdp::{bellman_op, bellman_optimality_op, greedy_policy, QTable};
use qsigma::operators::{control_rate_bound, mixed_sampling_lambda_op, MixedOpParams, Resolvent};
use qsigma::td::{q_sigma_td_error, EligibilityTrace, LearnerConfig, StepSize, TabularLearner, TraceKind, Transition};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn config() -> ProptestConfig {
    ProptestConfig { cases: 64, ..ProptestConfig::default() }
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn bellman_operators_contract(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = problem(&mut rng, 0.0, 1.0);
        let (ns, na) = (p.mdp.num_states(), p.mdp.num_actions());
        let q1 = QTable::random(&mut rng, ns, na, 5.0);
        let q2 = QTable::random(&mut rng, ns, na, 5.0);
        let d = q1.distance(&q2);
        let g = p.mdp.gamma();
        let tp = bellman_op(&p.mdp, &p.pi, &q1).unwrap().distance(&bellman_op(&p.mdp, &p.pi, &q2).unwrap());
        prop_assert!(tp <= g * d + 1e-12);
        let ts = bellman_optimality_op(&p.mdp, &q1).unwrap().distance(&bellman_optimality_op(&p.mdp, &q2).unwrap());
        prop_assert!(ts <= g * d + 1e-12);
    }

    #[test]
    fn greedy_choice_survives_positive_affine_maps(
        seed in any::<u64>(),
        scale in 0.01f64..100.0,
        shift in -100.0f64..100.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = QTable::random(&mut rng, 5, 4, 3.0);
        let moved = q.affine(scale, shift);
        for s in 0..5 {
            prop_assert_eq!(q.argmax(s), moved.argmax(s));
        }
        prop_assert_eq!(greedy_policy(&q), greedy_policy(&moved));
    }

    #[test]
    fn operator_is_affine_in_sigma(seed in any::<u64>(), lambda in 0.0f64..=1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = problem(&mut rng, 0.0, 0.95);
        let q = QTable::random(&mut rng, p.mdp.num_states(), p.mdp.num_actions(), 2.0);
        let at = |sigma: f64| {
            mixed_sampling_lambda_op(&p.mdp, &p.pi, &p.mu, MixedOpParams::new(sigma, lambda).unwrap(), &q).unwrap()
        };
        let (t0, t1) = (at(0.0), at(1.0));
        let sigma = rng.gen_range(0.0..=1.0);
        let ts = at(sigma);
        for i in 0..ts.as_slice().len() {
            let line = sigma * t1.as_slice()[i] + (1.0 - sigma) * t0.as_slice()[i];
            prop_assert!((ts.as_slice()[i] - line).abs() <= 1e-10);
        }
    }

    #[test]
    fn on_policy_operator_ignores_sigma(seed in any::<u64>(), lambda in 0.0f64..=1.0, sigma in 0.0f64..=1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = problem(&mut rng, 0.0, 0.95);
        let q = QTable::random(&mut rng, p.mdp.num_states(), p.mdp.num_actions(), 2.0);
        let op = |s: f64| mixed_sampling_lambda_op(&p.mdp, &p.pi, &p.pi, MixedOpParams::new(s, lambda).unwrap(), &q).unwrap();
        prop_assert!(op(sigma).distance(&op(0.0)) <= 1e-10);
    }

    #[test]
    fn td_error_is_convex_combination(
        seed in any::<u64>(),
        sigma in 0.0f64..=1.0,
        gamma in 0.0f64..=1.0,
        terminal in any::<bool>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = problem(&mut rng, 0.0, 1.0);
        let (ns, na) = (p.mdp.num_states(), p.mdp.num_actions());
        let q = QTable::random(&mut rng, ns, na, 4.0);
        let tr = Transition {
            state: rng.gen_range(0..ns),
            action: rng.gen_range(0..na),
            reward: rng.gen_range(-1.0..1.0),
            next_state: rng.gen_range(0..ns),
            next_action: (!terminal).then(|| rng.gen_range(0..na)),
            terminal,
        };
        let d = q_sigma_td_error(&q, &tr, &p.pi, sigma, gamma).unwrap();
        let d1 = q_sigma_td_error(&q, &tr, &p.pi, 1.0, gamma).unwrap();
        let d0 = q_sigma_td_error(&q, &tr, &p.pi, 0.0, gamma).unwrap();
        prop_assert!((d - (sigma * d1 + (1.0 - sigma) * d0)).abs() <= 1e-12);
        prop_assert!(d >= d0.min(d1) - 1e-12 && d <= d0.max(d1) + 1e-12);
    }

    #[test]
    fn resolvent_rows_sum_to_horizon(seed in any::<u64>(), lambda in 0.0f64..=1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = problem(&mut rng, 0.0, 0.99);
        let m = Resolvent::new(&p.mdp, &p.mu, lambda).unwrap().matrix().unwrap();
        let horizon = 1.0 / (1.0 - p.mdp.gamma() * lambda);
        for i in 0..m.nrows() {
            prop_assert!((m.row(i).sum() - horizon).abs() <= 1e-9 * horizon);
            prop_assert!(m.row(i).iter().all(|v| *v >= -1e-12));
        }
    }

    #[test]
    fn one_feature_per_tiling(
        position in -1.2f64..=0.5,
        velocity in -0.07f64..=0.07,
        action in 0usize..3,
        tilings in 1usize..=16,
        hashed in any::<bool>(),
    ) {
        let hash_size = if hashed { 257 } else { 1 << 16 };
        let coder = TileCoder::mountain_car(tilings, 8, hash_size).unwrap();
        let f = coder.features(&[position, velocity], action).unwrap();
        prop_assert_eq!(f.len(), tilings);
        prop_assert!(f.iter().all(|&i| i < hash_size));
        if coder.is_collision_free() {
            let mut unique = f.clone();
            unique.sort_unstable();
            unique.dedup();
            prop_assert_eq!(unique.len(), tilings);
        }
    }

    #[test]
    fn summary_ignores_record_order(seed in any::<u64>(), runs in 2usize..6, episodes in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut records: Vec<ExperimentRecord> = (0..runs)
            .flat_map(|run| (0..episodes).map(move |episode| (run, episode)))
            .map(|(run, episode)| ExperimentRecord {
                run,
                episode,
                metric: Metric::EpisodeReturn,
                value: rng.gen_range(-200.0..0.0),
            })
            .collect();
        let before = summarize(&records, Metric::EpisodeReturn, episodes).unwrap();
        for i in (1..records.len()).rev() {
            records.swap(i, rng.gen_range(0..=i));
        }
        let after = summarize(&records, Metric::EpisodeReturn, episodes).unwrap();
        prop_assert_eq!(before, after);
        prop_assert!(before.lower <= before.mean && before.mean <= before.upper);
    }

    #[test]
    fn moving_average_is_bounded_and_flat_on_constants(
        series in proptest::collection::vec(-100.0f64..100.0, 1..60),
        window in 1usize..30,
        constant in -50.0f64..50.0,
    ) {
        let out = moving_average(&series, window).unwrap();
        prop_assert_eq!(out.len(), series.len());
        for (i, v) in out.iter().enumerate() {
            let seen = &series[i + 1 - (i + 1).min(window)..=i];
            let lo = seen.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = seen.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(*v >= lo - 1e-9 && *v <= hi + 1e-9);
        }
        let flat = moving_average(&vec![constant; series.len()], window).unwrap();
        prop_assert!(flat.iter().all(|v| (v - constant).abs() <= 1e-9));
    }

    #[test]
    fn traces_stay_in_range(
        marks in proptest::collection::vec(0usize..10, 1..200),
        factor in 0.0f64..=1.0,
    ) {
        for kind in [TraceKind::Accumulating, TraceKind::Replacing] {
            let mut z = EligibilityTrace::new(kind, 10);
            for &i in &marks {
                z.decay_and_mark(factor, i);
                prop_assert!(z.within_bounds());
                if kind == TraceKind::Accumulating && factor < 1.0 {
                    prop_assert!(z.values().iter().all(|v| *v <= 1.0 / (1.0 - factor) + 1e-9));
                }
            }
        }
    }

    #[test]
    fn rate_bound_falls_as_sigma_grows(
        gamma in 0.0f64..=1.0,
        lambda in 0.0f64..0.99,
        a in 0.0f64..=1.0,
        b in 0.0f64..=1.0,
    ) {
        prop_assume!(gamma * lambda < 1.0);
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let at = |s| control_rate_bound(MixedOpParams::new(s, lambda).unwrap(), gamma).unwrap();
        prop_assert!(at(hi) <= at(lo) + 1e-12);
    }

    #[test]
    fn seeded_runs_repeat_exactly(seed in any::<u64>(), sigma in 0.0f64..=1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = problem(&mut rng, 0.5, 0.95);
        let env = MdpEnv::new(p.mdp.clone(), StartState::Uniform).unwrap();
        let cfg = LearnerConfig::new(sigma, 0.8, p.mdp.gamma(), StepSize::Constant(0.1)).unwrap().with_max_steps(200);
        let go = || {
            let mut rng = run_rng(seed, 3);
            let q0 = QTable::zeros(p.mdp.num_states(), p.mdp.num_actions());
            let mut learner = TabularLearner::new(cfg, q0).unwrap();
            for _ in 0..3 {
                learner.run_episode(&env, &p.pi, &p.mu, &mut rng).unwrap();
            }
            learner.into_q()
        };
        prop_assert_eq!(go(), go());
    }
}
