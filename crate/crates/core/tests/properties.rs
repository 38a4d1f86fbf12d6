//! Property tests over randomly generated tiny games and policies.

use mapt_core::envs::{self, TinySpec};
use mapt_core::game_io::{read_game, write_game};
use mapt_core::objectives::{self, entropy_chain, infinite_trial_value, mixture_decomposition};
use mapt_core::oracle;
use mapt_core::policy::{read_checkpoint, write_checkpoint};
use mapt_core::stats::{exact_distributions, kl_divergence, shannon_entropy};
use mapt_core::verify::{perturb, randomize};
use mapt_core::{sample_batch, MarkovGame, ObjectiveKind, PolicyClass, PolicySet};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tiny(shape: usize, horizon: usize, seed: u64, scale: f64) -> (MarkovGame, PolicySet) {
    let (s, a): (Vec<usize>, Vec<usize>) = match shape {
        0 => (vec![2, 2], vec![2, 2]),
        1 => (vec![3, 3], vec![2, 2]),
        2 => (vec![4, 4], vec![3, 3]),
        _ => (vec![2, 2, 2], vec![2, 2, 2]),
    };
    let g = envs::tiny_mg(&TinySpec::random(s, a, horizon, seed)).unwrap();
    let p = randomize(&PolicySet::tabular_uniform(&g), scale, &mut ChaCha8Rng::seed_from_u64(seed ^ 0xabc));
    (g, p)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn entropy_is_between_zero_and_log_support(w in prop::collection::vec(0.0f64..1.0, 1..30)) {
        let total: f64 = w.iter().sum();
        prop_assume!(total > 1e-9);
        let p: Vec<f64> = w.iter().map(|x| x / total).collect();
        let h = shannon_entropy(&p);
        prop_assert!(h >= -1e-12);
        prop_assert!(h <= (p.len() as f64).ln() + 1e-12);
    }

    #[test]
    fn kl_is_nonnegative(w in prop::collection::vec(0.01f64..1.0, 2..12), v in prop::collection::vec(0.01f64..1.0, 12)) {
        let n = w.len();
        let (sw, sv): (f64, f64) = (w.iter().sum(), v[..n].iter().sum());
        let p: Vec<f64> = w.iter().map(|x| x / sw).collect();
        let q: Vec<f64> = v[..n].iter().map(|x| x / sv).collect();
        prop_assert!(kl_divergence(&p, &q).unwrap() >= -1e-12);
        prop_assert!(kl_divergence(&p, &p).unwrap().abs() < 1e-12);
    }

    #[test]
    fn chain_and_decomposition_hold(shape in 0usize..4, horizon in 1usize..5, seed in any::<u64>(), scale in 0.0f64..5.0) {
        let (g, p) = tiny(shape, horizon, seed, scale);
        let chain = entropy_chain(&g, &p).unwrap();
        prop_assert!(chain.holds(1e-9), "{:?}", chain.values());
        prop_assert!(mixture_decomposition(&g, &p).unwrap().residual() <= 1e-9);
    }

    #[test]
    fn exact_distributions_are_normalized(shape in 0usize..4, horizon in 1usize..5, seed in any::<u64>()) {
        let (g, p) = tiny(shape, horizon, seed, 2.0);
        let d = exact_distributions(&g, &p).unwrap();
        prop_assert!((d.joint.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for m in &d.marginals {
            prop_assert!((m.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn single_trial_never_exceeds_infinite_trial(shape in 0usize..2, horizon in 1usize..4, seed in any::<u64>()) {
        let (g, p) = tiny(shape, horizon, seed, 3.0);
        for kind in [ObjectiveKind::Joint, ObjectiveKind::Disjoint(0), ObjectiveKind::Mixture] {
            let z1 = oracle::exact_single_trial_objective(&g, &p, kind).unwrap();
            prop_assert!(z1 <= infinite_trial_value(&g, &p, kind).unwrap() + 1e-9);
        }
    }

    #[test]
    fn surrogate_identity(seed in any::<u64>(), agent in 0usize..2, noise in 0.0f64..1.5) {
        let (g, behavior) = tiny(0, 3, seed, 1.0);
        let cand = perturb(behavior.agent(agent), noise, &mut ChaCha8Rng::seed_from_u64(seed));
        let lhs = oracle::exact_surrogate(&g, &behavior, agent, cand.params(), ObjectiveKind::Mixture).unwrap();
        let rhs = oracle::exact_single_trial_objective(&g, &behavior.with_agent(agent, cand), ObjectiveKind::Mixture).unwrap();
        prop_assert!((lhs - rhs).abs() < 1e-9);
    }

    #[test]
    fn sampling_is_seed_deterministic(seed in any::<u64>()) {
        let g = envs::open_grid(3, 2, 6).unwrap();
        let p = PolicySet::for_game(&g, &PolicyClass::Mlp { hidden: vec![4] }, seed);
        let a = sample_batch(&g, &p, 3, seed).unwrap();
        let b = sample_batch(&g, &p, 3, seed).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn checkpoints_round_trip_bit_exact(seed in any::<u64>(), tabular in any::<bool>()) {
        let room = envs::secret_room(&envs::SecretRoomParams::default()).unwrap();
        let class = if tabular { PolicyClass::Tabular } else { PolicyClass::Mlp { hidden: vec![5, 3] } };
        let p = randomize(&PolicySet::for_game(&room.game, &class, seed), 2.0, &mut ChaCha8Rng::seed_from_u64(seed));
        let bytes = write_checkpoint(&p);
        let back = read_checkpoint(&bytes).unwrap();
        prop_assert_eq!(write_checkpoint(&back), bytes);
        for (a, b) in p.agents().iter().zip(back.agents()) {
            prop_assert!(a.params().iter().zip(b.params()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn game_files_round_trip(shape in 0usize..4, horizon in 1usize..5, seed in any::<u64>()) {
        let (g, _) = tiny(shape, horizon, seed, 1.0);
        let back = read_game(&write_game(&g)).unwrap();
        prop_assert!(back.validate().is_empty());
        prop_assert_eq!(back.transitions(), g.transitions());
        prop_assert_eq!(back.initial(), g.initial());
    }

    #[test]
    fn finite_trial_mean_is_bounded(seed in any::<u64>(), trials in 1usize..6) {
        let (g, p) = tiny(1, 3, seed, 1.0);
        let est = objectives::finite_trial_estimate(&g, &p, ObjectiveKind::Joint, trials, 5, seed).unwrap();
        prop_assert!(est.mean >= 0.0);
        prop_assert!(est.mean <= (g.num_states() as f64).ln() + 1e-12);
    }
}
