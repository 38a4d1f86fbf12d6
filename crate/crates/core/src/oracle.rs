//! Brute-force ground truth for tiny games: exhaustive trajectory
//! enumeration, exact single-trial objectives and surrogates, central
//! finite differences, and exact independent policy-gradient ascent.

use crate::error::{Error, Result};
use crate::game::{MarkovGame, ObservationModel, Trajectory};
use crate::objectives::{check_kind, infinite_trial_value, single_trial_value, ObjectiveKind};
use crate::policy::{AgentPolicy, PolicySet};

/// Default bound on `(|S|·|A|)^T`.
pub const DEFAULT_ENUMERATION_CAP: u128 = 10_000_000;

/// Every realizable trajectory with its probability.
#[derive(Debug, Clone)]
pub struct TrajectoryEnsemble {
    pub entries: Vec<(Trajectory, f64)>,
}

impl TrajectoryEnsemble {
    pub fn total_probability(&self) -> f64 {
        self.entries.iter().map(|(_, p)| p).sum()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Whether the worst-case trajectory count `(|S|·|A|)^T` fits under `cap`.
pub fn is_enumerable(game: &MarkovGame, cap: u128) -> bool {
    check_enumerable(game, cap).is_ok()
}

fn check_enumerable(game: &MarkovGame, cap: u128) -> Result<()> {
    let per_step = game.num_states() as u128 * game.num_actions() as u128;
    let required = (0..game.horizon()).try_fold(1u128, |acc, _| acc.checked_mul(per_step)).unwrap_or(u128::MAX);
    if required > cap {
        return Err(Error::ExactCapExceeded { required, cap });
    }
    Ok(())
}

/// Calls `visit(states, actions, probability)` for every trajectory with
/// nonzero probability, depth first.
pub fn for_each_trajectory(
    game: &MarkovGame,
    policies: &PolicySet,
    cap: u128,
    mut visit: impl FnMut(&[usize], &[usize], f64),
) -> Result<()> {
    check_enumerable(game, cap)?;
    policies.check_compatible(game)?;
    let tables = policies.action_tables();
    let n = game.num_agents();
    let horizon = game.horizon();
    let obs = game.observations();
    // probability of each joint action in each joint state
    let mut joint_action = vec![0.0; game.num_states() * game.num_actions()];
    let mut locals = vec![0u32; n];
    for s in 0..game.num_states() {
        for a in 0..game.num_actions() {
            game.action_radix().decode_into(a, &mut locals);
            joint_action[s * game.num_actions() + a] = locals
                .iter()
                .enumerate()
                .map(|(i, &ai)| tables.probs(i, obs.observe(s, i))[ai as usize])
                .product();
        }
    }
    let mut states = Vec::with_capacity(horizon);
    let mut actions = Vec::with_capacity(horizon);

    struct Walk<'a, F> {
        game: &'a MarkovGame,
        joint_action: &'a [f64],
        visit: &'a mut F,
    }

    fn descend<F: FnMut(&[usize], &[usize], f64)>(
        w: &mut Walk<'_, F>,
        s: usize,
        prob: f64,
        states: &mut Vec<usize>,
        actions: &mut Vec<usize>,
    ) {
        let na = w.game.num_actions();
        states.push(s);
        for a in 0..na {
            let pa = w.joint_action[s * na + a];
            if pa == 0.0 {
                continue;
            }
            actions.push(a);
            if states.len() == w.game.horizon() {
                (w.visit)(states, actions, prob * pa);
            } else {
                let (next, p) = w.game.row(s, a);
                for (&s2, &ps) in next.iter().zip(p) {
                    if ps != 0.0 {
                        descend(w, s2 as usize, prob * pa * ps, states, actions);
                    }
                }
            }
            actions.pop();
        }
        states.pop();
    }

    let mut walk = Walk {
        game,
        joint_action: &joint_action,
        visit: &mut visit,
    };
    for (s, &mu) in game.initial().iter().enumerate() {
        if mu != 0.0 {
            descend(&mut walk, s, mu, &mut states, &mut actions);
        }
    }
    Ok(())
}

pub fn enumerate_trajectories(game: &MarkovGame, policies: &PolicySet) -> Result<TrajectoryEnsemble> {
    enumerate_trajectories_capped(game, policies, DEFAULT_ENUMERATION_CAP)
}

pub fn enumerate_trajectories_capped(game: &MarkovGame, policies: &PolicySet, cap: u128) -> Result<TrajectoryEnsemble> {
    let mut entries = Vec::new();
    let mut err = None;
    for_each_trajectory(game, policies, cap, |s, a, p| {
        match Trajectory::from_indices(game, s.to_vec(), a.to_vec()) {
            Ok(t) => entries.push((t, p)),
            Err(e) => err = Some(e),
        }
    })?;
    match err {
        Some(e) => Err(e),
        None => Ok(TrajectoryEnsemble { entries }),
    }
}

/// `E_τ ζ₁(τ)` by enumeration.
pub fn exact_single_trial_objective(game: &MarkovGame, policies: &PolicySet, kind: ObjectiveKind) -> Result<f64> {
    check_kind(game, kind)?;
    let ensemble = enumerate_trajectories(game, policies)?;
    ensemble
        .entries
        .iter()
        .map(|(t, p)| single_trial_value(game, t, kind).map(|v| p * v))
        .sum()
}

/// `Σ_τ p_behavior(τ) ρⁱ(τ) ζ₁(τ)` where `ρⁱ` reweights agent `agent`'s
/// actions from its behavior policy to `candidate`.
pub fn exact_surrogate(
    game: &MarkovGame,
    behavior: &PolicySet,
    agent: usize,
    candidate: &[f64],
    kind: ObjectiveKind,
) -> Result<f64> {
    check_kind(game, kind)?;
    if agent >= behavior.len() {
        return Err(Error::AgentOutOfRange {
            agent,
            num_agents: behavior.len(),
        });
    }
    let old = behavior.agent(agent);
    let new = old.with_params(candidate.to_vec())?;
    let obs = game.observations();
    let ensemble = enumerate_trajectories(game, behavior)?;
    let mut total = 0.0;
    for (t, p) in &ensemble.entries {
        let mut log_rho = 0.0;
        for step in 0..t.len() {
            let o = obs.observe(t.states()[step], agent);
            let a = t.local_action(step, agent) as usize;
            log_rho += new.log_prob(o, a)? - old.log_prob(o, a)?;
        }
        total += p * log_rho.exp() * single_trial_value(game, t, kind)?;
    }
    Ok(total)
}

/// Central differences `(f(x + h eₖ) − f(x − h eₖ)) / 2h`.
pub fn finite_difference_gradient(mut f: impl FnMut(&[f64]) -> f64, params: &[f64], h: f64) -> Result<Vec<f64>> {
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("step h = {h} must be positive")));
    }
    let mut x = params.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for k in 0..x.len() {
        let orig = x[k];
        x[k] = orig + h;
        let up = f(&x);
        x[k] = orig - h;
        let down = f(&x);
        x[k] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite(format!("objective at coordinate {k}")));
        }
        grad.push((up - down) / (2.0 * h));
    }
    Ok(grad)
}

/// The game with every agent observing the full joint state.
pub fn with_joint_observations(game: &MarkovGame) -> MarkovGame {
    game.clone()
        .with_observations(ObservationModel::joint(game.local_state_sizes()))
        .expect("joint observation model matches its own game")
}

/// Zero-logit tabular policies over joint-state observations.
pub fn joint_observation_policies(game: &MarkovGame) -> PolicySet {
    PolicySet::tabular_uniform(&with_joint_observations(game))
}

#[derive(Debug, Clone)]
pub struct PgaCurve {
    /// `ζ_∞` before the first step and after every step.
    pub values: Vec<f64>,
    pub policies: PolicySet,
}

/// Simultaneous independent gradient ascent on the exact infinite-trial
/// objective. Each agent differentiates with respect to its own parameters
/// only. `policies` must observe the joint state.
pub fn independent_pga(
    game: &MarkovGame,
    policies: &PolicySet,
    kind: ObjectiveKind,
    eta: f64,
    steps: usize,
) -> Result<PgaCurve> {
    if let ObjectiveKind::Disjoint(_) = kind {
        return Err(Error::InvalidArgument(
            "independent ascent is defined for the joint and mixture objectives".into(),
        ));
    }
    if !(eta >= 0.0) {
        return Err(Error::InvalidArgument(format!("step size {eta} must be non-negative")));
    }
    let g = with_joint_observations(game);
    policies.check_compatible(&g)?;
    let value = |p: &PolicySet| infinite_trial_value(&g, p, kind);
    let mut current = policies.clone();
    let mut values = vec![value(&current)?];
    for _ in 0..steps {
        let mut grads = Vec::with_capacity(current.len());
        for i in 0..current.len() {
            let agent = current.agent(i);
            let f = |x: &[f64]| {
                let p = current.with_agent(i, agent.with_params(x.to_vec()).expect("same length"));
                value(&p).unwrap_or(f64::NAN)
            };
            grads.push(finite_difference_gradient(f, agent.params(), 1e-6)?);
        }
        let agents: Vec<AgentPolicy> = current
            .agents()
            .iter()
            .zip(&grads)
            .map(|(a, gr)| {
                let params = a.params().iter().zip(gr).map(|(x, d)| x + eta * d).collect();
                a.with_params(params)
            })
            .collect::<Result<_>>()?;
        current = PolicySet::new(agents);
        values.push(value(&current)?);
    }
    Ok(PgaCurve {
        values,
        policies: current,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{self, TinySpec};
    use crate::game::Transitions;
    use crate::objectives::{finite_trial_estimate, infinite_trial_value};
    use crate::stats::exact_distributions;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_policies(game: &MarkovGame, scale: f64, seed: u64) -> PolicySet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PolicySet::new(
            PolicySet::tabular_uniform(game)
                .agents()
                .iter()
                .map(|a| {
                    a.with_params((0..a.num_params()).map(|_| rng.gen_range(-scale..scale)).collect())
                        .unwrap()
                })
                .collect(),
        )
    }

    #[test]
    fn single_state_single_action() {
        let g = MarkovGame::new(vec![1], vec![1], Transitions::deterministic(vec![0]), vec![1.0], 3).unwrap();
        let e = enumerate_trajectories(&g, &PolicySet::tabular_uniform(&g)).unwrap();
        assert_eq!(e.len(), 1);
        assert_eq!(e.entries[0].1, 1.0);
        assert_eq!(exact_single_trial_objective(&g, &PolicySet::tabular_uniform(&g), ObjectiveKind::Joint).unwrap(), 0.0);
    }

    #[test]
    fn full_enumeration_count() {
        let g = envs::tiny_mg(&TinySpec::random(vec![2, 2], vec![2, 2], 3, 1)).unwrap();
        let e = enumerate_trajectories(&g, &random_policies(&g, 1.0, 2)).unwrap();
        assert_eq!(e.len(), 4096);
        assert!((e.total_probability() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn near_deterministic_policy_normalizes() {
        let g = envs::open_grid(2, 1, 4).unwrap();
        let p = PolicySet::new(vec![PolicySet::tabular_uniform(&g)
            .agent(0)
            .with_params((0..20).map(|k| if k % 5 == 3 { 25.0 } else { 0.0 }).collect())
            .unwrap()]);
        let e = enumerate_trajectories(&g, &p).unwrap();
        assert!((e.total_probability() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn cap_is_enforced() {
        let g = envs::open_grid(3, 2, 4).unwrap();
        let p = PolicySet::tabular_uniform(&g);
        assert!(matches!(enumerate_trajectories(&g, &p), Err(Error::ExactCapExceeded { .. })));
    }

    #[test]
    fn dp_matches_enumeration() {
        for seed in 0..5 {
            let g = envs::tiny_mg(&TinySpec::random(vec![2, 2], vec![2, 2], 3, seed)).unwrap();
            let p = random_policies(&g, 1.5, seed + 100);
            let dp = exact_distributions(&g, &p).unwrap();
            let mut joint = vec![0.0; g.num_states()];
            for (t, pr) in enumerate_trajectories(&g, &p).unwrap().entries {
                for &s in t.states() {
                    joint[s] += pr / t.len() as f64;
                }
            }
            for (a, b) in dp.joint.iter().zip(&joint) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn single_trial_pessimism() {
        for seed in 0..50 {
            let g = envs::tiny_mg(&TinySpec::random(vec![2, 2], vec![2, 2], 3, seed)).unwrap();
            let p = random_policies(&g, 2.0, seed);
            for kind in [ObjectiveKind::Joint, ObjectiveKind::Disjoint(1), ObjectiveKind::Mixture] {
                let z1 = exact_single_trial_objective(&g, &p, kind).unwrap();
                let zinf = infinite_trial_value(&g, &p, kind).unwrap();
                assert!(z1 <= zinf + 1e-9, "seed {seed} {kind}: {z1} > {zinf}");
            }
        }
    }

    #[test]
    fn monte_carlo_agrees_with_enumeration() {
        let g = envs::tiny_mg(&TinySpec::random(vec![2, 2], vec![2, 2], 3, 8)).unwrap();
        let p = random_policies(&g, 1.0, 8);
        let exact = exact_single_trial_objective(&g, &p, ObjectiveKind::Mixture).unwrap();
        let mc = finite_trial_estimate(&g, &p, ObjectiveKind::Mixture, 1, 10_000, 5).unwrap();
        assert!((mc.mean - exact).abs() < 3.0 * mc.stderr, "{} vs {exact} ± {}", mc.mean, mc.stderr);
    }

    #[test]
    fn surrogate_identities() {
        let g = envs::tiny_mg(&TinySpec::random(vec![2, 2], vec![2, 2], 3, 3)).unwrap();
        let p = random_policies(&g, 1.0, 3);
        let kind = ObjectiveKind::Mixture;
        let base = exact_single_trial_objective(&g, &p, kind).unwrap();
        let same = exact_surrogate(&g, &p, 0, p.agent(0).params(), kind).unwrap();
        assert!((same - base).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cand: Vec<f64> = p.agent(1).params().iter().map(|x| x + rng.gen_range(-0.5..0.5)).collect();
        let direct = exact_single_trial_objective(&g, &p.with_agent(1, p.agent(1).with_params(cand.clone()).unwrap()), kind).unwrap();
        let surr = exact_surrogate(&g, &p, 1, &cand, kind).unwrap();
        assert!((surr - direct).abs() < 1e-9);
        // agent 0's weights ignore agent 1's parameters
        let p2 = p.with_agent(1, p.agent(1).with_params(cand).unwrap());
        let cand0: Vec<f64> = p.agent(0).params().iter().map(|x| x * 0.5).collect();
        let direct0 = exact_single_trial_objective(&g, &p2.with_agent(0, p.agent(0).with_params(cand0.clone()).unwrap()), kind).unwrap();
        assert!((exact_surrogate(&g, &p2, 0, &cand0, kind).unwrap() - direct0).abs() < 1e-9);
    }

    #[test]
    fn finite_differences_basic() {
        let q = |x: &[f64]| 3.0 * x[0] * x[0] - 2.0 * x[0] * x[1] + x[1];
        let g = finite_difference_gradient(q, &[1.0, -2.0], 1e-4).unwrap();
        assert!((g[0] - 10.0).abs() < 1e-7);
        assert!((g[1] + 1.0).abs() < 1e-7);
        assert_eq!(finite_difference_gradient(|_| 4.0, &[1.0, 2.0], 1e-3).unwrap(), vec![0.0, 0.0]);
        assert!(finite_difference_gradient(|_| 1.0, &[1.0], 0.0).is_err());
        assert!(finite_difference_gradient(|x| 1.0 / x[0], &[1e-9], 1e-6).is_ok());
        assert!(finite_difference_gradient(|x| (x[0] - 1.0).ln(), &[1.0], 1e-3).is_err());
    }

    #[test]
    fn pga_edge_cases() {
        let g = envs::tiny_mg(&TinySpec::random(vec![2, 2], vec![2, 2], 3, 5)).unwrap();
        let p = joint_observation_policies(&g);
        let flat = independent_pga(&g, &p, ObjectiveKind::Joint, 0.0, 5).unwrap();
        assert_eq!(flat.policies, p);
        assert!(flat.values.windows(2).all(|w| w[0] == w[1]));
        assert!(independent_pga(&g, &p, ObjectiveKind::Disjoint(0), 0.1, 1).is_err());

        // two agents each flipping their own bit: uniform is optimal
        let flip = vec![vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![vec![0.0, 1.0], vec![1.0, 0.0]]];
        let sym = envs::tiny_mg(&TinySpec::IndependentChains {
            kernels: vec![flip.clone(), flip],
            initial: vec![vec![0.5, 0.5], vec![0.5, 0.5]],
            horizon: 3,
        })
        .unwrap();
        let curve = independent_pga(&sym, &joint_observation_policies(&sym), ObjectiveKind::Mixture, 0.1, 10).unwrap();
        assert!(curve.values.iter().all(|v| (v - curve.values[0]).abs() < 1e-6));
    }

    #[test]
    fn pga_ascends() {
        let g = envs::tiny_mg(&TinySpec::random(vec![2, 2], vec![2, 2], 4, 2)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = PolicySet::new(
            joint_observation_policies(&g)
                .agents()
                .iter()
                .map(|a| a.with_params((0..a.num_params()).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap())
                .collect(),
        );
        let curve = independent_pga(&g, &p, ObjectiveKind::Joint, 0.05, 40).unwrap();
        assert!(curve.values.windows(2).all(|w| w[1] >= w[0] - 1e-8));
        assert!(curve.values.last().unwrap() > &curve.values[0]);
    }
}
