//! Empirical and exact state distributions, plug-in entropy and KL divergence.
//!
//! All entropies are in nats.

use std::collections::BTreeMap;
use std::io::Write;

use crate::error::{Error, Result};
use crate::game::{MarkovGame, Trajectory};
use crate::policy::{ActionTables, PolicySet};

/// Default cap on `|S| · |A|` for exact dynamic programming.
pub const DEFAULT_EXACT_CAP: u128 = 10_000_000;

/// Counts over a discrete support.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct EmpiricalDistribution {
    counts: BTreeMap<usize, u64>,
    total: u64,
}

impl EmpiricalDistribution {
    pub fn from_samples(samples: impl IntoIterator<Item = usize>) -> Self {
        let mut d = EmpiricalDistribution::default();
        for s in samples {
            d.add(s, 1);
        }
        d
    }

    pub fn add(&mut self, element: usize, count: u64) {
        if count > 0 {
            *self.counts.entry(element).or_insert(0) += count;
            self.total += count;
        }
    }

    pub fn merge(&mut self, other: &EmpiricalDistribution) {
        for (&k, &c) in &other.counts {
            self.add(k, c);
        }
    }

    pub fn counts(&self) -> &BTreeMap<usize, u64> {
        &self.counts
    }

    pub fn count(&self, element: usize) -> u64 {
        self.counts.get(&element).copied().unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn probability(&self, element: usize) -> f64 {
        self.count(element) as f64 / self.total as f64
    }

    /// Normalized probabilities on `0..support_size`.
    pub fn to_dense(&self, support_size: usize) -> Vec<f64> {
        let mut out = vec![0.0; support_size];
        for (&k, &c) in &self.counts {
            if k < support_size {
                out[k] = c as f64 / self.total as f64;
            }
        }
        out
    }
}

/// Entropy of integer counts: `ln n − (1/n) Σ c ln c`.
pub fn entropy_of_counts(counts: impl IntoIterator<Item = u64>) -> f64 {
    let mut n = 0u64;
    let mut acc = 0.0;
    for c in counts {
        if c > 0 {
            n += c;
            let c = c as f64;
            acc += c * c.ln();
        }
    }
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    (n.ln() - acc / n).max(0.0)
}

/// Plug-in entropy of raw samples; sorts the buffer in place.
pub fn sample_entropy(samples: &mut [usize]) -> f64 {
    samples.sort_unstable();
    let runs = samples.chunk_by(|a, b| a == b).map(|r| r.len() as u64);
    entropy_of_counts(runs)
}

/// Plug-in Shannon entropy of an empirical distribution.
pub fn plugin_entropy(dist: &EmpiricalDistribution) -> Result<f64> {
    if dist.total == 0 {
        return Err(Error::Empty("entropy of an empty distribution"));
    }
    Ok(entropy_of_counts(dist.counts.values().copied()))
}

/// Shannon entropy of a probability vector, with `0 log 0 = 0`.
pub fn shannon_entropy(probs: &[f64]) -> f64 {
    -probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.ln())
        .sum::<f64>()
}

/// `KL(p ‖ q)` in nats.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::DimensionMismatch(format!(
            "KL between supports of size {} and {}",
            p.len(),
            q.len()
        )));
    }
    let mut acc = 0.0;
    for (index, (&pi, &qi)) in p.iter().zip(q).enumerate() {
        if pi > 0.0 {
            if qi <= 0.0 {
                return Err(Error::NotAbsolutelyContinuous { index, mass: pi });
            }
            acc += pi * (pi / qi).ln();
        }
    }
    Ok(acc.max(0.0))
}

fn check_nonempty(trajectories: &[Trajectory]) -> Result<usize> {
    let first = trajectories
        .first()
        .ok_or(Error::Empty("no trajectories"))?;
    if trajectories.iter().any(|t| t.len() != first.len()) {
        return Err(Error::DimensionMismatch(
            "trajectories have different horizons".into(),
        ));
    }
    Ok(first.num_agents())
}

/// Counts of joint states over all steps of all trajectories.
pub fn empirical_joint(trajectories: &[Trajectory]) -> Result<EmpiricalDistribution> {
    check_nonempty(trajectories)?;
    Ok(EmpiricalDistribution::from_samples(
        trajectories.iter().flat_map(|t| t.states().iter().copied()),
    ))
}

/// Counts of agent `agent`'s local states.
pub fn empirical_marginal(
    trajectories: &[Trajectory],
    agent: usize,
) -> Result<EmpiricalDistribution> {
    let n = check_nonempty(trajectories)?;
    if agent >= n {
        return Err(Error::AgentOutOfRange {
            agent,
            num_agents: n,
        });
    }
    Ok(EmpiricalDistribution::from_samples(trajectories.iter().flat_map(
        |t| (0..t.len()).map(move |s| t.local_state(s, agent) as usize),
    )))
}

/// Pooled local-state counts of all agents (total `|N|·K·T`).
pub fn empirical_mixture(
    game: &MarkovGame,
    trajectories: &[Trajectory],
) -> Result<EmpiricalDistribution> {
    require_uniform(game)?;
    check_nonempty(trajectories)?;
    let mut d = EmpiricalDistribution::default();
    for agent in 0..game.num_agents() {
        d.merge(&empirical_marginal(trajectories, agent)?);
    }
    Ok(d)
}

pub(crate) fn require_uniform(game: &MarkovGame) -> Result<()> {
    if game.uniform_local_states() {
        Ok(())
    } else {
        Err(Error::HeterogeneousLocalSpaces(game.local_state_sizes().to_vec()))
    }
}

/// Exact time-averaged state distributions under a product policy.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactDistributionSet {
    pub joint: Vec<f64>,
    pub marginals: Vec<Vec<f64>>,
    /// Mean of the marginals; `None` when local state spaces differ.
    pub mixture: Option<Vec<f64>>,
}

pub(crate) fn check_exact_cap(game: &MarkovGame, cap: u128) -> Result<()> {
    let required = game.num_states() as u128 * game.num_actions() as u128;
    if required > cap {
        return Err(Error::ExactCapExceeded { required, cap });
    }
    Ok(())
}

/// One step of the joint state occupancy under fixed action tables.
pub(crate) fn propagate(game: &MarkovGame, tables: &ActionTables, occ: &[f64]) -> Vec<f64> {
    let n = game.num_agents();
    let na = game.num_actions();
    let action_radix = game.action_radix();
    let obs = game.observations();
    let mut next = vec![0.0; occ.len()];
    let mut locals = vec![0u32; n];
    let mut per_agent: Vec<&[f64]> = Vec::with_capacity(n);
    for (s, &mass) in occ.iter().enumerate() {
        if mass == 0.0 {
            continue;
        }
        per_agent.clear();
        per_agent.extend((0..n).map(|i| tables.probs(i, obs.observe(s, i))));
        for a in 0..na {
            action_radix.decode_into(a, &mut locals);
            let pa: f64 = locals
                .iter()
                .zip(&per_agent)
                .map(|(&ai, p)| p[ai as usize])
                .product();
            if pa == 0.0 {
                continue;
            }
            let w = mass * pa;
            let (succ, prob) = game.row(s, a);
            for (&s2, &p) in succ.iter().zip(prob) {
                next[s2 as usize] += w * p;
            }
        }
    }
    next
}

pub fn exact_distributions(game: &MarkovGame, policies: &PolicySet) -> Result<ExactDistributionSet> {
    exact_distributions_capped(game, policies, DEFAULT_EXACT_CAP)
}

/// Forward dynamic programming of `d^π(s) = (1/T) Σ_t Pr(s_t = s)`.
pub fn exact_distributions_capped(
    game: &MarkovGame,
    policies: &PolicySet,
    cap: u128,
) -> Result<ExactDistributionSet> {
    check_exact_cap(game, cap)?;
    policies.check_compatible(game)?;
    let tables = policies.action_tables();
    let horizon = game.horizon();
    let mut occ = game.initial().to_vec();
    let mut joint = vec![0.0; occ.len()];
    for t in 0..horizon {
        for (d, &o) in joint.iter_mut().zip(&occ) {
            *d += o;
        }
        if t + 1 < horizon {
            occ = propagate(game, &tables, &occ);
        }
    }
    for d in &mut joint {
        *d /= horizon as f64;
    }
    Ok(distributions_from_joint(game, joint))
}

pub(crate) fn distributions_from_joint(game: &MarkovGame, joint: Vec<f64>) -> ExactDistributionSet {
    let radix = game.state_radix();
    let mut marginals: Vec<Vec<f64>> = game
        .local_state_sizes()
        .iter()
        .map(|&k| vec![0.0; k])
        .collect();
    for (s, &p) in joint.iter().enumerate() {
        for (i, m) in marginals.iter_mut().enumerate() {
            m[radix.digit(s, i)] += p;
        }
    }
    let mixture = game.uniform_local_states().then(|| {
        let n = marginals.len() as f64;
        (0..marginals[0].len())
            .map(|k| marginals.iter().map(|m| m[k]).sum::<f64>() / n)
            .collect()
    });
    ExactDistributionSet {
        joint,
        marginals,
        mixture,
    }
}

/// Two-column CSV `state,probability`.
pub fn write_distribution_csv<W: Write>(mut out: W, probs: &[f64]) -> std::io::Result<()> {
    writeln!(out, "state,probability")?;
    for (s, p) in probs.iter().enumerate() {
        writeln!(out, "{s},{p}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{self, TinySpec};
    use crate::game::{sample_batch, Transitions};

    fn traj(game: &MarkovGame, states: &[usize]) -> Trajectory {
        Trajectory::from_indices(game, states.to_vec(), vec![0; states.len()]).unwrap()
    }

    fn two_by_two() -> MarkovGame {
        // 2 agents x 2 local states, one action each
        MarkovGame::new(
            vec![2, 2],
            vec![1, 1],
            Transitions::deterministic(vec![0, 1, 2, 3]),
            vec![0.25; 4],
            2,
        )
        .unwrap()
    }

    #[test]
    fn joint_counts() {
        let g = two_by_two();
        let one = traj(&g, &[2, 2, 2]);
        let d = empirical_joint(&[one]).unwrap();
        assert_eq!(d.count(2), 3);
        assert_eq!(d.total(), 3);
        let d = empirical_joint(&[traj(&g, &[1, 3]), traj(&g, &[3, 3])]).unwrap();
        assert_eq!((d.count(1), d.count(3), d.total()), (1, 3, 4));
        assert!(empirical_joint(&[]).is_err());
    }

    #[test]
    fn marginal_counts_match_manual_tally() {
        let g = two_by_two();
        // joint 1 = (0,1), joint 2 = (1,0)
        let t = traj(&g, &[1, 2]);
        let m0 = empirical_marginal(std::slice::from_ref(&t), 0).unwrap();
        let m1 = empirical_marginal(std::slice::from_ref(&t), 1).unwrap();
        assert_eq!((m0.count(0), m0.count(1)), (1, 1));
        assert_eq!(m0, m1);
        let parked = traj(&g, &[0, 0, 0, 0, 0]);
        assert_eq!(empirical_marginal(&[parked], 1).unwrap().count(0), 5);
        assert!(matches!(
            empirical_marginal(&[t], 2),
            Err(Error::AgentOutOfRange { .. })
        ));
    }

    #[test]
    fn mixture_of_point_masses_is_half_half() {
        let g = two_by_two();
        let t = traj(&g, &[1, 1, 1, 1]);
        let mix = empirical_mixture(&g, &[t]).unwrap();
        assert_eq!(mix.total(), 8);
        assert_eq!(mix.to_dense(2), vec![0.5, 0.5]);
    }

    #[test]
    fn mixture_pools_marginals() {
        let g = envs::tiny_mg(&TinySpec::random(vec![2, 2, 2], vec![2, 2, 2], 4, 13)).unwrap();
        let p = PolicySet::tabular_uniform(&g);
        let batch = sample_batch(&g, &p, 5, 2).unwrap();
        let mix = empirical_mixture(&g, &batch).unwrap();
        let mut pooled = EmpiricalDistribution::default();
        for i in 0..3 {
            pooled.merge(&empirical_marginal(&batch, i).unwrap());
        }
        assert_eq!(mix, pooled);
    }

    #[test]
    fn mixture_rejects_heterogeneous_spaces() {
        let g = MarkovGame::new(
            vec![2, 3],
            vec![1, 1],
            Transitions::deterministic((0..6).collect()),
            vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            1,
        )
        .unwrap();
        let t = traj(&g, &[0]);
        assert!(matches!(
            empirical_mixture(&g, &[t]),
            Err(Error::HeterogeneousLocalSpaces(_))
        ));
    }

    #[test]
    fn entropy_reference_values() {
        let uniform = EmpiricalDistribution::from_samples([0, 1, 2, 3]);
        assert!((plugin_entropy(&uniform).unwrap() - 4f64.ln()).abs() < 1e-12);
        let point = EmpiricalDistribution::from_samples([5, 5, 5]);
        assert_eq!(plugin_entropy(&point).unwrap(), 0.0);
        let skew = EmpiricalDistribution::from_samples([0, 0, 0, 1]);
        let expected = -(0.75f64 * 0.75f64.ln()) - 0.25 * 0.25f64.ln();
        assert!((plugin_entropy(&skew).unwrap() - expected).abs() < 1e-12);
        assert!((expected - 0.562335).abs() < 1e-6);
        assert!(plugin_entropy(&EmpiricalDistribution::default()).is_err());
        assert!((sample_entropy(&mut [3, 0, 3, 3]) - expected).abs() < 1e-12);
    }

    #[test]
    fn kl_reference_values() {
        assert_eq!(kl_divergence(&[0.3, 0.7], &[0.3, 0.7]).unwrap(), 0.0);
        let v = kl_divergence(&[1.0, 0.0], &[0.5, 0.5]).unwrap();
        assert!((v - 2f64.ln()).abs() < 1e-12);
        assert!(matches!(
            kl_divergence(&[0.5, 0.5], &[1.0, 0.0]),
            Err(Error::NotAbsolutelyContinuous { index: 1, .. })
        ));
    }

    #[test]
    fn exact_single_state_is_point_mass() {
        let g = envs::open_grid(1, 2, 5).unwrap();
        let d = exact_distributions(&g, &PolicySet::tabular_uniform(&g)).unwrap();
        assert_eq!(d.joint.len(), 1);
        assert!((d.joint[0] - 1.0).abs() < 1e-12);
        assert!(shannon_entropy(&d.joint).abs() < 1e-12);
    }

    #[test]
    fn symmetric_walk_is_near_uniform() {
        // one agent flipping between two states with prob 1/2 per step
        let g = MarkovGame::new(
            vec![2],
            vec![2],
            Transitions::deterministic(vec![0, 1, 1, 0]),
            vec![1.0, 0.0],
            200,
        )
        .unwrap();
        let d = exact_distributions(&g, &PolicySet::tabular_uniform(&g)).unwrap();
        assert!((d.joint[0] - 0.5).abs() <= 1.0 / 200.0);
    }

    #[test]
    fn exact_marginals_sum_joint() {
        let g = envs::tiny_mg(&TinySpec::random(vec![2, 2], vec![2, 2], 3, 4)).unwrap();
        let d = exact_distributions(&g, &PolicySet::tabular_uniform(&g)).unwrap();
        assert!((d.joint.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let m0 = d.joint[0] + d.joint[1];
        assert!((d.marginals[0][0] - m0).abs() < 1e-12);
        let mix = d.mixture.unwrap();
        assert!((mix[1] - 0.5 * (d.marginals[0][1] + d.marginals[1][1])).abs() < 1e-15);
    }

    #[test]
    fn exact_cap_is_enforced() {
        let g = envs::open_grid(3, 2, 2).unwrap();
        let p = PolicySet::tabular_uniform(&g);
        assert!(matches!(
            exact_distributions_capped(&g, &p, 100),
            Err(Error::ExactCapExceeded { .. })
        ));
    }

    #[test]
    fn csv_export() {
        let mut buf = Vec::new();
        write_distribution_csv(&mut buf, &[0.25, 0.75]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "state,probability\n0,0.25\n1,0.75\n");
    }
}
