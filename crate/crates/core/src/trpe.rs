//! Decentralized trust-region ascent of a single-trial objective through the
//! importance-sampled surrogate
//! `L̂ⁱ(θ) = (1/N) Σₙ ρⁱ'ⁿ(θ) ζ₁ⁿ`, `ρⁱ'ⁿ = Πₜ π_θ(aⁱₜ|oⁱₜ) / π_θ₀(aⁱₜ|oⁱₜ)`.

use std::collections::HashMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{sample_batch, MarkovGame, Trajectory};
use crate::objectives::{self, check_kind, mean_stderr, ObjectiveFamily, ObjectiveKind};
use crate::policy::{categorical_kl, AgentPolicy, ObsPass, PolicySet};
use crate::rng;

pub const DEFAULT_WEIGHT_GUARD: f64 = 30.0;

/// One agent's view of a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateDataset {
    horizon: usize,
    /// `observations[n * horizon + t]`
    observations: Vec<usize>,
    actions: Vec<usize>,
    values: Vec<f64>,
}

impl SurrogateDataset {
    pub fn new(horizon: usize, observations: Vec<usize>, actions: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if values.is_empty() || horizon == 0 {
            return Err(Error::Empty("dataset needs at least one trajectory"));
        }
        if observations.len() != values.len() * horizon || actions.len() != observations.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} trajectories of horizon {horizon} need {} steps, got {} observations and {} actions",
                values.len(),
                values.len() * horizon,
                observations.len(),
                actions.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("objective value {v}")));
        }
        Ok(SurrogateDataset {
            horizon,
            observations,
            actions,
            values,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn observations(&self, n: usize) -> &[usize] {
        &self.observations[n * self.horizon..(n + 1) * self.horizon]
    }

    pub fn actions(&self, n: usize) -> &[usize] {
        &self.actions[n * self.horizon..(n + 1) * self.horizon]
    }

    /// `ζ₁ⁿ` per trajectory.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Every visited observation, with multiplicity.
    pub fn all_observations(&self) -> &[usize] {
        &self.observations
    }
}

fn check_batch(batch: &[Trajectory]) -> Result<usize> {
    let horizon = batch.first().ok_or(Error::Empty("empty batch"))?.len();
    if batch.iter().any(|t| t.len() != horizon) {
        return Err(Error::DimensionMismatch("trajectories of different horizons".into()));
    }
    Ok(horizon)
}

fn agent_dataset(game: &MarkovGame, batch: &[Trajectory], agent: usize, values: Vec<f64>) -> Result<SurrogateDataset> {
    let horizon = check_batch(batch)?;
    let obs = game.observations();
    let mut observations = Vec::with_capacity(batch.len() * horizon);
    let mut actions = Vec::with_capacity(batch.len() * horizon);
    for traj in batch {
        for t in 0..horizon {
            observations.push(obs.observe(traj.states()[t], agent));
            actions.push(traj.local_action(t, agent) as usize);
        }
    }
    SurrogateDataset::new(horizon, observations, actions, values)
}

/// Per-agent datasets, every agent carrying `ζ₁ⁿ` of the same `kind`.
pub fn build_datasets(game: &MarkovGame, batch: &[Trajectory], kind: ObjectiveKind) -> Result<Vec<SurrogateDataset>> {
    check_kind(game, kind)?;
    check_batch(batch)?;
    let values = batch
        .iter()
        .map(|t| objectives::single_trial_value(game, t, kind))
        .collect::<Result<Vec<_>>>()?;
    (0..game.num_agents())
        .map(|i| agent_dataset(game, batch, i, values.clone()))
        .collect()
}

/// Per-agent datasets for a family; under `Disjoint` agent `i` carries the
/// entropy of its own marginal.
pub fn build_family_datasets(
    game: &MarkovGame,
    batch: &[Trajectory],
    family: ObjectiveFamily,
) -> Result<Vec<SurrogateDataset>> {
    match family {
        ObjectiveFamily::Joint => build_datasets(game, batch, ObjectiveKind::Joint),
        ObjectiveFamily::Mixture => build_datasets(game, batch, ObjectiveKind::Mixture),
        ObjectiveFamily::Disjoint => (0..game.num_agents())
            .map(|i| {
                let values = batch
                    .iter()
                    .map(|t| objectives::single_trial_value(game, t, ObjectiveKind::Disjoint(i)))
                    .collect::<Result<Vec<_>>>()?;
                agent_dataset(game, batch, i, values)
            })
            .collect(),
    }
}

/// Surrogate value, its gradient at the candidate, and how many
/// trajectories were dropped by the weight guard.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateEval {
    pub value: f64,
    pub grad: Vec<f64>,
    pub excluded: usize,
}

/// Dataset with observations mapped to a dense list of distinct ones.
struct Indexed<'a> {
    data: &'a SurrogateDataset,
    unique: Vec<usize>,
    /// position in `unique` per step
    slot: Vec<usize>,
    /// visits per unique observation
    visits: Vec<usize>,
}

impl<'a> Indexed<'a> {
    fn new(policy: &AgentPolicy, data: &'a SurrogateDataset) -> Result<Self> {
        let mut map = HashMap::new();
        let mut unique = Vec::new();
        let mut visits = Vec::new();
        let size = policy.encoding().size();
        let mut slot = Vec::with_capacity(data.observations.len());
        for (&o, &a) in data.observations.iter().zip(&data.actions) {
            if o >= size {
                return Err(Error::ObservationOutOfRange { obs: o, size });
            }
            if a >= policy.num_actions() {
                return Err(Error::ActionOutOfRange {
                    action: a,
                    size: policy.num_actions(),
                });
            }
            let k = *map.entry(o).or_insert_with(|| {
                unique.push(o);
                visits.push(0);
                unique.len() - 1
            });
            visits[k] += 1;
            slot.push(k);
        }
        Ok(Indexed {
            data,
            unique,
            slot,
            visits,
        })
    }

    fn passes(&self, policy: &AgentPolicy, params: &[f64]) -> Vec<ObsPass> {
        self.unique.iter().map(|&o| policy.pass_with(params, o)).collect()
    }

    /// Visit-weighted mean KL between two sets of passes.
    fn kl(&self, new: &[ObsPass], old: &[ObsPass]) -> f64 {
        let total: f64 = new
            .iter()
            .zip(old)
            .zip(&self.visits)
            .map(|((n, o), &c)| c as f64 * categorical_kl(&n.log_probs, &o.log_probs))
            .sum();
        total / self.slot.len() as f64
    }

    fn surrogate(
        &self,
        policy: &AgentPolicy,
        params: &[f64],
        candidate: &[ObsPass],
        behavior: &[ObsPass],
        guard: f64,
    ) -> SurrogateEval {
        let t_len = self.data.horizon;
        let n = self.data.len() as f64;
        let na = policy.num_actions();
        let mut dlogits = vec![0.0; self.unique.len() * na];
        let mut value = 0.0;
        let mut excluded = 0;
        for (traj, &zeta) in self.data.values.iter().enumerate() {
            let steps = traj * t_len..(traj + 1) * t_len;
            let log_rho: f64 = steps
                .clone()
                .map(|k| {
                    let (u, a) = (self.slot[k], self.data.actions[k]);
                    candidate[u].log_probs[a] - behavior[u].log_probs[a]
                })
                .sum();
            if !(log_rho.abs() <= guard) {
                excluded += 1;
                continue;
            }
            let w = log_rho.exp() * zeta;
            value += w;
            if w == 0.0 {
                continue;
            }
            for k in steps {
                let (u, a) = (self.slot[k], self.data.actions[k]);
                let d = &mut dlogits[u * na..(u + 1) * na];
                for (b, (db, lp)) in d.iter_mut().zip(&candidate[u].log_probs).enumerate() {
                    *db -= w * lp.exp();
                    if b == a {
                        *db += w;
                    }
                }
            }
        }
        let mut grad = vec![0.0; params.len()];
        for (u, &o) in self.unique.iter().enumerate() {
            let d: Vec<f64> = dlogits[u * na..(u + 1) * na].iter().map(|x| x / n).collect();
            if d.iter().any(|&x| x != 0.0) {
                policy.backprop_with(params, o, &candidate[u], &d, &mut grad);
            }
        }
        SurrogateEval {
            value: value / n,
            grad,
            excluded,
        }
    }
}

/// `L̂ⁱ` and `∇L̂ⁱ` at `candidate` for data collected under `behavior`.
/// `policy` supplies the architecture.
pub fn surrogate_and_grad(
    policy: &AgentPolicy,
    dataset: &SurrogateDataset,
    candidate: &[f64],
    behavior: &[f64],
    weight_guard: f64,
) -> Result<SurrogateEval> {
    if candidate.len() != policy.num_params() || behavior.len() != policy.num_params() {
        return Err(Error::ArchitectureMismatch(format!(
            "policy has {} parameters; candidate {} and behavior {}",
            policy.num_params(),
            candidate.len(),
            behavior.len()
        )));
    }
    let idx = Indexed::new(policy, dataset)?;
    let cand = idx.passes(policy, candidate);
    let beh = idx.passes(policy, behavior);
    Ok(idx.surrogate(policy, candidate, &cand, &beh, weight_guard))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrpeConfig {
    pub objective: ObjectiveFamily,
    /// Trajectories per epoch.
    pub batch: usize,
    pub kl_threshold: f64,
    pub learning_rate: f64,
    pub max_offpolicy_iters: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Largest admissible `|log ρ|`.
    pub weight_guard: f64,
}

impl Default for TrpeConfig {
    fn default() -> Self {
        TrpeConfig {
            objective: ObjectiveFamily::Mixture,
            batch: 10,
            kl_threshold: 6.0,
            learning_rate: 1e-5,
            max_offpolicy_iters: 20,
            epochs: 10_000,
            seed: 0,
            weight_guard: DEFAULT_WEIGHT_GUARD,
        }
    }
}

impl TrpeConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.into()));
        if !(self.kl_threshold >= 0.0) {
            return bad("kl_threshold must be non-negative");
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return bad("learning_rate must be positive");
        }
        if self.batch == 0 {
            return bad("batch must be at least 1");
        }
        if self.max_offpolicy_iters == 0 {
            return bad("max_offpolicy_iters must be at least 1");
        }
        if !(self.weight_guard > 0.0) {
            return bad("weight_guard must be positive");
        }
        Ok(())
    }
}

/// Result of one agent's inner loop.
#[derive(Debug, Clone, PartialEq)]
pub struct InnerResult {
    pub params: Vec<f64>,
    /// KL of the committed iterate from the behavior policy.
    pub kl: f64,
    /// Committed gradient steps.
    pub iters: usize,
    /// Guard exclusions summed over evaluated gradients.
    pub excluded: usize,
}

/// Ascends the surrogate from the behavior parameters, committing the last
/// iterate whose KL from the behavior policy is at most `kl_threshold`.
pub fn inner_loop(policy: &AgentPolicy, dataset: &SurrogateDataset, config: &TrpeConfig) -> Result<InnerResult> {
    let idx = Indexed::new(policy, dataset)?;
    let theta0 = policy.params();
    let behavior = idx.passes(policy, theta0);
    let mut theta = theta0.to_vec();
    let mut passes = behavior.clone();
    let mut out = InnerResult {
        params: theta.clone(),
        kl: 0.0,
        iters: 0,
        excluded: 0,
    };
    for _ in 0..config.max_offpolicy_iters {
        let eval = idx.surrogate(policy, &theta, &passes, &behavior, config.weight_guard);
        out.excluded += eval.excluded;
        let next: Vec<f64> = theta
            .iter()
            .zip(&eval.grad)
            .map(|(t, g)| t + config.learning_rate * g)
            .collect();
        let next_passes = idx.passes(policy, &next);
        let kl = idx.kl(&next_passes, &behavior);
        if !(kl <= config.kl_threshold) || next.iter().any(|x| !x.is_finite()) {
            break;
        }
        theta = next;
        passes = next_passes;
        out.params.clone_from(&theta);
        out.kl = kl;
        out.iters += 1;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Optimized objective per trajectory of the behavior batch (mean over
    /// agents under `Disjoint`).
    pub zeta1: Vec<f64>,
    pub mean_zeta1: f64,
    pub stderr: f64,
    pub joint_entropy: f64,
    pub mixture_entropy: Option<f64>,
    pub disjoint_entropy: Vec<f64>,
    /// Largest committed KL over agents.
    pub kl_at_stop: f64,
    /// Mean committed inner iterations over agents.
    pub inner_iters: f64,
    pub excluded_weights: usize,
}

/// Samples a batch, runs every agent's inner loop and returns the updated
/// policies. The batch seed is `rng::derive(config.seed, epoch)`.
pub fn trpe_epoch(
    game: &MarkovGame,
    policies: &PolicySet,
    config: &TrpeConfig,
    epoch: usize,
) -> Result<(PolicySet, EpochMetrics)> {
    config.validate()?;
    let batch = sample_batch(game, policies, config.batch, rng::derive(config.seed, epoch as u64))?;
    let datasets = build_family_datasets(game, &batch, config.objective)?;
    let results = policies
        .agents()
        .par_iter()
        .zip(&datasets)
        .map(|(p, d)| inner_loop(p, d, config))
        .collect::<Result<Vec<_>>>()?;

    let n = game.num_agents();
    let zeta1: Vec<f64> = (0..batch.len())
        .map(|k| datasets.iter().map(|d| d.values[k]).sum::<f64>() / n as f64)
        .collect();
    let (mean_zeta1, stderr) = mean_stderr(&zeta1);
    let trials: Vec<_> = batch.iter().map(|t| objectives::all_trial_values(game, t)).collect();
    let mean = |f: &dyn Fn(&objectives::TrialValues) -> f64| trials.iter().map(f).sum::<f64>() / trials.len() as f64;
    let metrics = EpochMetrics {
        epoch,
        mean_zeta1,
        stderr,
        zeta1,
        joint_entropy: mean(&|v| v.joint),
        mixture_entropy: game.uniform_local_states().then(|| mean(&|v| v.mixture.unwrap_or(0.0))),
        disjoint_entropy: (0..n).map(|i| mean(&|v| v.disjoint[i])).collect(),
        kl_at_stop: results.iter().map(|r| r.kl).fold(0.0, f64::max),
        inner_iters: results.iter().map(|r| r.iters as f64).sum::<f64>() / n as f64,
        excluded_weights: results.iter().map(|r| r.excluded).sum(),
    };
    let mut agents = policies.clone().into_agents();
    for (a, r) in agents.iter_mut().zip(&results) {
        a.set_params(&r.params);
    }
    Ok((PolicySet::new(agents), metrics))
}

#[derive(Debug, Clone)]
pub struct TrpeRun {
    pub policies: PolicySet,
    pub metrics: Vec<EpochMetrics>,
}

/// `config.epochs` epochs, numbered from 1.
pub fn run_trpe(game: &MarkovGame, initial: &PolicySet, config: &TrpeConfig) -> Result<TrpeRun> {
    run_trpe_with(game, initial, config, |_| {})
}

/// As [`run_trpe`], calling `on_epoch` after every epoch.
pub fn run_trpe_with(
    game: &MarkovGame,
    initial: &PolicySet,
    config: &TrpeConfig,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<TrpeRun> {
    config.validate()?;
    initial.check_compatible(game)?;
    check_kind(game, config.objective.for_agent(0))?;
    let mut policies = initial.clone();
    let mut metrics = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        let (next, m) = trpe_epoch(game, &policies, config, epoch)?;
        if !next.all_finite() {
            return Err(Error::NonFinite(format!("policy parameters after epoch {epoch}")));
        }
        on_epoch(&m);
        policies = next;
        metrics.push(m);
    }
    Ok(TrpeRun { policies, metrics })
}

pub fn write_trpe_csv<W: Write>(
    mut out: W,
    objective: ObjectiveFamily,
    num_agents: usize,
    metrics: &[EpochMetrics],
) -> std::io::Result<()> {
    write!(out, "epoch,optimized_kind,mean_zeta1,stderr,joint_entropy,mixture_entropy")?;
    for i in 0..num_agents {
        write!(out, ",disjoint_entropy_agent_{i}")?;
    }
    writeln!(out, ",kl_at_stop,inner_iters,excluded_weights")?;
    for m in metrics {
        let mixture = m.mixture_entropy.map(|x| x.to_string()).unwrap_or_default();
        write!(
            out,
            "{},{},{},{},{},{}",
            m.epoch, objective, m.mean_zeta1, m.stderr, m.joint_entropy, mixture
        )?;
        for d in &m.disjoint_entropy {
            write!(out, ",{d}")?;
        }
        writeln!(out, ",{},{},{}", m.kl_at_stop, m.inner_iters, m.excluded_weights)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{self, TinySpec};
    use crate::game::ObsEncoding;
    use crate::oracle;
    use crate::policy::{policy_kl, PolicyClass};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn perturbed(p: &PolicySet, scale: f64, seed: u64) -> PolicySet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PolicySet::new(
            p.agents()
                .iter()
                .map(|a| {
                    let params = a.params().iter().map(|x| x + rng.gen_range(-scale..scale)).collect();
                    a.with_params(params).unwrap()
                })
                .collect(),
        )
    }

    #[test]
    fn joint_datasets_share_scalars() {
        let g = envs::open_grid(3, 2, 6).unwrap();
        let batch = sample_batch(&g, &PolicySet::tabular_uniform(&g), 5, 1).unwrap();
        let ds = build_datasets(&g, &batch, ObjectiveKind::Joint).unwrap();
        assert_eq!(ds[0].values(), ds[1].values());
        let d0 = build_datasets(&g, &batch, ObjectiveKind::Disjoint(0)).unwrap();
        assert_eq!(d0[0].values(), d0[1].values());
        let expected: Vec<f64> = batch
            .iter()
            .map(|t| objectives::single_trial_value(&g, t, ObjectiveKind::Disjoint(0)).unwrap())
            .collect();
        assert_eq!(d0[1].values(), &expected[..]);
        assert_eq!(ds[1].actions(2)[3], batch[2].local_action(3, 1) as usize);
    }

    #[test]
    fn hand_built_batch_values() {
        let g = envs::open_grid(2, 2, 2).unwrap();
        let t1 = Trajectory::from_indices(&g, vec![0, 5], vec![0, 0]).unwrap();
        let t2 = Trajectory::from_indices(&g, vec![3, 3], vec![0, 0]).unwrap();
        let ds = build_datasets(&g, &[t1, t2], ObjectiveKind::Mixture).unwrap();
        // t1 pools locals {0,0,1,1}; t2 pools {0,3,0,3}
        let ln2 = 2f64.ln();
        assert!((ds[0].values()[0] - ln2).abs() < 1e-12);
        assert!((ds[0].values()[1] - ln2).abs() < 1e-12);
        let dj = build_family_datasets(&g, &ds_batch(&g), ObjectiveFamily::Disjoint).unwrap();
        assert_eq!(dj[0].values(), &[ln2]);
        assert_eq!(dj[1].values(), &[0.0]);
    }

    fn ds_batch(g: &MarkovGame) -> Vec<Trajectory> {
        // agent 0 moves 0 -> 1, agent 1 parked at 2
        vec![Trajectory::from_indices(g, vec![2, 6], vec![0, 0]).unwrap()]
    }

    #[test]
    fn identity_weights_give_batch_mean() {
        let g = envs::open_grid(3, 2, 5).unwrap();
        let p = perturbed(&PolicySet::tabular_uniform(&g), 1.0, 3);
        let batch = sample_batch(&g, &p, 8, 2).unwrap();
        let ds = build_datasets(&g, &batch, ObjectiveKind::Mixture).unwrap();
        let a = p.agent(1);
        let e = surrogate_and_grad(a, &ds[1], a.params(), a.params(), 30.0).unwrap();
        let mean = ds[1].values().iter().sum::<f64>() / 8.0;
        assert_eq!(e.value, mean);
        assert_eq!(e.excluded, 0);
    }

    #[test]
    fn zero_objective_has_zero_gradient() {
        let g = envs::open_grid(1, 2, 4).unwrap();
        let p = PolicySet::tabular_uniform(&g);
        let batch = sample_batch(&g, &p, 3, 0).unwrap();
        let ds = build_datasets(&g, &batch, ObjectiveKind::Joint).unwrap();
        let cand: Vec<f64> = (0..5).map(|k| k as f64 * 0.3).collect();
        let e = surrogate_and_grad(p.agent(0), &ds[0], &cand, p.agent(0).params(), 30.0).unwrap();
        assert_eq!(e.value, 0.0);
        assert!(e.grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn guard_excludes_but_still_divides_by_n() {
        let enc = ObsEncoding::new(vec![1]).unwrap();
        let pol = AgentPolicy::tabular(enc, 2);
        let ds = SurrogateDataset::new(1, vec![0, 0], vec![0, 1], vec![1.0, 2.0]).unwrap();
        let cand = [40.0, 0.0];
        let e = surrogate_and_grad(&pol, &ds, &cand, &[0.0, 0.0], 30.0).unwrap();
        // trajectory 2 has log ρ ≈ -40 - ln 0.5 and is dropped
        assert_eq!(e.excluded, 1);
        let rho1 = (0.0f64 - (1.0f64 + (-40f64).exp()).ln() - 0.5f64.ln()).exp();
        assert!((e.value - rho1 * 1.0 / 2.0).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let g = envs::open_grid(2, 2, 4).unwrap();
        for class in [PolicyClass::Tabular, PolicyClass::Mlp { hidden: vec![6, 5] }] {
            let p = perturbed(&PolicySet::for_game(&g, &class, 4), 0.4, 5);
            let batch = sample_batch(&g, &p, 6, 7).unwrap();
            let ds = build_datasets(&g, &batch, ObjectiveKind::Mixture).unwrap();
            let a = p.agent(0);
            let cand: Vec<f64> = perturbed(&p, 0.2, 9).agent(0).params().to_vec();
            let e = surrogate_and_grad(a, &ds[0], &cand, a.params(), 30.0).unwrap();
            let f = |x: &[f64]| surrogate_and_grad(a, &ds[0], x, a.params(), 30.0).unwrap().value;
            let fd = oracle::finite_difference_gradient(f, &cand, 1e-5).unwrap();
            let scale = fd.iter().map(|x| x.abs()).fold(0.0, f64::max);
            for (x, y) in fd.iter().zip(&e.grad) {
                assert!((x - y).abs() <= 1e-6 * scale.max(1e-3), "{x} vs {y}");
            }
        }
    }

    #[test]
    fn surrogate_expectation_is_candidate_objective() {
        let g = envs::tiny_mg(&TinySpec::random(vec![2, 2], vec![2, 2], 3, 11)).unwrap();
        let behavior = perturbed(&PolicySet::tabular_uniform(&g), 0.5, 1);
        let cand = perturbed(&behavior, 0.5, 2);
        let kind = ObjectiveKind::Joint;
        let lhs = oracle::exact_surrogate(&g, &behavior, 0, cand.agent(0).params(), kind).unwrap();
        let mixed = behavior.with_agent(0, cand.agent(0).clone());
        let rhs = oracle::exact_single_trial_objective(&g, &mixed, kind).unwrap();
        assert!((lhs - rhs).abs() < 1e-9);
    }

    #[test]
    fn zero_threshold_keeps_behavior() {
        let g = envs::open_grid(3, 2, 5).unwrap();
        let p = PolicySet::tabular_uniform(&g);
        let cfg = TrpeConfig {
            kl_threshold: 0.0,
            learning_rate: 0.1,
            ..TrpeConfig::default()
        };
        let (next, m) = trpe_epoch(&g, &p, &cfg, 1).unwrap();
        assert_eq!(next, p);
        assert_eq!(m.inner_iters, 0.0);
    }

    #[test]
    fn single_iteration_is_one_step() {
        let g = envs::open_grid(3, 2, 5).unwrap();
        let p = PolicySet::tabular_uniform(&g);
        let cfg = TrpeConfig {
            max_offpolicy_iters: 1,
            learning_rate: 1e-3,
            ..TrpeConfig::default()
        };
        let batch = sample_batch(&g, &p, cfg.batch, rng::derive(cfg.seed, 1)).unwrap();
        let ds = build_family_datasets(&g, &batch, cfg.objective).unwrap();
        let (next, _) = trpe_epoch(&g, &p, &cfg, 1).unwrap();
        for (i, d) in ds.iter().enumerate() {
            let a = p.agent(i);
            let e = surrogate_and_grad(a, d, a.params(), a.params(), DEFAULT_WEIGHT_GUARD).unwrap();
            for ((new, old), g) in next.agent(i).params().iter().zip(a.params()).zip(&e.grad) {
                assert!((new - old - 1e-3 * g).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn committed_policies_respect_trust_region() {
        let g = envs::open_grid(3, 2, 8).unwrap();
        let mut p = PolicySet::tabular_uniform(&g);
        let cfg = TrpeConfig {
            kl_threshold: 0.02,
            learning_rate: 0.5,
            epochs: 5,
            ..TrpeConfig::default()
        };
        for epoch in 1..=cfg.epochs {
            let batch = sample_batch(&g, &p, cfg.batch, rng::derive(cfg.seed, epoch as u64)).unwrap();
            let (next, m) = trpe_epoch(&g, &p, &cfg, epoch).unwrap();
            assert!(m.kl_at_stop <= cfg.kl_threshold);
            for i in 0..2 {
                let ds = build_family_datasets(&g, &batch, cfg.objective).unwrap();
                let kl = policy_kl(next.agent(i), p.agent(i), ds[i].all_observations()).unwrap();
                assert!(kl <= cfg.kl_threshold + 1e-12);
            }
            p = next;
        }
    }

    #[test]
    fn agent_order_does_not_matter() {
        let g = envs::open_grid(3, 2, 6).unwrap();
        let p = perturbed(&PolicySet::for_game(&g, &PolicyClass::Mlp { hidden: vec![8] }, 2), 0.1, 3);
        let cfg = TrpeConfig {
            learning_rate: 0.05,
            kl_threshold: 0.5,
            ..TrpeConfig::default()
        };
        let batch = sample_batch(&g, &p, cfg.batch, 5).unwrap();
        let ds = build_family_datasets(&g, &batch, ObjectiveFamily::Disjoint).unwrap();
        let forward: Vec<_> = (0..2).map(|i| inner_loop(p.agent(i), &ds[i], &cfg).unwrap()).collect();
        let mut backward: Vec<_> = (0..2).rev().map(|i| inner_loop(p.agent(i), &ds[i], &cfg).unwrap()).collect();
        backward.reverse();
        let parallel: Vec<_> = p
            .agents()
            .par_iter()
            .zip(&ds)
            .map(|(a, d)| inner_loop(a, d, &cfg).unwrap())
            .collect();
        assert_eq!(forward, backward);
        assert_eq!(forward, parallel);
    }

    #[test]
    fn run_edge_cases() {
        let g = envs::open_grid(1, 2, 4).unwrap();
        let p = PolicySet::tabular_uniform(&g);
        let zero = run_trpe(&g, &p, &TrpeConfig { epochs: 0, ..TrpeConfig::default() }).unwrap();
        assert!(zero.metrics.is_empty());
        assert_eq!(zero.policies, p);
        let run = run_trpe(&g, &p, &TrpeConfig { epochs: 3, ..TrpeConfig::default() }).unwrap();
        for m in &run.metrics {
            assert_eq!(m.joint_entropy, 0.0);
            assert_eq!(m.mixture_entropy, Some(0.0));
            assert!(m.disjoint_entropy.iter().all(|&d| d == 0.0));
        }
        let mut buf = Vec::new();
        write_trpe_csv(&mut buf, ObjectiveFamily::Mixture, 2, &run.metrics).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with(
            "epoch,optimized_kind,mean_zeta1,stderr,joint_entropy,mixture_entropy,\
             disjoint_entropy_agent_0,disjoint_entropy_agent_1,kl_at_stop,inner_iters,excluded_weights\n1,mixture,0,"
        ));
    }

    #[test]
    fn training_is_deterministic() {
        let g = envs::open_grid(3, 2, 6).unwrap();
        let p = PolicySet::tabular_uniform(&g);
        let cfg = TrpeConfig {
            epochs: 4,
            learning_rate: 0.1,
            kl_threshold: 0.1,
            seed: 9,
            ..TrpeConfig::default()
        };
        let a = run_trpe(&g, &p, &cfg).unwrap();
        let b = run_trpe(&g, &p, &cfg).unwrap();
        assert_eq!(a.policies, b.policies);
        assert_eq!(a.metrics, b.metrics);
    }

    #[test]
    fn config_validation() {
        assert!(TrpeConfig::default().validate().is_ok());
        assert!(TrpeConfig { batch: 0, ..TrpeConfig::default() }.validate().is_err());
        assert!(TrpeConfig { learning_rate: 0.0, ..TrpeConfig::default() }.validate().is_err());
        assert!(TrpeConfig { kl_threshold: -1.0, ..TrpeConfig::default() }.validate().is_err());
        assert!(TrpeConfig { max_offpolicy_iters: 0, ..TrpeConfig::default() }.validate().is_err());
    }
}
