//! Multi-agent TRPO with independent per-agent critics for sparse-reward
//! fine-tuning.
//!
//! Rewards arrive with the state an action leads to: step `t` earns
//! `R(s_{t+1})`, and an episode stops at the first terminal `s_{t+1}`. The
//! state reached by the last of the `T` actions is looked at for its reward
//! only.

use std::collections::HashMap;
use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::MarkovGame;
use crate::policy::network::{self, Activations, Layout};
use crate::policy::{categorical_kl, ActionTables, AgentPolicy, ObsPass, PolicySet};
use crate::rng;
use crate::stats::{check_exact_cap, propagate, DEFAULT_EXACT_CAP};

/// A game with per-agent rewards and terminal states.
#[derive(Debug, Clone)]
pub struct RewardedTask {
    game: MarkovGame,
    /// `rewards[s * num_agents + i]`
    rewards: Vec<f64>,
    terminal: Vec<bool>,
}

impl RewardedTask {
    pub fn new(game: MarkovGame, rewards: Vec<f64>, terminal: Vec<bool>) -> Result<Self> {
        let ns = game.num_states();
        if rewards.len() != ns * game.num_agents() || terminal.len() != ns {
            return Err(Error::DimensionMismatch(format!(
                "task over {ns} joint states needs {} rewards and {ns} terminal flags",
                ns * game.num_agents()
            )));
        }
        if let Some(r) = rewards.iter().find(|r| !r.is_finite()) {
            return Err(Error::NonFinite(format!("reward {r}")));
        }
        Ok(RewardedTask {
            game,
            rewards,
            terminal,
        })
    }

    pub fn game(&self) -> &MarkovGame {
        &self.game
    }

    pub fn reward(&self, state: usize, agent: usize) -> f64 {
        self.rewards[state * self.game.num_agents() + agent]
    }

    pub fn is_terminal(&self, state: usize) -> bool {
        self.terminal[state]
    }
}

/// `G_t = r_t + γ G_{t+1}`.
pub fn discounted_returns(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for (g, &r) in out.iter_mut().zip(rewards).rev() {
        acc = r + gamma * acc;
        *g = acc;
    }
    out
}

/// State-value network over one agent's observations.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueNet {
    encoding: crate::game::ObsEncoding,
    layout: Layout,
    params: Vec<f64>,
}

impl ValueNet {
    /// Xavier-initialized critic; `hidden = []` gives a table of values.
    pub fn new<R: Rng + ?Sized>(encoding: crate::game::ObsEncoding, hidden: &[usize], rng: &mut R) -> Self {
        let layout = Layout::new(encoding.input_width(), hidden, 1);
        let params = layout.xavier(rng);
        ValueNet {
            encoding,
            layout,
            params,
        }
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    fn forward(&self, obs: usize, acts: &mut Activations) -> f64 {
        let mut active = Vec::with_capacity(self.encoding.features().len());
        self.encoding.active_inputs(obs, &mut active);
        network::forward(&self.layout, &self.params, &active, acts);
        acts.output[0]
    }

    pub fn value(&self, obs: usize) -> f64 {
        self.forward(obs, &mut Activations::default())
    }
}

/// Full-batch gradient descent on `mean (V(o) - y)²`; returns the MSE after
/// the last step (before any step when `steps = 0`).
pub fn critic_fit(critic: &mut ValueNet, observations: &[usize], targets: &[f64], lr: f64, steps: usize) -> Result<f64> {
    if observations.len() != targets.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} observations but {} targets",
            observations.len(),
            targets.len()
        )));
    }
    if observations.is_empty() {
        return Err(Error::Empty("critic needs at least one sample"));
    }
    if let Some(t) = targets.iter().find(|t| !t.is_finite()) {
        return Err(Error::NonFinite(format!("critic target {t}")));
    }
    let size = critic.encoding.size();
    if let Some(&o) = observations.iter().find(|&&o| o >= size) {
        return Err(Error::ObservationOutOfRange { obs: o, size });
    }
    // sufficient statistics per distinct observation: count and target sum
    let mut groups: HashMap<usize, (f64, f64, f64)> = HashMap::new();
    for (&o, &y) in observations.iter().zip(targets) {
        let g = groups.entry(o).or_default();
        g.0 += 1.0;
        g.1 += y;
        g.2 += y * y;
    }
    let mut groups: Vec<_> = groups.into_iter().collect();
    groups.sort_by_key(|g| g.0);
    let n = observations.len() as f64;
    let mut acts: Vec<Activations> = vec![Activations::default(); groups.len()];
    let mse = |c: &ValueNet, acts: &mut [Activations]| -> f64 {
        groups
            .iter()
            .zip(acts.iter_mut())
            .map(|(&(o, (cnt, sum, sq)), a)| {
                let v = c.forward(o, a);
                cnt * v * v - 2.0 * v * sum + sq
            })
            .sum::<f64>()
            / n
    };
    let mut loss = mse(critic, &mut acts);
    for _ in 0..steps {
        let mut grad = vec![0.0; critic.params.len()];
        for (&(_, (cnt, sum, _)), a) in groups.iter().zip(&acts) {
            let v = a.output[0];
            let d = 2.0 * (cnt * v - sum) / n;
            network::backward(&critic.layout, &critic.params, a, &[d], &mut grad);
        }
        for (p, g) in critic.params.iter_mut().zip(&grad) {
            *p -= lr * g;
        }
        loss = mse(critic, &mut acts);
    }
    if !loss.is_finite() {
        return Err(Error::NonFinite("critic loss diverged".into()));
    }
    Ok(loss)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatrpoConfig {
    /// Episodes per epoch.
    pub batch: usize,
    pub kl_threshold: f64,
    pub gamma: f64,
    pub epochs: usize,
    /// Policy step size inside the trust region.
    pub learning_rate: f64,
    pub max_offpolicy_iters: usize,
    pub critic_hidden: Vec<usize>,
    pub critic_learning_rate: f64,
    pub critic_steps: usize,
    pub seed: u64,
}

impl Default for MatrpoConfig {
    fn default() -> Self {
        MatrpoConfig {
            batch: 20,
            kl_threshold: 1e-4,
            gamma: 0.99,
            epochs: 100,
            learning_rate: 1e-4,
            max_offpolicy_iters: 20,
            critic_hidden: vec![64, 64],
            critic_learning_rate: 1e-3,
            critic_steps: 50,
            seed: 0,
        }
    }
}

impl MatrpoConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.into()));
        if self.batch == 0 {
            return bad("batch must be at least 1");
        }
        if !(self.kl_threshold >= 0.0) {
            return bad("kl_threshold must be non-negative");
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must lie in (0, 1]");
        }
        if !(self.learning_rate > 0.0) || !(self.critic_learning_rate > 0.0) {
            return bad("learning rates must be positive");
        }
        if self.max_offpolicy_iters == 0 {
            return bad("max_offpolicy_iters must be at least 1");
        }
        Ok(())
    }
}

/// One episode: per step, every agent's observation and action, and the
/// reward that followed.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub num_agents: usize,
    pub observations: Vec<usize>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub reached_terminal: bool,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.observations.len() / self.num_agents
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn reward(&self, t: usize, agent: usize) -> f64 {
        self.rewards[t * self.num_agents + agent]
    }

    pub fn total_reward(&self, agent: usize) -> f64 {
        (0..self.len()).map(|t| self.reward(t, agent)).sum()
    }
}

fn run_episode<R: Rng + ?Sized>(task: &RewardedTask, tables: &ActionTables, rng: &mut R) -> Episode {
    let game = &task.game;
    let n = game.num_agents();
    let obs = game.observations();
    let mut ep = Episode {
        num_agents: n,
        observations: Vec::new(),
        actions: Vec::new(),
        rewards: Vec::new(),
        reached_terminal: false,
    };
    let mut s = rng::categorical(game.initial(), rng.gen());
    let mut local = vec![0u32; n];
    for _ in 0..game.horizon() {
        for (i, l) in local.iter_mut().enumerate() {
            let o = obs.observe(s, i);
            *l = rng::categorical(tables.probs(i, o), rng.gen()) as u32;
            ep.observations.push(o);
            ep.actions.push(*l as usize);
        }
        let (next, prob) = game.row(s, game.action_radix().encode(&local));
        s = next[rng::categorical(prob, rng.gen())] as usize;
        for i in 0..n {
            ep.rewards.push(task.reward(s, i));
        }
        if task.is_terminal(s) {
            ep.reached_terminal = true;
            break;
        }
    }
    ep
}

/// `count` episodes; episode `k` uses sub-stream `k` of `seed`.
pub fn collect_episodes(task: &RewardedTask, policies: &PolicySet, count: usize, seed: u64) -> Result<Vec<Episode>> {
    policies.check_compatible(&task.game)?;
    let tables = policies.action_tables();
    Ok((0..count)
        .into_par_iter()
        .map(|k| run_episode(task, &tables, &mut rng::substream(seed, k as u64)))
        .collect())
}

/// One agent's flattened batch.
struct AgentBatch {
    observations: Vec<usize>,
    actions: Vec<usize>,
    returns: Vec<f64>,
}

fn agent_batch(episodes: &[Episode], agent: usize, gamma: f64) -> AgentBatch {
    let mut b = AgentBatch {
        observations: Vec::new(),
        actions: Vec::new(),
        returns: Vec::new(),
    };
    for ep in episodes {
        let rewards: Vec<f64> = (0..ep.len()).map(|t| ep.reward(t, agent)).collect();
        b.returns.extend(discounted_returns(&rewards, gamma));
        for t in 0..ep.len() {
            b.observations.push(ep.observations[t * ep.num_agents + agent]);
            b.actions.push(ep.actions[t * ep.num_agents + agent]);
        }
    }
    b
}

/// Gradient of `(1/|D|) Σ ρ_t Â_t` at `params`, with `passes` evaluated at
/// `params` over `unique`.
#[allow(clippy::too_many_arguments)]
fn advantage_gradient(
    policy: &AgentPolicy,
    params: &[f64],
    unique: &[usize],
    slot: &[usize],
    actions: &[usize],
    advantages: &[f64],
    passes: &[ObsPass],
    behavior: &[ObsPass],
) -> Vec<f64> {
    let na = policy.num_actions();
    let mut dlogits = vec![0.0; unique.len() * na];
    let n = slot.len() as f64;
    for ((&u, &a), &adv) in slot.iter().zip(actions).zip(advantages) {
        let w = (passes[u].log_probs[a] - behavior[u].log_probs[a]).exp() * adv / n;
        let d = &mut dlogits[u * na..(u + 1) * na];
        for (b, (db, lp)) in d.iter_mut().zip(&passes[u].log_probs).enumerate() {
            *db -= w * lp.exp();
            if b == a {
                *db += w;
            }
        }
    }
    let mut grad = vec![0.0; params.len()];
    for (u, &o) in unique.iter().enumerate() {
        let d = &dlogits[u * na..(u + 1) * na];
        if d.iter().any(|&x| x != 0.0) {
            policy.backprop_with(params, o, &passes[u], d, &mut grad);
        }
    }
    grad
}

/// Surrogate gradient of one agent at its behavior parameters; zero when
/// every advantage is zero.
pub fn advantage_surrogate_grad(policy: &AgentPolicy, observations: &[usize], actions: &[usize], advantages: &[f64]) -> Vec<f64> {
    let (unique, slot) = index_unique(observations);
    let passes: Vec<_> = unique.iter().map(|&o| policy.pass(o)).collect();
    advantage_gradient(policy, policy.params(), &unique, &slot, actions, advantages, &passes, &passes)
}

fn index_unique(observations: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let mut map = HashMap::new();
    let mut unique = Vec::new();
    let slot = observations
        .iter()
        .map(|&o| {
            *map.entry(o).or_insert_with(|| {
                unique.push(o);
                unique.len() - 1
            })
        })
        .collect();
    (unique, slot)
}

struct AgentUpdate {
    params: Vec<f64>,
    kl: f64,
    mse: f64,
    critic: ValueNet,
}

fn update_agent(policy: &AgentPolicy, critic: &ValueNet, batch: &AgentBatch, config: &MatrpoConfig) -> Result<AgentUpdate> {
    let mut critic = critic.clone();
    if batch.observations.is_empty() {
        return Ok(AgentUpdate {
            params: policy.params().to_vec(),
            kl: 0.0,
            mse: 0.0,
            critic,
        });
    }
    let (unique, slot) = index_unique(&batch.observations);
    let baseline: Vec<f64> = unique.iter().map(|&o| critic.value(o)).collect();
    let advantages: Vec<f64> = slot
        .iter()
        .zip(&batch.returns)
        .map(|(&u, g)| g - baseline[u])
        .collect();
    let mut visits = vec![0usize; unique.len()];
    for &u in &slot {
        visits[u] += 1;
    }
    let kl_of = |new: &[ObsPass], old: &[ObsPass]| -> f64 {
        new.iter()
            .zip(old)
            .zip(&visits)
            .map(|((a, b), &c)| c as f64 * categorical_kl(&a.log_probs, &b.log_probs))
            .sum::<f64>()
            / slot.len() as f64
    };

    let behavior: Vec<_> = unique.iter().map(|&o| policy.pass(o)).collect();
    let mut theta = policy.params().to_vec();
    let mut passes = behavior.clone();
    let mut kl = 0.0;
    for _ in 0..config.max_offpolicy_iters {
        let grad = advantage_gradient(policy, &theta, &unique, &slot, &batch.actions, &advantages, &passes, &behavior);
        let next: Vec<f64> = theta.iter().zip(&grad).map(|(t, g)| t + config.learning_rate * g).collect();
        let next_passes: Vec<_> = unique.iter().map(|&o| policy.pass_with(&next, o)).collect();
        let next_kl = kl_of(&next_passes, &behavior);
        if !(next_kl <= config.kl_threshold) || next.iter().any(|x| !x.is_finite()) {
            break;
        }
        theta = next;
        passes = next_passes;
        kl = next_kl;
    }
    let mse = critic_fit(
        &mut critic,
        &batch.observations,
        &batch.returns,
        config.critic_learning_rate,
        config.critic_steps,
    )?;
    Ok(AgentUpdate {
        params: theta,
        kl,
        mse,
        critic,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneMetrics {
    pub epoch: usize,
    /// Mean undiscounted episode return per agent.
    pub mean_return: Vec<f64>,
    pub return_stderr: Vec<f64>,
    pub goal_fraction: f64,
    pub kl_at_stop: f64,
    /// Mean over agents of the critic's final training MSE.
    pub critic_mse: f64,
}

fn episode_stats(episodes: &[Episode], num_agents: usize) -> (Vec<f64>, Vec<f64>, f64) {
    let mut means = Vec::with_capacity(num_agents);
    let mut errs = Vec::with_capacity(num_agents);
    for i in 0..num_agents {
        let totals: Vec<f64> = episodes.iter().map(|e| e.total_reward(i)).collect();
        let (m, s) = crate::objectives::mean_stderr(&totals);
        means.push(m);
        errs.push(s);
    }
    let goal = episodes.iter().filter(|e| e.reached_terminal).count() as f64 / episodes.len() as f64;
    (means, errs, goal)
}

/// Independent critics, one per agent; critic `i` is initialized from
/// sub-stream `i` of `rng::derive(seed, u64::MAX)`.
pub fn init_critics(game: &MarkovGame, hidden: &[usize], seed: u64) -> Vec<ValueNet> {
    let base = rng::derive(seed, u64::MAX);
    (0..game.num_agents())
        .map(|i| {
            ValueNet::new(
                game.observations().encoding(i).clone(),
                hidden,
                &mut rng::substream(base, i as u64),
            )
        })
        .collect()
}

/// Collects a batch with seed `rng::derive(config.seed, epoch)`, updates
/// every agent's policy inside the trust region, then refits its critic.
pub fn matrpo_epoch(
    task: &RewardedTask,
    policies: &PolicySet,
    critics: &[ValueNet],
    config: &MatrpoConfig,
    epoch: usize,
) -> Result<(PolicySet, Vec<ValueNet>, FinetuneMetrics)> {
    config.validate()?;
    let n = task.game.num_agents();
    if critics.len() != n {
        return Err(Error::DimensionMismatch(format!("{} critics for {n} agents", critics.len())));
    }
    let episodes = collect_episodes(task, policies, config.batch, rng::derive(config.seed, epoch as u64))?;
    let updates = (0..n)
        .into_par_iter()
        .map(|i| update_agent(policies.agent(i), &critics[i], &agent_batch(&episodes, i, config.gamma), config))
        .collect::<Result<Vec<_>>>()?;
    let (mean_return, return_stderr, goal_fraction) = episode_stats(&episodes, n);
    let metrics = FinetuneMetrics {
        epoch,
        mean_return,
        return_stderr,
        goal_fraction,
        kl_at_stop: updates.iter().map(|u| u.kl).fold(0.0, f64::max),
        critic_mse: updates.iter().map(|u| u.mse).sum::<f64>() / n as f64,
    };
    let mut agents = policies.clone().into_agents();
    let mut new_critics = Vec::with_capacity(n);
    for (a, u) in agents.iter_mut().zip(updates) {
        a.set_params(&u.params);
        new_critics.push(u.critic);
    }
    Ok((PolicySet::new(agents), new_critics, metrics))
}

#[derive(Debug, Clone)]
pub struct FinetuneRun {
    pub policies: PolicySet,
    pub metrics: Vec<FinetuneMetrics>,
}

pub fn run_finetune(task: &RewardedTask, initial: &PolicySet, config: &MatrpoConfig) -> Result<FinetuneRun> {
    config.validate()?;
    initial.check_compatible(&task.game)?;
    let mut critics = init_critics(&task.game, &config.critic_hidden, config.seed);
    let mut policies = initial.clone();
    let mut metrics = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        let (p, c, m) = matrpo_epoch(task, &policies, &critics, config, epoch)?;
        if !p.all_finite() {
            return Err(Error::NonFinite(format!("policy parameters after epoch {epoch}")));
        }
        policies = p;
        critics = c;
        metrics.push(m);
    }
    Ok(FinetuneRun { policies, metrics })
}

/// Zero-shot evaluation of fixed policies, reported as epoch 0.
pub fn evaluate(task: &RewardedTask, policies: &PolicySet, episodes: usize, seed: u64) -> Result<FinetuneMetrics> {
    if episodes == 0 {
        return Err(Error::InvalidArgument("evaluation needs at least one episode".into()));
    }
    let eps = collect_episodes(task, policies, episodes, seed)?;
    let (mean_return, return_stderr, goal_fraction) = episode_stats(&eps, task.game.num_agents());
    Ok(FinetuneMetrics {
        epoch: 0,
        mean_return,
        return_stderr,
        goal_fraction,
        kl_at_stop: 0.0,
        critic_mse: 0.0,
    })
}

/// Exact probability that an episode reaches a terminal state.
pub fn exact_goal_probability(task: &RewardedTask, policies: &PolicySet) -> Result<f64> {
    let game = &task.game;
    check_exact_cap(game, DEFAULT_EXACT_CAP)?;
    policies.check_compatible(game)?;
    let tables = policies.action_tables();
    let mut occ = game.initial().to_vec();
    let mut hit = 0.0;
    for _ in 0..game.horizon() {
        occ = propagate(game, &tables, &occ);
        for (s, m) in occ.iter_mut().enumerate() {
            if task.terminal[s] {
                hit += *m;
                *m = 0.0;
            }
        }
    }
    Ok(hit)
}

/// Epoch index of the first epoch with a nonzero mean return (any agent).
pub fn first_rewarded_epoch(metrics: &[FinetuneMetrics]) -> Option<usize> {
    metrics
        .iter()
        .find(|m| m.mean_return.iter().any(|&r| r != 0.0))
        .map(|m| m.epoch)
}

pub fn write_finetune_csv<W: Write>(mut out: W, num_agents: usize, metrics: &[FinetuneMetrics]) -> std::io::Result<()> {
    write!(out, "epoch")?;
    for i in 0..num_agents {
        write!(out, ",mean_return_agent_{i}")?;
    }
    writeln!(out, ",episodes_to_goal_fraction,kl_at_stop,critic_mse")?;
    for m in metrics {
        write!(out, "{}", m.epoch)?;
        for r in &m.mean_return {
            write!(out, ",{r}")?;
        }
        writeln!(out, ",{},{},{}", m.goal_fraction, m.kl_at_stop, m.critic_mse)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs;
    use crate::game::{ObsEncoding, Transitions};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// One state, two actions; action 1 moves to a rewarding terminal state.
    fn bandit() -> RewardedTask {
        let game = MarkovGame::new(
            vec![2],
            vec![2],
            Transitions::deterministic(vec![0, 1, 1, 1]),
            vec![1.0, 0.0],
            1,
        )
        .unwrap();
        RewardedTask::new(game, vec![0.0, 1.0], vec![false, true]).unwrap()
    }

    #[test]
    fn returns_recursion() {
        assert_eq!(discounted_returns(&[0.0, 0.0, 1.0], 0.5), vec![0.25, 0.5, 1.0]);
        assert_eq!(discounted_returns(&[0.0; 4], 0.9), vec![0.0; 4]);
        assert_eq!(discounted_returns(&[1.0, 2.0, 3.0], 1.0), vec![6.0, 5.0, 3.0]);
    }

    #[test]
    fn critic_learns_a_constant() {
        let enc = ObsEncoding::new(vec![5]).unwrap();
        let mut c = ValueNet::new(enc, &[8, 8], &mut ChaCha8Rng::seed_from_u64(1));
        let obs: Vec<usize> = (0..40).map(|k| k % 5).collect();
        let mse = critic_fit(&mut c, &obs, &vec![3.0; 40], 0.05, 2000).unwrap();
        assert!(mse < 1e-4, "{mse}");
    }

    #[test]
    fn critic_zero_steps_and_monotone() {
        let enc = ObsEncoding::new(vec![4]).unwrap();
        let mut c = ValueNet::new(enc, &[6], &mut ChaCha8Rng::seed_from_u64(2));
        let before = c.clone();
        let obs = [0, 1, 2, 3, 1, 2];
        let ys = [1.0, -2.0, 0.5, 3.0, -1.0, 0.0];
        critic_fit(&mut c, &obs, &ys, 0.01, 0).unwrap();
        assert_eq!(c, before);
        let mut last = f64::INFINITY;
        for _ in 0..50 {
            let m = critic_fit(&mut c, &obs, &ys, 0.01, 1).unwrap();
            assert!(m <= last + 1e-12);
            last = m;
        }
        assert!(critic_fit(&mut c, &obs, &[f64::NAN; 6], 0.01, 1).is_err());
    }

    #[test]
    fn episodes_stop_at_terminal() {
        let room = envs::secret_room(&envs::SecretRoomParams {
            goal: [4, 4],
            ..Default::default()
        })
        .unwrap();
        let task = room.goal_task().unwrap();
        let eps = collect_episodes(&task, &PolicySet::tabular_uniform(&room.game), 50, 3).unwrap();
        let mut hits = 0;
        for e in &eps {
            assert!(e.len() <= 50);
            if e.reached_terminal {
                hits += 1;
                let last = e.len() - 1;
                assert_eq!(e.reward(last, 0), 100.0);
                assert_eq!(e.reward(last, 1), 100.0);
                assert_eq!(e.total_reward(0), 100.0);
                let g = discounted_returns(&(0..e.len()).map(|t| e.reward(t, 0)).collect::<Vec<_>>(), 0.99);
                assert_eq!(g[last], 100.0);
            } else {
                assert_eq!(e.len(), 50);
                assert_eq!(e.total_reward(0), 0.0);
            }
        }
        assert!(hits > 0);
    }

    #[test]
    fn zero_advantages_give_zero_gradient() {
        let g = envs::open_grid(3, 1, 4).unwrap();
        let p = PolicySet::for_game(&g, &crate::policy::PolicyClass::Mlp { hidden: vec![4] }, 0);
        let grad = advantage_surrogate_grad(p.agent(0), &[0, 3, 3, 7], &[1, 2, 0, 4], &[0.0; 4]);
        assert!(grad.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn zero_reward_task_keeps_policies() {
        let g = envs::open_grid(3, 2, 6).unwrap();
        let task = RewardedTask::new(g.clone(), vec![0.0; 81 * 2], vec![false; 81]).unwrap();
        let cfg = MatrpoConfig {
            epochs: 3,
            critic_hidden: vec![],
            learning_rate: 0.1,
            ..MatrpoConfig::default()
        };
        let p = PolicySet::tabular_uniform(&g);
        // zero-initialized table critics are exact for zero returns
        let critics: Vec<ValueNet> = init_critics(&g, &[], 0)
            .into_iter()
            .map(|mut c| {
                c.params.iter_mut().for_each(|x| *x = 0.0);
                c
            })
            .collect();
        let (next, _, m) = matrpo_epoch(&task, &p, &critics, &cfg, 1).unwrap();
        assert_eq!(next, p);
        assert_eq!(m.mean_return, vec![0.0, 0.0]);
    }

    #[test]
    fn bandit_learns_rewarding_action() {
        let task = bandit();
        let cfg = MatrpoConfig {
            epochs: 10,
            learning_rate: 0.05,
            kl_threshold: 0.01,
            critic_hidden: vec![],
            critic_learning_rate: 0.1,
            seed: 4,
            ..MatrpoConfig::default()
        };
        let mut p = PolicySet::tabular_uniform(task.game());
        let mut critics = init_critics(task.game(), &cfg.critic_hidden, cfg.seed);
        let mut prob = p.agent(0).action_distribution(0).unwrap()[1];
        for epoch in 1..=cfg.epochs {
            let (np, nc, m) = matrpo_epoch(&task, &p, &critics, &cfg, epoch).unwrap();
            assert!(m.kl_at_stop <= cfg.kl_threshold);
            let next = np.agent(0).action_distribution(0).unwrap()[1];
            assert!(next > prob, "epoch {epoch}: {next} <= {prob}");
            prob = next;
            p = np;
            critics = nc;
        }
    }

    #[test]
    fn finetune_is_deterministic_and_logs() {
        let task = bandit();
        let cfg = MatrpoConfig {
            epochs: 4,
            critic_hidden: vec![4],
            learning_rate: 0.05,
            kl_threshold: 0.01,
            ..MatrpoConfig::default()
        };
        let p = PolicySet::tabular_uniform(task.game());
        let a = run_finetune(&task, &p, &cfg).unwrap();
        let b = run_finetune(&task, &p, &cfg).unwrap();
        let csv = |r: &FinetuneRun| {
            let mut buf = Vec::new();
            write_finetune_csv(&mut buf, 1, &r.metrics).unwrap();
            String::from_utf8(buf).unwrap()
        };
        assert_eq!(csv(&a), csv(&b));
        assert!(csv(&a).starts_with("epoch,mean_return_agent_0,episodes_to_goal_fraction,kl_at_stop,critic_mse\n1,"));
        let empty = run_finetune(&task, &p, &MatrpoConfig { epochs: 0, ..cfg }).unwrap();
        assert!(empty.metrics.is_empty());
    }

    #[test]
    fn exact_goal_probability_matches_sampling() {
        let task = bandit();
        let p = PolicySet::tabular_uniform(task.game());
        assert!((exact_goal_probability(&task, &p).unwrap() - 0.5).abs() < 1e-12);
        let e = evaluate(&task, &p, 4000, 1).unwrap();
        assert!((e.goal_fraction - 0.5).abs() < 4.0 * (0.25f64 / 4000.0).sqrt());
        assert_eq!(first_rewarded_epoch(std::slice::from_ref(&e)), if e.mean_return[0] > 0.0 { Some(0) } else { None });
    }
}
