//! Per-agent categorical policies with softmax heads.
//!
//! Two classes share one contract: a tabular class with one logit row per
//! observation, and a dense tanh network over the one-hot observation
//! encoding. Both expose log-probabilities and score-function gradients with
//! respect to a flat parameter vector.

mod checkpoint;
pub mod network;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, FORMAT_VERSION as CHECKPOINT_FORMAT_VERSION,
};

use crate::error::{Error, Result};
use crate::game::{MarkovGame, ObsEncoding};
use crate::rng;
use network::{Activations, Layout};

/// Default hidden widths of network policies and critics.
pub const DEFAULT_HIDDEN: [usize; 2] = [64, 64];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "class", rename_all = "lowercase")]
pub enum PolicyClass {
    Tabular,
    Mlp { hidden: Vec<usize> },
}

impl PolicyClass {
    pub fn mlp_default() -> Self {
        PolicyClass::Mlp {
            hidden: DEFAULT_HIDDEN.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentPolicy {
    class: PolicyClass,
    encoding: ObsEncoding,
    num_actions: usize,
    layout: Option<Layout>,
    params: Vec<f64>,
}

/// Forward pass at one observation.
#[derive(Debug, Clone)]
pub(crate) struct ObsPass {
    pub log_probs: Vec<f64>,
    acts: Option<Activations>,
}

impl ObsPass {
    pub fn probs(&self) -> impl Iterator<Item = f64> + '_ {
        self.log_probs.iter().map(|l| l.exp())
    }
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

impl AgentPolicy {
    /// Tabular policy with all-zero logits (uniform).
    pub fn tabular(encoding: ObsEncoding, num_actions: usize) -> Self {
        let params = vec![0.0; encoding.size() * num_actions];
        AgentPolicy {
            class: PolicyClass::Tabular,
            encoding,
            num_actions,
            layout: None,
            params,
        }
    }

    /// Network policy with Xavier-uniform weights.
    pub fn mlp<R: Rng + ?Sized>(
        encoding: ObsEncoding,
        num_actions: usize,
        hidden: &[usize],
        rng: &mut R,
    ) -> Self {
        let layout = Layout::new(encoding.input_width(), hidden, num_actions);
        let params = layout.xavier(rng);
        AgentPolicy {
            class: PolicyClass::Mlp {
                hidden: hidden.to_vec(),
            },
            encoding,
            num_actions,
            layout: Some(layout),
            params,
        }
    }

    pub fn from_params(
        class: PolicyClass,
        encoding: ObsEncoding,
        num_actions: usize,
        params: Vec<f64>,
    ) -> Result<Self> {
        if num_actions == 0 {
            return Err(Error::InvalidArgument("policy needs at least one action".into()));
        }
        let layout = match &class {
            PolicyClass::Tabular => None,
            PolicyClass::Mlp { hidden } => {
                Some(Layout::new(encoding.input_width(), hidden, num_actions))
            }
        };
        let expected = layout
            .as_ref()
            .map_or(encoding.size() * num_actions, Layout::num_params);
        if params.len() != expected {
            return Err(Error::ArchitectureMismatch(format!(
                "expected {expected} parameters, got {}",
                params.len()
            )));
        }
        Ok(AgentPolicy {
            class,
            encoding,
            num_actions,
            layout,
            params,
        })
    }

    /// Same architecture with the output layer zeroed, so every observation
    /// maps to the uniform distribution. Tabular policies become all-zero.
    pub fn uniform_output(&self) -> Self {
        let mut params = self.params.clone();
        let k = match &self.layout {
            None => params.len(),
            Some(layout) => {
                let fan_in = layout.hidden().last().copied().unwrap_or(layout.input());
                (fan_in + 1) * self.num_actions
            }
        };
        let len = params.len();
        params[len - k..].iter_mut().for_each(|x| *x = 0.0);
        AgentPolicy { params, ..self.clone() }
    }

    pub fn class(&self) -> &PolicyClass {
        &self.class
    }

    pub fn encoding(&self) -> &ObsEncoding {
        &self.encoding
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// Same architecture with new parameters.
    pub fn with_params(&self, params: Vec<f64>) -> Result<Self> {
        if params.len() != self.params.len() {
            return Err(Error::ArchitectureMismatch(format!(
                "expected {} parameters, got {}",
                self.params.len(),
                params.len()
            )));
        }
        Ok(AgentPolicy {
            params,
            ..self.clone()
        })
    }

    pub(crate) fn set_params(&mut self, params: &[f64]) {
        self.params.copy_from_slice(params);
    }

    pub fn same_architecture(&self, other: &AgentPolicy) -> bool {
        self.class == other.class
            && self.encoding == other.encoding
            && self.num_actions == other.num_actions
    }

    fn check_obs(&self, obs: usize) -> Result<()> {
        if obs >= self.encoding.size() {
            return Err(Error::ObservationOutOfRange {
                obs,
                size: self.encoding.size(),
            });
        }
        Ok(())
    }

    fn check_action(&self, action: usize) -> Result<()> {
        if action >= self.num_actions {
            return Err(Error::ActionOutOfRange {
                action,
                size: self.num_actions,
            });
        }
        Ok(())
    }

    /// Forward pass with `params` in place of the policy's own parameters.
    /// `obs` must be in range.
    pub(crate) fn pass_with(&self, params: &[f64], obs: usize) -> ObsPass {
        match &self.layout {
            None => {
                let a = self.num_actions;
                ObsPass {
                    log_probs: log_softmax(&params[obs * a..(obs + 1) * a]),
                    acts: None,
                }
            }
            Some(layout) => {
                let mut active = Vec::with_capacity(self.encoding.features().len());
                self.encoding.active_inputs(obs, &mut active);
                let mut acts = Activations::default();
                network::forward(layout, params, &active, &mut acts);
                ObsPass {
                    log_probs: log_softmax(&acts.output),
                    acts: Some(acts),
                }
            }
        }
    }

    pub(crate) fn pass(&self, obs: usize) -> ObsPass {
        self.pass_with(&self.params, obs)
    }

    /// Adds `dlogits · ∂logits/∂params` at the pass's observation into `grad`.
    pub(crate) fn backprop_with(
        &self,
        params: &[f64],
        obs: usize,
        pass: &ObsPass,
        dlogits: &[f64],
        grad: &mut [f64],
    ) {
        match (&self.layout, &pass.acts) {
            (Some(layout), Some(acts)) => network::backward(layout, params, acts, dlogits, grad),
            _ => {
                let a = self.num_actions;
                for (g, d) in grad[obs * a..(obs + 1) * a].iter_mut().zip(dlogits) {
                    *g += d;
                }
            }
        }
    }

    pub fn action_distribution(&self, obs: usize) -> Result<Vec<f64>> {
        self.check_obs(obs)?;
        Ok(self.pass(obs).probs().collect())
    }

    pub fn log_prob(&self, obs: usize, action: usize) -> Result<f64> {
        self.check_obs(obs)?;
        self.check_action(action)?;
        Ok(self.pass(obs).log_probs[action])
    }

    /// Gradient of `log π(action | obs)` with respect to the parameters.
    pub fn grad_log_prob(&self, obs: usize, action: usize) -> Result<Vec<f64>> {
        self.check_obs(obs)?;
        self.check_action(action)?;
        let pass = self.pass(obs);
        let dlogits: Vec<f64> = pass
            .probs()
            .enumerate()
            .map(|(a, p)| if a == action { 1.0 - p } else { -p })
            .collect();
        let mut grad = vec![0.0; self.params.len()];
        self.backprop_with(&self.params, obs, &pass, &dlogits, &mut grad);
        Ok(grad)
    }
}

/// Categorical KL between two log-probability vectors.
pub(crate) fn categorical_kl(log_p: &[f64], log_q: &[f64]) -> f64 {
    log_p
        .iter()
        .zip(log_q)
        .map(|(&lp, &lq)| lp.exp() * (lp - lq))
        .sum::<f64>()
        .max(0.0)
}

/// Mean over `obs_batch` of `KL(new(·|o) ‖ old(·|o))`.
pub fn policy_kl(new: &AgentPolicy, old: &AgentPolicy, obs_batch: &[usize]) -> Result<f64> {
    if !new.same_architecture(old) || new.params.len() != old.params.len() {
        return Err(Error::ArchitectureMismatch(
            "KL between policies of different architectures".into(),
        ));
    }
    if obs_batch.is_empty() {
        return Err(Error::Empty("KL needs at least one observation"));
    }
    let mut total = 0.0;
    for &o in obs_batch {
        new.check_obs(o)?;
        total += categorical_kl(&new.pass(o).log_probs, &old.pass(o).log_probs);
    }
    Ok(total / obs_batch.len() as f64)
}

/// Action probabilities for every observation of every agent.
#[derive(Debug, Clone)]
pub struct ActionTables {
    num_actions: Vec<usize>,
    probs: Vec<Vec<f64>>,
}

impl ActionTables {
    #[inline]
    pub fn probs(&self, agent: usize, obs: usize) -> &[f64] {
        let a = self.num_actions[agent];
        &self.probs[agent][obs * a..(obs + 1) * a]
    }
}

/// One policy per agent.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicySet {
    policies: Vec<AgentPolicy>,
}

impl PolicySet {
    pub fn new(policies: Vec<AgentPolicy>) -> Self {
        PolicySet { policies }
    }

    /// Zero-logit tabular policies over the game's observation model.
    pub fn tabular_uniform(game: &MarkovGame) -> Self {
        let obs = game.observations();
        PolicySet::new(
            (0..game.num_agents())
                .map(|i| AgentPolicy::tabular(obs.encoding(i).clone(), game.local_action_sizes()[i]))
                .collect(),
        )
    }

    /// Builds policies of `class` for the game; network weights for agent
    /// `i` come from sub-stream `i` of `seed`.
    pub fn for_game(game: &MarkovGame, class: &PolicyClass, seed: u64) -> Self {
        match class {
            PolicyClass::Tabular => Self::tabular_uniform(game),
            PolicyClass::Mlp { hidden } => {
                let obs = game.observations();
                PolicySet::new(
                    (0..game.num_agents())
                        .map(|i| {
                            AgentPolicy::mlp(
                                obs.encoding(i).clone(),
                                game.local_action_sizes()[i],
                                hidden,
                                &mut rng::substream(seed, i as u64),
                            )
                        })
                        .collect(),
                )
            }
        }
    }

    pub fn len(&self) -> usize {
        self.policies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.policies.is_empty()
    }

    pub fn agent(&self, i: usize) -> &AgentPolicy {
        &self.policies[i]
    }

    pub fn agents(&self) -> &[AgentPolicy] {
        &self.policies
    }

    /// Copy with agent `i`'s policy replaced.
    pub fn with_agent(&self, i: usize, policy: AgentPolicy) -> Self {
        let mut out = self.clone();
        out.policies[i] = policy;
        out
    }

    pub fn into_agents(self) -> Vec<AgentPolicy> {
        self.policies
    }

    pub fn check_compatible(&self, game: &MarkovGame) -> Result<()> {
        if self.policies.len() != game.num_agents() {
            return Err(Error::DimensionMismatch(format!(
                "{} policies for {} agents",
                self.policies.len(),
                game.num_agents()
            )));
        }
        for (i, p) in self.policies.iter().enumerate() {
            if p.num_actions != game.local_action_sizes()[i] {
                return Err(Error::ArchitectureMismatch(format!(
                    "agent {i}: policy has {} actions, game has {}",
                    p.num_actions,
                    game.local_action_sizes()[i]
                )));
            }
            if &p.encoding != game.observations().encoding(i) {
                return Err(Error::ArchitectureMismatch(format!(
                    "agent {i}: policy observes {:?}, game provides {:?}",
                    p.encoding.features(),
                    game.observations().encoding(i).features()
                )));
            }
        }
        Ok(())
    }

    pub fn action_tables(&self) -> ActionTables {
        let mut num_actions = Vec::with_capacity(self.policies.len());
        let mut probs = Vec::with_capacity(self.policies.len());
        for p in &self.policies {
            num_actions.push(p.num_actions);
            let mut table = Vec::with_capacity(p.encoding.size() * p.num_actions);
            for o in 0..p.encoding.size() {
                table.extend(p.pass(o).probs());
            }
            probs.push(table);
        }
        ActionTables { num_actions, probs }
    }

    pub fn all_finite(&self) -> bool {
        self.policies
            .iter()
            .all(|p| p.params.iter().all(|x| x.is_finite()))
    }
}
