//! Joint, disjoint and mixture state-entropy objectives in their
//! finite-trial (empirical) and infinite-trial (exact) forms, the ordering
//! chain between the infinite-trial values, and finite-trial mismatch bounds.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{sample_batch, MarkovGame, Trajectory};
use crate::policy::PolicySet;
use crate::rng;
use crate::stats::{self, kl_divergence, require_uniform, sample_entropy, shannon_entropy};

/// Which induced distribution the entropy is taken over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ObjectiveKind {
    Joint,
    /// Marginal of one agent.
    Disjoint(usize),
    Mixture,
}

impl fmt::Display for ObjectiveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ObjectiveKind::Joint => write!(f, "joint"),
            ObjectiveKind::Disjoint(i) => write!(f, "disjoint_{i}"),
            ObjectiveKind::Mixture => write!(f, "mixture"),
        }
    }
}

/// Objective family optimized jointly by all agents. `Disjoint` means each
/// agent ascends the entropy of its own marginal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectiveFamily {
    Joint,
    Disjoint,
    Mixture,
}

impl ObjectiveFamily {
    pub fn for_agent(self, agent: usize) -> ObjectiveKind {
        match self {
            ObjectiveFamily::Joint => ObjectiveKind::Joint,
            ObjectiveFamily::Disjoint => ObjectiveKind::Disjoint(agent),
            ObjectiveFamily::Mixture => ObjectiveKind::Mixture,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ObjectiveFamily::Joint => "joint",
            ObjectiveFamily::Disjoint => "disjoint",
            ObjectiveFamily::Mixture => "mixture",
        }
    }
}

impl fmt::Display for ObjectiveFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ObjectiveFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "joint" => Ok(ObjectiveFamily::Joint),
            "disjoint" => Ok(ObjectiveFamily::Disjoint),
            "mixture" => Ok(ObjectiveFamily::Mixture),
            other => Err(Error::InvalidArgument(format!("unknown objective '{other}'"))),
        }
    }
}

/// Monte-Carlo estimate of a finite-trial objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub reps: usize,
    pub trials: usize,
}

pub(crate) fn check_kind(game: &MarkovGame, kind: ObjectiveKind) -> Result<()> {
    match kind {
        ObjectiveKind::Disjoint(agent) if agent >= game.num_agents() => Err(Error::AgentOutOfRange {
            agent,
            num_agents: game.num_agents(),
        }),
        ObjectiveKind::Mixture => require_uniform(game),
        _ => Ok(()),
    }
}

/// Entropy of the pooled empirical distribution of a group of trajectories.
pub fn pooled_value(game: &MarkovGame, group: &[Trajectory], kind: ObjectiveKind) -> Result<f64> {
    check_kind(game, kind)?;
    if group.is_empty() {
        return Err(Error::Empty("no trajectories"));
    }
    let mut buf: Vec<usize> = match kind {
        ObjectiveKind::Joint => group.iter().flat_map(|t| t.states().iter().copied()).collect(),
        ObjectiveKind::Disjoint(i) => group
            .iter()
            .flat_map(|t| (0..t.len()).map(move |s| t.local_state(s, i) as usize))
            .collect(),
        ObjectiveKind::Mixture => group
            .iter()
            .flat_map(|t| {
                (0..t.len()).flat_map(move |s| t.locals(s).iter().map(|&x| x as usize))
            })
            .collect(),
    };
    Ok(sample_entropy(&mut buf))
}

/// Plug-in entropy of one trajectory's empirical distribution.
pub fn single_trial_value(game: &MarkovGame, trajectory: &Trajectory, kind: ObjectiveKind) -> Result<f64> {
    pooled_value(game, std::slice::from_ref(trajectory), kind)
}

/// Single-trial values of every objective for one trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialValues {
    pub joint: f64,
    pub disjoint: Vec<f64>,
    pub mixture: Option<f64>,
}

pub fn all_trial_values(game: &MarkovGame, trajectory: &Trajectory) -> TrialValues {
    let joint = single_trial_value(game, trajectory, ObjectiveKind::Joint).expect("joint is always defined");
    let disjoint = (0..game.num_agents())
        .map(|i| single_trial_value(game, trajectory, ObjectiveKind::Disjoint(i)).expect("agent in range"))
        .collect();
    let mixture = single_trial_value(game, trajectory, ObjectiveKind::Mixture).ok();
    TrialValues {
        joint,
        disjoint,
        mixture,
    }
}

/// Mean and standard error of a sample.
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// `reps` independent draws of `F(d_K)`; rep `r` samples its `K`
/// trajectories from seed `rng::derive(seed, r)`.
pub fn finite_trial_samples(
    game: &MarkovGame,
    policies: &PolicySet,
    kind: ObjectiveKind,
    trials: usize,
    reps: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    check_kind(game, kind)?;
    if trials == 0 || reps == 0 {
        return Err(Error::InvalidArgument("trials and reps must be at least 1".into()));
    }
    policies.check_compatible(game)?;
    (0..reps)
        .into_par_iter()
        .map(|r| {
            let group = sample_batch(game, policies, trials, rng::derive(seed, r as u64))?;
            pooled_value(game, &group, kind)
        })
        .collect()
}

pub fn finite_trial_estimate(
    game: &MarkovGame,
    policies: &PolicySet,
    kind: ObjectiveKind,
    trials: usize,
    reps: usize,
    seed: u64,
) -> Result<ObjectiveEstimate> {
    let xs = finite_trial_samples(game, policies, kind, trials, reps, seed)?;
    let (mean, stderr) = mean_stderr(&xs);
    Ok(ObjectiveEstimate {
        mean,
        stderr,
        reps,
        trials,
    })
}

/// Entropy of the exact distribution selected by `kind`.
pub fn exact_value(dists: &stats::ExactDistributionSet, kind: ObjectiveKind) -> Result<f64> {
    match kind {
        ObjectiveKind::Joint => Ok(shannon_entropy(&dists.joint)),
        ObjectiveKind::Disjoint(agent) => dists
            .marginals
            .get(agent)
            .map(|m| shannon_entropy(m))
            .ok_or(Error::AgentOutOfRange {
                agent,
                num_agents: dists.marginals.len(),
            }),
        ObjectiveKind::Mixture => dists
            .mixture
            .as_deref()
            .map(shannon_entropy)
            .ok_or_else(|| {
                Error::HeterogeneousLocalSpaces(dists.marginals.iter().map(Vec::len).collect())
            }),
    }
}

pub fn infinite_trial_value(game: &MarkovGame, policies: &PolicySet, kind: ObjectiveKind) -> Result<f64> {
    check_kind(game, kind)?;
    exact_value(&stats::exact_distributions(game, policies)?, kind)
}

/// The five ordered infinite-trial quantities and the slack of each
/// inequality between consecutive terms.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropyChain {
    pub joint_per_agent: f64,
    pub mean_disjoint: f64,
    pub mixture: f64,
    pub max_disjoint_plus_log_n: f64,
    pub joint_plus_log_n: f64,
    pub slacks: [f64; 4],
}

impl EntropyChain {
    pub fn values(&self) -> [f64; 5] {
        [
            self.joint_per_agent,
            self.mean_disjoint,
            self.mixture,
            self.max_disjoint_plus_log_n,
            self.joint_plus_log_n,
        ]
    }

    pub fn holds(&self, tol: f64) -> bool {
        self.slacks.iter().all(|&s| s >= -tol)
    }
}

pub fn entropy_chain_from(dists: &stats::ExactDistributionSet) -> Result<EntropyChain> {
    let mixture = dists
        .mixture
        .as_deref()
        .ok_or_else(|| Error::HeterogeneousLocalSpaces(dists.marginals.iter().map(Vec::len).collect()))?;
    let n = dists.marginals.len() as f64;
    let joint = shannon_entropy(&dists.joint);
    let marg: Vec<f64> = dists.marginals.iter().map(|m| shannon_entropy(m)).collect();
    let values = [
        joint / n,
        marg.iter().sum::<f64>() / n,
        shannon_entropy(mixture),
        marg.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + n.ln(),
        joint + n.ln(),
    ];
    let slacks = [
        values[1] - values[0],
        values[2] - values[1],
        values[3] - values[2],
        values[4] - values[3],
    ];
    Ok(EntropyChain {
        joint_per_agent: values[0],
        mean_disjoint: values[1],
        mixture: values[2],
        max_disjoint_plus_log_n: values[3],
        joint_plus_log_n: values[4],
        slacks,
    })
}

pub fn entropy_chain(game: &MarkovGame, policies: &PolicySet) -> Result<EntropyChain> {
    require_uniform(game)?;
    entropy_chain_from(&stats::exact_distributions(game, policies)?)
}

/// `H(mixture) = mean_i H(d_i) + mean_i KL(d_i ‖ mixture)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixtureDecomposition {
    pub avg_entropy: f64,
    pub avg_kl: f64,
    pub mixture_entropy: f64,
}

impl MixtureDecomposition {
    pub fn residual(&self) -> f64 {
        (self.avg_entropy + self.avg_kl - self.mixture_entropy).abs()
    }
}

pub fn mixture_decomposition_from(dists: &stats::ExactDistributionSet) -> Result<MixtureDecomposition> {
    let mixture = dists
        .mixture
        .as_deref()
        .ok_or_else(|| Error::HeterogeneousLocalSpaces(dists.marginals.iter().map(Vec::len).collect()))?;
    let n = dists.marginals.len() as f64;
    let mut avg_entropy = 0.0;
    let mut avg_kl = 0.0;
    for m in &dists.marginals {
        avg_entropy += shannon_entropy(m) / n;
        avg_kl += kl_divergence(m, mixture)? / n;
    }
    Ok(MixtureDecomposition {
        avg_entropy,
        avg_kl,
        mixture_entropy: shannon_entropy(mixture),
    })
}

pub fn mixture_decomposition(game: &MarkovGame, policies: &PolicySet) -> Result<MixtureDecomposition> {
    require_uniform(game)?;
    mixture_decomposition_from(&stats::exact_distributions(game, policies)?)
}

/// High-probability bound on `|ζ_K − ζ_∞|` for an `L`-Lipschitz functional:
/// `L·T·sqrt(2·|support|·ln(2T/δ) / K)`, with `K` replaced by `|N|·K` for
/// the mixture objective. `support_size` is `|S|` for the joint objective
/// and the common local space size otherwise.
pub fn mismatch_bound(
    kind: ObjectiveKind,
    lipschitz: f64,
    horizon: usize,
    support_size: usize,
    trials: usize,
    num_agents: usize,
    delta: f64,
) -> Result<f64> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::InvalidArgument(format!("confidence δ = {delta} not in (0, 1]")));
    }
    if trials == 0 {
        return Err(Error::InvalidArgument("number of trials K must be at least 1".into()));
    }
    if !(lipschitz > 0.0) || !lipschitz.is_finite() {
        return Err(Error::InvalidArgument(format!("Lipschitz constant {lipschitz} must be positive")));
    }
    if horizon == 0 || support_size == 0 || num_agents == 0 {
        return Err(Error::InvalidArgument("horizon, support size and agent count must be positive".into()));
    }
    let t = horizon as f64;
    let samples = match kind {
        ObjectiveKind::Mixture => (num_agents * trials) as f64,
        _ => trials as f64,
    };
    let radicand = 2.0 * support_size as f64 * (2.0 * t / delta).ln() / samples;
    Ok(lipschitz * t * radicand.sqrt())
}
