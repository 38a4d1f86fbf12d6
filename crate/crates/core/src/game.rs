//! Reward-free finite-horizon Markov games and seeded trajectory sampling.
//!
//! Joint states and joint actions are stored factored (one index per agent)
//! and flattened with a mixed-radix code where agent 0 is the most
//! significant digit. Transition rows are kept as sparse lists of
//! `(next joint state, probability)` pairs so deterministic grid dynamics
//! with ten thousand joint states stay small.

use std::fmt;

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::policy::{ActionTables, PolicySet};
use crate::rng;

const STOCHASTIC_TOL: f64 = 1e-12;

/// Mixed-radix flattening of per-agent indices; agent 0 is most significant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MixedRadix {
    sizes: Vec<usize>,
    strides: Vec<usize>,
    total: usize,
}

impl MixedRadix {
    pub fn new(sizes: &[usize]) -> Self {
        let mut strides = vec![1; sizes.len()];
        for i in (0..sizes.len().saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * sizes[i + 1];
        }
        let total = sizes.iter().product();
        MixedRadix {
            sizes: sizes.to_vec(),
            strides,
            total,
        }
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn encode<T: Copy + Into<u64>>(&self, digits: &[T]) -> usize {
        digits
            .iter()
            .zip(&self.strides)
            .map(|(&d, &s)| d.into() as usize * s)
            .sum()
    }

    pub fn digit(&self, index: usize, position: usize) -> usize {
        (index / self.strides[position]) % self.sizes[position]
    }

    pub fn decode_into(&self, index: usize, out: &mut [u32]) {
        for (i, slot) in out.iter_mut().enumerate() {
            *slot = self.digit(index, i) as u32;
        }
    }

    pub fn decode(&self, index: usize) -> Vec<u32> {
        let mut out = vec![0; self.sizes.len()];
        self.decode_into(index, &mut out);
        out
    }
}

/// Per-agent local state indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct JointState(pub Vec<u32>);

/// Per-agent action indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct JointAction(pub Vec<u32>);

/// Sparse transition kernel: one row per `(joint state, joint action)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Transitions {
    offsets: Vec<usize>,
    next: Vec<u32>,
    prob: Vec<f64>,
}

impl Transitions {
    /// Builds rows from a dense row-major table of `rows × num_states` entries.
    /// Exact zeros are dropped; every other entry is kept for validation.
    pub fn from_dense(num_states: usize, dense: &[f64]) -> Result<Self> {
        if num_states == 0 || !dense.len().is_multiple_of(num_states) {
            return Err(Error::DimensionMismatch(format!(
                "dense transition table of length {} is not a multiple of {num_states}",
                dense.len()
            )));
        }
        let mut offsets = vec![0];
        let mut next = Vec::new();
        let mut prob = Vec::new();
        for row in dense.chunks(num_states) {
            for (s, &p) in row.iter().enumerate() {
                if p != 0.0 {
                    next.push(s as u32);
                    prob.push(p);
                }
            }
            offsets.push(next.len());
        }
        Ok(Transitions {
            offsets,
            next,
            prob,
        })
    }

    /// One successor per row with probability one.
    pub fn deterministic(next_states: Vec<u32>) -> Self {
        let offsets = (0..=next_states.len()).collect();
        let prob = vec![1.0; next_states.len()];
        Transitions {
            offsets,
            next: next_states,
            prob,
        }
    }

    pub fn from_rows(rows: Vec<Vec<(u32, f64)>>) -> Self {
        let mut offsets = vec![0];
        let mut next = Vec::new();
        let mut prob = Vec::new();
        for row in rows {
            for (s, p) in row {
                next.push(s);
                prob.push(p);
            }
            offsets.push(next.len());
        }
        Transitions {
            offsets,
            next,
            prob,
        }
    }

    pub fn num_rows(&self) -> usize {
        self.offsets.len() - 1
    }

    /// `(next states, probabilities)` of one row.
    pub fn row(&self, row: usize) -> (&[u32], &[f64]) {
        let (a, b) = (self.offsets[row], self.offsets[row + 1]);
        (&self.next[a..b], &self.prob[a..b])
    }

    /// Dense copy of one row.
    pub fn dense_row(&self, row: usize, num_states: usize) -> Vec<f64> {
        let mut out = vec![0.0; num_states];
        let (next, prob) = self.row(row);
        for (&s, &p) in next.iter().zip(prob) {
            out[s as usize] += p;
        }
        out
    }
}

/// Flat-index encoding of an agent's discrete observation as a product of
/// feature blocks (for example own x, own y and a door bit).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObsEncoding {
    features: Vec<usize>,
    radix: MixedRadix,
}

impl ObsEncoding {
    pub fn new(features: Vec<usize>) -> Result<Self> {
        if features.is_empty() || features.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "observation feature sizes must be nonempty and positive, got {features:?}"
            )));
        }
        let radix = MixedRadix::new(&features);
        Ok(ObsEncoding { features, radix })
    }

    pub fn features(&self) -> &[usize] {
        &self.features
    }

    /// Number of distinct observations.
    pub fn size(&self) -> usize {
        self.radix.total()
    }

    /// Width of the concatenated one-hot input.
    pub fn input_width(&self) -> usize {
        self.features.iter().sum()
    }

    pub fn encode(&self, values: &[u32]) -> usize {
        self.radix.encode(values)
    }

    pub fn decode(&self, obs: usize) -> Vec<u32> {
        self.radix.decode(obs)
    }

    /// Positions of the ones in the concatenated one-hot input.
    pub fn active_inputs(&self, obs: usize, out: &mut Vec<usize>) {
        out.clear();
        let mut offset = 0;
        for (i, &f) in self.features.iter().enumerate() {
            out.push(offset + self.radix.digit(obs, i));
            offset += f;
        }
    }
}

/// Maps `(joint state, agent)` to the agent's observation index.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationModel {
    encodings: Vec<ObsEncoding>,
    table: Vec<u32>,
}

impl ObservationModel {
    /// Each agent observes its own local state.
    pub fn local(local_state_sizes: &[usize]) -> Self {
        let radix = MixedRadix::new(local_state_sizes);
        let n = local_state_sizes.len();
        let mut table = vec![0; radix.total() * n];
        for s in 0..radix.total() {
            radix.decode_into(s, &mut table[s * n..(s + 1) * n]);
        }
        let encodings = local_state_sizes
            .iter()
            .map(|&k| ObsEncoding::new(vec![k]).expect("positive state size"))
            .collect();
        ObservationModel { encodings, table }
    }

    /// Every agent observes the full joint state index.
    pub fn joint(local_state_sizes: &[usize]) -> Self {
        let total: usize = local_state_sizes.iter().product();
        let n = local_state_sizes.len();
        let table = (0..total)
            .flat_map(|s| std::iter::repeat_n(s as u32, n))
            .collect();
        let encodings = (0..n)
            .map(|_| ObsEncoding::new(vec![total]).expect("positive state count"))
            .collect();
        ObservationModel { encodings, table }
    }

    /// Arbitrary table indexed by `joint_state * num_agents + agent`.
    pub fn from_table(encodings: Vec<ObsEncoding>, table: Vec<u32>) -> Result<Self> {
        let n = encodings.len();
        if n == 0 || !table.len().is_multiple_of(n) {
            return Err(Error::DimensionMismatch(
                "observation table length must be a multiple of the agent count".into(),
            ));
        }
        for (k, &o) in table.iter().enumerate() {
            let size = encodings[k % n].size();
            if o as usize >= size {
                return Err(Error::ObservationOutOfRange {
                    obs: o as usize,
                    size,
                });
            }
        }
        Ok(ObservationModel { encodings, table })
    }

    pub fn encoding(&self, agent: usize) -> &ObsEncoding {
        &self.encodings[agent]
    }

    pub fn encodings(&self) -> &[ObsEncoding] {
        &self.encodings
    }

    #[inline]
    pub fn observe(&self, joint_state: usize, agent: usize) -> usize {
        self.table[joint_state * self.encodings.len() + agent] as usize
    }
}

/// A stochasticity or shape invariant broken by a game.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    Shape(String),
    ZeroHorizon,
    RowSum { state: usize, action: usize, sum: f64 },
    RowEntry { state: usize, action: usize, next: usize, value: f64 },
    InitialSum(f64),
    InitialNegative { index: usize, value: f64 },
    InitialEntry { index: usize, value: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Shape(m) => write!(f, "shape: {m}"),
            Violation::ZeroHorizon => write!(f, "horizon must be at least 1"),
            Violation::RowSum { state, action, sum } => write!(
                f,
                "transition row (state {state}, action {action}) sums to {sum}"
            ),
            Violation::RowEntry {
                state,
                action,
                next,
                value,
            } => write!(
                f,
                "transition row (state {state}, action {action}) entry {next} = {value} outside [0,1]"
            ),
            Violation::InitialSum(s) => write!(f, "initial_dist sums to {s}"),
            Violation::InitialNegative { index, value } => {
                write!(f, "initial_dist entry < 0 (index {index}, value {value})")
            }
            Violation::InitialEntry { index, value } => {
                write!(f, "initial_dist entry {index} = {value} outside [0,1]")
            }
        }
    }
}

/// Tabular reward-free Markov game.
#[derive(Debug, Clone)]
pub struct MarkovGame {
    states: MixedRadix,
    actions: MixedRadix,
    transitions: Transitions,
    initial: Vec<f64>,
    horizon: usize,
    observations: ObservationModel,
}

impl MarkovGame {
    /// Builds and fully validates a game.
    pub fn new(
        local_state_sizes: Vec<usize>,
        local_action_sizes: Vec<usize>,
        transitions: Transitions,
        initial: Vec<f64>,
        horizon: usize,
    ) -> Result<Self> {
        let game = Self::new_unchecked(
            local_state_sizes,
            local_action_sizes,
            transitions,
            initial,
            horizon,
        )?;
        let violations = game.validate();
        if violations.is_empty() {
            Ok(game)
        } else {
            Err(Error::InvalidGame(violations))
        }
    }

    /// Checks only what indexing needs (shapes); stochasticity is left to
    /// [`MarkovGame::validate`].
    pub fn new_unchecked(
        local_state_sizes: Vec<usize>,
        local_action_sizes: Vec<usize>,
        transitions: Transitions,
        initial: Vec<f64>,
        horizon: usize,
    ) -> Result<Self> {
        let mut shape = Vec::new();
        if local_state_sizes.is_empty() {
            shape.push(Violation::Shape("at least one agent is required".into()));
        }
        if local_state_sizes.len() != local_action_sizes.len() {
            shape.push(Violation::Shape(format!(
                "{} state sizes but {} action sizes",
                local_state_sizes.len(),
                local_action_sizes.len()
            )));
        }
        if local_state_sizes.iter().chain(&local_action_sizes).any(|&k| k == 0) {
            shape.push(Violation::Shape("local space sizes must be positive".into()));
        }
        if !shape.is_empty() {
            return Err(Error::InvalidGame(shape));
        }
        let states = MixedRadix::new(&local_state_sizes);
        let actions = MixedRadix::new(&local_action_sizes);
        if transitions.num_rows() != states.total() * actions.total() {
            shape.push(Violation::Shape(format!(
                "expected {} transition rows, got {}",
                states.total() * actions.total(),
                transitions.num_rows()
            )));
        }
        if transitions.next.iter().any(|&s| s as usize >= states.total()) {
            shape.push(Violation::Shape("transition successor index out of range".into()));
        }
        if initial.len() != states.total() {
            shape.push(Violation::Shape(format!(
                "initial_dist has {} entries, expected {}",
                initial.len(),
                states.total()
            )));
        }
        if !shape.is_empty() {
            return Err(Error::InvalidGame(shape));
        }
        let observations = ObservationModel::local(&local_state_sizes);
        Ok(MarkovGame {
            states,
            actions,
            transitions,
            initial,
            horizon,
            observations,
        })
    }

    /// Stochasticity and shape violations; empty when the game is valid.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.horizon == 0 {
            out.push(Violation::ZeroHorizon);
        }
        let na = self.actions.total();
        for row in 0..self.transitions.num_rows() {
            let (state, action) = (row / na, row % na);
            let (next, prob) = self.transitions.row(row);
            for (&s, &p) in next.iter().zip(prob) {
                if !(0.0..=1.0).contains(&p) {
                    out.push(Violation::RowEntry {
                        state,
                        action,
                        next: s as usize,
                        value: p,
                    });
                }
            }
            let sum: f64 = prob.iter().sum();
            if (sum - 1.0).abs() > STOCHASTIC_TOL {
                out.push(Violation::RowSum { state, action, sum });
            }
        }
        for (index, &value) in self.initial.iter().enumerate() {
            if value < 0.0 {
                out.push(Violation::InitialNegative { index, value });
            } else if !(value <= 1.0) {
                out.push(Violation::InitialEntry { index, value });
            }
        }
        let sum: f64 = self.initial.iter().sum();
        if (sum - 1.0).abs() > STOCHASTIC_TOL {
            out.push(Violation::InitialSum(sum));
        }
        out
    }

    /// Replaces the observation model (default: each agent sees its local state).
    pub fn with_observations(mut self, observations: ObservationModel) -> Result<Self> {
        if observations.encodings.len() != self.num_agents()
            || observations.table.len() != self.num_states() * self.num_agents()
        {
            return Err(Error::DimensionMismatch(
                "observation model does not match the game's joint state space".into(),
            ));
        }
        self.observations = observations;
        Ok(self)
    }

    pub fn with_horizon(mut self, horizon: usize) -> Self {
        self.horizon = horizon;
        self
    }

    pub fn num_agents(&self) -> usize {
        self.states.sizes().len()
    }

    pub fn local_state_sizes(&self) -> &[usize] {
        self.states.sizes()
    }

    pub fn local_action_sizes(&self) -> &[usize] {
        self.actions.sizes()
    }

    pub fn num_states(&self) -> usize {
        self.states.total()
    }

    pub fn num_actions(&self) -> usize {
        self.actions.total()
    }

    pub fn state_radix(&self) -> &MixedRadix {
        &self.states
    }

    pub fn action_radix(&self) -> &MixedRadix {
        &self.actions
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    pub fn transitions(&self) -> &Transitions {
        &self.transitions
    }

    pub fn observations(&self) -> &ObservationModel {
        &self.observations
    }

    /// Whether every agent has the same local state space.
    pub fn uniform_local_states(&self) -> bool {
        let sizes = self.local_state_sizes();
        sizes.iter().all(|&k| k == sizes[0])
    }

    /// Transition row of `(state, action)` as `(next states, probabilities)`.
    pub fn row(&self, state: usize, action: usize) -> (&[u32], &[f64]) {
        self.transitions.row(state * self.num_actions() + action)
    }

    pub fn encode_state(&self, state: &JointState) -> Result<usize> {
        self.check_digits(&state.0, self.local_state_sizes(), "state")?;
        Ok(self.states.encode(&state.0))
    }

    pub fn decode_state(&self, index: usize) -> JointState {
        JointState(self.states.decode(index))
    }

    pub fn encode_action(&self, action: &JointAction) -> Result<usize> {
        self.check_digits(&action.0, self.local_action_sizes(), "action")?;
        Ok(self.actions.encode(&action.0))
    }

    pub fn decode_action(&self, index: usize) -> JointAction {
        JointAction(self.actions.decode(index))
    }

    fn check_digits(&self, digits: &[u32], sizes: &[usize], what: &str) -> Result<()> {
        if digits.len() != sizes.len() {
            return Err(Error::DimensionMismatch(format!(
                "joint {what} has {} entries, game has {} agents",
                digits.len(),
                sizes.len()
            )));
        }
        for (&d, &k) in digits.iter().zip(sizes) {
            if d as usize >= k {
                return Err(Error::DimensionMismatch(format!(
                    "local {what} {d} out of range {k}"
                )));
            }
        }
        Ok(())
    }
}

/// A length-T sequence of joint states and the joint actions taken in them.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Trajectory {
    num_agents: usize,
    states: Vec<usize>,
    actions: Vec<usize>,
    local_states: Vec<u32>,
    local_actions: Vec<u32>,
}

impl Trajectory {
    pub fn from_indices(game: &MarkovGame, states: Vec<usize>, actions: Vec<usize>) -> Result<Self> {
        if states.len() != actions.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} states but {} actions",
                states.len(),
                actions.len()
            )));
        }
        if states.iter().any(|&s| s >= game.num_states())
            || actions.iter().any(|&a| a >= game.num_actions())
        {
            return Err(Error::DimensionMismatch("joint index out of range".into()));
        }
        let n = game.num_agents();
        let mut local_states = vec![0; states.len() * n];
        let mut local_actions = vec![0; actions.len() * n];
        for t in 0..states.len() {
            game.states
                .decode_into(states[t], &mut local_states[t * n..(t + 1) * n]);
            game.actions
                .decode_into(actions[t], &mut local_actions[t * n..(t + 1) * n]);
        }
        Ok(Trajectory {
            num_agents: n,
            states,
            actions,
            local_states,
            local_actions,
        })
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn num_agents(&self) -> usize {
        self.num_agents
    }

    /// Flat joint state indices.
    pub fn states(&self) -> &[usize] {
        &self.states
    }

    /// Flat joint action indices.
    pub fn actions(&self) -> &[usize] {
        &self.actions
    }

    pub fn joint_state(&self, t: usize) -> JointState {
        JointState(self.locals(t).to_vec())
    }

    pub fn joint_action(&self, t: usize) -> JointAction {
        let n = self.num_agents;
        JointAction(self.local_actions[t * n..(t + 1) * n].to_vec())
    }

    /// Local states of all agents at step `t`.
    pub fn locals(&self, t: usize) -> &[u32] {
        let n = self.num_agents;
        &self.local_states[t * n..(t + 1) * n]
    }

    #[inline]
    pub fn local_state(&self, t: usize, agent: usize) -> u32 {
        self.local_states[t * self.num_agents + agent]
    }

    #[inline]
    pub fn local_action(&self, t: usize, agent: usize) -> u32 {
        self.local_actions[t * self.num_agents + agent]
    }
}

/// Samples one trajectory of exactly `horizon` state-action pairs.
pub fn sample_trajectory<R: Rng + ?Sized>(
    game: &MarkovGame,
    policies: &PolicySet,
    rng: &mut R,
) -> Result<Trajectory> {
    policies.check_compatible(game)?;
    let tables = policies.action_tables();
    Ok(sample_with_tables(game, &tables, rng))
}

/// `n` trajectories; trajectory `k` draws from [`rng::substream`]`(seed, k)`.
pub fn sample_batch(
    game: &MarkovGame,
    policies: &PolicySet,
    n: usize,
    seed: u64,
) -> Result<Vec<Trajectory>> {
    if n == 0 {
        return Err(Error::Empty("batch size must be at least 1"));
    }
    policies.check_compatible(game)?;
    let tables = policies.action_tables();
    Ok((0..n)
        .into_par_iter()
        .map(|k| sample_with_tables(game, &tables, &mut rng::substream(seed, k as u64)))
        .collect())
}

pub(crate) fn sample_with_tables<R: Rng + ?Sized>(
    game: &MarkovGame,
    tables: &ActionTables,
    rng: &mut R,
) -> Trajectory {
    let n = game.num_agents();
    let horizon = game.horizon();
    let obs = game.observations();
    let mut states = Vec::with_capacity(horizon);
    let mut actions = Vec::with_capacity(horizon);
    let mut local_states = vec![0; horizon * n];
    let mut local_actions = vec![0; horizon * n];

    let mut s = rng::categorical(game.initial(), rng.gen());
    for t in 0..horizon {
        states.push(s);
        game.states
            .decode_into(s, &mut local_states[t * n..(t + 1) * n]);
        for i in 0..n {
            let probs = tables.probs(i, obs.observe(s, i));
            local_actions[t * n + i] = rng::categorical(probs, rng.gen()) as u32;
        }
        let a = game.actions.encode(&local_actions[t * n..(t + 1) * n]);
        actions.push(a);
        if t + 1 < horizon {
            let (next, prob) = game.row(s, a);
            s = next[rng::categorical(prob, rng.gen())] as usize;
        }
    }
    Trajectory {
        num_agents: n,
        states,
        actions,
        local_states,
        local_actions,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{AgentPolicy, PolicySet};

    fn cycle_game(horizon: usize) -> MarkovGame {
        // one agent, two states, one action, deterministic 0 -> 1 -> 0
        MarkovGame::new(
            vec![2],
            vec![1],
            Transitions::deterministic(vec![1, 0]),
            vec![1.0, 0.0],
            horizon,
        )
        .unwrap()
    }

    fn uniform(game: &MarkovGame) -> PolicySet {
        PolicySet::tabular_uniform(game)
    }

    #[test]
    fn mixed_radix_round_trip() {
        let r = MixedRadix::new(&[3, 2, 4]);
        assert_eq!(r.total(), 24);
        for idx in 0..24 {
            let d = r.decode(idx);
            assert_eq!(r.encode(&d), idx);
        }
        assert_eq!(r.encode(&[1u32, 0, 0]), 8);
        assert_eq!(r.digit(8, 0), 1);
    }

    #[test]
    fn valid_game_has_no_violations() {
        assert!(cycle_game(3).validate().is_empty());
    }

    #[test]
    fn short_row_is_named() {
        let dense = vec![0.5, 0.4, 0.0, 1.0];
        let t = Transitions::from_dense(2, &dense).unwrap();
        let g = MarkovGame::new_unchecked(vec![2], vec![1], t, vec![1.0, 0.0], 2).unwrap();
        let v = g.validate();
        assert_eq!(v.len(), 1);
        match &v[0] {
            Violation::RowSum { state, action, sum } => {
                assert_eq!((*state, *action), (0, 0));
                assert!((sum - 0.9).abs() < 1e-12);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(v[0].to_string().contains("state 0, action 0"));
        assert!(matches!(
            MarkovGame::new(vec![2], vec![1], Transitions::from_dense(2, &dense).unwrap(), vec![1.0, 0.0], 2),
            Err(Error::InvalidGame(_))
        ));
    }

    #[test]
    fn negative_initial_entry_is_reported() {
        let t = Transitions::deterministic(vec![1, 0]);
        let g = MarkovGame::new_unchecked(vec![2], vec![1], t, vec![1.5, -0.5], 2).unwrap();
        let v = g.validate();
        assert!(v.iter().any(|x| x.to_string().contains("initial_dist entry < 0")));
    }

    #[test]
    fn shape_errors_are_rejected_early() {
        let t = Transitions::deterministic(vec![0]);
        assert!(MarkovGame::new_unchecked(vec![2], vec![1], t, vec![1.0, 0.0], 2).is_err());
    }

    #[test]
    fn single_state_trajectory_repeats() {
        let g = MarkovGame::new(
            vec![1],
            vec![3],
            Transitions::deterministic(vec![0, 0, 0]),
            vec![1.0],
            3,
        )
        .unwrap();
        let tr = sample_trajectory(&g, &uniform(&g), &mut rng::substream(1, 0)).unwrap();
        assert_eq!(tr.states(), &[0, 0, 0]);
        assert_eq!(tr.len(), 3);
    }

    #[test]
    fn deterministic_cycle_alternates() {
        let g = cycle_game(4);
        let tr = sample_trajectory(&g, &uniform(&g), &mut rng::substream(9, 0)).unwrap();
        assert_eq!(tr.states(), &[0, 1, 0, 1]);
    }

    #[test]
    fn sampling_is_deterministic_and_batch_matches_substreams() {
        let g = crate::envs::open_grid(3, 2, 6).unwrap();
        let p = uniform(&g);
        let a = sample_trajectory(&g, &p, &mut rng::substream(5, 0)).unwrap();
        let b = sample_trajectory(&g, &p, &mut rng::substream(5, 0)).unwrap();
        assert_eq!(a, b);
        let batch = sample_batch(&g, &p, 1, 5).unwrap();
        assert_eq!(batch, vec![a]);
        let four = sample_batch(&g, &p, 4, 11).unwrap();
        for (k, tr) in four.iter().enumerate() {
            let solo = sample_trajectory(&g, &p, &mut rng::substream(11, k as u64)).unwrap();
            assert_eq!(&solo, tr);
        }
    }

    #[test]
    fn mismatched_policies_are_rejected() {
        let g = crate::envs::open_grid(2, 2, 3).unwrap();
        let wrong = PolicySet::new(vec![AgentPolicy::tabular(
            ObsEncoding::new(vec![4]).unwrap(),
            5,
        )]);
        assert!(sample_batch(&g, &wrong, 2, 0).is_err());
    }

    #[test]
    fn next_state_frequencies_match_row() {
        // 1 agent, 3 states, fixed stochastic row out of state 0
        let dense = vec![
            0.2, 0.5, 0.3, //
            0.0, 1.0, 0.0, //
            0.0, 0.0, 1.0,
        ];
        let g = MarkovGame::new(
            vec![3],
            vec![1],
            Transitions::from_dense(3, &dense).unwrap(),
            vec![1.0, 0.0, 0.0],
            2,
        )
        .unwrap();
        let p = uniform(&g);
        let n = 100_000;
        let batch = sample_batch(&g, &p, n, 3).unwrap();
        let mut counts = [0usize; 3];
        for tr in &batch {
            counts[tr.states()[1]] += 1;
        }
        for (s, &c) in counts.iter().enumerate() {
            let q = dense[s];
            let tol = 4.0 * (q * (1.0 - q) / n as f64).sqrt();
            assert!((c as f64 / n as f64 - q).abs() <= tol, "state {s}");
        }
    }

    #[test]
    fn obs_encoding_one_hot_positions() {
        let e = ObsEncoding::new(vec![10, 10, 2]).unwrap();
        assert_eq!(e.size(), 200);
        assert_eq!(e.input_width(), 22);
        let obs = e.encode(&[3, 7, 1]);
        let mut active = Vec::new();
        e.active_inputs(obs, &mut active);
        assert_eq!(active, vec![3, 17, 21]);
    }
}
