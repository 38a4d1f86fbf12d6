//! Concrete games: the two-room secret-room grid, open grids, tiny
//! enumerable fixtures, and the sparse-goal reward wrapper.
//!
//! Grid coordinates are 1-indexed `(x, y)`. A cell's local state index is
//! `(x - 1) * side + (y - 1)`. Grid agents share five actions:
//! up (`y + 1`), down, left (`x - 1`), right and stay.

use std::io::Write;

use rand::Rng;
use rand_distr::{Dirichlet, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{MarkovGame, MixedRadix, ObsEncoding, ObservationModel, Trajectory, Transitions};
use crate::matrpo::RewardedTask;
use crate::rng;

pub const UP: u32 = 0;
pub const DOWN: u32 = 1;
pub const LEFT: u32 = 2;
pub const RIGHT: u32 = 3;
pub const STAY: u32 = 4;
pub const GRID_ACTIONS: usize = 5;

/// A 1-indexed grid cell.
pub type Cell = [usize; 2];

pub fn cell_index(side: usize, cell: Cell) -> usize {
    (cell[0] - 1) * side + (cell[1] - 1)
}

pub fn index_cell(side: usize, index: usize) -> Cell {
    [index / side + 1, index % side + 1]
}

pub fn manhattan(a: Cell, b: Cell) -> f64 {
    (a[0].abs_diff(b[0]) + a[1].abs_diff(b[1])) as f64
}

fn step_cell(side: usize, cell: Cell, action: u32) -> Cell {
    let [x, y] = cell;
    match action {
        UP if y < side => [x, y + 1],
        DOWN if y > 1 => [x, y - 1],
        LEFT if x > 1 => [x - 1, y],
        RIGHT if x < side => [x + 1, y],
        _ => cell,
    }
}

/// Builds a deterministic grid game. `blocked(cells, from, to)` vetoes a
/// single agent's move given the current cells of all agents.
fn grid_game(
    side: usize,
    starts: &[Cell],
    horizon: usize,
    blocked: impl Fn(&[Cell], Cell, Cell) -> bool,
) -> Result<MarkovGame> {
    let n = starts.len();
    let cells = side * side;
    let states = MixedRadix::new(&vec![cells; n]);
    let actions = MixedRadix::new(&vec![GRID_ACTIONS; n]);
    let mut next = Vec::with_capacity(states.total() * actions.total());
    let mut locals = vec![0u32; n];
    let mut moves = vec![0u32; n];
    let mut current = vec![[1, 1]; n];
    let mut target = vec![0u32; n];
    for s in 0..states.total() {
        states.decode_into(s, &mut locals);
        for (c, &l) in current.iter_mut().zip(&locals) {
            *c = index_cell(side, l as usize);
        }
        for a in 0..actions.total() {
            actions.decode_into(a, &mut moves);
            for i in 0..n {
                let to = step_cell(side, current[i], moves[i]);
                let to = if blocked(&current, current[i], to) {
                    current[i]
                } else {
                    to
                };
                target[i] = cell_index(side, to) as u32;
            }
            next.push(states.encode(&target) as u32);
        }
    }
    let mut initial = vec![0.0; states.total()];
    let start: Vec<u32> = starts.iter().map(|&c| cell_index(side, c) as u32).collect();
    initial[states.encode(&start)] = 1.0;
    MarkovGame::new(
        vec![cells; n],
        vec![GRID_ACTIONS; n],
        Transitions::deterministic(next),
        initial,
        horizon,
    )
}

/// `side × side` grid without interior walls; every agent starts at (1, 1).
pub fn open_grid(side: usize, num_agents: usize, horizon: usize) -> Result<MarkovGame> {
    if side == 0 || num_agents == 0 {
        return Err(Error::InvalidArgument("grid side and agent count must be positive".into()));
    }
    grid_game(side, &vec![[1, 1]; num_agents], horizon, |_, _, _| false)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SecretRoomParams {
    pub side: usize,
    /// The wall runs between columns `wall_x` and `wall_x + 1`.
    pub wall_x: usize,
    /// Row of the door through the wall.
    pub door_y: usize,
    pub switches: Vec<Cell>,
    /// One start cell per agent.
    pub starts: Vec<Cell>,
    pub switch_radius: f64,
    pub goal: Cell,
    pub goal_radius: f64,
    pub goal_reward: f64,
    pub horizon: usize,
}

impl Default for SecretRoomParams {
    fn default() -> Self {
        SecretRoomParams {
            side: 10,
            wall_x: 5,
            door_y: 5,
            switches: vec![[1, 9], [9, 1]],
            starts: vec![[1, 1], [2, 2]],
            switch_radius: 1.5,
            goal: [9, 9],
            goal_radius: 1.5,
            goal_reward: 100.0,
            horizon: 50,
        }
    }
}

impl SecretRoomParams {
    fn inside(&self, c: Cell) -> bool {
        (1..=self.side).contains(&c[0]) && (1..=self.side).contains(&c[1])
    }

    fn room(&self, c: Cell) -> usize {
        usize::from(c[0] > self.wall_x)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.side < 2 {
            return bad(format!("side = {} leaves no room for a wall", self.side));
        }
        if !(1..self.side).contains(&self.wall_x) {
            return bad(format!("wall_x = {} must lie in 1..{}", self.wall_x, self.side));
        }
        if !(1..=self.side).contains(&self.door_y) {
            return bad(format!("door_y = {} outside the grid", self.door_y));
        }
        if self.starts.is_empty() {
            return bad("at least one start cell is required".into());
        }
        for (name, cells) in [("switches", &self.switches), ("starts", &self.starts)] {
            if let Some(c) = cells.iter().find(|c| !self.inside(**c)) {
                return bad(format!("{name}: cell {c:?} outside the {0}x{0} grid", self.side));
            }
        }
        if !self.inside(self.goal) {
            return bad(format!("goal {:?} outside the grid", self.goal));
        }
        if self.starts.iter().any(|&c| self.room(c) != 0) {
            return bad("starts must all be in the first room".into());
        }
        let rooms: std::collections::BTreeSet<_> = self.switches.iter().map(|&c| self.room(c)).collect();
        if rooms.len() != self.switches.len() {
            return bad("switches must sit in distinct rooms".into());
        }
        if !(self.switch_radius > 0.0) || !(self.goal_radius > 0.0) {
            return bad("switch and goal radii must be positive".into());
        }
        if !self.goal_reward.is_finite() {
            return bad("goal reward must be finite".into());
        }
        if self.horizon == 0 {
            return bad("horizon must be at least 1".into());
        }
        Ok(())
    }

    pub fn door_open(&self, cells: &[Cell]) -> bool {
        cells
            .iter()
            .any(|&c| self.switches.iter().any(|&s| manhattan(c, s) < self.switch_radius))
    }

    fn crosses_door(&self, from: Cell, to: Cell) -> bool {
        from[0].min(to[0]) == self.wall_x && from[0] != to[0]
    }
}

/// The secret-room game. Agents observe `(x, y, door open)`.
#[derive(Debug, Clone)]
pub struct SecretRoom {
    pub game: MarkovGame,
    pub params: SecretRoomParams,
}

pub fn secret_room(params: &SecretRoomParams) -> Result<SecretRoom> {
    params.validate()?;
    let p = params.clone();
    let game = grid_game(params.side, &params.starts, params.horizon, |cells, from, to| {
        p.crosses_door(from, to) && !(from[1] == p.door_y && p.door_open(cells))
    })?;

    let side = params.side;
    let n = params.starts.len();
    let encoding = ObsEncoding::new(vec![side, side, 2])?;
    let mut table = Vec::with_capacity(game.num_states() * n);
    let mut cells = vec![[1, 1]; n];
    for s in 0..game.num_states() {
        for (i, c) in cells.iter_mut().enumerate() {
            *c = index_cell(side, game.state_radix().digit(s, i));
        }
        let door = u32::from(params.door_open(&cells));
        for c in &cells {
            table.push(encoding.encode(&[c[0] as u32 - 1, c[1] as u32 - 1, door]) as u32);
        }
    }
    let observations = ObservationModel::from_table(vec![encoding; n], table)?;
    Ok(SecretRoom {
        game: game.with_observations(observations)?,
        params: params.clone(),
    })
}

impl SecretRoom {
    pub fn door_open_at(&self, joint_state: usize) -> bool {
        let cells: Vec<Cell> = (0..self.game.num_agents())
            .map(|i| index_cell(self.params.side, self.game.state_radix().digit(joint_state, i)))
            .collect();
        self.params.door_open(&cells)
    }

    pub fn goal_task(&self) -> Result<RewardedTask> {
        sparse_goal_task(
            &self.game,
            self.params.side,
            self.params.goal,
            self.params.goal_radius,
            self.params.goal_reward,
        )
    }
}

/// Every agent receives `reward` on arriving where some agent is within
/// Manhattan distance `< radius` of `goal`; such states are terminal.
pub fn sparse_goal_task(
    game: &MarkovGame,
    side: usize,
    goal: Cell,
    radius: f64,
    reward: f64,
) -> Result<RewardedTask> {
    if side == 0 || !(1..=side).contains(&goal[0]) || !(1..=side).contains(&goal[1]) {
        return Err(Error::InvalidArgument(format!("goal {goal:?} outside the {side}x{side} grid")));
    }
    if game.local_state_sizes().iter().any(|&k| k != side * side) {
        return Err(Error::DimensionMismatch(format!(
            "game local state sizes {:?} are not {side}x{side} grids",
            game.local_state_sizes()
        )));
    }
    if !(radius > 0.0) || !reward.is_finite() {
        return Err(Error::InvalidArgument("goal radius must be positive and reward finite".into()));
    }
    let n = game.num_agents();
    let radix = game.state_radix();
    let terminal: Vec<bool> = (0..game.num_states())
        .map(|s| (0..n).any(|i| manhattan(index_cell(side, radix.digit(s, i)), goal) < radius))
        .collect();
    let rewards = terminal
        .iter()
        .flat_map(|&t| std::iter::repeat_n(if t { reward } else { 0.0 }, n))
        .collect();
    RewardedTask::new(game.clone(), rewards, terminal)
}

/// Per-cell visit counts of one agent over a batch, indexed by local state.
pub fn visitation_counts(trajectories: &[Trajectory], agent: usize, cells: usize) -> Vec<u64> {
    let mut counts = vec![0; cells];
    for t in trajectories {
        for step in 0..t.len() {
            counts[t.local_state(step, agent) as usize] += 1;
        }
    }
    counts
}

/// `side × side` heatmap CSV: one line per row `y` (top row first), one
/// column per `x`.
pub fn write_heatmap_csv<W: Write>(mut out: W, counts: &[u64], side: usize) -> std::io::Result<()> {
    let header: Vec<String> = (1..=side).map(|x| format!("x{x}")).collect();
    writeln!(out, "y,{}", header.join(","))?;
    for y in (1..=side).rev() {
        let row: Vec<String> = (1..=side)
            .map(|x| counts[cell_index(side, [x, y])].to_string())
            .collect();
        writeln!(out, "{y},{}", row.join(","))?;
    }
    Ok(())
}

/// Maximum joint state / joint action count and horizon for tiny games.
pub const TINY_MAX_STATES: usize = 16;
pub const TINY_MAX_ACTIONS: usize = 16;
pub const TINY_MAX_HORIZON: usize = 4;

/// Description of an enumerable fixture game.
#[derive(Debug, Clone, PartialEq)]
pub enum TinySpec {
    /// Dense transition table, rows ordered `(joint state, joint action)`.
    Table {
        local_states: Vec<usize>,
        local_actions: Vec<usize>,
        transition: Vec<f64>,
        initial: Vec<f64>,
        horizon: usize,
    },
    /// Transition rows and the initial distribution drawn from a flat
    /// Dirichlet.
    Random {
        local_states: Vec<usize>,
        local_actions: Vec<usize>,
        horizon: usize,
        seed: u64,
    },
    /// Agents evolve independently; `kernels[i][s][a]` is agent `i`'s
    /// next-local-state distribution.
    IndependentChains {
        kernels: Vec<Vec<Vec<Vec<f64>>>>,
        initial: Vec<Vec<f64>>,
        horizon: usize,
    },
}

impl TinySpec {
    pub fn random(local_states: Vec<usize>, local_actions: Vec<usize>, horizon: usize, seed: u64) -> Self {
        TinySpec::Random {
            local_states,
            local_actions,
            horizon,
            seed,
        }
    }
}

fn check_tiny(states: &[usize], actions: &[usize], horizon: usize) -> Result<()> {
    let ns: usize = states.iter().product();
    let na: usize = actions.iter().product();
    if ns > TINY_MAX_STATES || na > TINY_MAX_ACTIONS || horizon > TINY_MAX_HORIZON {
        return Err(Error::InvalidArgument(format!(
            "tiny games allow at most {TINY_MAX_STATES} joint states, {TINY_MAX_ACTIONS} joint \
             actions and horizon {TINY_MAX_HORIZON} (got {ns}, {na}, {horizon})"
        )));
    }
    Ok(())
}

fn dirichlet_row<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Vec<f64> {
    if len == 1 {
        return vec![1.0];
    }
    let mut row = Dirichlet::new(&vec![1.0; len]).expect("valid concentration").sample(rng);
    let sum: f64 = row.iter().sum();
    for p in &mut row {
        *p /= sum;
    }
    row
}

pub fn tiny_mg(spec: &TinySpec) -> Result<MarkovGame> {
    match spec {
        TinySpec::Table {
            local_states,
            local_actions,
            transition,
            initial,
            horizon,
        } => {
            check_tiny(local_states, local_actions, *horizon)?;
            let ns = local_states.iter().product();
            MarkovGame::new(
                local_states.clone(),
                local_actions.clone(),
                Transitions::from_dense(ns, transition)?,
                initial.clone(),
                *horizon,
            )
        }
        TinySpec::Random {
            local_states,
            local_actions,
            horizon,
            seed,
        } => {
            check_tiny(local_states, local_actions, *horizon)?;
            let ns: usize = local_states.iter().product();
            let na: usize = local_actions.iter().product();
            let mut rng = rng::substream(*seed, 0);
            let mut dense = Vec::with_capacity(ns * na * ns);
            for _ in 0..ns * na {
                dense.extend(dirichlet_row(ns, &mut rng));
            }
            let initial = dirichlet_row(ns, &mut rng);
            MarkovGame::new(
                local_states.clone(),
                local_actions.clone(),
                Transitions::from_dense(ns, &dense)?,
                initial,
                *horizon,
            )
        }
        TinySpec::IndependentChains {
            kernels,
            initial,
            horizon,
        } => {
            if kernels.is_empty() || kernels.len() != initial.len() {
                return Err(Error::DimensionMismatch(
                    "one kernel and one initial distribution per agent".into(),
                ));
            }
            let local_states: Vec<usize> = kernels.iter().map(Vec::len).collect();
            let local_actions: Vec<usize> = kernels
                .iter()
                .map(|k| k.first().map_or(0, Vec::len))
                .collect();
            check_tiny(&local_states, &local_actions, *horizon)?;
            for (i, k) in kernels.iter().enumerate() {
                let bad_shape = k.iter().any(|by_action| {
                    by_action.len() != local_actions[i]
                        || by_action.iter().any(|d| d.len() != local_states[i])
                });
                if bad_shape || initial[i].len() != local_states[i] {
                    return Err(Error::DimensionMismatch(format!("agent {i}: ragged kernel")));
                }
            }
            let sr = MixedRadix::new(&local_states);
            let ar = MixedRadix::new(&local_actions);
            let n = kernels.len();
            let (mut ls, mut la, mut ls2) = (vec![0u32; n], vec![0u32; n], vec![0u32; n]);
            let mut dense = Vec::with_capacity(sr.total() * ar.total() * sr.total());
            for s in 0..sr.total() {
                sr.decode_into(s, &mut ls);
                for a in 0..ar.total() {
                    ar.decode_into(a, &mut la);
                    for s2 in 0..sr.total() {
                        sr.decode_into(s2, &mut ls2);
                        dense.push(
                            (0..n)
                                .map(|i| kernels[i][ls[i] as usize][la[i] as usize][ls2[i] as usize])
                                .product::<f64>(),
                        );
                    }
                }
            }
            let mu = (0..sr.total())
                .map(|s| {
                    sr.decode_into(s, &mut ls);
                    (0..n).map(|i| initial[i][ls[i] as usize]).product()
                })
                .collect();
            MarkovGame::new(
                local_states,
                local_actions,
                Transitions::from_dense(sr.total(), &dense)?,
                mu,
                *horizon,
            )
        }
    }
}
