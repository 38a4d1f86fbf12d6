//! Plain-text game files for fixtures.
//!
//! ```text
//! mapt-game v1
//! agents 2
//! local_states 2 2
//! local_actions 2 2
//! horizon 3
//! initial 1 0 0 0
//! transitions
//! <one dense row of |S| probabilities per (state, action), state-major>
//! ```
//!
//! Reading does not validate stochasticity, so broken fixtures can be loaded
//! and reported by [`MarkovGame::validate`].

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::game::{MarkovGame, Transitions};

const HEADER: &str = "mapt-game v1";

fn join(values: impl IntoIterator<Item = impl ToString>) -> String {
    values.into_iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ")
}

pub fn write_game(game: &MarkovGame) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{HEADER}");
    let _ = writeln!(out, "agents {}", game.num_agents());
    let _ = writeln!(out, "local_states {}", join(game.local_state_sizes()));
    let _ = writeln!(out, "local_actions {}", join(game.local_action_sizes()));
    let _ = writeln!(out, "horizon {}", game.horizon());
    let _ = writeln!(out, "initial {}", join(game.initial()));
    let _ = writeln!(out, "transitions");
    let ns = game.num_states();
    for row in 0..game.transitions().num_rows() {
        let _ = writeln!(out, "{}", join(game.transitions().dense_row(row, ns)));
    }
    out
}

fn parse_list<T: std::str::FromStr>(line: usize, text: &str) -> Result<Vec<T>> {
    text.split_whitespace()
        .map(|tok| {
            tok.parse()
                .map_err(|_| Error::Format(format!("line {line}: cannot parse '{tok}'")))
        })
        .collect()
}

fn keyed<'a>(lines: &mut impl Iterator<Item = (usize, &'a str)>, key: &str) -> Result<(usize, &'a str)> {
    let (no, line) = lines
        .next()
        .ok_or_else(|| Error::Format(format!("missing '{key}' line")))?;
    let rest = line
        .strip_prefix(key)
        .filter(|r| r.is_empty() || r.starts_with(' '))
        .ok_or_else(|| Error::Format(format!("line {no}: expected '{key}'")))?;
    Ok((no, rest.trim()))
}

pub fn read_game(text: &str) -> Result<MarkovGame> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty());
    match lines.next() {
        Some((_, HEADER)) => {}
        Some((_, other)) if other.starts_with("mapt-game") => {
            return Err(Error::Format(format!("unsupported game file version '{other}'")))
        }
        _ => return Err(Error::Format(format!("missing '{HEADER}' header"))),
    }
    let (no, agents) = keyed(&mut lines, "agents")?;
    let agents: usize = agents
        .parse()
        .map_err(|_| Error::Format(format!("line {no}: bad agent count")))?;
    let (no, s) = keyed(&mut lines, "local_states")?;
    let states: Vec<usize> = parse_list(no, s)?;
    let (no, a) = keyed(&mut lines, "local_actions")?;
    let actions: Vec<usize> = parse_list(no, a)?;
    if states.len() != agents || actions.len() != agents {
        return Err(Error::Format(format!("sizes do not match {agents} agents")));
    }
    let (no, h) = keyed(&mut lines, "horizon")?;
    let horizon: usize = h
        .parse()
        .map_err(|_| Error::Format(format!("line {no}: bad horizon")))?;
    let (no, mu) = keyed(&mut lines, "initial")?;
    let initial: Vec<f64> = parse_list(no, mu)?;
    keyed(&mut lines, "transitions")?;
    let ns: usize = states.iter().product();
    let mut dense = Vec::new();
    for (no, line) in lines {
        let row: Vec<f64> = parse_list(no, line)?;
        if row.len() != ns {
            return Err(Error::Format(format!("line {no}: expected {ns} probabilities, got {}", row.len())));
        }
        dense.extend(row);
    }
    MarkovGame::new_unchecked(states, actions, Transitions::from_dense(ns, &dense)?, initial, horizon)
}

pub fn load_game(path: impl AsRef<Path>) -> Result<MarkovGame> {
    let path = path.as_ref();
    read_game(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

pub fn save_game(game: &MarkovGame, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, write_game(game)).map_err(|e| Error::io(path, e))
}
