//! Contextual gridworlds.
//!
//! A state is a grid cell paired with a perceptual signature. The signature is
//! redrawn uniformly at every step and never affects dynamics or rewards, so an
//! agent observing raw states faces `signatures` copies of every cell. Contexts
//! are tasks sharing the layout: plain locomotion, seeking targets, avoiding
//! targets, or leaving the grid through a target exit.

use ndarray::{Array1, Array2, Array3, Array4};
use serde::{Deserialize, Serialize};

use super::{Labels, TabularCmdp};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridTask {
    /// Reward for every unobstructed move.
    Plain,
    /// Plain reward, plus a bonus while standing on a target.
    Seek,
    /// Plain reward, minus a penalty while standing on a target.
    Avoid,
    /// Targets are absorbing exits worth `target_reward` in total; no move reward.
    Exit,
}

impl GridTask {
    pub fn name(self) -> &'static str {
        match self {
            GridTask::Plain => "plain",
            GridTask::Seek => "seek",
            GridTask::Avoid => "avoid",
            GridTask::Exit => "exit",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Heading {
    North,
    East,
    South,
    West,
}

impl Heading {
    pub const ALL: [Heading; 4] = [Heading::North, Heading::East, Heading::South, Heading::West];

    fn delta(self) -> (isize, isize) {
        match self {
            Heading::North => (-1, 0),
            Heading::East => (0, 1),
            Heading::South => (1, 0),
            Heading::West => (0, -1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// Rows of `.` (free), `#` (wall) or `T` (target).
    pub layout: Vec<String>,
    pub tasks: Vec<GridTask>,
    pub signatures: usize,
    /// Probability that the executed move is drawn uniformly instead of the intended one.
    pub slip: f64,
    pub gamma: f64,
    pub move_reward: f64,
    pub target_reward: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Cell {
    Free,
    Wall,
    Target,
}

struct Grid {
    rows: usize,
    cols: usize,
    cells: Vec<Cell>,
}

impl Grid {
    fn parse(layout: &[String]) -> Result<Grid> {
        let rows = layout.len();
        if rows == 0 {
            return Err(Error::InvalidArgument("layout has no rows".into()));
        }
        let cols = layout[0].chars().count();
        if cols == 0 {
            return Err(Error::InvalidArgument("layout has empty rows".into()));
        }
        let mut cells = Vec::with_capacity(rows * cols);
        for (r, line) in layout.iter().enumerate() {
            if line.chars().count() != cols {
                return Err(Error::InvalidArgument(format!(
                    "layout row {r} has {} cells, expected {cols}",
                    line.chars().count()
                )));
            }
            for ch in line.chars() {
                cells.push(match ch {
                    '.' => Cell::Free,
                    '#' => Cell::Wall,
                    'T' => Cell::Target,
                    other => {
                        return Err(Error::InvalidArgument(format!(
                            "unknown layout character {other:?} in row {r}"
                        )))
                    }
                });
            }
        }
        Ok(Grid { rows, cols, cells })
    }

    fn neighbor(&self, cell: usize, heading: Heading) -> usize {
        let (r, c) = ((cell / self.cols) as isize, (cell % self.cols) as isize);
        let (dr, dc) = heading.delta();
        let (nr, nc) = (r + dr, c + dc);
        if nr < 0 || nc < 0 || nr >= self.rows as isize || nc >= self.cols as isize {
            return cell;
        }
        let n = nr as usize * self.cols + nc as usize;
        if self.cells[n] == Cell::Wall {
            cell
        } else {
            n
        }
    }
}

impl GridSpec {
    pub fn n_cells(&self) -> usize {
        self.layout.len() * self.layout.first().map_or(0, |r| r.chars().count())
    }

    pub fn n_states(&self) -> usize {
        self.n_cells() * self.signatures
    }

    pub fn cell_of(&self, state: usize) -> usize {
        state / self.signatures
    }
}

pub fn build_contextual_gridworld(spec: &GridSpec) -> Result<TabularCmdp> {
    let grid = Grid::parse(&spec.layout)?;
    if spec.tasks.is_empty() {
        return Err(Error::InvalidArgument("at least one task is required".into()));
    }
    if spec.signatures == 0 {
        return Err(Error::InvalidArgument("signatures must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&spec.slip) {
        return Err(Error::InvalidArgument(format!("slip {} outside [0, 1]", spec.slip)));
    }
    let k = spec.signatures;
    let n_cells = grid.rows * grid.cols;
    let (nc, ns, na) = (spec.tasks.len(), n_cells * k, 4);

    let starts: Vec<usize> = (0..n_cells).filter(|&i| grid.cells[i] == Cell::Free).collect();
    if starts.is_empty() {
        return Err(Error::InvalidArgument("layout has no free start cells".into()));
    }

    let mut transitions = Array4::zeros((nc, ns, na, ns));
    let mut rewards = Array3::zeros((nc, ns, na));
    let sig_p = 1.0 / k as f64;
    for (c, &task) in spec.tasks.iter().enumerate() {
        for cell in 0..n_cells {
            let kind = grid.cells[cell];
            for a in 0..na {
                // distribution over next cells
                let mut next_cells: Vec<(usize, f64)> = Vec::with_capacity(5);
                let absorbing = kind == Cell::Wall || (task == GridTask::Exit && kind == Cell::Target);
                if absorbing {
                    next_cells.push((cell, 1.0));
                } else {
                    next_cells.push((grid.neighbor(cell, Heading::ALL[a]), 1.0 - spec.slip));
                    for h in Heading::ALL {
                        next_cells.push((grid.neighbor(cell, h), spec.slip / 4.0));
                    }
                }
                let blocked = grid.neighbor(cell, Heading::ALL[a]) == cell;
                let reward = match (task, kind) {
                    (_, Cell::Wall) => 0.0,
                    (GridTask::Exit, Cell::Target) => spec.target_reward * (1.0 - spec.gamma),
                    (GridTask::Exit, _) => 0.0,
                    (task, kind) => {
                        let mut r = if blocked { 0.0 } else { spec.move_reward };
                        if kind == Cell::Target {
                            match task {
                                GridTask::Seek => r += spec.target_reward,
                                GridTask::Avoid => r -= spec.target_reward,
                                _ => {}
                            }
                        }
                        r
                    }
                };
                for sig in 0..k {
                    let s = cell * k + sig;
                    rewards[[c, s, a]] = reward;
                    for &(next_cell, p) in &next_cells {
                        if p == 0.0 {
                            continue;
                        }
                        for next_sig in 0..k {
                            transitions[[c, s, a, next_cell * k + next_sig]] += p * sig_p;
                        }
                    }
                }
            }
        }
    }

    let mut p_initial = Array2::zeros((nc, ns));
    let p0 = 1.0 / (starts.len() * k) as f64;
    for c in 0..nc {
        for &cell in &starts {
            for sig in 0..k {
                p_initial[[c, cell * k + sig]] = p0;
            }
        }
    }
    let state_labels = (0..ns)
        .map(|s| {
            let cell = s / k;
            format!("r{}c{}/{}", cell / grid.cols, cell % grid.cols, s % k)
        })
        .collect();
    let labels = Labels {
        states: Some(state_labels),
        actions: Some(vec!["N".into(), "E".into(), "S".into(), "W".into()]),
        contexts: Some(spec.tasks.iter().map(|t| t.name().to_string()).collect()),
    };
    TabularCmdp::new(
        spec.gamma,
        transitions,
        rewards,
        Array1::from_elem(nc, 1.0 / nc as f64),
        p_initial,
        labels,
    )
}

/// Open room with a single target, shared by a seeking and an avoiding task.
pub fn seek_avoid_spec(signatures: usize) -> GridSpec {
    GridSpec {
        layout: vec!["....".into(), ".T..".into(), "....".into(), "....".into()],
        tasks: vec![GridTask::Seek, GridTask::Avoid],
        signatures,
        slip: 0.1,
        gamma: 0.9,
        move_reward: 0.1,
        target_reward: 1.0,
    }
}

const MAZE: [&str; 5] = ["T...#", ".##.#", "...T.", "#.##.", "....."];

/// Small maze with plain, seeking and avoiding tasks.
pub fn maze_train_spec(signatures: usize) -> GridSpec {
    GridSpec {
        layout: MAZE.iter().map(|r| r.to_string()).collect(),
        tasks: vec![GridTask::Plain, GridTask::Seek, GridTask::Avoid],
        signatures,
        slip: 0.1,
        gamma: 0.9,
        move_reward: 0.1,
        target_reward: 1.0,
    }
}

/// Same maze, with the seeking task replaced by leaving through the targets.
pub fn maze_test_spec(signatures: usize) -> GridSpec {
    GridSpec {
        tasks: vec![GridTask::Plain, GridTask::Exit, GridTask::Avoid],
        ..maze_train_spec(signatures)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn open5(tasks: Vec<GridTask>, signatures: usize) -> GridSpec {
        GridSpec {
            layout: vec![
                ".....".into(),
                ".....".into(),
                "..T..".into(),
                ".....".into(),
                ".....".into(),
            ],
            tasks,
            signatures,
            slip: 0.1,
            gamma: 0.9,
            move_reward: 0.1,
            target_reward: 1.0,
        }
    }

    #[test]
    fn shape_contract() {
        let spec = open5(vec![GridTask::Plain, GridTask::Seek, GridTask::Avoid], 2);
        let m = build_contextual_gridworld(&spec).unwrap();
        assert_eq!(m.n_states, 25 * 2);
        assert_eq!(m.n_contexts, 3);
        assert_eq!(m.n_actions, 4);
        assert!(m.validate().is_empty());
    }

    #[test]
    fn seek_and_avoid_rewards_are_opposite_at_targets() {
        let spec = GridSpec {
            move_reward: 0.0,
            ..open5(vec![GridTask::Seek, GridTask::Avoid], 1)
        };
        let m = build_contextual_gridworld(&spec).unwrap();
        let target = 12;
        for a in 0..4 {
            assert_eq!(m.rewards[[0, target, a]], 1.0);
            assert_eq!(m.rewards[[1, target, a]], -1.0);
        }
    }

    #[test]
    fn malformed_layouts_rejected() {
        let mut spec = open5(vec![GridTask::Plain], 1);
        spec.layout[1] = "...".into();
        assert!(build_contextual_gridworld(&spec).is_err());
        spec.layout[1] = "..x..".into();
        assert!(build_contextual_gridworld(&spec).is_err());
        let mut spec = open5(vec![], 1);
        assert!(build_contextual_gridworld(&spec).is_err());
        spec.tasks = vec![GridTask::Plain];
        spec.layout = vec![];
        assert!(build_contextual_gridworld(&spec).is_err());
    }

    #[test]
    fn exit_targets_absorb() {
        let m = build_contextual_gridworld(&open5(vec![GridTask::Exit], 1)).unwrap();
        for a in 0..4 {
            assert_eq!(m.transitions[[0, 12, a, 12]], 1.0);
            assert!((m.rewards[[0, 12, a]] - 0.1).abs() < 1e-12);
        }
        assert_eq!(m.p_initial[[0, 12]], 0.0);
    }

    #[test]
    fn walls_block_moves() {
        let spec = GridSpec {
            layout: vec![".#".into(), "..".into()],
            slip: 0.0,
            ..open5(vec![GridTask::Plain], 1)
        };
        let m = build_contextual_gridworld(&spec).unwrap();
        // east from (0,0) bumps into the wall
        assert_eq!(m.transitions[[0, 0, 1, 0]], 1.0);
        assert_eq!(m.rewards[[0, 0, 1]], 0.0);
        // south from (0,0) moves to (1,0)
        assert_eq!(m.transitions[[0, 0, 2, 2]], 1.0);
        assert_eq!(m.rewards[[0, 0, 2]], 0.1);
    }

    #[test]
    fn seek_and_avoid_policies_differ_next_to_targets() {
        use crate::solver::{solve, SolveOptions};
        let spec = seek_avoid_spec(1);
        let m = build_contextual_gridworld(&spec).unwrap();
        let sol = solve(&m, &SolveOptions::default()).unwrap();
        let greedy = sol.greedy_policy();
        // (0,1) sits north of the target at (1,1)
        let s = 1;
        let a_seek = crate::cmdp::argmax(greedy.row(0, s).iter().copied());
        let a_avoid = crate::cmdp::argmax(greedy.row(1, s).iter().copied());
        assert_eq!(a_seek, 2);
        assert_ne!(a_seek, a_avoid);
    }

    #[test]
    fn maze_pair_shares_shape() {
        let a = build_contextual_gridworld(&maze_train_spec(2)).unwrap();
        let b = build_contextual_gridworld(&maze_test_spec(2)).unwrap();
        assert!(a.same_shape(&b));
        assert_eq!(a.n_states, 50);
    }
}
