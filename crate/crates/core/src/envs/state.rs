use std::fmt;
use std::str::FromStr;

use itertools::Itertools;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Integer grid cell. `x` grows to the right, `y` grows upwards.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub x: i32,
    pub y: i32,
}

impl Cell {
    pub const fn new(x: i32, y: i32) -> Self {
        Cell { x, y }
    }

    pub fn in_grid(self, n: usize) -> bool {
        let n = n as i32;
        (0..n).contains(&self.x) && (0..n).contains(&self.y)
    }

    pub fn manhattan(self, other: Cell) -> i32 {
        (self.x - other.x).abs() + (self.y - other.y).abs()
    }

    /// Moves by `delta`, clamping to the `n`×`n` grid.
    pub fn shifted_clamped(self, delta: (i32, i32), n: usize) -> Cell {
        let hi = n as i32 - 1;
        Cell::new(
            (self.x + delta.0).clamp(0, hi),
            (self.y + delta.1).clamp(0, hi),
        )
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.x, self.y)
    }
}

/// Per-agent discrete action. The discriminant is the action index used by
/// policies and tabular models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    Stay = 0,
    Up = 1,
    Right = 2,
    Down = 3,
    Left = 4,
}

pub const N_ACTIONS: usize = 5;

impl Action {
    pub const ALL: [Action; N_ACTIONS] = [
        Action::Stay,
        Action::Up,
        Action::Right,
        Action::Down,
        Action::Left,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Result<Action> {
        Action::ALL
            .get(i)
            .copied()
            .ok_or_else(|| Error::InvalidAction(format!("action index {i} out of range 0..{N_ACTIONS}")))
    }

    pub fn displacement(self) -> (i32, i32) {
        match self {
            Action::Stay => (0, 0),
            Action::Up => (0, 1),
            Action::Right => (1, 0),
            Action::Down => (0, -1),
            Action::Left => (-1, 0),
        }
    }

    /// Rotates a movement by `k` quarter turns in the grid's rotation sense
    /// (up → right → down → left). `Stay` is fixed.
    pub fn rotated(self, k: usize) -> Action {
        match self {
            Action::Stay => Action::Stay,
            moving => {
                let dir = (moving.index() - 1 + k) % 4;
                Action::ALL[dir + 1]
            }
        }
    }
}

impl FromStr for Action {
    type Err = Error;

    fn from_str(s: &str) -> Result<Action> {
        match s.to_ascii_lowercase().as_str() {
            "stay" | "s" => Ok(Action::Stay),
            "up" | "u" => Ok(Action::Up),
            "right" | "r" => Ok(Action::Right),
            "down" | "d" => Ok(Action::Down),
            "left" | "l" => Ok(Action::Left),
            other => Err(Error::InvalidAction(format!("unknown action symbol {other:?}"))),
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Action::Stay => "S",
            Action::Up => "U",
            Action::Right => "R",
            Action::Down => "D",
            Action::Left => "L",
        })
    }
}

/// One action per agent, in agent-slot order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct JointAction(pub Vec<Action>);

impl JointAction {
    pub fn new(actions: Vec<Action>) -> Self {
        JointAction(actions)
    }

    pub fn from_indices(indices: &[usize]) -> Result<Self> {
        indices
            .iter()
            .map(|&i| Action::from_index(i))
            .collect::<Result<Vec<_>>>()
            .map(JointAction)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Action> {
        self.0.iter()
    }

    /// Mixed-radix index of the joint action (agent 0 is the least significant digit).
    pub fn index(&self) -> usize {
        self.0
            .iter()
            .rev()
            .fold(0, |acc, a| acc * N_ACTIONS + a.index())
    }

    pub fn from_index(mut index: usize, n_agents: usize) -> Self {
        let mut actions = Vec::with_capacity(n_agents);
        for _ in 0..n_agents {
            actions.push(Action::ALL[index % N_ACTIONS]);
            index /= N_ACTIONS;
        }
        JointAction(actions)
    }

    pub fn check_len(&self, n_agents: usize) -> Result<()> {
        if self.0.len() != n_agents {
            return Err(Error::InvalidAction(format!(
                "joint action has {} components, expected {n_agents}",
                self.0.len()
            )));
        }
        Ok(())
    }
}

impl FromStr for JointAction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        s.split(',')
            .map(|t| t.trim().parse())
            .collect::<Result<Vec<_>>>()
            .map(JointAction)
    }
}

impl fmt::Display for JointAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0.iter().join(","))
    }
}

/// Non-agent entities of the task.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Targets {
    /// Cooperative navigation landmarks, kept sorted (they are an unordered set).
    Landmarks(Vec<Cell>),
    /// Predator-prey: the single scripted prey.
    Prey(Cell),
}

impl Targets {
    pub fn cells(&self) -> &[Cell] {
        match self {
            Targets::Landmarks(cells) => cells,
            Targets::Prey(cell) => std::slice::from_ref(cell),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EnvState {
    pub agents: Vec<Cell>,
    pub targets: Targets,
    pub step_count: usize,
}

impl EnvState {
    /// Builds a state, sorting landmarks into canonical order.
    pub fn new(agents: Vec<Cell>, targets: Targets, step_count: usize) -> Self {
        let targets = match targets {
            Targets::Landmarks(mut cells) => {
                cells.sort();
                Targets::Landmarks(cells)
            }
            prey => prey,
        };
        EnvState {
            agents,
            targets,
            step_count,
        }
    }

    pub fn n_agents(&self) -> usize {
        self.agents.len()
    }

    /// Checks every cell lies in the `n`×`n` grid.
    pub fn check_in_grid(&self, n: usize) -> Result<()> {
        for cell in self.agents.iter().chain(self.targets.cells()) {
            if !cell.in_grid(n) {
                return Err(Error::InvalidState(format!(
                    "cell {cell} outside the {n}x{n} grid"
                )));
            }
        }
        Ok(())
    }

    /// Same state with the step counter cleared (tabular models ignore time).
    pub fn untimed(&self) -> EnvState {
        EnvState {
            step_count: 0,
            ..self.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn joint_action_display_round_trips() {
        let a = JointAction::new(vec![Action::Left, Action::Stay, Action::Up]);
        assert_eq!(a.to_string(), "L,S,U");
        assert_eq!(a.to_string().parse::<JointAction>().unwrap(), a);
    }

    #[test]
    fn joint_action_index_round_trip() {
        for idx in 0..125 {
            let a = JointAction::from_index(idx, 3);
            assert_eq!(a.index(), idx);
        }
    }

    #[test]
    fn rotation_of_directions() {
        assert_eq!(Action::Up.rotated(1), Action::Right);
        assert_eq!(Action::Left.rotated(1), Action::Up);
        assert_eq!(Action::Down.rotated(2), Action::Up);
        assert_eq!(Action::Stay.rotated(3), Action::Stay);
    }

    #[test]
    fn parse_actions() {
        let a: JointAction = "up, stay,LEFT".parse().unwrap();
        assert_eq!(a.0, vec![Action::Up, Action::Stay, Action::Left]);
        assert!(matches!("jump".parse::<Action>(), Err(Error::InvalidAction(_))));
        assert!(Action::from_index(5).is_err());
    }

    #[test]
    fn clamp_at_boundary() {
        let c = Cell::new(2, 4);
        assert_eq!(c.shifted_clamped(Action::Up.displacement(), 5), c);
        assert_eq!(c.shifted_clamped(Action::Down.displacement(), 5), Cell::new(2, 3));
    }
}
