use serde::{Deserialize, Serialize};

use super::state::EnvState;
use crate::error::{Error, Result};
use crate::envs::noise::MAX_LEVEL;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    /// Cooperative navigation: agents cover landmarks without colliding.
    Cn,
    /// Predator-prey: agents chase a scripted prey.
    Pp,
}

/// Initial-state distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialState {
    /// Uniform over placements where no two entities share a cell.
    UniformNonOverlapping,
    /// Always start from this state.
    Fixed(EnvState),
}

/// Environment configuration, the `env` section of a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub grid_size: usize,
    pub n_agents: usize,
    pub task: Task,
    /// Landmark count for CN; defaults to `n_agents`.
    pub n_landmarks: Option<usize>,
    pub horizon: usize,
    pub collision_penalty: f64,
    pub distance_weight: f64,
    pub capture_reward: f64,
    /// Symmetry-breaking noise level in `0..=8`.
    pub noise_level: u32,
    pub initial_state: InitialState,
    pub gamma: f64,
    /// Maximum `|S|·|A|` allowed when building a tabular model.
    pub enumeration_cap: usize,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            grid_size: 5,
            n_agents: 2,
            task: Task::Cn,
            n_landmarks: None,
            horizon: 25,
            collision_penalty: 0.5,
            distance_weight: 0.1,
            capture_reward: 1.0,
            noise_level: 0,
            initial_state: InitialState::UniformNonOverlapping,
            gamma: 0.95,
            enumeration_cap: 1_000_000,
        }
    }
}

impl EnvConfig {
    pub fn n_targets(&self) -> usize {
        match self.task {
            Task::Cn => self.n_landmarks.unwrap_or(self.n_agents),
            Task::Pp => 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.grid_size == 0 {
            return fail("grid_size must be at least 1".into());
        }
        if self.n_agents == 0 {
            return fail("n_agents must be at least 1".into());
        }
        if self.horizon == 0 {
            return fail("horizon must be at least 1".into());
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return fail(format!("gamma must lie in (0,1), got {}", self.gamma));
        }
        if self.noise_level > MAX_LEVEL {
            return fail(format!(
                "noise_level must lie in 0..={MAX_LEVEL}, got {}",
                self.noise_level
            ));
        }
        for (name, w) in [
            ("collision_penalty", self.collision_penalty),
            ("distance_weight", self.distance_weight),
            ("capture_reward", self.capture_reward),
        ] {
            if !w.is_finite() || w < 0.0 {
                return fail(format!("{name} must be finite and non-negative, got {w}"));
            }
        }
        let cells = self.grid_size * self.grid_size;
        let entities = self.n_agents + self.n_targets();
        if entities > cells {
            return fail(format!(
                "cannot place {entities} entities on a {}x{} grid without overlap",
                self.grid_size, self.grid_size
            ));
        }
        if let InitialState::Fixed(s) = &self.initial_state {
            if s.n_agents() != self.n_agents || s.targets.cells().len() != self.n_targets() {
                return fail("fixed initial state does not match n_agents / targets".into());
            }
            s.check_in_grid(self.grid_size)
                .map_err(|e| Error::Config(format!("fixed initial state: {e}")))?;
        }
        Ok(())
    }
}
