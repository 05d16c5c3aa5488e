//! Gridworld cooperative navigation (CN) and predator-prey (PP) with a
//! configurable symmetry-breaking noise field.

mod config;
mod env;
mod gridworld;
mod log;
pub mod noise;
mod state;
mod tabular;

pub use config::{EnvConfig, InitialState, Task};
pub use env::{Environment, GridEnv};
pub use gridworld::{min_matching_cost, reset, GridWorld, StepOutcome};
pub use log::{write_episode_log, EpisodeLogRow};
pub use noise::NoiseField;
pub use state::{Action, Cell, EnvState, JointAction, Targets, N_ACTIONS};
pub use tabular::{to_tabular, TabularModel};
