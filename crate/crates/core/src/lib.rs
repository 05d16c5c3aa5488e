//! Partially symmetric Markov games and the tooling around them.
//!
//! The crate is organised bottom-up:
//!
//! - [`groups`]: rotation/permutation groups acting on grid states and joint actions.
//! - [`envs`]: gridworld cooperative navigation and predator-prey with a
//!   symmetry-breaking noise field, plus exact tabular models.
//! - [`oracle`]: value iteration, symmetry budgets and the performance-error bound check.
//! - [`quantify`]: the twin-rollout symmetry degree `D`, MMD diagnostics and categorisation.
//! - [`nn`]: a small reverse-mode autodiff engine, MLPs and Adam.
//! - [`pse`]: annealing schedule, augmentation gate, augmentation and consistency losses.
//! - [`trainer`]: MAPPO-style training with the symmetry components plugged in.
//! - [`experiment`]: seeded runs, noise sweeps and run manifests used by the CLI.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod envs;
pub mod error;
pub mod experiment;
pub mod groups;
pub mod manifest;
pub mod nn;
pub mod oracle;
pub mod pse;
pub mod quantify;
pub mod trainer;

pub use error::{Error, Result};
