//! Exact solver and symmetry-budget estimation on tabular models.

mod budget;
mod mdp;
pub mod random;
mod solver;

pub use budget::{estimate_budget, verify_bound, verify_bound_with, BoundReport, PairGap, SymmetryBudget};
pub use mdp::{IndexTransform, TabularMdp};
pub use random::{RandomInstance, RandomMdpSpec};
pub use solver::{value_iteration, QTable};
