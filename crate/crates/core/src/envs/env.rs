use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::gridworld::{GridWorld, StepOutcome};
use super::state::{EnvState, JointAction};
use crate::error::{Error, Result};

/// Stateful environment interface used by probing and training.
pub trait Environment {
    /// Resets to a state drawn from the initial distribution; also reseeds the
    /// transition RNG so the whole episode is a function of `seed`.
    fn reset(&mut self, seed: u64) -> Result<EnvState>;

    fn state(&self) -> &EnvState;

    fn step(&mut self, action: &JointAction) -> Result<StepOutcome>;

    /// Overwrites the current state. Environments that cannot be driven to an
    /// arbitrary state report a capability error.
    fn set_state(&mut self, _state: EnvState) -> Result<()> {
        Err(Error::Capability(
            "environment does not support set_state".into(),
        ))
    }

    /// Fixed-length encoding of a whole state.
    fn encode(&self, state: &EnvState) -> Vec<f64>;

    fn n_agents(&self) -> usize;

    fn horizon(&self) -> usize;

    /// True when every transition is a point mass.
    fn is_deterministic(&self) -> bool;
}

/// A [`GridWorld`] instance with its own state and RNG.
#[derive(Debug, Clone)]
pub struct GridEnv {
    world: Arc<GridWorld>,
    state: EnvState,
    rng: ChaCha8Rng,
}

impl GridEnv {
    pub fn new(world: Arc<GridWorld>, seed: u64) -> Result<Self> {
        let state = world.reset(seed)?;
        Ok(GridEnv {
            world,
            state,
            rng: transition_rng(seed),
        })
    }

    pub fn world(&self) -> &GridWorld {
        &self.world
    }
}

fn transition_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    rng
}

impl Environment for GridEnv {
    fn reset(&mut self, seed: u64) -> Result<EnvState> {
        self.state = self.world.reset(seed)?;
        self.rng = transition_rng(seed);
        Ok(self.state.clone())
    }

    fn state(&self) -> &EnvState {
        &self.state
    }

    fn step(&mut self, action: &JointAction) -> Result<StepOutcome> {
        let out = self.world.step(&self.state, action, &mut self.rng)?;
        self.state = out.state.clone();
        Ok(out)
    }

    fn set_state(&mut self, state: EnvState) -> Result<()> {
        self.world.validate_state(&state)?;
        self.state = state;
        Ok(())
    }

    fn encode(&self, state: &EnvState) -> Vec<f64> {
        self.world.global_features(state)
    }

    fn n_agents(&self) -> usize {
        self.world.n_agents()
    }

    fn horizon(&self) -> usize {
        self.world.config().horizon
    }

    fn is_deterministic(&self) -> bool {
        self.world.is_deterministic()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{Cell, EnvConfig, Targets};

    #[test]
    fn set_state_round_trip_and_validation() {
        let world = Arc::new(GridWorld::new(EnvConfig::default()).unwrap());
        let mut env = GridEnv::new(world, 1).unwrap();
        let s = EnvState::new(
            vec![Cell::new(0, 0), Cell::new(4, 4)],
            Targets::Landmarks(vec![Cell::new(2, 2), Cell::new(1, 3)]),
            5,
        );
        env.set_state(s.clone()).unwrap();
        assert_eq!(env.state(), &s);
        let bad = EnvState::new(
            vec![Cell::new(0, 5), Cell::new(4, 4)],
            Targets::Landmarks(vec![Cell::new(2, 2), Cell::new(1, 3)]),
            0,
        );
        assert!(matches!(env.set_state(bad), Err(Error::InvalidState(_))));
        assert_eq!(env.state(), &s);
    }

    #[test]
    fn episodes_end_at_horizon() {
        let world = Arc::new(
            GridWorld::new(EnvConfig {
                horizon: 3,
                ..EnvConfig::default()
            })
            .unwrap(),
        );
        let mut env = GridEnv::new(world, 0).unwrap();
        let a = JointAction::from_index(0, 2);
        assert!(!env.step(&a).unwrap().done);
        assert!(!env.step(&a).unwrap().done);
        assert!(env.step(&a).unwrap().done);
    }
}
