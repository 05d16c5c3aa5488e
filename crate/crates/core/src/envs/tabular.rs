use std::collections::HashMap;

use itertools::Itertools;

use super::config::Task;
use super::gridworld::GridWorld;
use super::state::{Cell, EnvState, JointAction, Targets, N_ACTIONS};
use crate::error::{Error, Result};
use crate::groups::TransformPair;
use crate::oracle::{IndexTransform, TabularMdp};

/// Exact tabular model of a gridworld together with its state indexing.
///
/// States are untimed (`step_count = 0`); joint actions are indexed by
/// [`JointAction::index`]. Rewards are expectations over the next state.
#[derive(Debug, Clone)]
pub struct TabularModel {
    pub mdp: TabularMdp,
    states: Vec<EnvState>,
    index: HashMap<EnvState, usize>,
    n_agents: usize,
    grid_size: usize,
}

fn enumerate_states(world: &GridWorld) -> Vec<EnvState> {
    let cfg = world.config();
    let n = cfg.grid_size as i32;
    let cells: Vec<Cell> = (0..n)
        .flat_map(|x| (0..n).map(move |y| Cell::new(x, y)))
        .sorted()
        .collect();
    let target_sets: Vec<Targets> = match cfg.task {
        Task::Cn => cells
            .iter()
            .copied()
            .combinations(cfg.n_targets())
            .map(Targets::Landmarks)
            .collect(),
        Task::Pp => cells.iter().map(|&c| Targets::Prey(c)).collect(),
    };
    let agent_sets: Vec<Vec<Cell>> = (0..cfg.n_agents)
        .map(|_| cells.iter().copied())
        .multi_cartesian_product()
        .collect();
    let mut out = Vec::with_capacity(agent_sets.len() * target_sets.len());
    for targets in &target_sets {
        for agents in &agent_sets {
            out.push(EnvState::new(agents.clone(), targets.clone(), 0));
        }
    }
    out
}

fn binomial(n: usize, k: usize) -> Option<usize> {
    let mut acc: usize = 1;
    for i in 0..k {
        acc = acc.checked_mul(n - i)? / (i + 1);
    }
    Some(acc)
}

/// Enumerates every state and joint action of `world` into an explicit model.
pub fn to_tabular(world: &GridWorld) -> Result<TabularModel> {
    let cfg = world.config();
    let cells = cfg.grid_size * cfg.grid_size;
    let n_states = (|| {
        let agents = cells.checked_pow(cfg.n_agents as u32)?;
        let targets = match cfg.task {
            Task::Cn => binomial(cells, cfg.n_targets())?,
            Task::Pp => cells,
        };
        agents.checked_mul(targets)
    })();
    let n_actions = N_ACTIONS.checked_pow(cfg.n_agents as u32);
    let size = n_states.zip(n_actions).and_then(|(s, a)| s.checked_mul(a));
    match size {
        Some(sz) if sz <= cfg.enumeration_cap => {}
        _ => {
            return Err(Error::Capacity(format!(
                "|S|·|A| exceeds the enumeration cap of {}",
                cfg.enumeration_cap
            )))
        }
    }
    let n_actions = n_actions.unwrap_or_default();

    let states = enumerate_states(world);
    let index: HashMap<EnvState, usize> =
        states.iter().cloned().enumerate().map(|(i, s)| (s, i)).collect();
    let pairs = states.len() * n_actions;
    let mut transitions = Vec::with_capacity(pairs);
    let mut rewards = Vec::with_capacity(pairs);
    for s in &states {
        for ai in 0..n_actions {
            let a = JointAction::from_index(ai, cfg.n_agents);
            let dist = world.transition_distribution(s, &a)?;
            let mut row = Vec::with_capacity(dist.len());
            let mut expected = 0.0;
            for (next, p) in dist {
                expected += p * world.reward(&next);
                let t = *index.get(&next).ok_or_else(|| {
                    Error::Model(format!("successor {next:?} missing from enumeration"))
                })?;
                row.push((t, p));
            }
            transitions.push(row);
            rewards.push(expected);
        }
    }
    let mdp = TabularMdp::new(
        states.len(),
        n_actions,
        transitions,
        rewards,
        vec![true; pairs],
        cfg.gamma,
        world.reward_bound(),
    )?;
    Ok(TabularModel {
        mdp,
        states,
        index,
        n_agents: cfg.n_agents,
        grid_size: cfg.grid_size,
    })
}

impl TabularModel {
    pub fn states(&self) -> &[EnvState] {
        &self.states
    }

    pub fn state_index(&self, s: &EnvState) -> Option<usize> {
        self.index.get(&s.untimed()).copied()
    }

    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    /// Realises `g` as index permutations of this model.
    pub fn index_transform(&self, g: &TransformPair) -> Result<IndexTransform> {
        if g.grid_size() != self.grid_size {
            return Err(Error::Transform(format!(
                "transform built for a {} grid, model has {}",
                g.grid_size(),
                self.grid_size
            )));
        }
        let state_map = self
            .states
            .iter()
            .map(|s| {
                let gs = g.transform_state(s)?;
                self.state_index(&gs).ok_or_else(|| {
                    Error::Transform(format!("image {gs:?} is not a model state"))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let action_map = (0..self.mdp.n_actions())
            .map(|ai| {
                let a = JointAction::from_index(ai, self.n_agents);
                g.transform_action(&a).map(|ga| ga.index())
            })
            .collect::<Result<Vec<_>>>()?;
        IndexTransform::new(state_map, action_map)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::EnvConfig;
    use crate::groups::{Group, GroupConfig};

    fn world(n: usize, agents: usize, noise: u32) -> GridWorld {
        GridWorld::new(EnvConfig {
            grid_size: n,
            n_agents: agents,
            noise_level: noise,
            ..EnvConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn noise_free_rows_are_point_masses() {
        let m = to_tabular(&world(3, 1, 0)).unwrap();
        assert_eq!(m.mdp.n_states(), 81);
        for s in 0..m.mdp.n_states() {
            for a in 0..m.mdp.n_actions() {
                assert_eq!(m.mdp.row(s, a).len(), 1);
            }
        }
    }

    #[test]
    fn rows_are_stochastic_with_noise() {
        let m = to_tabular(&world(3, 2, 8)).unwrap();
        for s in 0..m.mdp.n_states() {
            for a in 0..m.mdp.n_actions() {
                let total: f64 = m.mdp.row(s, a).iter().map(|(_, p)| p).sum();
                assert!((total - 1.0).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn cap_is_enforced() {
        let w = GridWorld::new(EnvConfig {
            grid_size: 7,
            n_agents: 3,
            ..EnvConfig::default()
        })
        .unwrap();
        assert!(matches!(to_tabular(&w), Err(Error::Capacity(_))));
    }

    #[test]
    fn noise_free_model_is_exactly_symmetric() {
        for task in [Task::Cn, Task::Pp] {
            let w = GridWorld::new(EnvConfig {
                grid_size: 3,
                n_agents: 2,
                task,
                ..EnvConfig::default()
            })
            .unwrap();
            let m = to_tabular(&w).unwrap();
            let group = Group::new(&GroupConfig::default(), 2).unwrap();
            for g in group.transforms(3) {
                let t = m.index_transform(&g).unwrap();
                for s in 0..m.mdp.n_states() {
                    for a in 0..m.mdp.n_actions() {
                        let (gs, ga) = (t.state(s), t.action(a));
                        assert_eq!(m.mdp.reward(s, a), m.mdp.reward(gs, ga));
                        let mut pushed: Vec<(usize, f64)> =
                            m.mdp.row(s, a).iter().map(|&(x, p)| (t.state(x), p)).collect();
                        let mut direct = m.mdp.row(gs, ga).to_vec();
                        pushed.sort_by_key(|e| e.0);
                        direct.sort_by_key(|e| e.0);
                        assert_eq!(pushed, direct);
                    }
                }
            }
        }
    }
}
