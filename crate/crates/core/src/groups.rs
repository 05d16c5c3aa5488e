//! Finite transformation groups acting on gridworld states and joint actions.
//!
//! Elements are pairs `(rotation, agent permutation)` from `C_n × S_agents`,
//! where `n` divides 4 so every rotation maps the square grid onto itself.
//! A quarter turn sends cell `(x, y)` to `(y, N-1-x)`; movement directions
//! follow the same turn (up → right → down → left). Permutations move agent
//! slots: the agent in slot `i` ends up in slot `perm[i]`. Landmarks are
//! never permuted, only rotated and re-sorted.

use itertools::Itertools;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::envs::{Action, Cell, EnvState, JointAction, Targets};
use crate::error::{Error, Result};

/// Quarter turns in a full turn of the square grid.
pub const QUARTER_TURNS: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GroupElement {
    rotation_index: usize,
    n_rot: usize,
    agent_perm: Vec<usize>,
}

fn check_rotation_order(n_rot: usize) -> Result<()> {
    if n_rot == 0 || !QUARTER_TURNS.is_multiple_of(n_rot) {
        return Err(Error::Config(format!(
            "rotation order {n_rot} does not map the square grid onto itself (must divide 4)"
        )));
    }
    Ok(())
}

fn is_permutation(perm: &[usize]) -> bool {
    let mut seen = vec![false; perm.len()];
    perm.iter().all(|&p| p < perm.len() && !std::mem::replace(&mut seen[p], true))
}

impl GroupElement {
    pub fn new(rotation_index: usize, n_rot: usize, agent_perm: Vec<usize>) -> Result<Self> {
        check_rotation_order(n_rot)?;
        if rotation_index >= n_rot {
            return Err(Error::Config(format!(
                "rotation index {rotation_index} out of range for C_{n_rot}"
            )));
        }
        if !is_permutation(&agent_perm) {
            return Err(Error::Config(format!(
                "agent permutation {agent_perm:?} is not a bijection"
            )));
        }
        Ok(GroupElement {
            rotation_index,
            n_rot,
            agent_perm,
        })
    }

    pub fn identity(n_rot: usize, n_agents: usize) -> Self {
        GroupElement {
            rotation_index: 0,
            n_rot,
            agent_perm: (0..n_agents).collect(),
        }
    }

    /// Pure rotation with trivial agent permutation.
    pub fn rotation(rotation_index: usize, n_rot: usize, n_agents: usize) -> Result<Self> {
        GroupElement::new(rotation_index, n_rot, (0..n_agents).collect())
    }

    pub fn rotation_index(&self) -> usize {
        self.rotation_index
    }

    pub fn n_rot(&self) -> usize {
        self.n_rot
    }

    pub fn agent_perm(&self) -> &[usize] {
        &self.agent_perm
    }

    pub fn n_agents(&self) -> usize {
        self.agent_perm.len()
    }

    /// Number of grid quarter turns this element performs.
    pub fn quarter_turns(&self) -> usize {
        self.rotation_index * (QUARTER_TURNS / self.n_rot)
    }

    pub fn is_identity(&self) -> bool {
        self.rotation_index == 0 && self.agent_perm.iter().enumerate().all(|(i, &p)| i == p)
    }

    pub fn inverse(&self) -> GroupElement {
        let mut inv = vec![0; self.agent_perm.len()];
        for (i, &p) in self.agent_perm.iter().enumerate() {
            inv[p] = i;
        }
        GroupElement {
            rotation_index: (self.n_rot - self.rotation_index) % self.n_rot,
            n_rot: self.n_rot,
            agent_perm: inv,
        }
    }

    pub fn rotation_matrix(&self) -> RotationMatrix {
        RotationMatrix::from_quarter_turns(self.quarter_turns())
    }

    /// Compact label such as `r1p10` (rotation index, then permutation).
    pub fn label(&self) -> String {
        format!("r{}p{}", self.rotation_index, self.agent_perm.iter().join(""))
    }
}

/// Group product `a ∘ b` (apply `b` first).
pub fn compose(a: &GroupElement, b: &GroupElement) -> Result<GroupElement> {
    if a.n_rot != b.n_rot || a.agent_perm.len() != b.agent_perm.len() {
        return Err(Error::Config(format!(
            "cannot compose elements of C_{}×S_{} and C_{}×S_{}",
            a.n_rot,
            a.agent_perm.len(),
            b.n_rot,
            b.agent_perm.len()
        )));
    }
    Ok(GroupElement {
        rotation_index: (a.rotation_index + b.rotation_index) % a.n_rot,
        n_rot: a.n_rot,
        agent_perm: b.agent_perm.iter().map(|&j| a.agent_perm[j]).collect(),
    })
}

/// 2×2 rotation matrix `R(θ) = [[cos θ, -sin θ], [sin θ, cos θ]]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationMatrix {
    theta: f64,
    entries: [[f64; 2]; 2],
}

impl RotationMatrix {
    pub fn new(theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        RotationMatrix {
            theta,
            entries: [[c, -s], [s, c]],
        }
    }

    /// Matrix of `k` grid quarter turns, with exact integer entries.
    ///
    /// A grid quarter turn maps the centred offset `(u, v)` to `(v, -u)`,
    /// i.e. `R(-π/2)` in y-up coordinates, so the angle is `2π(4-k)/4`.
    pub fn from_quarter_turns(k: usize) -> Self {
        let k = k % QUARTER_TURNS;
        let i = (QUARTER_TURNS - k) % QUARTER_TURNS;
        let theta = 2.0 * PI * i as f64 / QUARTER_TURNS as f64;
        let (c, s) = match i {
            0 => (1.0, 0.0),
            1 => (0.0, 1.0),
            2 => (-1.0, 0.0),
            _ => (0.0, -1.0),
        };
        RotationMatrix {
            theta,
            entries: [[c, -s], [s, c]],
        }
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn entries(&self) -> [[f64; 2]; 2] {
        self.entries
    }

    pub fn determinant(&self) -> f64 {
        let m = self.entries;
        m[0][0] * m[1][1] - m[0][1] * m[1][0]
    }

    pub fn transpose(&self) -> [[f64; 2]; 2] {
        let m = self.entries;
        [[m[0][0], m[1][0]], [m[0][1], m[1][1]]]
    }

    pub fn apply(&self, v: [f64; 2]) -> [f64; 2] {
        let m = self.entries;
        [m[0][0] * v[0] + m[0][1] * v[1], m[1][0] * v[0] + m[1][1] * v[1]]
    }
}

/// A group element together with its action on states (`L_g`) and joint
/// actions (`K_g`) of an `N`×`N` grid.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TransformPair {
    element: GroupElement,
    grid_size: usize,
}

impl TransformPair {
    pub fn new(element: GroupElement, grid_size: usize) -> Self {
        TransformPair { element, grid_size }
    }

    pub fn element(&self) -> &GroupElement {
        &self.element
    }

    pub fn grid_size(&self) -> usize {
        self.grid_size
    }

    pub fn inverse(&self) -> TransformPair {
        TransformPair::new(self.element.inverse(), self.grid_size)
    }

    pub fn is_identity(&self) -> bool {
        self.element.is_identity()
    }

    pub fn rotate_cell(&self, cell: Cell) -> Cell {
        let hi = self.grid_size as i32 - 1;
        (0..self.element.quarter_turns()).fold(cell, |c, _| Cell::new(c.y, hi - c.x))
    }

    pub fn rotate_action(&self, action: Action) -> Action {
        action.rotated(self.element.quarter_turns())
    }

    /// `L_g`: rotates every cell about the grid centre and moves agent slots.
    pub fn transform_state(&self, s: &EnvState) -> Result<EnvState> {
        s.check_in_grid(self.grid_size)?;
        if s.n_agents() != self.element.n_agents() {
            return Err(Error::InvalidState(format!(
                "state has {} agents, transform expects {}",
                s.n_agents(),
                self.element.n_agents()
            )));
        }
        let mut agents = vec![Cell::new(0, 0); s.n_agents()];
        for (i, &cell) in s.agents.iter().enumerate() {
            agents[self.element.agent_perm[i]] = self.rotate_cell(cell);
        }
        let targets = match &s.targets {
            Targets::Landmarks(cells) => {
                Targets::Landmarks(cells.iter().map(|&c| self.rotate_cell(c)).collect())
            }
            Targets::Prey(c) => Targets::Prey(self.rotate_cell(*c)),
        };
        Ok(EnvState::new(agents, targets, s.step_count))
    }

    /// `K_g`: rotates every movement and moves agent slots like the state map.
    pub fn transform_action(&self, a: &JointAction) -> Result<JointAction> {
        a.check_len(self.element.n_agents())?;
        let mut out = vec![Action::Stay; a.len()];
        for (i, &act) in a.iter().enumerate() {
            out[self.element.agent_perm[i]] = self.rotate_action(act);
        }
        Ok(JointAction(out))
    }
}

/// Which group the toolkit uses; read from the `group` config section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GroupConfig {
    /// Cyclic rotation order; must divide 4.
    pub rotations: usize,
    /// Include agent permutations.
    pub permutations: bool,
}

impl Default for GroupConfig {
    fn default() -> Self {
        GroupConfig {
            rotations: 4,
            permutations: true,
        }
    }
}

/// Enumerated group `C_n` or `C_n × S_agents`.
#[derive(Debug, Clone)]
pub struct Group {
    n_rot: usize,
    n_agents: usize,
    elements: Vec<GroupElement>,
}

impl Group {
    pub fn new(cfg: &GroupConfig, n_agents: usize) -> Result<Self> {
        check_rotation_order(cfg.rotations)?;
        let perms: Vec<Vec<usize>> = if cfg.permutations {
            (0..n_agents).permutations(n_agents).collect()
        } else {
            vec![(0..n_agents).collect()]
        };
        let mut elements = Vec::with_capacity(cfg.rotations * perms.len());
        for r in 0..cfg.rotations {
            for p in &perms {
                elements.push(GroupElement::new(r, cfg.rotations, p.clone())?);
            }
        }
        Ok(Group {
            n_rot: cfg.rotations,
            n_agents,
            elements,
        })
    }

    pub fn n_rot(&self) -> usize {
        self.n_rot
    }

    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    pub fn elements(&self) -> &[GroupElement] {
        &self.elements
    }

    pub fn non_identity(&self) -> impl Iterator<Item = &GroupElement> {
        self.elements.iter().filter(|g| !g.is_identity())
    }

    pub fn is_trivial(&self) -> bool {
        self.elements.len() <= 1
    }

    /// Uniform draw from `G \ {e}`; `None` for the trivial group.
    pub fn sample_non_identity<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<&GroupElement> {
        if self.is_trivial() {
            return None;
        }
        // identity is always elements[0]
        let i = rng.gen_range(1..self.elements.len());
        Some(&self.elements[i])
    }

    pub fn transforms(&self, grid_size: usize) -> Vec<TransformPair> {
        self.elements
            .iter()
            .map(|g| TransformPair::new(g.clone(), grid_size))
            .collect()
    }

    pub fn non_identity_transforms(&self, grid_size: usize) -> Vec<TransformPair> {
        self.non_identity()
            .map(|g| TransformPair::new(g.clone(), grid_size))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rot(k: usize) -> GroupElement {
        GroupElement::rotation(k, 4, 1).unwrap()
    }

    fn sample_state() -> EnvState {
        EnvState::new(
            vec![Cell::new(0, 0), Cell::new(3, 1)],
            Targets::Landmarks(vec![Cell::new(4, 4), Cell::new(2, 0)]),
            3,
        )
    }

    #[test]
    fn identity_is_neutral() {
        let e = GroupElement::identity(4, 3);
        let g = GroupElement::new(1, 4, vec![2, 0, 1]).unwrap();
        assert_eq!(compose(&e, &g).unwrap(), g);
        assert_eq!(compose(&g, &e).unwrap(), g);
    }

    #[test]
    fn c4_multiplication_table_is_angle_addition() {
        // R(θa)·R(θb) = R(θa+θb): compare against the matrices themselves
        for a in 0..4 {
            for b in 0..4 {
                let prod = compose(&rot(a), &rot(b)).unwrap();
                let ma = rot(a).rotation_matrix().entries();
                let mb = rot(b).rotation_matrix().entries();
                let mut mm = [[0.0; 2]; 2];
                for i in 0..2 {
                    for j in 0..2 {
                        mm[i][j] = (0..2).map(|k| ma[i][k] * mb[k][j]).sum();
                    }
                }
                assert_eq!(prod.rotation_matrix().entries(), mm);
            }
        }
        assert_eq!(compose(&rot(1), &rot(1)).unwrap(), rot(2));
        assert!(compose(&rot(1), &rot(3)).unwrap().is_identity());
    }

    #[test]
    fn compose_rejects_mismatched_groups() {
        let a = GroupElement::identity(4, 2);
        let b = GroupElement::identity(2, 2);
        let c = GroupElement::identity(4, 3);
        assert!(matches!(compose(&a, &b), Err(Error::Config(_))));
        assert!(matches!(compose(&a, &c), Err(Error::Config(_))));
    }

    #[test]
    fn rejects_bad_elements() {
        assert!(GroupElement::new(0, 3, vec![0]).is_err());
        assert!(GroupElement::new(4, 4, vec![0]).is_err());
        assert!(GroupElement::new(0, 4, vec![0, 0]).is_err());
        assert!(Group::new(&GroupConfig { rotations: 8, permutations: false }, 2).is_err());
    }

    #[test]
    #[allow(clippy::needless_range_loop)]
    fn rotation_matrices_are_orthogonal() {
        for k in 0..4 {
            let m = RotationMatrix::from_quarter_turns(k);
            assert!((m.determinant() - 1.0).abs() < 1e-12);
            let t = m.transpose();
            let e = m.entries();
            for i in 0..2 {
                for j in 0..2 {
                    let v: f64 = (0..2).map(|l| t[i][l] * e[l][j]).sum();
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!((v - want).abs() < 1e-12);
                }
            }
            let cont = RotationMatrix::new(m.theta());
            for i in 0..2 {
                for j in 0..2 {
                    assert!((cont.entries()[i][j] - e[i][j]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn rot90_moves_corner() {
        let t = TransformPair::new(rot(1), 5);
        assert_eq!(t.rotate_cell(Cell::new(0, 0)), Cell::new(0, 4));
        // cross-check: centre, apply the matrix, re-offset
        let m = rot(1).rotation_matrix();
        for x in 0..5 {
            for y in 0..5 {
                let c = 2.0;
                let v = m.apply([x as f64 - c, y as f64 - c]);
                let want = Cell::new((v[0] + c).round() as i32, (v[1] + c).round() as i32);
                assert_eq!(t.rotate_cell(Cell::new(x, y)), want);
            }
        }
        // odd grid: exact fixed centre
        assert_eq!(t.rotate_cell(Cell::new(2, 2)), Cell::new(2, 2));
    }

    #[test]
    fn rot90_turns_up_into_right() {
        let t = TransformPair::new(rot(1), 5);
        let a = t.transform_action(&JointAction(vec![Action::Up])).unwrap();
        assert_eq!(a.0, vec![Action::Right]);
        let stay = TransformPair::new(GroupElement::rotation(3, 4, 2).unwrap(), 5);
        let a = stay
            .transform_action(&JointAction(vec![Action::Stay, Action::Stay]))
            .unwrap();
        assert_eq!(a.0, vec![Action::Stay, Action::Stay]);
    }

    #[test]
    fn identity_and_involution_on_states() {
        let s = sample_state();
        let e = TransformPair::new(GroupElement::identity(4, 2), 5);
        assert_eq!(e.transform_state(&s).unwrap(), s);
        let r2 = TransformPair::new(GroupElement::rotation(2, 4, 2).unwrap(), 5);
        let twice = r2.transform_state(&r2.transform_state(&s).unwrap()).unwrap();
        assert_eq!(twice, s);
    }

    #[test]
    fn transform_rejects_out_of_grid() {
        let s = EnvState::new(vec![Cell::new(5, 0)], Targets::Prey(Cell::new(0, 0)), 0);
        let t = TransformPair::new(rot(1), 5);
        assert!(matches!(t.transform_state(&s), Err(Error::InvalidState(_))));
        let wrong_len = JointAction(vec![Action::Up, Action::Up]);
        assert!(matches!(t.transform_action(&wrong_len), Err(Error::InvalidAction(_))));
    }

    #[test]
    fn exhaustive_round_trip_and_homomorphism() {
        let group = Group::new(&GroupConfig::default(), 2).unwrap();
        assert_eq!(group.elements().len(), 8);
        let n = 3;
        let cells: Vec<Cell> = (0..3).flat_map(|x| (0..3).map(move |y| Cell::new(x, y))).collect();
        let mut states = Vec::new();
        for &a in &cells {
            for &b in &cells {
                states.push(EnvState::new(vec![a, b], Targets::Prey(cells[(a.x * 3 + b.y) as usize % 9]), 0));
            }
        }
        for ga in group.elements() {
            let ta = TransformPair::new(ga.clone(), n);
            let inv = ta.inverse();
            for gb in group.elements() {
                let tb = TransformPair::new(gb.clone(), n);
                let tab = TransformPair::new(compose(ga, gb).unwrap(), n);
                for s in &states {
                    let once = ta.transform_state(s).unwrap();
                    assert_eq!(&inv.transform_state(&once).unwrap(), s);
                    let seq = ta.transform_state(&tb.transform_state(s).unwrap()).unwrap();
                    assert_eq!(tab.transform_state(s).unwrap(), seq);
                }
                for idx in 0..25 {
                    let a = JointAction::from_index(idx, 2);
                    let once = ta.transform_action(&a).unwrap();
                    assert_eq!(inv.transform_action(&once).unwrap(), a);
                    let seq = ta.transform_action(&tb.transform_action(&a).unwrap()).unwrap();
                    assert_eq!(tab.transform_action(&a).unwrap(), seq);
                }
            }
        }
    }

    #[test]
    fn sampling_never_returns_identity() {
        let group = Group::new(&GroupConfig::default(), 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            assert!(!group.sample_non_identity(&mut rng).unwrap().is_identity());
        }
        let trivial = Group::new(&GroupConfig { rotations: 1, permutations: false }, 2).unwrap();
        assert!(trivial.is_trivial());
        assert!(trivial.sample_non_identity(&mut rng).is_none());
    }
}
