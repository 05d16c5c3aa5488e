//! Symmetry-breaking noise: a wind field whose strength grows across the grid.
//!
//! At level `k` an agent in cell `(x, y)` is blown to the neighbouring cell
//! in a wind direction with total probability
//! `0.4 · k/8 · (1/2 + (x + y) / (4 (N - 1)))`, replacing the displacement of
//! its own action. Both the position dependence and the fixed direction
//! break the rotation symmetry; level 0 has no wind at all.

use serde::{Deserialize, Serialize};

use super::state::{Action, Cell};

pub const MAX_LEVEL: u32 = 8;
/// Largest per-cell slip probability, reached at level 8 in the far corner.
pub const MAX_SLIP: f64 = 0.4;

/// Wind directions in slip-map order.
pub const WIND_DIRECTIONS: [Action; 4] = [Action::Up, Action::Right, Action::Down, Action::Left];
/// Share of the slip mass per direction in [`WIND_DIRECTIONS`] order.
const WIND_SPLIT: [f64; 4] = [0.0, 1.0, 0.0, 0.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseField {
    grid_size: usize,
    intensity: f64,
    /// Row-major (`y * N + x`) per-cell slip probabilities, one per wind direction.
    slip_map: Vec<[f64; 4]>,
}

impl NoiseField {
    pub fn new(grid_size: usize, level: u32) -> Self {
        let intensity = level.min(MAX_LEVEL) as f64 / MAX_LEVEL as f64;
        let span = 2.0 * (grid_size.max(2) - 1) as f64;
        let mut slip_map = Vec::with_capacity(grid_size * grid_size);
        for y in 0..grid_size {
            for x in 0..grid_size {
                let gradient = 0.5 + 0.5 * (x + y) as f64 / span;
                let total = MAX_SLIP * intensity * gradient;
                slip_map.push(WIND_SPLIT.map(|w| w * total));
            }
        }
        NoiseField {
            grid_size,
            intensity,
            slip_map,
        }
    }

    pub fn intensity(&self) -> f64 {
        self.intensity
    }

    pub fn is_silent(&self) -> bool {
        self.intensity == 0.0
    }

    /// Slip probabilities at `cell`, in [`WIND_DIRECTIONS`] order.
    pub fn slip_at(&self, cell: Cell) -> [f64; 4] {
        self.slip_map[cell.y as usize * self.grid_size + cell.x as usize]
    }

    pub fn slip_map(&self) -> &[[f64; 4]] {
        &self.slip_map
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_intensity_is_silent() {
        let f = NoiseField::new(5, 0);
        assert!(f.is_silent());
        assert!(f.slip_map().iter().flatten().all(|&p| p == 0.0));
    }

    #[test]
    fn per_cell_mass_is_a_sub_probability() {
        for level in 0..=MAX_LEVEL {
            let f = NoiseField::new(6, level);
            for probs in f.slip_map() {
                let total: f64 = probs.iter().sum();
                assert!(probs.iter().all(|&p| p >= 0.0));
                assert!(total <= MAX_SLIP + 1e-15);
            }
        }
        let f = NoiseField::new(5, MAX_LEVEL);
        let corner: f64 = f.slip_at(Cell::new(4, 4)).iter().sum();
        assert!((corner - MAX_SLIP).abs() < 1e-15);
    }

    #[test]
    fn strength_is_linear_in_level() {
        let lo = NoiseField::new(5, 2);
        let hi = NoiseField::new(5, 4);
        for (a, b) in lo.slip_map().iter().zip(hi.slip_map()) {
            for d in 0..4 {
                assert!((2.0 * a[d] - b[d]).abs() < 1e-15);
            }
        }
    }
}
