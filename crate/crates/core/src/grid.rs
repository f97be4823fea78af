//! Grid-world game instances.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{CouplingForm, SingleControllerGame};
use crate::random::{seeded_rng, streams, uniform_matrix};

/// Actions in order.
pub const ACTIONS: [&str; 4] = ["left", "right", "up", "down"];
pub const NUM_ACTIONS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub rows: usize,
    pub cols: usize,
    /// Probability of landing on the intended neighbour.
    pub stick_prob: f64,
    pub seed: u64,
}

impl GridSpec {
    pub fn new(rows: usize, cols: usize, stick_prob: f64, seed: u64) -> Result<Self> {
        let spec = Self { rows, cols, stick_prob, seed };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 || self.rows * self.cols < 2 {
            return Err(Error::param("grid", format!("{}x{} needs at least two cells", self.rows, self.cols)));
        }
        if !(self.stick_prob > 0.0 && self.stick_prob <= 1.0) {
            return Err(Error::param("stick_prob", format!("{} is not in (0, 1]", self.stick_prob)));
        }
        Ok(())
    }

    pub fn num_states(&self) -> usize {
        self.rows * self.cols
    }

    pub fn state(&self, row: usize, col: usize) -> usize {
        row * self.cols + col
    }

    /// Target of `action` from `state`, or `None` if it leaves the grid.
    pub fn target(&self, state: usize, action: usize) -> Option<usize> {
        let (r, c) = (state / self.cols, state % self.cols);
        match action {
            0 if c > 0 => Some(state - 1),
            1 if c + 1 < self.cols => Some(state + 1),
            2 if r > 0 => Some(state - self.cols),
            3 if r + 1 < self.rows => Some(state + self.cols),
            _ => None,
        }
    }

    /// 4-connected neighbours, in action order.
    pub fn neighbours(&self, state: usize) -> Vec<usize> {
        (0..NUM_ACTIONS).filter_map(|a| self.target(state, a)).collect()
    }
}

/// `S x (4S)` kernel. A feasible move reaches its target with `stick_prob`
/// and spreads the rest evenly over the other neighbours; an infeasible move
/// goes to a uniformly random neighbour.
pub fn build_grid_kernel(spec: &GridSpec) -> Result<DMatrix<f64>> {
    spec.validate()?;
    let n = spec.num_states();
    let mut kernel = DMatrix::zeros(n, n * NUM_ACTIONS);
    for s in 0..n {
        let nb = spec.neighbours(s);
        let k = nb.len() as f64;
        for a in 0..NUM_ACTIONS {
            let col = s * NUM_ACTIONS + a;
            match spec.target(s, a) {
                Some(t) if nb.len() == 1 => kernel[(t, col)] = 1.0,
                Some(t) => {
                    let rest = (1.0 - spec.stick_prob) / (k - 1.0);
                    for &m in &nb {
                        kernel[(m, col)] = if m == t { spec.stick_prob } else { rest };
                    }
                }
                None => {
                    for &m in &nb {
                        kernel[(m, col)] = 1.0 / k;
                    }
                }
            }
        }
    }
    Ok(kernel)
}

/// Base cost `C` then coupling `J`, both `S x 4` uniform on `[0, 1)`.
pub fn sample_cost_matrices(spec: &GridSpec) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    spec.validate()?;
    let mut rng = seeded_rng(spec.seed, streams::COSTS);
    let c = uniform_matrix(&mut rng, spec.num_states(), NUM_ACTIONS);
    let j = uniform_matrix(&mut rng, spec.num_states(), NUM_ACTIONS);
    Ok((c, j))
}

pub fn grid_game(spec: &GridSpec, form: CouplingForm, discount_p1: f64, discount_p2: f64) -> Result<SingleControllerGame> {
    let kernel = build_grid_kernel(spec)?;
    let (c, j) = sample_cost_matrices(spec)?;
    SingleControllerGame::coupled(kernel, &c, &j, form, discount_p1, discount_p2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{validate_mdp, Mdp};

    fn spec(rows: usize, cols: usize) -> GridSpec {
        GridSpec::new(rows, cols, 0.7, 1).unwrap()
    }

    #[test]
    fn corner_feasible_move() {
        let s = spec(3, 3);
        let k = build_grid_kernel(&s).unwrap();
        // state 0, right -> 1 with 0.7, down -> 3 gets 0.3
        let col = 1;
        assert!((k[(1, col)] - 0.7).abs() < 1e-15);
        assert!((k[(3, col)] - 0.3).abs() < 1e-15);
        assert!((k.column(col).sum() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn corner_infeasible_move() {
        let s = spec(3, 3);
        let k = build_grid_kernel(&s).unwrap();
        for a in [0, 2] {
            assert_eq!(k[(1, a)], 0.5);
            assert_eq!(k[(3, a)], 0.5);
            assert_eq!(k.column(a).sum(), 1.0);
        }
    }

    #[test]
    fn center_state() {
        let s = spec(3, 3);
        let k = build_grid_kernel(&s).unwrap();
        assert_eq!(s.neighbours(4), vec![3, 5, 1, 7]);
        let up = 4 * NUM_ACTIONS + 2;
        assert!((k[(1, up)] - 0.7).abs() < 1e-15);
        for m in [3, 5, 7] {
            assert!((k[(m, up)] - 0.1).abs() < 1e-15);
        }
        assert_eq!(k[(4, up)], 0.0);
    }

    #[test]
    fn kernels_are_stochastic() {
        for (r, c) in [(1, 2), (1, 5), (2, 2), (3, 3), (4, 7)] {
            let s = GridSpec::new(r, c, 0.85, 0).unwrap();
            let mdp = Mdp::from_parts(build_grid_kernel(&s).unwrap(), DMatrix::zeros(r * c, 4), 0.9).unwrap();
            assert!(validate_mdp(&mdp).is_valid(), "{r}x{c}");
        }
    }

    #[test]
    fn single_neighbour_gets_all_mass() {
        let s = GridSpec::new(1, 3, 0.7, 0).unwrap();
        let k = build_grid_kernel(&s).unwrap();
        assert_eq!(k[(1, 1)], 1.0);
        assert_eq!(k[(1, 0)], 1.0);
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(GridSpec::new(1, 1, 0.7, 0).is_err());
        assert!(GridSpec::new(0, 4, 0.7, 0).is_err());
        assert!(GridSpec::new(2, 2, 0.0, 0).is_err());
        assert!(GridSpec::new(2, 2, 1.2, 0).is_err());
        assert!(GridSpec::new(2, 2, 1.0, 0).is_ok());
    }

    #[test]
    fn costs_are_uniform_and_reproducible() {
        let s = GridSpec::new(50, 50, 0.7, 42).unwrap();
        let (c, j) = sample_cost_matrices(&s).unwrap();
        assert_eq!(c.len(), 10_000);
        let mean = c.mean();
        assert!((0.48..=0.52).contains(&mean), "{mean}");
        assert!(c.iter().chain(j.iter()).all(|x| (0.0..1.0).contains(x)));
        assert_eq!(sample_cost_matrices(&s).unwrap(), (c.clone(), j));
        let other = sample_cost_matrices(&GridSpec { seed: 43, ..s }).unwrap().0;
        assert_ne!(other, c);
    }

    #[test]
    fn grid_game_builds() {
        let g = grid_game(&spec(3, 3), CouplingForm::Matched, 0.7, 0.5).unwrap();
        assert_eq!((g.num_states(), g.actions_p1(), g.actions_p2()), (9, 4, 4));
    }
}
