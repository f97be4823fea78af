//! Seeded instance generation.
//!
//! Every random quantity in the crate is drawn from a [`ChaCha8Rng`] obtained
//! through [`seeded_rng`], so a `(seed, stream)` pair fully determines a draw.
//! Matrices are always filled in row-major order.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::mdp::Mdp;

/// Name and version of the generator, recorded in artifact headers.
pub const PRNG_NAME: &str = "rand_chacha-0.3/ChaCha8Rng(seed_from_u64, set_stream)";

/// Independent sub-streams carved out of one user seed.
pub mod streams {
    pub const COSTS: u64 = 0;
    pub const P1_INIT: u64 = 1;
    pub const P2_INIT: u64 = 2;
    pub const OPPONENT: u64 = 3;
    pub const COST_SAMPLER: u64 = 4;
}

pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// `rows x cols` matrix with i.i.d. entries uniform on `[0, 1)`.
pub fn uniform_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> DMatrix<f64> {
    let data: Vec<f64> = (0..rows * cols).map(|_| rng.gen::<f64>()).collect();
    DMatrix::from_row_slice(rows, cols, &data)
}

pub fn uniform_vector<R: Rng + ?Sized>(rng: &mut R, n: usize) -> DVector<f64> {
    DVector::from_iterator(n, (0..n).map(|_| rng.gen::<f64>()))
}

/// Column-stochastic `S x (S*A)` kernel. Roughly a third of the entries are
/// zeroed so that instances are not all fully mixing.
pub fn random_kernel<R: Rng + ?Sized>(rng: &mut R, num_states: usize, num_actions: usize) -> DMatrix<f64> {
    let cols = num_states * num_actions;
    let mut kernel = DMatrix::zeros(num_states, cols);
    for c in 0..cols {
        let anchor = rng.gen_range(0..num_states);
        for s in 0..num_states {
            let w: f64 = rng.gen();
            kernel[(s, c)] = if s == anchor || rng.gen_bool(0.66) { w + 1e-3 } else { 0.0 };
        }
        let sum: f64 = kernel.column(c).sum();
        kernel.column_mut(c).unscale_mut(sum);
    }
    kernel
}

/// Random valid MDP with costs uniform on `[0, 1)`.
pub fn random_mdp<R: Rng + ?Sized>(rng: &mut R, num_states: usize, num_actions: usize, discount: f64) -> Mdp {
    let kernel = random_kernel(rng, num_states, num_actions);
    let cost = uniform_matrix(rng, num_states, num_actions);
    Mdp::new(kernel, cost, discount).expect("generated kernel is stochastic")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::validate_mdp;

    #[test]
    fn streams_are_independent_and_reproducible() {
        let a: Vec<f64> = (0..4).map(|_| seeded_rng(7, 0).gen()).collect();
        let b: f64 = seeded_rng(7, 1).gen();
        assert!(a.windows(2).all(|w| w[0] == w[1]));
        assert_ne!(a[0], b);
    }

    #[test]
    fn random_mdps_validate() {
        let mut rng = seeded_rng(3, 0);
        for s in 1..6 {
            for a in 1..4 {
                let mdp = random_mdp(&mut rng, s, a, 0.9);
                assert!(validate_mdp(&mdp).is_valid());
            }
        }
    }
}
