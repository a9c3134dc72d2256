//! Fixtures shared by the benchmarks.

use dgame_core::feedback::{omega, ReducedFeedback};
use dgame_core::forward::{solve_fbne, SolverOptions};
use dgame_core::game::{reduce_game, DescriptorGame, ReducedGame};
use dgame_core::lane_keeping as lk;
use dgame_core::linalg::{block_diag, inverse_checked, randn, Mat};
use dgame_core::pencil::Pencil;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn lane_game() -> ReducedGame {
    reduce_game(&lk::game().expect("lane keeping game"))
}

/// Reduced ground-truth equilibrium feedback of the lane keeping game.
pub fn lane_equilibrium(rg: &ReducedGame) -> ReducedFeedback {
    let set =
        solve_fbne(rg, &lk::ground_truth(), &SolverOptions::default()).expect("forward solve");
    set.solutions[0].f_bar.clone()
}

pub fn lane_printed(rg: &ReducedGame) -> ReducedFeedback {
    omega(rg, &lk::printed_feedback()).expect("printed feedback is admissible")
}

/// Index-1 pencil of size `n` with `r` dynamic states, assembled from a
/// random split `E = Y⁻ᵀdiag(I,0)X⁻¹`, `A = Y⁻ᵀdiag(J,I)X⁻¹`.
pub fn random_game(n: usize, r: usize, dims: &[usize], seed: u64) -> DescriptorGame {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let x = randn(&mut rng, n, n) + Mat::identity(n, n) * 2.0;
        let y = randn(&mut rng, n, n) + Mat::identity(n, n) * 2.0;
        let (Ok(x_inv), Ok(y_inv)) = (inverse_checked(&x, "X"), inverse_checked(&y, "Y")) else {
            continue;
        };
        let mut e_form = Mat::zeros(n, n);
        e_form.view_mut((0, 0), (r, r)).fill_with_identity();
        let a_form = block_diag(&[randn(&mut rng, r, r) * 0.8, Mat::identity(n - r, n - r)]);
        let y_inv_t = y_inv.transpose();
        let e = &y_inv_t * e_form * &x_inv;
        let a = &y_inv_t * a_form * &x_inv;
        let b = dims.iter().map(|&m| randn(&mut rng, n, m)).collect();
        if let Ok(g) = DescriptorGame::new(e, a, b) {
            return g;
        }
    }
}

pub fn random_pencil(n: usize, r: usize, seed: u64) -> Pencil {
    let g = random_game(n, r, &[1], seed);
    Pencil::new(g.e().clone(), g.a().clone()).expect("square pencil")
}
