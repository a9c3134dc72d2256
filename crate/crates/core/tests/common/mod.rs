#![allow(dead_code)]

use dgame_core::feedback::{fit_feedback, omega, simulate, Loop, ReducedFeedback};
use dgame_core::forward::{solve_fbne, SolverOptions};
use dgame_core::game::{reduce_game, CostParameters, DescriptorGame, ReducedGame};
use dgame_core::lane_keeping as lk;
use dgame_core::linalg::{self, block_diag, inverse_checked, randn, Mat, SymMat, Vector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const X1_OBS: [f64; 2] = [1.0, 0.5];

pub fn lane_game() -> ReducedGame {
    reduce_game(&lk::game().unwrap())
}

/// The observed profile as in the identification workflow: trajectories of
/// the ground-truth equilibrium, then a least-squares fit.
pub fn observed(rg: &ReducedGame) -> (dgame_core::FeedbackProfile, ReducedFeedback) {
    let set = solve_fbne(rg, &lk::ground_truth(), &SolverOptions::default()).unwrap();
    assert_eq!(set.solutions.len(), 1);
    let traj = simulate(
        rg,
        Loop::Reduced(&set.solutions[0].f_bar),
        &Vector::from_row_slice(&X1_OBS),
        5.0,
        0.01,
    )
    .unwrap();
    let fit = fit_feedback(&traj, &rg.input_dims()).unwrap();
    let f_bar = omega(rg, &fit.profile).unwrap();
    (fit.profile, f_bar)
}

fn well_conditioned(rng: &mut ChaCha8Rng, n: usize) -> Mat {
    loop {
        let m = randn(rng, n, n) + Mat::identity(n, n) * 1.5;
        let s = linalg::singular_values(&m);
        if s[n - 1] > 0.3 && s[0] / s[n - 1] < 30.0 {
            return m;
        }
    }
}

/// Random index-1 game built from its split: `E = Y⁻ᵀdiag(I,0)X⁻¹`,
/// `A = Y⁻ᵀdiag(J,I)X⁻¹`.
pub fn random_game(rng: &mut ChaCha8Rng, n: usize, r: usize, dims: &[usize]) -> DescriptorGame {
    loop {
        let x = well_conditioned(rng, n);
        let y = well_conditioned(rng, n);
        let j = randn(rng, r, r) * 0.8;
        let mut e_form = Mat::zeros(n, n);
        e_form.view_mut((0, 0), (r, r)).fill_with_identity();
        let a_form = block_diag(&[j, Mat::identity(n - r, n - r)]);
        let x_inv = inverse_checked(&x, "X").unwrap();
        let y_inv_t = inverse_checked(&y, "Y").unwrap().transpose();
        let e = &y_inv_t * e_form * &x_inv;
        let a = &y_inv_t * a_form * &x_inv;
        let b = dims.iter().map(|&m| randn(rng, n, m)).collect();
        if let Ok(g) = DescriptorGame::new(e, a, b) {
            return g;
        }
    }
}

pub fn random_dims(rng: &mut ChaCha8Rng) -> (usize, usize, Vec<usize>) {
    let n = rng.gen_range(2..=6);
    let r = rng.gen_range(1..=n);
    let np = rng.gen_range(1..=3);
    let dims = (0..np).map(|_| rng.gen_range(1..=2)).collect();
    (n, r, dims)
}

fn random_psd(rng: &mut ChaCha8Rng, n: usize, shift: f64) -> SymMat {
    let l = randn(rng, n, n);
    SymMat::symmetrize(&(&l * l.transpose() / n as f64 + Mat::identity(n, n) * shift))
}

/// Positive semidefinite state weights, positive definite own-input weights.
pub fn random_costs(rng: &mut ChaCha8Rng, n: usize, dims: &[usize]) -> CostParameters {
    let np = dims.len();
    CostParameters::new(
        (0..np).map(|_| random_psd(rng, n, 0.0)).collect(),
        (0..np)
            .map(|i| {
                (0..np)
                    .map(|j| random_psd(rng, dims[j], if i == j { 0.5 } else { 0.0 }))
                    .collect()
            })
            .collect(),
    )
}

/// Roots of `det(λE − A)` for a pencil of degree two, from three samples of
/// the determinant.
pub fn quadratic_pencil_roots(e: &Mat, a: &Mat) -> [num_complex::Complex64; 2] {
    let p = |l: f64| (e * l - a).determinant();
    let (p0, p1, pm) = (p(0.0), p(1.0), p(-1.0));
    let c2 = 0.5 * (p1 + pm) - p0;
    let c1 = 0.5 * (p1 - pm);
    let disc = num_complex::Complex64::new(c1 * c1 - 4.0 * c2 * p0, 0.0).sqrt();
    [(-c1 - disc) / (2.0 * c2), (-c1 + disc) / (2.0 * c2)]
}
