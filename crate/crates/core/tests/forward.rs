mod common;

use dgame_core::forward::{
    care_residual, equilibrium_cost, solution_scale, solve_fbne, verify_nash_local, SolverOptions,
};
use dgame_core::game::{cost_blocks, reduce_game, ReducedCosts};
use dgame_core::lane_keeping as lk;
use dgame_core::linalg::{self, inverse_checked, seeded_rng, solve_are, Mat, Vector};
use num_complex::Complex64;

#[test]
fn lane_keeping_cost_sets_have_the_expected_equilibria() {
    let rg = common::lane_game();
    let opts = SolverOptions::default();
    for (costs, expected) in [
        (lk::ground_truth(), 1),
        (lk::identified(), 2),
        (lk::misspecified(), 2),
    ] {
        let set = solve_fbne(&rg, &costs, &opts).unwrap();
        assert_eq!(set.solutions.len(), expected);
        for (k, sol) in set.solutions.iter().enumerate() {
            let bound = 1e-8 * solution_scale(&rg, &costs, &sol.p);
            assert!(
                sol.residuals.max() <= bound,
                "residual {:.2e}",
                sol.residuals.max()
            );
            assert!(linalg::is_stable(&sol.spectrum));
            let check = verify_nash_local(&rg, &costs, sol, 200, 0.5, k as u64).unwrap();
            assert!(check.passed(), "{:?}", check.violation);
        }
    }
}

#[test]
fn ground_truth_equilibrium_spectrum() {
    let rg = common::lane_game();
    let set = solve_fbne(&rg, &lk::ground_truth(), &SolverOptions::default()).unwrap();
    let expected = [
        Complex64::new(-4.273, 4.374),
        Complex64::new(-4.273, -4.374),
    ];
    assert!(linalg::spectra_match(
        &set.solutions[0].spectrum,
        &expected,
        2e-3
    ));
}

#[test]
fn solution_sets_do_not_depend_on_the_seed() {
    let rg = common::lane_game();
    let reference = solve_fbne(&rg, &lk::identified(), &SolverOptions::default()).unwrap();
    for seed in [1, 7, 123] {
        let opts = SolverOptions {
            seed,
            ..Default::default()
        };
        let set = solve_fbne(&rg, &lk::identified(), &opts).unwrap();
        assert_eq!(set.solutions.len(), reference.solutions.len());
        for (a, b) in set.solutions.iter().zip(&reference.solutions) {
            assert!((&a.f_bar.f_bar - &b.f_bar.f_bar).amax() < 1e-6);
        }
    }
}

#[test]
fn repeated_solves_are_identical() {
    let rg = common::lane_game();
    let opts = SolverOptions {
        n_starts: 16,
        ..Default::default()
    };
    let a = solve_fbne(&rg, &lk::misspecified(), &opts).unwrap();
    let b = solve_fbne(&rg, &lk::misspecified(), &opts).unwrap();
    let key = |s: &dgame_core::forward::FbneSet| {
        s.solutions
            .iter()
            .map(|x| x.f_bar.f_bar.clone())
            .collect::<Vec<_>>()
    };
    assert_eq!(key(&a), key(&b));
}

#[test]
fn single_player_descriptor_games_match_the_hamiltonian_oracle() {
    let mut rng = seeded_rng(3);
    let mut solved = 0;
    for _ in 0..20 {
        let (n, r, _) = common::random_dims(&mut rng);
        let g = common::random_game(&mut rng, n, r, &[1]);
        let rg = reduce_game(&g);
        let c = common::random_costs(&mut rng, n, &[1]);
        let blocks = cost_blocks(&rg, &c, 0).unwrap();
        let (q, v, rr) = (&blocks.q_bar, &blocks.v_bar[0], &blocks.r_bar[0]);
        let r_inv = inverse_checked(rr, "R̄").unwrap();
        let b = &rg.b1_bar[0];
        let a_mod = &rg.j - b * &r_inv * v.transpose();
        let q_mod = q - v * &r_inv * v.transpose();
        let mut h = Mat::zeros(2 * r, 2 * r);
        h.view_mut((0, 0), (r, r)).copy_from(&a_mod);
        h.view_mut((0, r), (r, r))
            .copy_from(&(-(b * &r_inv * b.transpose())));
        h.view_mut((r, 0), (r, r)).copy_from(&(-&q_mod));
        h.view_mut((r, r), (r, r)).copy_from(&(-a_mod.transpose()));
        let ham = linalg::eigvals(&h).unwrap();
        if ham.iter().any(|z| z.re.abs() < 1e-6) {
            continue;
        }
        let stable: Vec<Complex64> = ham.into_iter().filter(|z| z.re < 0.0).collect();

        let set = solve_fbne(
            &rg,
            &c,
            &SolverOptions {
                n_starts: 8,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(
            set.solutions.len(),
            1,
            "LQR has a unique stabilizing solution"
        );
        let sol = &set.solutions[0];
        let scale = 1.0 + stable.iter().map(|z| z.norm()).fold(0.0, f64::max);
        assert!(linalg::spectra_match(&sol.spectrum, &stable, 1e-6 * scale));
        let p = solve_are(&a_mod, b, &q_mod, rr).unwrap();
        let tol = 1e-6 * (1.0 + linalg::max_abs(p.as_mat()));
        assert!((p.as_mat() - sol.p[0].as_mat()).amax() < tol);
        solved += 1;
    }
    assert!(solved >= 15);
}

#[test]
fn residuals_vanish_at_solutions_and_match_a_hand_assembly() {
    let rg = common::lane_game();
    let c = lk::ground_truth();
    let costs = ReducedCosts::new(&rg, &c).unwrap();
    let set = solve_fbne(&rg, &c, &SolverOptions::default()).unwrap();
    let sol = &set.solutions[0];
    let p: Vec<Mat> = sol.p.iter().map(|p| p.as_mat().clone()).collect();
    assert!(
        care_residual(&rg, &costs, &sol.f_bar.f_bar, &p)
            .unwrap()
            .max()
            <= 1e-8
    );

    let mut rng = seeded_rng(9);
    let f = linalg::randn(&mut rng, 2, 2);
    let p: Vec<Mat> = (0..2)
        .map(|_| linalg::SymMat::symmetrize(&linalg::randn(&mut rng, 2, 2)).into_inner())
        .collect();
    let res = care_residual(&rg, &costs, &f, &p).unwrap();
    let a_cl = rg.closed_loop(&f);
    let t = linalg::vstack(&[Mat::identity(2, 2), f.clone()]);
    for i in 0..2 {
        let hand = a_cl.transpose() * &p[i] + &p[i] * &a_cl + t.transpose() * &costs.m[i] * &t;
        assert!((res.lyapunov[i] - linalg::max_abs(&hand)).abs() < 1e-12 * (1.0 + res.lyapunov[i]));
    }
}

#[test]
fn equilibrium_cost_is_zero_at_the_origin() {
    let rg = common::lane_game();
    let set = solve_fbne(&rg, &lk::ground_truth(), &SolverOptions::default()).unwrap();
    assert_eq!(
        equilibrium_cost(&set.solutions[0], 0, &Vector::zeros(2)),
        0.0
    );
}
