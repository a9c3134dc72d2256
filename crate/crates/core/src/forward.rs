//! Stabilizing solutions of the coupled Riccati equations of the reduced game
//! and the equilibrium feedback set they induce.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::feedback::ReducedFeedback;
use crate::game::{CostParameters, ReducedCosts, ReducedGame};
use crate::linalg::{
    self, eigvals, is_stable, max_abs, max_real_part, seeded_rng, solve_are, CheckedLu,
    LyapunovOperator, Mat, SymMat, Vector,
};

/// Options of [`solve_fbne`].
#[derive(Debug, Clone)]
pub struct SolverOptions {
    /// Number of seeded random starts added to the per-player LQR starts.
    pub n_starts: usize,
    pub seed: u64,
    /// Relative convergence tolerance, multiplied by [`tolerance_scale`] and
    /// by `1 + maxᵢ‖Pᵢ‖_max` of the iterate.
    pub tol: f64,
    pub max_policy_iterations: usize,
    pub max_newton_iterations: usize,
    /// Relative distance under which two solutions are merged.
    pub dedup_tol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            n_starts: 64,
            seed: 0,
            tol: 1e-9,
            max_policy_iterations: 300,
            max_newton_iterations: 60,
            dedup_tol: 1e-5,
        }
    }
}

/// `1 + ‖c‖_max + ‖rg‖_max`.
pub fn tolerance_scale(rg: &ReducedGame, c: &CostParameters) -> f64 {
    1.0 + c.max_abs() + rg.max_abs()
}

/// `1 + maxᵢ‖Pᵢ‖_max`. Both residuals are linear in `P`, so their rounding
/// floor grows with it on nearly uncontrollable games.
fn p_scale(p: &[Mat]) -> f64 {
    1.0 + p.iter().map(max_abs).fold(0.0, f64::max)
}

/// [`tolerance_scale`] times the magnitude of the value matrices.
pub fn solution_scale(rg: &ReducedGame, c: &CostParameters, p: &[SymMat]) -> f64 {
    let p: Vec<Mat> = p.iter().map(|p| p.as_mat().clone()).collect();
    tolerance_scale(rg, c) * p_scale(&p)
}

/// Max-norms of the Riccati residual of each player and of the stationarity
/// residual `ḠF̄ + V̄ᵀ + B̄_dᵀP̄`.
#[derive(Debug, Clone, PartialEq)]
pub struct CareResiduals {
    pub lyapunov: Vec<f64>,
    pub stationarity: f64,
}

impl CareResiduals {
    pub fn max(&self) -> f64 {
        self.lyapunov
            .iter()
            .copied()
            .fold(self.stationarity, f64::max)
    }
}

/// `[I; F̄]ᵀ Mᵢ [I; F̄]`.
fn closed_loop_weight(m_i: &Mat, f_bar: &Mat) -> Mat {
    let r = f_bar.ncols();
    let t = linalg::vstack(&[Mat::identity(r, r), f_bar.clone()]);
    SymMat::symmetrize(&(t.transpose() * m_i * &t)).into_inner()
}

/// Matrix residual of the stationarity equation, `m × r`.
fn stationarity_matrix(rg: &ReducedGame, costs: &ReducedCosts, f_bar: &Mat, p: &[Mat]) -> Mat {
    let rows: Vec<Mat> = (0..rg.n_players())
        .map(|i| rg.b1_bar[i].transpose() * &p[i])
        .collect();
    &costs.g_bar * f_bar + &costs.v_bar_t + linalg::vstack(&rows)
}

pub fn care_residual(
    rg: &ReducedGame,
    costs: &ReducedCosts,
    f_bar: &Mat,
    p: &[Mat],
) -> Result<CareResiduals> {
    let (r, m, np) = (rg.r(), rg.m(), rg.n_players());
    if f_bar.shape() != (m, r) || p.len() != np || p.iter().any(|p| p.shape() != (r, r)) {
        return Err(Error::Dimension(
            "care_residual: expected F̄ m×r and N matrices r×r".into(),
        ));
    }
    let a_cl = rg.closed_loop(f_bar);
    let lyapunov = (0..np)
        .map(|i| {
            max_abs(
                &(a_cl.transpose() * &p[i]
                    + &p[i] * &a_cl
                    + closed_loop_weight(&costs.m[i], f_bar)),
            )
        })
        .collect();
    Ok(CareResiduals {
        lyapunov,
        stationarity: max_abs(&stationarity_matrix(rg, costs, f_bar, p)),
    })
}

/// One stabilizing solution of the coupled Riccati equations.
#[derive(Debug, Clone)]
pub struct EquilibriumSolution {
    pub f_bar: ReducedFeedback,
    pub p: Vec<SymMat>,
    pub a_cl: Mat,
    pub spectrum: Vec<Complex64>,
    pub residuals: CareResiduals,
    pub iterations: usize,
}

/// Solutions found by [`solve_fbne`] with per-start diagnostics.
#[derive(Debug, Clone)]
pub struct FbneSet {
    pub solutions: Vec<EquilibriumSolution>,
    pub starts: usize,
    pub converged_runs: usize,
    pub diagnostics: Vec<String>,
    /// `opts.tol · tolerance_scale`; each solution's residuals are below this
    /// times `1 + maxᵢ‖Pᵢ‖_max`.
    pub tol: f64,
}

/// `P(F̄)` from the Lyapunov equations of a stable loop, with the factored
/// operator kept for Jacobian solves.
struct Evaluation {
    a_cl: Mat,
    lyap: LyapunovOperator,
    p: Vec<Mat>,
    g: Mat,
    res: f64,
    /// [`p_scale`] of this iterate.
    scale: f64,
}

fn evaluate(rg: &ReducedGame, costs: &ReducedCosts, f_bar: &Mat) -> Option<Evaluation> {
    let a_cl = rg.closed_loop(f_bar);
    if !linalg::all_finite(&a_cl) || !is_stable(&eigvals(&a_cl).ok()?) {
        return None;
    }
    let lyap = LyapunovOperator::new(&a_cl).ok()?;
    let p: Vec<Mat> = costs
        .m
        .iter()
        .map(|m_i| lyap.solve_sym(&closed_loop_weight(m_i, f_bar)).into_inner())
        .collect();
    let g = stationarity_matrix(rg, costs, f_bar, &p);
    let res = max_abs(&g);
    let scale = p_scale(&p);
    Some(Evaluation {
        a_cl,
        lyap,
        p,
        g,
        res,
        scale,
    })
}

/// Jacobian of `vec(G(F̄))` with respect to `vec(F̄)`.
fn jacobian(rg: &ReducedGame, costs: &ReducedCosts, f_bar: &Mat, ev: &Evaluation) -> Mat {
    let (m, r, np) = (rg.m(), rg.r(), rg.n_players());
    let b1 = rg.b1();
    let t = linalg::vstack(&[Mat::identity(r, r), f_bar.clone()]);
    // rows of Mᵢ belonging to u, applied to [I; F̄]
    let lower: Vec<Mat> = costs.m.iter().map(|m_i| m_i.rows(r, m) * &t).collect();
    let mut jac = Mat::zeros(m * r, m * r);
    for col in 0..m * r {
        let mut e = Mat::zeros(m, r);
        e[(col % m, col / m)] = 1.0;
        let da = &b1 * &e;
        let rows: Vec<Mat> = (0..np)
            .map(|i| {
                let cross = e.transpose() * &lower[i];
                let rhs = da.transpose() * &ev.p[i] + &ev.p[i] * &da + &cross + cross.transpose();
                rg.b1_bar[i].transpose() * ev.lyap.solve(&rhs)
            })
            .collect();
        let dg = &costs.g_bar * &e + linalg::vstack(&rows);
        jac.set_column(col, &Vector::from_column_slice(dg.as_slice()));
    }
    jac
}

/// Newton on `G(F̄) = 0` with backtracking that keeps the loop stable.
fn newton(
    rg: &ReducedGame,
    costs: &ReducedCosts,
    f0: Mat,
    tol: f64,
    max_iter: usize,
) -> Option<(Mat, usize)> {
    // polish well below the acceptance tolerance so near-solutions separate
    let target = 1e-4 * tol;
    let mut f = f0;
    let mut ev = evaluate(rg, costs, &f)?;
    for it in 0..max_iter {
        if ev.res <= target * ev.scale {
            return Some((f, it));
        }
        let Ok(lu) = CheckedLu::new(&jacobian(rg, costs, &f, &ev), "Newton Jacobian") else {
            return (ev.res <= tol * ev.scale).then_some((f, it));
        };
        let rhs = Mat::from_column_slice(f.len(), 1, ev.g.as_slice());
        let step = Mat::from_column_slice(f.nrows(), f.ncols(), lu.solve(&rhs).as_slice());
        let mut alpha = 1.0;
        loop {
            let cand = &f - &step * alpha;
            if let Some(next) = evaluate(rg, costs, &cand) {
                if next.res < (1.0 - 1e-4 * alpha) * ev.res || next.res <= target * next.scale {
                    f = cand;
                    ev = next;
                    break;
                }
            }
            alpha *= 0.5;
            if alpha < 1e-6 {
                return (ev.res <= tol * ev.scale).then_some((f, it));
            }
        }
    }
    (ev.res <= tol * ev.scale).then_some((f, max_iter))
}

/// Damped Lyapunov (policy) iteration `F̄ ← F̄ + α(−Ḡ⁻¹(V̄ᵀ + B̄_dᵀP) − F̄)`.
fn policy_iteration(
    rg: &ReducedGame,
    costs: &ReducedCosts,
    g_lu: &CheckedLu,
    f0: Mat,
    tol: f64,
    max_iter: usize,
) -> Option<(Mat, usize)> {
    const ALPHA_FLOOR: f64 = 1.0 / 16.0;
    let mut f = f0;
    let mut ev = evaluate(rg, costs, &f)?;
    let mut alpha: f64 = 1.0;
    for it in 0..max_iter {
        if ev.res <= tol * ev.scale {
            return Some((f, it));
        }
        let rows: Vec<Mat> = (0..rg.n_players())
            .map(|i| rg.b1_bar[i].transpose() * &ev.p[i])
            .collect();
        let target = -g_lu.solve(&(&costs.v_bar_t + linalg::vstack(&rows)));
        loop {
            let cand = &f + (&target - &f) * alpha;
            match evaluate(rg, costs, &cand) {
                Some(next) if next.res <= ev.res || alpha <= ALPHA_FLOOR => {
                    f = cand;
                    ev = next;
                    alpha = (alpha * 2.0).min(1.0);
                    break;
                }
                None if alpha <= ALPHA_FLOOR => return Some((f, it)),
                _ => alpha = (alpha * 0.5).max(ALPHA_FLOOR),
            }
        }
    }
    Some((f, max_iter))
}

fn starts(rg: &ReducedGame, costs: &ReducedCosts, opts: &SolverOptions) -> Vec<Mat> {
    let (m, r, np) = (rg.m(), rg.r(), rg.n_players());
    let mut out = Vec::new();
    // each player alone, from its own LQR problem with the cross term removed
    let mut joint = Mat::zeros(m, r);
    for i in 0..np {
        let blk = &costs.blocks[i];
        let Ok(r_inv) = linalg::inverse_checked(&blk.r_bar[i], "R̄ii") else {
            continue;
        };
        let v = &blk.v_bar[i];
        let a = &rg.j - &rg.b1_bar[i] * &r_inv * v.transpose();
        let q = SymMat::symmetrize(&(&blk.q_bar - v * &r_inv * v.transpose())).into_inner();
        if let Ok(p) = solve_are(&a, &rg.b1_bar[i], &q, &blk.r_bar[i]) {
            let k = -&r_inv * (rg.b1_bar[i].transpose() * p.as_mat() + v.transpose());
            let mut f = Mat::zeros(m, r);
            f.rows_mut(rg.offset(i), k.nrows()).copy_from(&k);
            joint.rows_mut(rg.offset(i), k.nrows()).copy_from(&k);
            out.push(f);
        }
    }
    out.push(joint);
    let mut rng = seeded_rng(opts.seed);
    let b1 = rg.b1();
    for _ in 0..opts.n_starts {
        let l = linalg::randn(&mut rng, r, r);
        let weight = 10f64.powf(rng.gen_range(-2.0..2.0));
        let q = (&l * l.transpose() + Mat::identity(r, r) * 0.1) * weight;
        let d: Vec<f64> = (0..m)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z.exp()
            })
            .collect();
        let rw = Mat::from_diagonal(&Vector::from_vec(d.clone()));
        if let Ok(p) = solve_are(&rg.j, &b1, &q, &rw) {
            let r_inv = Mat::from_diagonal(&Vector::from_vec(d.iter().map(|x| 1.0 / x).collect()));
            out.push(-r_inv * b1.transpose() * p.as_mat());
        }
    }
    out
}

/// Stabilizing solutions found by multistart policy iteration with Newton
/// refinement, deduplicated and sorted.
pub fn solve_fbne(rg: &ReducedGame, c: &CostParameters, opts: &SolverOptions) -> Result<FbneSet> {
    let costs = ReducedCosts::new(rg, c)?;
    let tol = opts.tol * tolerance_scale(rg, c);
    let mut set = FbneSet {
        solutions: Vec::new(),
        starts: 0,
        converged_runs: 0,
        diagnostics: Vec::new(),
        tol,
    };
    for i in 0..rg.n_players() {
        let rii = &costs.blocks[i].r_bar[i];
        if !linalg::is_pd(rii, 0.0) {
            return Err(Error::InvalidArgument(format!(
                "R̄[{i}][{i}] is not positive definite (min eigenvalue {:.3e})",
                linalg::min_eig_sym(rii)
            )));
        }
    }
    let g_lu = match CheckedLu::new(&costs.g_bar, "Ḡ") {
        Ok(lu) => lu,
        Err(_) => {
            set.diagnostics
                .push("Ḡ is singular; every start aborted".into());
            return Ok(set);
        }
    };
    let start_list = starts(rg, &costs, opts);
    set.starts = start_list.len();
    let mut found: Vec<(Mat, usize)> = Vec::new();
    for (k, f0) in start_list.into_iter().enumerate() {
        let mut runs = Vec::new();
        if let Some((f, it)) = policy_iteration(
            rg,
            &costs,
            &g_lu,
            f0.clone(),
            tol,
            opts.max_policy_iterations,
        ) {
            match newton(rg, &costs, f, tol, opts.max_newton_iterations) {
                Some((f, more)) => runs.push((f, it + more)),
                None => set
                    .diagnostics
                    .push(format!("start {k}: policy iteration did not settle")),
            }
        }
        match newton(rg, &costs, f0, tol, opts.max_newton_iterations) {
            Some(run) => runs.push(run),
            None => set
                .diagnostics
                .push(format!("start {k}: Newton did not converge")),
        }
        set.converged_runs += runs.len();
        found.extend(runs);
    }
    for (f, iterations) in found {
        let Some(sol) = finalize(rg, &costs, f, iterations, tol)? else {
            continue;
        };
        let scale = 1.0 + max_abs(&sol.f_bar.f_bar);
        let dup = set
            .solutions
            .iter()
            .any(|s| max_abs(&(&s.f_bar.f_bar - &sol.f_bar.f_bar)) <= opts.dedup_tol * scale);
        if !dup {
            set.solutions.push(sol);
        }
    }
    set.solutions.sort_by_key(|a| lex_key(&a.f_bar.f_bar));
    Ok(set)
}

fn lex_key(f: &Mat) -> Vec<i64> {
    let mut key = Vec::with_capacity(f.len());
    for i in 0..f.nrows() {
        for j in 0..f.ncols() {
            key.push((f[(i, j)] * 1e6).round() as i64);
        }
    }
    key
}

fn finalize(
    rg: &ReducedGame,
    costs: &ReducedCosts,
    f: Mat,
    iterations: usize,
    tol: f64,
) -> Result<Option<EquilibriumSolution>> {
    let Some(ev) = evaluate(rg, costs, &f) else {
        return Ok(None);
    };
    let residuals = care_residual(rg, costs, &f, &ev.p)?;
    if residuals.max() > tol * ev.scale {
        return Ok(None);
    }
    let mut spectrum = eigvals(&ev.a_cl)?;
    linalg::sort_spectrum(&mut spectrum);
    Ok(Some(EquilibriumSolution {
        f_bar: ReducedFeedback::for_game(f, rg)?,
        p: ev.p.iter().map(SymMat::symmetrize).collect(),
        a_cl: ev.a_cl,
        spectrum,
        residuals,
        iterations,
    }))
}

/// The value matrices and residuals of `c` at a given stabilizing reduced
/// feedback, without requiring it to be an equilibrium.
pub fn equilibrium_at(
    rg: &ReducedGame,
    c: &CostParameters,
    f_bar: &ReducedFeedback,
) -> Result<EquilibriumSolution> {
    let costs = ReducedCosts::new(rg, c)?;
    let f = &f_bar.f_bar;
    if f.shape() != (rg.m(), rg.r()) {
        return Err(Error::Dimension("reduced feedback must be m×r".into()));
    }
    let Some(ev) = evaluate(rg, &costs, f) else {
        return Err(Error::UnstableLoop {
            max_real: closed_loop_abscissa(rg, f)?,
        });
    };
    let residuals = care_residual(rg, &costs, f, &ev.p)?;
    let mut spectrum = eigvals(&ev.a_cl)?;
    linalg::sort_spectrum(&mut spectrum);
    Ok(EquilibriumSolution {
        f_bar: f_bar.clone(),
        p: ev.p.iter().map(SymMat::symmetrize).collect(),
        a_cl: ev.a_cl,
        spectrum,
        residuals,
        iterations: 0,
    })
}

/// `x1_0ᵀ P̄ᵢ x1_0`.
pub fn equilibrium_cost(sol: &EquilibriumSolution, i: usize, x1_0: &Vector) -> f64 {
    (x1_0.transpose() * sol.p[i].as_mat() * x1_0)[(0, 0)]
}

/// A unilateral deviation that lowered the deviator's cost.
#[derive(Debug, Clone)]
pub struct NashViolation {
    pub player: usize,
    pub delta: Mat,
    pub x1_0: Vector,
    pub equilibrium_cost: f64,
    pub deviated_cost: f64,
}

#[derive(Debug, Clone)]
pub struct NashCheck {
    pub trials: usize,
    pub violation: Option<NashViolation>,
}

impl NashCheck {
    pub fn passed(&self) -> bool {
        self.violation.is_none()
    }
}

/// Random stabilizing unilateral deviations `F̄ᵢ + Δ`, `‖Δ‖_F ≤ radius`,
/// never lower player `i`'s cost from the test states `e_k` and `e_k + e_l`.
pub fn verify_nash_local(
    rg: &ReducedGame,
    c: &CostParameters,
    sol: &EquilibriumSolution,
    n_trials: usize,
    radius: f64,
    seed: u64,
) -> Result<NashCheck> {
    let costs = ReducedCosts::new(rg, c)?;
    let r = rg.r();
    let mut tests = Vec::new();
    for k in 0..r {
        tests.push(Vector::from_fn(r, |i, _| f64::from(i == k)));
        for l in k + 1..r {
            tests.push(Vector::from_fn(r, |i, _| f64::from(i == k || i == l)));
        }
    }
    let mut rng = seeded_rng(seed);
    let mut trials = 0;
    for i in 0..rg.n_players() {
        let mi = rg.input_dims()[i];
        let mut attempts = 0;
        let mut done = 0;
        while done < n_trials && attempts < 20 * n_trials {
            attempts += 1;
            let dir = linalg::randn(&mut rng, mi, r);
            let norm = dir.norm();
            if norm == 0.0 {
                continue;
            }
            let delta = dir * (radius * rng.gen::<f64>() / norm);
            let mut f_dev = sol.f_bar.f_bar.clone();
            let mut blk = f_dev.rows_mut(rg.offset(i), mi);
            blk += &delta;
            let a_dev = rg.closed_loop(&f_dev);
            if !is_stable(&eigvals(&a_dev)?) {
                continue;
            }
            done += 1;
            trials += 1;
            let p_dev =
                LyapunovOperator::new(&a_dev)?.solve_sym(&closed_loop_weight(&costs.m[i], &f_dev));
            for x in &tests {
                let eq = equilibrium_cost(sol, i, x);
                let dev = (x.transpose() * p_dev.as_mat() * x)[(0, 0)];
                if dev < eq - 1e-8 * eq.abs().max(1.0) {
                    return Ok(NashCheck {
                        trials,
                        violation: Some(NashViolation {
                            player: i,
                            delta,
                            x1_0: x.clone(),
                            equilibrium_cost: eq,
                            deviated_cost: dev,
                        }),
                    });
                }
            }
        }
    }
    Ok(NashCheck {
        trials,
        violation: None,
    })
}

/// Maximum real part of the closed-loop spectrum of `F̄`.
pub fn closed_loop_abscissa(rg: &ReducedGame, f_bar: &Mat) -> Result<f64> {
    Ok(max_real_part(&eigvals(&rg.closed_loop(f_bar))?))
}
