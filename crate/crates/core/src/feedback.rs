//! Static state feedback: the admissible class, the map to reduced
//! coordinates and its preimage, closed-loop simulation and least-squares
//! recovery of a feedback from sampled trajectories.

use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::game::ReducedGame;
use crate::linalg::{
    self, eigvals, kernel_basis, max_real_part, pinv, vstack, CheckedLu, Mat, Vector,
};
use crate::pencil::preimage_map;

/// Tolerance of the preimage equation `F·S = F̄`.
pub const PREIMAGE_TOL: f64 = 1e-8;
/// Relative singular-value cutoff below which `I + B̄₂FX₂` counts as singular.
pub const INDEX_TOL: f64 = 1e-10;
/// Relative cutoff used by [`fit_feedback`].
pub const FIT_RCOND: f64 = 1e-10;
/// Number of random kernel draws tried by [`preimage_sample`].
pub const PREIMAGE_RETRIES: usize = 16;

/// Full-state feedback `uᵢ = Fᵢx`, one `mᵢ × n` block per player.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackProfile {
    pub f: Vec<Mat>,
}

impl FeedbackProfile {
    pub fn new(f: Vec<Mat>) -> Self {
        Self { f }
    }

    pub fn from_stacked(f: &Mat, input_dims: &[usize]) -> Result<Self> {
        if input_dims.iter().sum::<usize>() != f.nrows() {
            return Err(Error::Dimension(format!(
                "feedback has {} rows but the inputs sum to {}",
                f.nrows(),
                input_dims.iter().sum::<usize>()
            )));
        }
        let mut off = 0;
        let blocks = input_dims
            .iter()
            .map(|&mi| {
                let b = f.rows(off, mi).into_owned();
                off += mi;
                b
            })
            .collect();
        Ok(Self { f: blocks })
    }

    pub fn stacked(&self) -> Mat {
        vstack(&self.f)
    }

    pub fn check_dims(&self, rg: &ReducedGame) -> Result<()> {
        let dims = rg.input_dims();
        if self.f.len() != dims.len()
            || self
                .f
                .iter()
                .zip(&dims)
                .any(|(f, &mi)| f.shape() != (mi, rg.n()))
        {
            return Err(Error::Dimension(
                "feedback blocks must be mᵢ×n per player".into(),
            ));
        }
        Ok(())
    }
}

/// Reduced feedback `u = F̄x₁` (`m × r`), with per-player row slices.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedFeedback {
    pub f_bar: Mat,
    input_dims: Vec<usize>,
}

impl ReducedFeedback {
    pub fn new(f_bar: Mat, input_dims: Vec<usize>) -> Result<Self> {
        if input_dims.iter().sum::<usize>() != f_bar.nrows() {
            return Err(Error::Dimension(
                "reduced feedback rows must equal Σ mᵢ".into(),
            ));
        }
        Ok(Self { f_bar, input_dims })
    }

    pub fn for_game(f_bar: Mat, rg: &ReducedGame) -> Result<Self> {
        if f_bar.ncols() != rg.r() {
            return Err(Error::Dimension(format!(
                "reduced feedback must have r = {} columns",
                rg.r()
            )));
        }
        Self::new(f_bar, rg.input_dims())
    }

    pub fn input_dims(&self) -> &[usize] {
        &self.input_dims
    }

    pub fn player(&self, i: usize) -> Mat {
        let off: usize = self.input_dims[..i].iter().sum();
        self.f_bar.rows(off, self.input_dims[i]).into_owned()
    }
}

/// Why a feedback fails to be admissible.
#[derive(Debug, Clone, PartialEq)]
pub enum FsFailure {
    /// `I + B̄₂FX₂` is singular, so the closed loop is no longer index 1.
    IndexRaised { sigma_min: f64 },
    /// The finite closed-loop spectrum leaves the open left half-plane.
    Unstable { max_real: f64 },
}

impl std::fmt::Display for FsFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::IndexRaised { sigma_min } => write!(f, "index raised (σ_min = {sigma_min:.3e})"),
            Self::Unstable { max_real } => {
                write!(f, "finite spectrum not stable (max Re = {max_real:.6})")
            }
        }
    }
}

/// Whether `F` belongs to the admissible class, with the failed condition.
pub fn in_fs(rg: &ReducedGame, f: &FeedbackProfile) -> Result<std::result::Result<(), FsFailure>> {
    f.check_dims(rg)?;
    let fs = f.stacked();
    let nr = rg.n() - rg.r();
    if nr > 0 {
        let alg = Mat::identity(nr, nr) + rg.b2() * &fs * &rg.split.x2;
        let s = linalg::singular_values(&alg);
        let sigma_min = s.last().copied().unwrap_or(0.0);
        if sigma_min <= INDEX_TOL * s[0].max(1.0) {
            return Ok(Err(FsFailure::IndexRaised { sigma_min }));
        }
    }
    let f_bar = omega(rg, f)?;
    let max_real = max_real_part(&eigvals(&rg.closed_loop(&f_bar.f_bar))?);
    if max_real >= 0.0 {
        return Ok(Err(FsFailure::Unstable { max_real }));
    }
    Ok(Ok(()))
}

/// `Ω(F) = (I_m + FX₂B̄₂)⁻¹FX₁`, the feedback seen by the dynamic part.
pub fn omega(rg: &ReducedGame, f: &FeedbackProfile) -> Result<ReducedFeedback> {
    f.check_dims(rg)?;
    let fs = f.stacked();
    let m = rg.m();
    let lhs = Mat::identity(m, m) + &fs * &rg.split.x2 * rg.b2();
    let lu = CheckedLu::new(&lhs, "I + F X2 B2").map_err(|_| Error::NotIndexPreserving)?;
    ReducedFeedback::for_game(lu.solve(&(&fs * &rg.split.x1)), rg)
}

/// `S = X₁ − X₂B̄₂F̄`, mapping `x₁` to the consistent full state.
pub fn preimage_s(rg: &ReducedGame, f_bar: &ReducedFeedback) -> Mat {
    preimage_map(&rg.split, &rg.b2(), &f_bar.f_bar)
}

/// `F ∈ 𝖥_s` and `‖F·S − F̄‖ ≤ tol` with `tol = PREIMAGE_TOL·max(1, ‖F̄‖)`.
pub fn preimage_member(
    rg: &ReducedGame,
    f_bar: &ReducedFeedback,
    f: &FeedbackProfile,
) -> Result<bool> {
    if in_fs(rg, f)?.is_err() {
        return Ok(false);
    }
    Ok(preimage_residual(rg, f_bar, f) <= PREIMAGE_TOL * linalg::max_abs(&f_bar.f_bar).max(1.0))
}

/// `‖F·S − F̄‖_max`.
pub fn preimage_residual(rg: &ReducedGame, f_bar: &ReducedFeedback, f: &FeedbackProfile) -> f64 {
    linalg::max_abs(&(f.stacked() * preimage_s(rg, f_bar) - &f_bar.f_bar))
}

/// A member of `Ω⁻¹(F̄)`: the minimum-norm solution of `F·S = F̄`, plus a
/// random component along the left kernel of `S` when a seed is given.
pub fn preimage_sample(
    rg: &ReducedGame,
    f_bar: &ReducedFeedback,
    seed: Option<u64>,
) -> Result<FeedbackProfile> {
    if f_bar.f_bar.shape() != (rg.m(), rg.r()) {
        return Err(Error::Dimension("reduced feedback must be m×r".into()));
    }
    let s = preimage_s(rg, f_bar);
    let (s_pinv, _) = pinv(&s, 1e-12);
    let base = &f_bar.f_bar * s_pinv;
    let dims = rg.input_dims();
    let left_null = kernel_basis(&s.transpose(), 1e-10);
    let attempt = |f: Mat| -> Result<Option<FeedbackProfile>> {
        let p = FeedbackProfile::from_stacked(&f, &dims)?;
        Ok(preimage_member(rg, f_bar, &p)?.then_some(p))
    };
    if let (Some(seed), true) = (seed, left_null.ncols() > 0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut amp = 1.0 + linalg::max_abs(&base);
        for _ in 0..PREIMAGE_RETRIES {
            let k = linalg::randn(&mut rng, rg.m(), left_null.ncols()) * amp;
            if let Some(p) = attempt(&base + k * left_null.transpose())? {
                return Ok(p);
            }
            amp *= 0.5;
        }
    }
    attempt(base)?.ok_or(Error::PreimageSearchFailed(PREIMAGE_RETRIES + 1))
}

/// Sampled closed-loop trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub x: Vec<Vector>,
    pub u: Vec<Vector>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.x.first().map_or(0, |x| x.len())
    }

    pub fn input_dim(&self) -> usize {
        self.u.first().map_or(0, |u| u.len())
    }

    /// `max_k ‖u(t_k) − u'(t_k)‖_∞`, infinite when the grids differ.
    pub fn input_distance(&self, other: &Self) -> f64 {
        sup_distance(&self.u, &other.u, self.len() == other.len())
    }

    pub fn state_distance(&self, other: &Self) -> f64 {
        sup_distance(&self.x, &other.x, self.len() == other.len())
    }

    /// `t, x1..xn, u1..um` with 17 significant digits.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["t".to_string()];
        header.extend((1..=self.state_dim()).map(|k| format!("x{k}")));
        header.extend((1..=self.input_dim()).map(|k| format!("u{k}")));
        out.write_record(&header)?;
        for k in 0..self.len() {
            let row: Vec<String> = std::iter::once(self.times[k])
                .chain(self.x[k].iter().copied())
                .chain(self.u[k].iter().copied())
                .map(|v| format!("{v:.16e}"))
                .collect();
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let header = rdr.headers()?.clone();
        let n = header.iter().filter(|h| h.starts_with('x')).count();
        let m = header.iter().filter(|h| h.starts_with('u')).count();
        if header.get(0) != Some("t") || header.len() != 1 + n + m {
            return Err(Error::InvalidArgument(
                "trajectory header must be t,x1..xn,u1..um".into(),
            ));
        }
        let mut traj = Trajectory {
            times: Vec::new(),
            x: Vec::new(),
            u: Vec::new(),
        };
        for rec in rdr.records() {
            let vals = rec?
                .iter()
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::InvalidArgument(format!("bad number in trajectory: {e}")))?;
            traj.times.push(vals[0]);
            traj.x.push(Vector::from_column_slice(&vals[1..1 + n]));
            traj.u.push(Vector::from_column_slice(&vals[1 + n..]));
        }
        Ok(traj)
    }
}

fn sup_distance(a: &[Vector], b: &[Vector], same_grid: bool) -> f64 {
    if !same_grid {
        return f64::INFINITY;
    }
    a.iter()
        .zip(b)
        .map(|(p, q)| (p - q).amax())
        .fold(0.0, f64::max)
}

/// Which feedback drives a simulation.
#[derive(Debug, Clone, Copy)]
pub enum Loop<'a> {
    Full(&'a FeedbackProfile),
    Reduced(&'a ReducedFeedback),
}

/// Simulates from the consistent state `x₀ = S·x1_0`.
pub fn simulate(
    rg: &ReducedGame,
    lp: Loop<'_>,
    x1_0: &Vector,
    horizon: f64,
    dt: f64,
) -> Result<Trajectory> {
    if x1_0.len() != rg.r() {
        return Err(Error::Dimension(format!(
            "x1_0 must have length r = {}",
            rg.r()
        )));
    }
    let f_bar = reduced_of(rg, lp)?;
    let x0 = preimage_s(rg, &f_bar) * x1_0;
    simulate_from(rg, lp, &x0, horizon, dt)
}

/// Simulates from a full initial state, which must satisfy the closed-loop
/// algebraic constraint.
pub fn simulate_from(
    rg: &ReducedGame,
    lp: Loop<'_>,
    x0: &Vector,
    horizon: f64,
    dt: f64,
) -> Result<Trajectory> {
    if !(dt > 0.0 && horizon >= 0.0 && horizon.is_finite()) {
        return Err(Error::InvalidArgument(
            "need dt > 0 and a finite horizon ≥ 0".into(),
        ));
    }
    if x0.len() != rg.n() {
        return Err(Error::Dimension(format!(
            "x0 must have length n = {}",
            rg.n()
        )));
    }
    let f_bar = reduced_of(rg, lp)?;
    let a_cl = rg.closed_loop(&f_bar.f_bar);
    let max_real = max_real_part(&eigvals(&a_cl)?);
    if max_real >= 0.0 {
        return Err(Error::UnstableLoop { max_real });
    }
    let s = preimage_s(rg, &f_bar);
    let mut x1 = rg.split.dynamic_part(x0);
    let mismatch = (x0 - &s * &x1).amax();
    if mismatch > 1e-9 * (1.0 + x0.amax()) {
        return Err(Error::InconsistentInitialState(mismatch));
    }
    let steps = (horizon / dt).round() as usize;
    let phi = (&a_cl * dt).exp();
    let full = match lp {
        Loop::Full(f) => Some(f.stacked()),
        Loop::Reduced(_) => None,
    };
    let mut traj = Trajectory {
        times: Vec::with_capacity(steps + 1),
        x: Vec::with_capacity(steps + 1),
        u: Vec::with_capacity(steps + 1),
    };
    for k in 0..=steps {
        let x = &s * &x1;
        let u = match &full {
            Some(f) => f * &x,
            None => &f_bar.f_bar * &x1,
        };
        traj.times.push(k as f64 * dt);
        traj.x.push(x);
        traj.u.push(u);
        x1 = &phi * x1;
    }
    Ok(traj)
}

fn reduced_of(rg: &ReducedGame, lp: Loop<'_>) -> Result<ReducedFeedback> {
    match lp {
        Loop::Full(f) => omega(rg, f),
        Loop::Reduced(f) => {
            if f.f_bar.shape() != (rg.m(), rg.r()) {
                return Err(Error::Dimension("reduced feedback must be m×r".into()));
            }
            Ok(f.clone())
        }
    }
}

/// Least-squares feedback recovered from samples.
#[derive(Debug, Clone)]
pub struct FeedbackFit {
    pub profile: FeedbackProfile,
    /// Rank of the `n × K` state sample matrix.
    pub rank: usize,
    pub rank_deficient: bool,
    /// `max_k ‖u(t_k) − F x(t_k)‖_∞`.
    pub residual: f64,
}

/// Minimum-Frobenius-norm `F` minimising `Σ‖u(t_k) − F x(t_k)‖²`.
pub fn fit_feedback(traj: &Trajectory, input_dims: &[usize]) -> Result<FeedbackFit> {
    let (n, m, k) = (traj.state_dim(), traj.input_dim(), traj.len());
    if traj.x.len() != k || traj.u.len() != k {
        return Err(Error::Dimension(
            "trajectory columns have different lengths".into(),
        ));
    }
    if k < n.max(1) {
        return Err(Error::DegenerateTrajectory(format!(
            "need at least {n} samples, got {k}"
        )));
    }
    if input_dims.iter().sum::<usize>() != m {
        return Err(Error::Dimension(
            "input dims do not match the trajectory".into(),
        ));
    }
    let xs = Mat::from_columns(&traj.x);
    let us = Mat::from_columns(&traj.u);
    if linalg::max_abs(&xs) == 0.0 {
        return Err(Error::DegenerateTrajectory(
            "all state samples are zero".into(),
        ));
    }
    let (xs_pinv, rank) = pinv(&xs, FIT_RCOND);
    let f = &us * xs_pinv;
    let residual = linalg::max_abs(&(&us - &f * &xs));
    Ok(FeedbackFit {
        profile: FeedbackProfile::from_stacked(&f, input_dims)?,
        rank,
        rank_deficient: rank < n,
        residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::{reduce_game, DescriptorGame};
    use crate::linalg::{mat, spectra_match};
    use crate::pencil::{finite_spectrum, Pencil};
    use approx::assert_relative_eq;

    fn lane_keeping() -> DescriptorGame {
        let (vx, l, ks) = (20.0, 2.7, 10.0);
        let b = mat(3, 1, &[0.0, 0.0, 1.0]);
        DescriptorGame::new(
            Mat::from_diagonal(&Vector::from_vec(vec![1.0, 1.0, 0.0])),
            mat(3, 3, &[0.0, vx, 0.0, 0.0, 0.0, vx / l, 0.0, 0.0, -ks]),
            vec![b.clone(), b],
        )
        .unwrap()
    }

    fn f_printed() -> FeedbackProfile {
        FeedbackProfile::new(vec![
            mat(1, 3, &[-0.0046, -0.3971, 0.7987]),
            mat(1, 3, &[-0.4779, -1.8117, 3.8449]),
        ])
    }

    #[test]
    fn zero_feedback_is_not_admissible_for_lane_keeping() {
        let rg = reduce_game(&lane_keeping());
        let f0 = FeedbackProfile::new(vec![Mat::zeros(1, 3), Mat::zeros(1, 3)]);
        assert!(matches!(
            in_fs(&rg, &f0).unwrap(),
            Err(FsFailure::Unstable { .. })
        ));
        assert_eq!(omega(&rg, &f0).unwrap().f_bar, Mat::zeros(2, 2));
    }

    #[test]
    fn printed_feedback_is_admissible_and_spectra_agree() {
        let g = lane_keeping();
        let rg = reduce_game(&g);
        let f = f_printed();
        assert!(in_fs(&rg, &f).unwrap().is_ok());
        let fb = omega(&rg, &f).unwrap();
        let reduced = eigvals(&rg.closed_loop(&fb.f_bar)).unwrap();
        let cl = Pencil::new(g.e().clone(), g.a() + g.b_stacked() * f.stacked()).unwrap();
        assert!(spectra_match(
            &reduced,
            &finite_spectrum(&cl).unwrap(),
            1e-6
        ));
        assert_relative_eq!(reduced[0].re, -1.527, epsilon = 1e-3);
        assert_relative_eq!(reduced[0].im.abs(), 3.319, epsilon = 1e-3);
        assert!(preimage_member(&rg, &fb, &f).unwrap());
    }

    #[test]
    fn index_raising_feedback_is_rejected() {
        // δ-column entries summing to K_s make I + B̄₂FX₂ vanish
        let rg = reduce_game(&lane_keeping());
        let f = FeedbackProfile::new(vec![
            mat(1, 3, &[0.1, -0.2, 4.0]),
            mat(1, 3, &[0.3, 0.5, 6.0]),
        ]);
        assert!(matches!(
            in_fs(&rg, &f).unwrap(),
            Err(FsFailure::IndexRaised { .. })
        ));
        assert!(matches!(omega(&rg, &f), Err(Error::NotIndexPreserving)));
    }

    #[test]
    fn ode_game_omega_is_a_coordinate_change() {
        let a = mat(2, 2, &[0.0, 1.0, 2.0, -1.0]);
        let g = DescriptorGame::new(Mat::identity(2, 2), a, vec![mat(2, 1, &[0.0, 1.0])]).unwrap();
        let rg = reduce_game(&g);
        let f = FeedbackProfile::new(vec![mat(1, 2, &[-5.0, -3.0])]);
        assert_eq!(omega(&rg, &f).unwrap().f_bar, f.stacked() * &rg.split.x1);
        let fb = omega(&rg, &f).unwrap();
        let p = preimage_sample(&rg, &fb, Some(3)).unwrap();
        assert_relative_eq!(p.stacked(), f.stacked(), epsilon = 1e-12);
    }

    #[test]
    fn preimage_samples_are_seeded_and_distinct() {
        let rg = reduce_game(&lane_keeping());
        let fb = omega(&rg, &f_printed()).unwrap();
        let p1 = preimage_sample(&rg, &fb, Some(1)).unwrap();
        let p1b = preimage_sample(&rg, &fb, Some(1)).unwrap();
        let p2 = preimage_sample(&rg, &fb, Some(2)).unwrap();
        assert_eq!(p1, p1b);
        assert!(linalg::max_abs(&(p1.stacked() - p2.stacked())) > 1e-3);
        for p in [&p1, &p2] {
            assert_relative_eq!(omega(&rg, p).unwrap().f_bar, fb.f_bar, epsilon = 1e-8);
        }
    }

    #[test]
    fn zero_initial_state_gives_zero_trajectory() {
        let rg = reduce_game(&lane_keeping());
        let f = f_printed();
        let t = simulate(&rg, Loop::Full(&f), &Vector::zeros(2), 1.0, 0.1).unwrap();
        assert_eq!(t.len(), 11);
        assert!(t.x.iter().chain(&t.u).all(|v| v.amax() == 0.0));
    }

    #[test]
    fn simulation_rejects_bad_inputs() {
        let rg = reduce_game(&lane_keeping());
        let f0 = ReducedFeedback::for_game(Mat::zeros(2, 2), &rg).unwrap();
        let x1 = Vector::from_vec(vec![1.0, 0.0]);
        assert!(matches!(
            simulate(&rg, Loop::Reduced(&f0), &x1, 1.0, 0.1),
            Err(Error::UnstableLoop { .. })
        ));
        let f = f_printed();
        let x0 = Vector::from_vec(vec![1.0, 0.0, 5.0]);
        assert!(matches!(
            simulate_from(&rg, Loop::Full(&f), &x0, 1.0, 0.1),
            Err(Error::InconsistentInitialState(_))
        ));
    }

    #[test]
    fn fit_recovers_full_rank_feedback() {
        let g = DescriptorGame::new(
            Mat::identity(2, 2),
            mat(2, 2, &[0.0, 1.0, 0.0, 0.0]),
            vec![mat(2, 1, &[0.0, 1.0])],
        )
        .unwrap();
        let rg = reduce_game(&g);
        let f = FeedbackProfile::new(vec![mat(1, 2, &[-2.0, -3.0])]);
        let t = simulate(
            &rg,
            Loop::Full(&f),
            &Vector::from_vec(vec![1.0, -0.5]),
            3.0,
            0.05,
        )
        .unwrap();
        let fit = fit_feedback(&t, &[1]).unwrap();
        assert!(!fit.rank_deficient);
        assert_relative_eq!(fit.profile.stacked(), f.stacked(), epsilon = 1e-8);
    }

    #[test]
    fn fit_flags_constrained_samples() {
        let rg = reduce_game(&lane_keeping());
        let f = f_printed();
        let t = simulate(
            &rg,
            Loop::Full(&f),
            &Vector::from_vec(vec![0.5, 0.1]),
            4.0,
            0.01,
        )
        .unwrap();
        let fit = fit_feedback(&t, &[1, 1]).unwrap();
        assert!(fit.rank_deficient);
        assert_eq!(fit.rank, 2);
        let fb = omega(&rg, &f).unwrap();
        assert!(preimage_member(&rg, &fb, &fit.profile).unwrap());
    }

    #[test]
    fn fit_rejects_zero_trajectory() {
        let t = Trajectory {
            times: vec![0.0, 1.0, 2.0],
            x: vec![Vector::zeros(2); 3],
            u: vec![Vector::zeros(1); 3],
        };
        assert!(matches!(
            fit_feedback(&t, &[1]),
            Err(Error::DegenerateTrajectory(_))
        ));
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let rg = reduce_game(&lane_keeping());
        let t = simulate(
            &rg,
            Loop::Full(&f_printed()),
            &Vector::from_vec(vec![0.3, -0.2]),
            0.5,
            0.1,
        )
        .unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t,x1,x2,x3,u1,u2\n"));
        assert_eq!(Trajectory::read_csv(buf.as_slice()).unwrap(), t);
    }
}
