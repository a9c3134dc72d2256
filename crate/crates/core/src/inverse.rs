//! The inverse problem: linear conditions `𝓜ᵢθᵢ = 0` on the cost parameters
//! that rationalize an observed reduced feedback, the definiteness margin,
//! and a two-stage kernel-then-margin search for a feasible point.

use num_complex::Complex64;
use rand::Rng;

use crate::error::{Error, Result};
use crate::feedback::{simulate, Loop, ReducedFeedback};
use crate::forward::{solve_fbne, SolverOptions};
use crate::game::{CostParameters, ReducedGame};
use crate::linalg::{
    self, duplication_matrix, eigvals, hstack, kernel_basis, kron, max_real_part, min_eig_sym,
    seeded_rng, CheckedLu, Mat, SymMat, Vector,
};

/// Per-player parameter vector `θᵢ = [vech(Qᵢ); vech(Rᵢ₁); …; vech(Rᵢ_N)]`,
/// each `vech` column-major over the lower triangle.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ThetaLayout {
    n: usize,
    input_dims: Vec<usize>,
}

impl ThetaLayout {
    pub fn new(n: usize, input_dims: Vec<usize>) -> Self {
        Self { n, input_dims }
    }

    pub fn for_game(rg: &ReducedGame) -> Self {
        Self::new(rg.n(), rg.input_dims())
    }

    /// `L = n(n+1)/2 + Σⱼ mⱼ(mⱼ+1)/2`.
    pub fn len(&self) -> usize {
        linalg::vech_len(self.n)
            + self
                .input_dims
                .iter()
                .map(|&m| linalg::vech_len(m))
                .sum::<usize>()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn q_range(&self) -> std::ops::Range<usize> {
        0..linalg::vech_len(self.n)
    }

    pub fn r_range(&self, j: usize) -> std::ops::Range<usize> {
        let start = linalg::vech_len(self.n)
            + self.input_dims[..j]
                .iter()
                .map(|&m| linalg::vech_len(m))
                .sum::<usize>();
        start..start + linalg::vech_len(self.input_dims[j])
    }

    /// Positions of the diagonal entries of `Qᵢ` inside `θᵢ`.
    pub fn q_diagonal(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.n);
        let mut pos = 0;
        for col in 0..self.n {
            out.push(pos);
            pos += self.n - col;
        }
        out
    }

    pub fn to_theta(&self, c: &CostParameters, i: usize) -> Vector {
        let mut parts = vec![c.q[i].vech()];
        parts.extend(c.r[i].iter().map(SymMat::vech));
        let data: Vec<f64> = parts.iter().flat_map(|v| v.iter().copied()).collect();
        Vector::from_vec(data)
    }

    pub fn split(&self, theta: &Vector) -> Result<(SymMat, Vec<SymMat>)> {
        if theta.len() != self.len() {
            return Err(Error::Dimension(format!(
                "θ has length {}, expected L = {}",
                theta.len(),
                self.len()
            )));
        }
        let q = SymMat::from_vech(&theta.as_slice()[self.q_range()], self.n)?;
        let r = (0..self.input_dims.len())
            .map(|j| SymMat::from_vech(&theta.as_slice()[self.r_range(j)], self.input_dims[j]))
            .collect::<Result<Vec<_>>>()?;
        Ok((q, r))
    }

    pub fn set_player(&self, c: &mut CostParameters, i: usize, theta: &Vector) -> Result<()> {
        let (q, r) = self.split(theta)?;
        c.q[i] = q;
        c.r[i] = r;
        Ok(())
    }

    /// Cost tuple from one θ per player.
    pub fn costs_from(&self, thetas: &[Vector]) -> Result<CostParameters> {
        let mut c = CostParameters::zeros(self.n, &self.input_dims);
        for (i, t) in thetas.iter().enumerate() {
            self.set_player(&mut c, i, t)?;
        }
        Ok(c)
    }
}

/// Building blocks of `𝓜ᵢ`, kept for inspection.
#[derive(Debug, Clone)]
pub struct AssemblyTerms {
    /// `𝓚 = I ⊗ Ā_clᵀ + Ā_clᵀ ⊗ I`.
    pub k: Mat,
    /// `𝓜_Q`, `r² × n²`.
    pub m_q: Mat,
    /// `𝓝_Q^i`, `r·mᵢ × n²`.
    pub n_q: Vec<Mat>,
    /// `𝓜_Q^i`.
    pub m_q_i: Vec<Mat>,
    /// `𝓜_R^{ij}`, `r·mᵢ × mⱼ²`.
    pub m_r: Vec<Vec<Mat>>,
    /// `𝓜ᵢ`, `r·mᵢ × L`.
    pub m: Vec<Mat>,
}

/// Assembles `𝓜ᵢ` for every player from a stabilizing reduced feedback.
pub fn assemble(rg: &ReducedGame, f_bar: &ReducedFeedback) -> Result<AssemblyTerms> {
    let (n, r, np) = (rg.n(), rg.r(), rg.n_players());
    let f = &f_bar.f_bar;
    if f.shape() != (rg.m(), r) {
        return Err(Error::Dimension("reduced feedback must be m×r".into()));
    }
    let a_cl = rg.closed_loop(f);
    let max_real = max_real_part(&eigvals(&a_cl)?);
    if max_real >= 0.0 {
        return Err(Error::UnstableLoop { max_real });
    }
    let k = linalg::kronecker_sum_transpose(&a_cl);
    let k_lu = CheckedLu::new(&k, "𝓚").map_err(|_| Error::SingularLyapunov)?;
    let x1t = rg.split.x1.transpose();
    let w = f.transpose() * rg.b2().transpose() * rg.split.x2.transpose();
    let m_q = kron(&x1t, &x1t) - kron(&w, &x1t) - kron(&x1t, &w) + kron(&w, &w);
    let k_inv_m_q = k_lu.solve(&m_q);
    let eye_r = Mat::identity(r, r);
    let d_n = duplication_matrix(n);
    let dims = rg.input_dims();
    let slices: Vec<Mat> = (0..np).map(|j| f_bar.player(j)).collect();
    let k_inv_ff: Vec<Mat> = slices
        .iter()
        .map(|fj| k_lu.solve(&kron(&fj.transpose(), &fj.transpose())))
        .collect();
    let mut terms = AssemblyTerms {
        k,
        m_q,
        n_q: vec![],
        m_q_i: vec![],
        m_r: vec![],
        m: vec![],
    };
    for i in 0..np {
        let gt = rg.algebraic_gain(i).transpose();
        let n_q = kron(&w, &gt) - kron(&x1t, &gt);
        let lift = kron(&eye_r, &rg.b1_bar[i].transpose());
        let m_q_i = &n_q - &lift * &k_inv_m_q;
        let m_r: Vec<Mat> = (0..np)
            .map(|j| {
                let mut blk = -(&lift * &k_inv_ff[j]);
                if i == j {
                    blk += kron(&slices[i].transpose(), &Mat::identity(dims[i], dims[i]));
                }
                blk
            })
            .collect();
        let mut cols = vec![&m_q_i * &d_n];
        cols.extend((0..np).map(|j| &m_r[j] * duplication_matrix(dims[j])));
        terms.m.push(hstack(&cols));
        terms.n_q.push(n_q);
        terms.m_q_i.push(m_q_i);
        terms.m_r.push(m_r);
    }
    Ok(terms)
}

/// `‖𝓜ᵢθᵢ‖₂`.
pub fn residual(m_i: &Mat, theta: &Vector) -> Result<f64> {
    if theta.len() != m_i.ncols() {
        return Err(Error::Dimension(format!(
            "θ has length {}, expected {}",
            theta.len(),
            m_i.ncols()
        )));
    }
    Ok((m_i * theta).norm())
}

/// `Rᵢᵢ + GᵢᵀQᵢGᵢ` with `Gᵢ = X₂B̄₂ᵢ`, i.e. `R̄ᵢᵢ(θ)`.
pub fn margin_matrix(
    rg: &ReducedGame,
    i: usize,
    theta: &Vector,
    layout: &ThetaLayout,
) -> Result<Mat> {
    let (q, r) = layout.split(theta)?;
    let g = rg.algebraic_gain(i);
    Ok(r[i].as_mat() + g.transpose() * q.as_mat() * g)
}

/// Smallest eigenvalue of `R̄ᵢᵢ(θ)`.
pub fn gamma2_margin(
    rg: &ReducedGame,
    i: usize,
    theta: &Vector,
    layout: &ThetaLayout,
) -> Result<f64> {
    Ok(min_eig_sym(&margin_matrix(rg, i, theta, layout)?))
}

/// Default feasibility threshold `1e-8·(1 + ‖θ‖)`.
pub fn default_eps(theta: &Vector) -> f64 {
    1e-8 * (1.0 + theta.norm())
}

/// Relative kernel tolerance of [`membership`].
pub const MEMBERSHIP_TOL: f64 = 1e-7;

/// Whether a candidate `θᵢ` lies in `Γᵢ¹ ∩ Γᵢ²`.
#[derive(Debug, Clone, PartialEq)]
pub struct Membership {
    pub residual: f64,
    pub pd_margin: f64,
    pub member: bool,
}

/// `‖𝓜ᵢθ‖ ≤ MEMBERSHIP_TOL·‖θ‖·(1 + ‖𝓜ᵢ‖_max)` and margin above `eps`
/// (default [`default_eps`] of the unit-normalized `θ`, scaled back). Both
/// tests are invariant under positive scaling.
pub fn membership(
    rg: &ReducedGame,
    i: usize,
    m_i: &Mat,
    theta: &Vector,
    layout: &ThetaLayout,
    eps: Option<f64>,
) -> Result<Membership> {
    let res = residual(m_i, theta)?;
    let pd_margin = gamma2_margin(rg, i, theta, layout)?;
    let norm = theta.norm();
    let eps = eps.unwrap_or_else(|| {
        if norm > 0.0 {
            default_eps(&(theta / norm)) * norm
        } else {
            0.0
        }
    });
    let member = norm > 0.0
        && res <= MEMBERSHIP_TOL * norm * (1.0 + linalg::max_abs(m_i))
        && pd_margin > eps;
    Ok(Membership {
        residual: res,
        pd_margin,
        member,
    })
}

/// Support restrictions applied before the kernel is computed.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Constraints {
    /// Only diagonal entries of `Qᵢ` may be nonzero.
    pub diagonal_q: bool,
    /// Indices of `θᵢ` allowed to be nonzero.
    pub support: Option<Vec<usize>>,
}

impl Constraints {
    pub fn allowed(&self, layout: &ThetaLayout) -> Result<Vec<usize>> {
        let l = layout.len();
        let mut keep: Vec<bool> = vec![true; l];
        if let Some(s) = &self.support {
            if let Some(&bad) = s.iter().find(|&&k| k >= l) {
                return Err(Error::InvalidArgument(format!(
                    "support index {bad} out of range (L = {l})"
                )));
            }
            keep = (0..l).map(|k| s.contains(&k)).collect();
        }
        if self.diagonal_q {
            let diag = layout.q_diagonal();
            for k in layout.q_range() {
                if !diag.contains(&k) {
                    keep[k] = false;
                }
            }
        }
        Ok((0..l).filter(|&k| keep[k]).collect())
    }
}

#[derive(Debug, Clone)]
pub struct IdentifyOptions {
    pub kernel_tol: f64,
    pub restarts: usize,
    pub iterations: usize,
    pub seed: u64,
    /// Overrides [`default_eps`] when set.
    pub eps: Option<f64>,
}

impl Default for IdentifyOptions {
    fn default() -> Self {
        Self {
            kernel_tol: linalg::DEFAULT_KERNEL_TOL,
            restarts: 32,
            iterations: 400,
            seed: 0,
            eps: None,
        }
    }
}

/// Result of the inverse problem for one player.
#[derive(Debug, Clone)]
pub struct PlayerCertificate {
    pub player: usize,
    pub m_i: Mat,
    /// Orthonormal kernel basis of `𝓜ᵢ` restricted to the allowed support,
    /// embedded back into `ℝᴸ`.
    pub kernel: Mat,
    pub theta: Vector,
    pub residual: f64,
    pub pd_margin: f64,
    pub eps: f64,
    pub feasible: bool,
}

#[derive(Debug, Clone)]
pub struct InverseCertificate {
    pub layout: ThetaLayout,
    pub players: Vec<PlayerCertificate>,
}

impl InverseCertificate {
    pub fn feasible(&self) -> bool {
        self.players.iter().all(|p| p.feasible)
    }

    pub fn costs(&self) -> Result<CostParameters> {
        let thetas: Vec<Vector> = self.players.iter().map(|p| p.theta.clone()).collect();
        self.layout.costs_from(&thetas)
    }
}

pub fn identify(
    rg: &ReducedGame,
    f_bar: &ReducedFeedback,
    constraints: &Constraints,
    opts: &IdentifyOptions,
) -> Result<InverseCertificate> {
    let terms = assemble(rg, f_bar)?;
    let layout = ThetaLayout::for_game(rg);
    let players = (0..rg.n_players())
        .map(|i| identify_player(rg, &layout, i, terms.m[i].clone(), constraints, opts))
        .collect::<Result<Vec<_>>>()?;
    Ok(InverseCertificate { layout, players })
}

/// Stage 1 (kernel) and stage 2 (margin) for a single player's `𝓜ᵢ`.
pub fn identify_player(
    rg: &ReducedGame,
    layout: &ThetaLayout,
    i: usize,
    m_i: Mat,
    constraints: &Constraints,
    opts: &IdentifyOptions,
) -> Result<PlayerCertificate> {
    let l = layout.len();
    let allowed = constraints.allowed(layout)?;
    let restricted = Mat::from_fn(m_i.nrows(), allowed.len(), |row, c| m_i[(row, allowed[c])]);
    let embed = Mat::from_fn(l, allowed.len(), |row, c| f64::from(allowed[c] == row));
    let z_basis = if allowed.is_empty() {
        Mat::zeros(l, 0)
    } else {
        &embed * kernel_basis(&restricted, opts.kernel_tol)
    };
    // R̄ᵢᵢ(θ) is linear in θ: one symmetric matrix per basis direction
    let basis_margin = |basis: &Mat| -> Result<Vec<Mat>> {
        (0..basis.ncols())
            .map(|k| margin_matrix(rg, i, &basis.column(k).into_owned(), layout))
            .collect()
    };
    let mut rng = seeded_rng(opts.seed.wrapping_add(i as u64));
    let mut best = if z_basis.ncols() > 0 {
        let mats = basis_margin(&z_basis)?;
        let z = maximize_margin(&mats, opts, &mut rng);
        Some(&z_basis * z)
    } else {
        None
    };
    let mut feasible = false;
    if let Some(theta) = &best {
        let margin = gamma2_margin(rg, i, theta, layout)?;
        feasible = margin > opts.eps.unwrap_or_else(|| default_eps(theta));
    }
    if !feasible {
        let full_basis = embed.clone();
        let mats = basis_margin(&full_basis)?;
        let theta = embed
            * penalized_descent(
                &restricted,
                &mats,
                best.as_ref().map(|t| t.select_rows(&allowed)),
                opts,
                &mut rng,
            );
        best = Some(theta);
    }
    let theta = best.expect("a candidate is always produced");
    let pd_margin = gamma2_margin(rg, i, &theta, layout)?;
    let eps = opts.eps.unwrap_or_else(|| default_eps(&theta));
    let residual = (&m_i * &theta).norm();
    Ok(PlayerCertificate {
        player: i,
        m_i,
        kernel: z_basis,
        theta,
        residual,
        pd_margin,
        eps,
        feasible: feasible && pd_margin > eps,
    })
}

fn combine(mats: &[Mat], z: &Vector) -> Mat {
    let mut a = Mat::zeros(mats[0].nrows(), mats[0].ncols());
    for (k, m) in mats.iter().enumerate() {
        a += m * z[k];
    }
    a
}

/// `λ_min(Σ zₖAₖ)` and a supergradient.
fn margin_and_supergradient(mats: &[Mat], z: &Vector) -> (f64, Vector) {
    let a = combine(mats, z);
    let eig = SymMat::symmetrize(&a).into_inner().symmetric_eigen();
    let (kmin, &lmin) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("margin matrix is nonempty");
    let v = eig.eigenvectors.column(kmin);
    let grad = Vector::from_fn(mats.len(), |k, _| (v.transpose() * &mats[k] * v)[(0, 0)]);
    (lmin, grad)
}

fn rounded_key(z: &Vector) -> Vec<i64> {
    z.iter().map(|x| (x * 1e9).round() as i64).collect()
}

fn better(cand: (f64, &Vector), best: (f64, &Vector)) -> bool {
    let tie = 1e-12 * (1.0 + best.0.abs());
    cand.0 > best.0 + tie
        || ((cand.0 - best.0).abs() <= tie && rounded_key(cand.1) < rounded_key(best.1))
}

/// Maximises `λ_min(Σ zₖAₖ)` over `‖z‖₂ = 1`.
fn maximize_margin(mats: &[Mat], opts: &IdentifyOptions, rng: &mut impl Rng) -> Vector {
    let d = mats.len();
    let eval = |z: &Vector| margin_and_supergradient(mats, z).0;
    if d == 1 {
        let (p, m) = (Vector::from_element(1, 1.0), Vector::from_element(1, -1.0));
        return if better((eval(&m), &m), (eval(&p), &p)) {
            m
        } else {
            p
        };
    }
    if d == 2 {
        let grid = 7200;
        let at = |phi: f64| Vector::from_vec(vec![phi.cos(), phi.sin()]);
        let mut best_phi = 0.0;
        let mut best_val = eval(&at(0.0));
        for k in 1..grid {
            let phi = std::f64::consts::TAU * k as f64 / grid as f64;
            let z = at(phi);
            let val = eval(&z);
            if better((val, &z), (best_val, &at(best_phi))) {
                best_phi = phi;
                best_val = val;
            }
        }
        // golden-section refinement inside the bracketing grid cells
        let h = std::f64::consts::TAU / grid as f64;
        let (mut lo, mut hi) = (best_phi - h, best_phi + h);
        let g = (5f64.sqrt() - 1.0) / 2.0;
        for _ in 0..80 {
            let (p1, p2) = (hi - g * (hi - lo), lo + g * (hi - lo));
            if eval(&at(p1)) >= eval(&at(p2)) {
                hi = p2;
            } else {
                lo = p1;
            }
        }
        let refined = at(0.5 * (lo + hi));
        return if eval(&refined) >= best_val {
            refined
        } else {
            at(best_phi)
        };
    }
    let mut best_z = unit(linalg::randn(rng, d, 1).column(0).into_owned());
    let mut best_val = eval(&best_z);
    for restart in 0..opts.restarts {
        let mut z = if restart == 0 {
            Vector::from_element(d, 1.0 / (d as f64).sqrt())
        } else {
            unit(linalg::randn(rng, d, 1).column(0).into_owned())
        };
        for it in 0..opts.iterations {
            let (_, g) = margin_and_supergradient(mats, &z);
            let step = 0.5 / (1.0 + it as f64).sqrt();
            z += g * step;
            let nz = z.norm();
            if nz > 1.0 {
                z /= nz;
            }
            let zu = unit(z.clone());
            let val = eval(&zu);
            if better((val, &zu), (best_val, &best_z)) {
                best_val = val;
                best_z = zu;
            }
        }
    }
    best_z
}

fn unit(z: Vector) -> Vector {
    let n = z.norm();
    if n == 0.0 {
        let mut e = Vector::zeros(z.len());
        e[0] = 1.0;
        e
    } else {
        z / n
    }
}

/// Minimises `‖𝓜θ‖² − μ·λ_min(R̄ᵢᵢ(θ))` over the unit sphere, with
/// `μ = 1e-3·‖𝓜‖₂²`.
fn penalized_descent(
    m: &Mat,
    mats: &[Mat],
    start: Option<Vector>,
    opts: &IdentifyOptions,
    rng: &mut impl Rng,
) -> Vector {
    let d = m.ncols();
    if d == 0 {
        return Vector::zeros(0);
    }
    let smax = linalg::singular_values(m).first().copied().unwrap_or(0.0);
    let mu = 1e-3 * smax.max(1e-12).powi(2);
    let mtm = m.transpose() * m;
    let objective = |z: &Vector| -> (f64, Vector) {
        let (lmin, g) = margin_and_supergradient(mats, z);
        let mz = &mtm * z;
        (z.dot(&mz) - mu * lmin, mz * 2.0 - g * mu)
    };
    let mut starts = Vec::new();
    if let Some(s) = start {
        starts.push(unit(s));
    }
    let restarts = opts.restarts.max(1);
    while starts.len() < restarts {
        starts.push(unit(linalg::randn(rng, d, 1).column(0).into_owned()));
    }
    let mut best = starts[0].clone();
    let mut best_val = objective(&best).0;
    let lr = 0.5 / (2.0 * smax * smax + mu).max(1e-12);
    for z0 in starts {
        let mut z = z0;
        for it in 0..opts.iterations {
            let (val, g) = objective(&z);
            if val < best_val {
                best_val = val;
                best = z.clone();
            }
            z = unit(&z - g * (lr / (1.0 + it as f64).sqrt()));
        }
    }
    best
}

/// `dim ker 𝓜ᵢ` against the bound `L − r·mᵢ`.
#[derive(Debug, Clone, PartialEq)]
pub struct DimensionReport {
    pub player: usize,
    pub kernel_dim: usize,
    pub l: usize,
    pub r_mi: usize,
    pub n_mi: usize,
    pub bound_holds: bool,
}

pub fn dimension_report(cert: &InverseCertificate, rg: &ReducedGame) -> Vec<DimensionReport> {
    let l = cert.layout.len();
    cert.players
        .iter()
        .map(|p| {
            let mi = rg.input_dims()[p.player];
            let kernel_dim = linalg::kernel_basis(&p.m_i, linalg::DEFAULT_KERNEL_TOL).ncols();
            DimensionReport {
                player: p.player,
                kernel_dim,
                l,
                r_mi: rg.r() * mi,
                n_mi: rg.n() * mi,
                bound_holds: kernel_dim + rg.r() * mi >= l,
            }
        })
        .collect()
}

/// `κθ` for `κ > 0`.
pub fn scale(theta: &Vector, kappa: f64) -> Result<Vector> {
    if !(kappa > 0.0 && kappa.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "scaling factor must be positive, got {kappa}"
        )));
    }
    Ok(theta * kappa)
}

/// One closed-loop behavior induced by the identified costs.
#[derive(Debug, Clone)]
pub struct Behavior {
    pub f_bar: Mat,
    pub spectrum: Vec<Complex64>,
    pub input_distance: f64,
    pub state_distance: f64,
    pub matches: bool,
}

#[derive(Debug, Clone)]
pub struct BehaviorReport {
    pub behaviors: Vec<Behavior>,
}

impl BehaviorReport {
    pub fn count(&self) -> usize {
        self.behaviors.len()
    }

    pub fn matching(&self) -> usize {
        self.behaviors.iter().filter(|b| b.matches).count()
    }
}

/// Settings of the behavior comparison.
#[derive(Debug, Clone)]
pub struct BehaviorOptions {
    pub x1_0: Option<Vector>,
    pub horizon: f64,
    pub dt: f64,
    /// Sup-norm threshold on the input trajectories.
    pub match_tol: f64,
}

impl Default for BehaviorOptions {
    fn default() -> Self {
        Self {
            x1_0: None,
            horizon: 10.0,
            dt: 0.01,
            match_tol: 1e-5,
        }
    }
}

/// Solves the forward game for `costs` and compares every equilibrium
/// behavior with the observed reduced feedback from a shared `x₁(0)`.
pub fn rationalized_behaviors(
    rg: &ReducedGame,
    costs: &CostParameters,
    observed: &ReducedFeedback,
    solver: &SolverOptions,
    opts: &BehaviorOptions,
) -> Result<BehaviorReport> {
    let set = solve_fbne(rg, costs, solver)?;
    let x1_0 = opts
        .x1_0
        .clone()
        .unwrap_or_else(|| Vector::from_element(rg.r(), 1.0));
    let reference = simulate(rg, Loop::Reduced(observed), &x1_0, opts.horizon, opts.dt)?;
    let behaviors = set
        .solutions
        .into_iter()
        .map(|sol| {
            let traj = simulate(rg, Loop::Reduced(&sol.f_bar), &x1_0, opts.horizon, opts.dt)?;
            let input_distance = traj.input_distance(&reference);
            Ok(Behavior {
                matches: input_distance <= opts.match_tol,
                state_distance: traj.state_distance(&reference),
                input_distance,
                f_bar: sol.f_bar.f_bar,
                spectrum: sol.spectrum,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BehaviorReport { behaviors })
}
