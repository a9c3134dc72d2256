//! Dense linear-algebra substrate.
//!
//! Everything here works on `nalgebra` dynamic matrices with column-major
//! storage, so `vec` is a plain copy of the storage slice.

use std::ops::Deref;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Relative asymmetry accepted by [`SymMat::new`].
pub const SYMMETRY_TOL: f64 = 1e-12;
/// Default relative singular-value cutoff for [`kernel_basis`].
pub const DEFAULT_KERNEL_TOL: f64 = 1e-9;
/// Pivot ratio below which a factorization is reported singular.
pub const SINGULAR_PIVOT_RATIO: f64 = 1e-13;

pub fn max_abs(m: &Mat) -> f64 {
    m.iter().fold(0.0_f64, |acc, &x| acc.max(x.abs()))
}

pub fn all_finite(m: &Mat) -> bool {
    m.iter().all(|x| x.is_finite())
}

/// Real symmetric matrix. Construction checks symmetry and then stores the
/// exact symmetric part.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMat(Mat);

impl SymMat {
    pub fn new(m: Mat) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::Dimension(format!(
                "symmetric matrix must be square, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        if !all_finite(&m) {
            return Err(Error::NonFinite);
        }
        let asymmetry = max_abs(&(&m - m.transpose()));
        if asymmetry > SYMMETRY_TOL * (1.0 + max_abs(&m)) {
            return Err(Error::NotSymmetric { asymmetry });
        }
        Ok(Self::symmetrize(&m))
    }

    /// Symmetric part `(m + mᵀ)/2` without any tolerance check.
    pub fn symmetrize(m: &Mat) -> Self {
        SymMat((m + m.transpose()) * 0.5)
    }

    pub fn zeros(n: usize) -> Self {
        SymMat(Mat::zeros(n, n))
    }

    pub fn identity(n: usize) -> Self {
        SymMat(Mat::identity(n, n))
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        SymMat(Mat::from_diagonal(&Vector::from_column_slice(d)))
    }

    pub fn from_vech(v: &[f64], n: usize) -> Result<Self> {
        if v.len() != vech_len(n) {
            return Err(Error::Dimension(format!(
                "vech of a {n}x{n} matrix has {} entries, got {}",
                vech_len(n),
                v.len()
            )));
        }
        let mut m = Mat::zeros(n, n);
        let mut k = 0;
        for j in 0..n {
            for i in j..n {
                m[(i, j)] = v[k];
                m[(j, i)] = v[k];
                k += 1;
            }
        }
        Ok(SymMat(m))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn vech(&self) -> Vector {
        let n = self.dim();
        let mut out = Vec::with_capacity(vech_len(n));
        for j in 0..n {
            for i in j..n {
                out.push(self.0[(i, j)]);
            }
        }
        Vector::from_vec(out)
    }

    pub fn as_mat(&self) -> &Mat {
        &self.0
    }

    pub fn into_inner(self) -> Mat {
        self.0
    }

    pub fn scaled(&self, k: f64) -> Self {
        SymMat(&self.0 * k)
    }

    /// Congruence `Tᵀ M T`, symmetric by construction.
    pub fn congruence(&self, t: &Mat) -> SymMat {
        SymMat::symmetrize(&(t.transpose() * &self.0 * t))
    }
}

impl Deref for SymMat {
    type Target = Mat;

    fn deref(&self) -> &Mat {
        &self.0
    }
}

pub fn vech_len(n: usize) -> usize {
    n * (n + 1) / 2
}

pub fn kron(a: &Mat, b: &Mat) -> Mat {
    a.kronecker(b)
}

/// Column-wise vectorization.
pub fn vec(a: &Mat) -> Vector {
    Vector::from_column_slice(a.as_slice())
}

pub fn unvec(v: &Vector, rows: usize, cols: usize) -> Result<Mat> {
    if v.len() != rows * cols {
        return Err(Error::Dimension(format!(
            "cannot reshape {} entries into {rows}x{cols}",
            v.len()
        )));
    }
    Ok(Mat::from_column_slice(rows, cols, v.as_slice()))
}

/// Half-vectorization of a symmetric matrix: lower triangle, column by column.
pub fn vech(a: &Mat) -> Result<Vector> {
    Ok(SymMat::new(a.clone())?.vech())
}

/// The `n² × n(n+1)/2` zero-one matrix with `vec(A) = D·vech(A)` for symmetric `A`.
pub fn duplication_matrix(n: usize) -> Mat {
    let mut d = Mat::zeros(n * n, vech_len(n));
    let mut col = 0;
    for j in 0..n {
        for i in j..n {
            d[(i + j * n, col)] = 1.0;
            d[(j + i * n, col)] = 1.0;
            col += 1;
        }
    }
    d
}

/// LU factorization with an explicit singularity verdict based on the pivot ratio.
pub struct CheckedLu {
    // `None` for the empty matrix, which nalgebra cannot factor
    lu: Option<nalgebra::linalg::FullPivLU<f64, nalgebra::Dyn, nalgebra::Dyn>>,
    dim: usize,
}

impl CheckedLu {
    pub fn new(a: &Mat, what: &'static str) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::Dimension(format!(
                "{what}: expected a square matrix, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if !all_finite(a) {
            return Err(Error::NonFinite);
        }
        let dim = a.nrows();
        if dim == 0 {
            return Ok(Self { lu: None, dim });
        }
        let lu = a.clone().full_piv_lu();
        {
            let u = lu.u();
            let diag: Vec<f64> = (0..dim).map(|i| u[(i, i)].abs()).collect();
            let hi = diag.iter().cloned().fold(0.0, f64::max);
            let lo = diag.iter().cloned().fold(f64::INFINITY, f64::min);
            if hi == 0.0 || lo <= SINGULAR_PIVOT_RATIO * hi {
                return Err(Error::Singular(what));
            }
        }
        Ok(Self { lu: Some(lu), dim })
    }

    pub fn solve(&self, b: &Mat) -> Mat {
        debug_assert_eq!(b.nrows(), self.dim);
        match &self.lu {
            Some(lu) => lu
                .solve(b)
                .expect("factorization was checked to be nonsingular"),
            None => Mat::zeros(0, b.ncols()),
        }
    }

    pub fn inverse(&self) -> Mat {
        self.solve(&Mat::identity(self.dim, self.dim))
    }
}

pub fn inverse_checked(a: &Mat, what: &'static str) -> Result<Mat> {
    Ok(CheckedLu::new(a, what)?.inverse())
}

/// The operator `P ↦ AᵀP + PA` in Kronecker form,
/// `𝓚 = (I ⊗ Aᵀ) + (Aᵀ ⊗ I)`, factored once and reused.
pub struct LyapunovOperator {
    n: usize,
    k: Mat,
    lu: CheckedLu,
}

impl LyapunovOperator {
    pub fn new(a_cl: &Mat) -> Result<Self> {
        if !a_cl.is_square() {
            return Err(Error::Dimension(
                "Lyapunov: closed-loop matrix must be square".into(),
            ));
        }
        let n = a_cl.nrows();
        let k = kronecker_sum_transpose(a_cl);
        let lu = CheckedLu::new(&k, "Lyapunov operator").map_err(|e| match e {
            Error::Singular(_) => Error::SingularLyapunov,
            other => other,
        })?;
        Ok(Self { n, k, lu })
    }

    pub fn matrix(&self) -> &Mat {
        &self.k
    }

    /// Solves `AᵀP + PA + Q = 0` for a general square `Q`, with one step of
    /// iterative refinement.
    pub fn solve(&self, q: &Mat) -> Mat {
        let rhs = -vec(q);
        let rhs = Mat::from_column_slice(rhs.len(), 1, rhs.as_slice());
        let mut x = self.lu.solve(&rhs);
        let r = &rhs - &self.k * &x;
        x += self.lu.solve(&r);
        Mat::from_column_slice(self.n, self.n, x.as_slice())
    }

    pub fn solve_sym(&self, q: &Mat) -> SymMat {
        SymMat::symmetrize(&self.solve(q))
    }
}

/// `(I ⊗ Aᵀ) + (Aᵀ ⊗ I)`.
pub fn kronecker_sum_transpose(a: &Mat) -> Mat {
    let n = a.nrows();
    let at = a.transpose();
    let eye = Mat::identity(n, n);
    kron(&eye, &at) + kron(&at, &eye)
}

/// Symmetric `P` with `a_clᵀP + P·a_cl + q = 0`.
pub fn solve_lyapunov(a_cl: &Mat, q: &SymMat) -> Result<SymMat> {
    if q.dim() != a_cl.nrows() {
        return Err(Error::Dimension(format!(
            "Lyapunov: q is {0}x{0} but a_cl is {1}x{1}",
            q.dim(),
            a_cl.nrows()
        )));
    }
    Ok(LyapunovOperator::new(a_cl)?.solve_sym(q))
}

pub fn singular_values(m: &Mat) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    let mut s: Vec<f64> = m
        .clone()
        .svd(false, false)
        .singular_values
        .iter()
        .copied()
        .collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Number of singular values above `tol·σ_max`.
pub fn numerical_rank(m: &Mat, tol: f64) -> usize {
    let s = singular_values(m);
    match s.first() {
        Some(&smax) if smax > 0.0 => s.iter().filter(|&&x| x > tol * smax).count(),
        _ => 0,
    }
}

/// Orthonormal basis of the numerical kernel (singular values `< tol·σ_max`).
pub fn kernel_basis(m: &Mat, tol: f64) -> Mat {
    let (rows, cols) = m.shape();
    if cols == 0 {
        return Mat::zeros(0, 0);
    }
    // Pad to at least square so the SVD returns a full right basis.
    let padded = if rows < cols {
        let mut p = Mat::zeros(cols, cols);
        p.view_mut((0, 0), (rows, cols)).copy_from(m);
        p
    } else {
        m.clone()
    };
    let svd = padded.svd(false, true);
    let v_t = svd.v_t.expect("right singular vectors were requested");
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let mut picked: Vec<(f64, usize)> = svd
        .singular_values
        .iter()
        .enumerate()
        .filter(|(_, &s)| smax == 0.0 || s < tol * smax)
        .map(|(i, &s)| (s, i))
        .collect();
    picked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut z = Mat::zeros(cols, picked.len());
    for (c, &(_, i)) in picked.iter().enumerate() {
        z.set_column(c, &v_t.row(i).transpose());
    }
    z
}

/// Moore–Penrose pseudoinverse with a relative cutoff; also returns the rank used.
pub fn pinv(m: &Mat, rcond: f64) -> (Mat, usize) {
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return (Mat::zeros(cols, rows), 0);
    }
    let svd = m.clone().svd(true, true);
    let u = svd.u.expect("u requested");
    let v_t = svd.v_t.expect("v_t requested");
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let mut out = Mat::zeros(cols, rows);
    let mut rank = 0;
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if smax > 0.0 && s > rcond * smax {
            rank += 1;
            out += v_t.row(k).transpose() * u.column(k).transpose() / s;
        }
    }
    (out, rank)
}

/// Eigenvalues of a real square matrix, sorted by (real, imaginary) part.
pub fn eigvals(a: &Mat) -> Result<Vec<Complex64>> {
    if !a.is_square() {
        return Err(Error::Dimension("eigvals: matrix must be square".into()));
    }
    if a.nrows() == 0 {
        return Ok(Vec::new());
    }
    if !all_finite(a) {
        return Err(Error::NonFinite);
    }
    let schur = a
        .clone()
        .try_schur(f64::EPSILON, 100_000)
        .ok_or(Error::EigenNonConvergence)?;
    let mut ev: Vec<Complex64> = schur.complex_eigenvalues().iter().copied().collect();
    sort_spectrum(&mut ev);
    Ok(ev)
}

pub fn sort_spectrum(ev: &mut [Complex64]) {
    ev.sort_by(|x, y| x.re.total_cmp(&y.re).then(x.im.total_cmp(&y.im)));
}

pub fn max_real_part(ev: &[Complex64]) -> f64 {
    ev.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max)
}

/// All eigenvalues strictly in the open left half-plane.
pub fn is_stable(ev: &[Complex64]) -> bool {
    ev.iter().all(|z| z.re < 0.0)
}

pub fn is_stable_matrix(a: &Mat) -> bool {
    eigvals(a).map(|ev| is_stable(&ev)).unwrap_or(false)
}

/// Greedy nearest matching of two spectra; returns the largest matched
/// distance, or `None` when the multisets have different sizes.
pub fn spectral_distance(a: &[Complex64], b: &[Complex64]) -> Option<f64> {
    if a.len() != b.len() {
        return None;
    }
    let mut used = vec![false; b.len()];
    let mut worst = 0.0_f64;
    for za in a {
        let (idx, d) = b
            .iter()
            .enumerate()
            .filter(|(j, _)| !used[*j])
            .map(|(j, zb)| (j, (za - zb).norm()))
            .min_by(|x, y| x.1.total_cmp(&y.1))?;
        used[idx] = true;
        worst = worst.max(d);
    }
    Some(worst)
}

pub fn spectra_match(a: &[Complex64], b: &[Complex64], tol: f64) -> bool {
    spectral_distance(a, b).is_some_and(|d| d <= tol)
}

/// Smallest eigenvalue of a symmetric matrix (`+∞` for the empty matrix).
pub fn min_eig_sym(a: &Mat) -> f64 {
    if a.nrows() == 0 {
        return f64::INFINITY;
    }
    SymMat::symmetrize(a)
        .into_inner()
        .symmetric_eigenvalues()
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

pub fn is_pd(a: &Mat, eps: f64) -> bool {
    min_eig_sym(a) > eps
}

/// Rank of the complex matrix `re + i·im`, computed through its real embedding.
pub fn complex_rank(re: &Mat, im: &Mat, tol: f64) -> usize {
    let (r, c) = re.shape();
    let mut big = Mat::zeros(2 * r, 2 * c);
    big.view_mut((0, 0), (r, c)).copy_from(re);
    big.view_mut((0, c), (r, c)).copy_from(&(-im));
    big.view_mut((r, 0), (r, c)).copy_from(im);
    big.view_mut((r, c), (r, c)).copy_from(re);
    numerical_rank(&big, tol) / 2
}

/// Stabilizing solution of `AᵀP + PA − PBR⁻¹BᵀP + Q = 0`, computed from the
/// matrix sign function of the Hamiltonian.
pub fn solve_are(a: &Mat, b: &Mat, q: &Mat, r: &Mat) -> Result<SymMat> {
    let n = a.nrows();
    if !a.is_square()
        || b.nrows() != n
        || q.shape() != (n, n)
        || r.shape() != (b.ncols(), b.ncols())
    {
        return Err(Error::Dimension("ARE: inconsistent dimensions".into()));
    }
    let r_inv = inverse_checked(r, "ARE input weight")?;
    let s = b * r_inv * b.transpose();
    let mut h = Mat::zeros(2 * n, 2 * n);
    h.view_mut((0, 0), (n, n)).copy_from(a);
    h.view_mut((0, n), (n, n)).copy_from(&(-&s));
    h.view_mut((n, 0), (n, n)).copy_from(&(-q));
    h.view_mut((n, n), (n, n)).copy_from(&(-a.transpose()));

    let mut z = h;
    let mut converged = false;
    let mut prev_delta = f64::INFINITY;
    for _ in 0..100 {
        let z_inv = inverse_checked(&z, "Hamiltonian sign iteration")?;
        let det = z.determinant().abs();
        let c = if det.is_finite() && det > 0.0 {
            det.powf(1.0 / (2.0 * n as f64))
        } else {
            1.0
        };
        let next = (&z / c + z_inv * c) * 0.5;
        let delta = (&next - &z).abs().sum();
        let scale = z.abs().sum();
        z = next;
        // ill-conditioned Hamiltonians stall at a rounding floor above 1e-12
        if delta <= 1e-12 * scale || (delta <= 1e-6 * scale && delta >= prev_delta) {
            converged = true;
            break;
        }
        prev_delta = delta;
    }
    if !converged {
        return Err(Error::EigenNonConvergence);
    }
    let eye = Mat::identity(n, n);
    let w11 = z.view((0, 0), (n, n)).into_owned();
    let w12 = z.view((0, n), (n, n)).into_owned();
    let w21 = z.view((n, 0), (n, n)).into_owned();
    let w22 = z.view((n, n), (n, n)).into_owned();
    let mut lhs = Mat::zeros(2 * n, n);
    lhs.view_mut((0, 0), (n, n)).copy_from(&w12);
    lhs.view_mut((n, 0), (n, n)).copy_from(&(w22 + &eye));
    let mut rhs = Mat::zeros(2 * n, n);
    rhs.view_mut((0, 0), (n, n)).copy_from(&(-(w11 + &eye)));
    rhs.view_mut((n, 0), (n, n)).copy_from(&(-w21));
    let (lhs_pinv, rank) = pinv(&lhs, 1e-12);
    if rank < n {
        return Err(Error::Singular("ARE stable subspace"));
    }
    let p = SymMat::symmetrize(&(lhs_pinv * rhs));
    let res = a.transpose() * p.as_mat() + p.as_mat() * a - p.as_mat() * &s * p.as_mat() + q;
    let a_cl = a - &s * p.as_mat();
    let pm = max_abs(p.as_mat());
    let terms = 1.0 + max_abs(q) + 2.0 * pm * max_abs(a) + pm * pm * max_abs(&s);
    if max_abs(&res) > 1e-8 * terms || !is_stable_matrix(&a_cl) {
        return Err(Error::EigenNonConvergence);
    }
    Ok(p)
}

pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn randn(rng: &mut impl rand::Rng, rows: usize, cols: usize) -> Mat {
    Mat::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

/// Horizontal concatenation of blocks sharing a row count.
pub fn hstack(blocks: &[Mat]) -> Mat {
    let rows = blocks.first().map_or(0, |b| b.nrows());
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = Mat::zeros(rows, cols);
    let mut c = 0;
    for b in blocks {
        assert_eq!(b.nrows(), rows, "hstack: row mismatch");
        out.view_mut((0, c), b.shape()).copy_from(b);
        c += b.ncols();
    }
    out
}

/// Vertical concatenation of blocks sharing a column count.
pub fn vstack(blocks: &[Mat]) -> Mat {
    let cols = blocks.first().map_or(0, |b| b.ncols());
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = Mat::zeros(rows, cols);
    let mut r = 0;
    for b in blocks {
        assert_eq!(b.ncols(), cols, "vstack: column mismatch");
        out.view_mut((r, 0), b.shape()).copy_from(b);
        r += b.nrows();
    }
    out
}

pub fn block_diag(blocks: &[Mat]) -> Mat {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = Mat::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), b.shape()).copy_from(b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

/// Row-major constructor, mostly for fixtures and tests.
pub fn mat(rows: usize, cols: usize, row_major: &[f64]) -> Mat {
    Mat::from_row_slice(rows, cols, row_major)
}
