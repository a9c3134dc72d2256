//! Matrix-pencil analysis and the Weierstrass split of an index-1 pencil.
//!
//! The transformation pair `(X, Y)` is not unique. This module fixes one
//! construction: an SVD of `E` (sign-normalized), followed by block
//! elimination against the trailing block of `A`. Reduced-coordinate
//! quantities downstream depend on this choice; spectra, behaviors and
//! solution-set membership do not.

use num_complex::Complex64;
use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{
    self, all_finite, inverse_checked, numerical_rank, seeded_rng, singular_values, Mat, Vector,
};

/// Relative SVD cutoff used to decide `rank(E)`.
pub const RANK_TOL: f64 = 1e-10;
/// Relative cutoff used to decide invertibility of the trailing block of `A`.
pub const ALGEBRAIC_BLOCK_TOL: f64 = 1e-10;
/// A sample `λE − A` counts as nonsingular when `σ_min/σ_max` exceeds this.
pub const REGULARITY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Pencil {
    pub e: Mat,
    pub a: Mat,
}

impl Pencil {
    pub fn new(e: Mat, a: Mat) -> Result<Self> {
        if !e.is_square() || e.shape() != a.shape() {
            return Err(Error::Dimension(format!(
                "pencil needs square E and A of equal size, got {:?} and {:?}",
                e.shape(),
                a.shape()
            )));
        }
        if !all_finite(&e) || !all_finite(&a) {
            return Err(Error::NonFinite);
        }
        Ok(Self { e, a })
    }

    pub fn dim(&self) -> usize {
        self.e.nrows()
    }

    fn at(&self, lambda: f64) -> Mat {
        &self.e * lambda - &self.a
    }

    fn sample_scale(&self) -> f64 {
        let ne = self.e.norm();
        let na = self.a.norm();
        if ne > 0.0 && na > 0.0 {
            na / ne
        } else {
            1.0
        }
    }
}

fn well_conditioned(m: &Mat) -> bool {
    let s = singular_values(m);
    match (s.first(), s.last()) {
        (Some(&hi), Some(&lo)) => hi > 0.0 && lo > REGULARITY_TOL * hi,
        _ => true,
    }
}

/// First real sample point `λ` (from the deterministic grid) at which
/// `λE − A` is numerically nonsingular.
fn regular_sample(p: &Pencil) -> Option<f64> {
    let s = p.sample_scale();
    (1..=p.dim() + 1)
        .map(|k| k as f64 * s)
        .find(|&lambda| well_conditioned(&p.at(lambda)))
}

/// `det(λE − A) ≢ 0`, decided on `n+1` deterministic real shifts with a
/// seeded complex-shift fallback.
pub fn is_regular(p: &Pencil) -> bool {
    if p.dim() == 0 || regular_sample(p).is_some() {
        return true;
    }
    // Complex shifts: λE − A is singular iff its real embedding is.
    let s = p.sample_scale();
    let mut rng = seeded_rng(0x5eed);
    let n = p.dim();
    (0..8).any(|_| {
        let re: f64 = rng.gen_range(-2.0..2.0) * s;
        let im: f64 = rng.gen_range(0.5..2.0) * s;
        let m_re = &p.e * re - &p.a;
        let m_im = &p.e * im;
        linalg::complex_rank(&m_re, &m_im, REGULARITY_TOL) == n
    })
}

/// Index of a regular pencil: the smallest `k` with
/// `rank(Êᵏ) = rank(Êᵏ⁺¹)` where `Ê = (λ₀E − A)⁻¹E`.
pub fn index_of(p: &Pencil) -> Result<usize> {
    if !is_regular(p) {
        return Err(Error::IrregularPencil);
    }
    let n = p.dim();
    if n == 0 {
        return Ok(0);
    }
    let lambda0 = match regular_sample(p) {
        Some(l) => l,
        // regular only via a complex shift; search a wider real grid
        None => (1..=4 * n + 8)
            .map(|k| -(k as f64) * p.sample_scale() / 3.0)
            .find(|&l| well_conditioned(&p.at(l)))
            .ok_or(Error::IrregularPencil)?,
    };
    let e_hat = inverse_checked(&p.at(lambda0), "λ₀E − A")? * &p.e;
    let mut power = Mat::identity(n, n);
    let mut rank = n;
    for k in 0..=n {
        let next = &power * &e_hat;
        let next_rank = numerical_rank(&next, 1e-8);
        if next_rank == rank {
            return Ok(k);
        }
        power = next;
        rank = next_rank;
    }
    Ok(n)
}

/// `YᵀEX = diag(I_r, 0)` and `YᵀAX = diag(J, I_{n−r})`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeierstrassData {
    pub x: Mat,
    pub y: Mat,
    pub r: usize,
    pub j: Mat,
    pub index: usize,
    pub x1: Mat,
    pub x2: Mat,
    x_inv: Mat,
}

impl WeierstrassData {
    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn y1(&self) -> Mat {
        self.y.columns(0, self.r).into_owned()
    }

    pub fn y2(&self) -> Mat {
        self.y.columns(self.r, self.n() - self.r).into_owned()
    }

    pub fn x_inv(&self) -> &Mat {
        &self.x_inv
    }

    /// `x₁ = [I_r 0]X⁻¹x`.
    pub fn dynamic_part(&self, x: &Vector) -> Vector {
        self.x_inv.rows(0, self.r) * x
    }

    /// Applies a block-diagonal gauge `X₁ → X₁T₁`, `X₂ → X₂T₂` (with the
    /// matching inverse-transpose on `Y`), which yields another valid split.
    pub fn with_gauge(&self, t1: &Mat, t2: &Mat) -> Result<Self> {
        let (n, r) = (self.n(), self.r);
        if t1.shape() != (r, r) || t2.shape() != (n - r, n - r) {
            return Err(Error::Dimension(
                "gauge blocks must be r×r and (n−r)×(n−r)".into(),
            ));
        }
        let t1_inv = inverse_checked(t1, "gauge T1")?;
        let t2_inv = inverse_checked(t2, "gauge T2")?;
        let x1 = &self.x1 * t1;
        let x2 = &self.x2 * t2;
        let y1 = self.y1() * t1_inv.transpose();
        let y2 = self.y2() * t2_inv.transpose();
        let x = linalg::hstack(&[x1.clone(), x2.clone()]);
        let y = linalg::hstack(&[y1, y2]);
        let x_inv = inverse_checked(&x, "X")?;
        Ok(Self {
            j: &t1_inv * &self.j * t1,
            x,
            y,
            r,
            index: self.index,
            x1,
            x2,
            x_inv,
        })
    }

    /// Residuals `‖YᵀEX − diag(I,0)‖_max` and `‖YᵀAX − diag(J,I)‖_max`.
    pub fn residuals(&self, p: &Pencil) -> (f64, f64) {
        let (n, r) = (self.n(), self.r);
        let mut e_form = Mat::zeros(n, n);
        e_form.view_mut((0, 0), (r, r)).fill_with_identity();
        let a_form = linalg::block_diag(&[self.j.clone(), Mat::identity(n - r, n - r)]);
        let yt = self.y.transpose();
        (
            linalg::max_abs(&(&yt * &p.e * &self.x - e_form)),
            linalg::max_abs(&(&yt * &p.a * &self.x - a_form)),
        )
    }
}

/// Flip singular-vector pairs so the largest entry of each right vector is positive.
fn normalize_signs(u: &mut Mat, v: &mut Mat) {
    for k in 0..v.ncols() {
        let col = v.column(k);
        let (imax, _) = col.iter().enumerate().fold((0, -1.0), |best, (i, &x)| {
            if x.abs() > best.1 + 1e-12 {
                (i, x.abs())
            } else {
                best
            }
        });
        if col[imax] < 0.0 {
            v.column_mut(k).neg_mut();
            u.column_mut(k).neg_mut();
        }
    }
}

/// Weierstrass split of a regular index-≤1 pencil.
pub fn weierstrass(p: &Pencil) -> Result<WeierstrassData> {
    if !is_regular(p) {
        return Err(Error::IrregularPencil);
    }
    let n = p.dim();
    let r = numerical_rank(&p.e, RANK_TOL);

    if r == n {
        // ODE case: X = I, Yᵀ = E⁻¹.
        let e_inv = inverse_checked(&p.e, "E")?;
        let x = Mat::identity(n, n);
        return Ok(WeierstrassData {
            y: e_inv.transpose(),
            j: &e_inv * &p.a,
            r,
            index: 0,
            x1: x.clone(),
            x2: Mat::zeros(n, 0),
            x_inv: x.clone(),
            x,
        });
    }

    let svd = p.e.clone().svd(true, true);
    // nalgebra returns singular values in decreasing order.
    let mut u = svd.u.expect("u requested");
    let mut v = svd.v_t.expect("v_t requested").transpose();
    normalize_signs(&mut u, &mut v);
    let sigma = svd.singular_values.rows(0, r).into_owned();

    let a_t = u.transpose() * &p.a * &v;
    let a11 = a_t.view((0, 0), (r, r)).into_owned();
    let a12 = a_t.view((0, r), (r, n - r)).into_owned();
    let a21 = a_t.view((r, 0), (n - r, r)).into_owned();
    let a22 = a_t.view((r, r), (n - r, n - r)).into_owned();

    let a22_sv = singular_values(&a22);
    let a_scale = singular_values(&p.a)
        .first()
        .copied()
        .unwrap_or(0.0)
        .max(f64::MIN_POSITIVE);
    if a22_sv.last().copied().unwrap_or(0.0) <= ALGEBRAIC_BLOCK_TOL * a_scale {
        return Err(Error::ImpulsiveModes);
    }
    let a22_inv = inverse_checked(&a22, "A22")?;
    let sigma_inv = Mat::from_diagonal(&sigma.map(|s| 1.0 / s));

    // X̃ = [[I, 0], [−A22⁻¹A21, I]],  Ỹᵀ = [[Σ⁻¹, −Σ⁻¹A12A22⁻¹], [0, A22⁻¹]]
    let mut x_t = Mat::identity(n, n);
    x_t.view_mut((r, 0), (n - r, r))
        .copy_from(&(-(&a22_inv * &a21)));
    let mut yt_t = Mat::zeros(n, n);
    yt_t.view_mut((0, 0), (r, r)).copy_from(&sigma_inv);
    yt_t.view_mut((0, r), (r, n - r))
        .copy_from(&(-(&sigma_inv * &a12 * &a22_inv)));
    yt_t.view_mut((r, r), (n - r, n - r)).copy_from(&a22_inv);

    let x = &v * x_t;
    let y = &u * yt_t.transpose();
    let j = &sigma_inv * (a11 - &a12 * &a22_inv * &a21);
    let x_inv = inverse_checked(&x, "X")?;
    Ok(WeierstrassData {
        x1: x.columns(0, r).into_owned(),
        x2: x.columns(r, n - r).into_owned(),
        x,
        y,
        r,
        j,
        index: 1,
        x_inv,
    })
}

/// Finite eigenvalues of the pencil (eigenvalues of `J`).
pub fn finite_spectrum(p: &Pencil) -> Result<Vec<Complex64>> {
    linalg::eigvals(&weierstrass(p)?.j)
}

/// `S = X₁ − X₂B̄₂F̄`, the map from reduced to full closed-loop states.
pub fn preimage_map(w: &WeierstrassData, b2_bar: &Mat, f_bar: &Mat) -> Mat {
    if w.x2.ncols() == 0 {
        return w.x1.clone();
    }
    &w.x1 - &w.x2 * b2_bar * f_bar
}

/// Consistent initial state `x₀ = S·x1_0`.
pub fn consistent_initial(
    w: &WeierstrassData,
    b2_bar: &Mat,
    f_bar: &Mat,
    x1_0: &Vector,
) -> Result<Vector> {
    if x1_0.len() != w.r
        || f_bar.ncols() != w.r
        || b2_bar.nrows() != w.n() - w.r
        || b2_bar.ncols() != f_bar.nrows()
    {
        return Err(Error::Dimension(
            "consistent_initial: dimensions do not conform".into(),
        ));
    }
    Ok(preimage_map(w, b2_bar, f_bar) * x1_0)
}
