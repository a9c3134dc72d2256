//! Problem data and the reduction of a descriptor game to an `r`-dimensional
//! standard game with cross-weighted costs.

use crate::error::{Error, Result};
use crate::linalg::{self, complex_rank, eigvals, hstack, Mat, SymMat};
use crate::pencil::{weierstrass, Pencil, WeierstrassData};

/// Rank tolerance of the Hautus stabilizability test.
pub const HAUTUS_TOL: f64 = 1e-9;

/// `E ẋ = A x + Σᵢ Bᵢ uᵢ`.
#[derive(Debug, Clone)]
pub struct DescriptorGame {
    e: Mat,
    a: Mat,
    b: Vec<Mat>,
    split: WeierstrassData,
}

impl DescriptorGame {
    /// Validates dimensions, regularity with index ≤ 1 and stabilizability of
    /// every `(J, B̄₁ᵢ)`.
    pub fn new(e: Mat, a: Mat, b: Vec<Mat>) -> Result<Self> {
        let pencil = Pencil::new(e, a)?;
        let n = pencil.dim();
        if b.is_empty() {
            return Err(Error::InvalidArgument(
                "a game needs at least one player".into(),
            ));
        }
        for (i, bi) in b.iter().enumerate() {
            if bi.nrows() != n || bi.ncols() == 0 {
                return Err(Error::Dimension(format!(
                    "B[{i}] must be {n}×mᵢ with mᵢ ≥ 1, got {}x{}",
                    bi.nrows(),
                    bi.ncols()
                )));
            }
            if !linalg::all_finite(bi) {
                return Err(Error::NonFinite);
            }
        }
        let split = weierstrass(&pencil)?;
        let game = Self {
            e: pencil.e,
            a: pencil.a,
            b,
            split,
        };
        let rg = game.reduce_unchecked();
        for i in 0..rg.n_players() {
            if !stabilizable(&rg.j, &rg.b1_bar[i])? {
                return Err(Error::NotStabilizable { player: i });
            }
        }
        Ok(game)
    }

    pub fn e(&self) -> &Mat {
        &self.e
    }

    pub fn a(&self) -> &Mat {
        &self.a
    }

    pub fn b(&self) -> &[Mat] {
        &self.b
    }

    pub fn n(&self) -> usize {
        self.e.nrows()
    }

    pub fn n_players(&self) -> usize {
        self.b.len()
    }

    pub fn input_dims(&self) -> Vec<usize> {
        self.b.iter().map(|b| b.ncols()).collect()
    }

    pub fn m(&self) -> usize {
        self.input_dims().iter().sum()
    }

    pub fn b_stacked(&self) -> Mat {
        hstack(&self.b)
    }

    pub fn pencil(&self) -> Pencil {
        Pencil {
            e: self.e.clone(),
            a: self.a.clone(),
        }
    }

    pub fn split(&self) -> &WeierstrassData {
        &self.split
    }

    /// The same game with `E` replaced by the identity (the ODE model that
    /// treats algebraic rows as dynamics).
    pub fn as_ode(&self) -> Result<Self> {
        Self::new(
            Mat::identity(self.n(), self.n()),
            self.a.clone(),
            self.b.clone(),
        )
    }

    fn reduce_unchecked(&self) -> ReducedGame {
        ReducedGame::from_split(self.split.clone(), self.b.clone())
    }
}

/// Hautus test at every eigenvalue of `j` with nonnegative real part.
pub fn stabilizable(j: &Mat, b: &Mat) -> Result<bool> {
    let r = j.nrows();
    if r == 0 {
        return Ok(true);
    }
    let slack = 1e-9 * (1.0 + linalg::max_abs(j));
    for lambda in eigvals(j)? {
        if lambda.re < -slack {
            continue;
        }
        let re = hstack(&[Mat::identity(r, r) * lambda.re - j, b.clone()]);
        let im = hstack(&[Mat::identity(r, r) * lambda.im, Mat::zeros(r, b.ncols())]);
        if complex_rank(&re, &im, HAUTUS_TOL) < r {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Per-player weights `Qᵢ` and the table `Rᵢⱼ` (size `mⱼ × mⱼ`).
#[derive(Debug, Clone, PartialEq)]
pub struct CostParameters {
    pub q: Vec<SymMat>,
    pub r: Vec<Vec<SymMat>>,
}

impl CostParameters {
    pub fn new(q: Vec<SymMat>, r: Vec<Vec<SymMat>>) -> Self {
        Self { q, r }
    }

    pub fn zeros(n: usize, input_dims: &[usize]) -> Self {
        let np = input_dims.len();
        Self {
            q: vec![SymMat::zeros(n); np],
            r: (0..np)
                .map(|_| input_dims.iter().map(|&mj| SymMat::zeros(mj)).collect())
                .collect(),
        }
    }

    pub fn check_dims(&self, n: usize, input_dims: &[usize]) -> Result<()> {
        let np = input_dims.len();
        if self.q.len() != np || self.r.len() != np {
            return Err(Error::Dimension(format!(
                "costs describe {} players, game has {np}",
                self.q.len()
            )));
        }
        for i in 0..np {
            if self.q[i].dim() != n {
                return Err(Error::Dimension(format!("Q[{i}] must be {n}×{n}")));
            }
            if self.r[i].len() != np {
                return Err(Error::Dimension(format!("R[{i}] must have {np} blocks")));
            }
            for (j, &mj) in input_dims.iter().enumerate() {
                if self.r[i][j].dim() != mj {
                    return Err(Error::Dimension(format!("R[{i}][{j}] must be {mj}×{mj}")));
                }
            }
        }
        Ok(())
    }

    /// `α·self + β·other`.
    pub fn combine(&self, alpha: f64, other: &Self, beta: f64) -> Self {
        let lin =
            |x: &SymMat, y: &SymMat| SymMat::symmetrize(&(x.as_mat() * alpha + y.as_mat() * beta));
        Self {
            q: self
                .q
                .iter()
                .zip(&other.q)
                .map(|(x, y)| lin(x, y))
                .collect(),
            r: self
                .r
                .iter()
                .zip(&other.r)
                .map(|(ri, oi)| ri.iter().zip(oi).map(|(x, y)| lin(x, y)).collect())
                .collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.q
            .iter()
            .map(|q| linalg::max_abs(q))
            .chain(self.r.iter().flatten().map(|r| linalg::max_abs(r)))
            .fold(0.0, f64::max)
    }

    /// `Rᵢ = blkdiag{Rᵢⱼ}`.
    pub fn r_blockdiag(&self, i: usize) -> Mat {
        let blocks: Vec<Mat> = self.r[i].iter().map(|r| r.as_mat().clone()).collect();
        linalg::block_diag(&blocks)
    }
}

/// The dynamic part of a descriptor game: `ẋ₁ = Jx₁ + Σ B̄₁ᵢuᵢ`,
/// `x₂ = −Σ B̄₂ᵢuᵢ`.
#[derive(Debug, Clone)]
pub struct ReducedGame {
    pub split: WeierstrassData,
    pub j: Mat,
    pub b1_bar: Vec<Mat>,
    pub b2_bar: Vec<Mat>,
    b: Vec<Mat>,
}

pub fn reduce_game(g: &DescriptorGame) -> ReducedGame {
    g.reduce_unchecked()
}

impl ReducedGame {
    fn from_split(split: WeierstrassData, b: Vec<Mat>) -> Self {
        let y1t = split.y1().transpose();
        let y2t = split.y2().transpose();
        Self {
            j: split.j.clone(),
            b1_bar: b.iter().map(|bi| &y1t * bi).collect(),
            b2_bar: b.iter().map(|bi| &y2t * bi).collect(),
            b,
            split,
        }
    }

    /// Same game under a different valid split `(X₁T₁, X₂T₂)`.
    pub fn with_gauge(&self, t1: &Mat, t2: &Mat) -> Result<Self> {
        Ok(Self::from_split(
            self.split.with_gauge(t1, t2)?,
            self.b.clone(),
        ))
    }

    pub fn b(&self) -> &[Mat] {
        &self.b
    }

    pub fn n(&self) -> usize {
        self.split.n()
    }

    pub fn r(&self) -> usize {
        self.split.r
    }

    pub fn n_players(&self) -> usize {
        self.b.len()
    }

    pub fn input_dims(&self) -> Vec<usize> {
        self.b.iter().map(|b| b.ncols()).collect()
    }

    pub fn m(&self) -> usize {
        self.b.iter().map(|b| b.ncols()).sum()
    }

    /// Row offset of player `i` inside a stacked `m`-vector.
    pub fn offset(&self, i: usize) -> usize {
        self.b[..i].iter().map(|b| b.ncols()).sum()
    }

    pub fn b1(&self) -> Mat {
        hstack(&self.b1_bar)
    }

    pub fn b2(&self) -> Mat {
        hstack(&self.b2_bar)
    }

    /// `X₂B̄₂ⱼ`, the full-state direction in which `uⱼ` moves the algebraic part.
    pub fn algebraic_gain(&self, j: usize) -> Mat {
        &self.split.x2 * &self.b2_bar[j]
    }

    pub fn max_abs(&self) -> f64 {
        let mut s = linalg::max_abs(&self.j);
        for i in 0..self.n_players() {
            s = s
                .max(linalg::max_abs(&self.b1_bar[i]))
                .max(linalg::max_abs(&self.algebraic_gain(i)));
        }
        s.max(linalg::max_abs(&self.split.x1))
    }

    /// `Ā_cl = J + B̄₁F̄`.
    pub fn closed_loop(&self, f_bar: &Mat) -> Mat {
        &self.j + self.b1() * f_bar
    }
}

/// Blocks of the reduced cost matrix `Mᵢ` of one player.
#[derive(Debug, Clone)]
pub struct CostBlocks {
    pub q_bar: Mat,
    pub v_bar: Vec<Mat>,
    pub r_bar: Vec<Mat>,
    s_bar: Vec<Vec<Option<Mat>>>,
}

impl CostBlocks {
    /// `S̄ᵢⱼₖ = B̄₂ⱼᵀX₂ᵀQᵢX₂B̄₂ₖ` for `j ≠ k` (stored for both orders).
    pub fn s_bar(&self, j: usize, k: usize) -> &Mat {
        self.s_bar[j][k]
            .as_ref()
            .expect("S̄ is only defined for j ≠ k")
    }

    /// The full symmetric `(r+m) × (r+m)` matrix `Mᵢ`.
    pub fn m_matrix(&self) -> Mat {
        let np = self.r_bar.len();
        let mut rows = Vec::with_capacity(np + 1);
        let mut top = vec![self.q_bar.clone()];
        top.extend(self.v_bar.iter().cloned());
        rows.push(hstack(&top));
        for j in 0..np {
            let mut row = vec![self.v_bar[j].transpose()];
            for k in 0..np {
                row.push(if j == k {
                    self.r_bar[j].clone()
                } else {
                    self.s_bar(j, k).clone()
                });
            }
            rows.push(hstack(&row));
        }
        linalg::vstack(&rows)
    }
}

/// Explicit block formulas for player `i`.
pub fn cost_blocks(rg: &ReducedGame, c: &CostParameters, i: usize) -> Result<CostBlocks> {
    c.check_dims(rg.n(), &rg.input_dims())?;
    let q = c.q[i].as_mat();
    let x1 = &rg.split.x1;
    let np = rg.n_players();
    let gains: Vec<Mat> = (0..np).map(|j| rg.algebraic_gain(j)).collect();
    let q_bar = SymMat::symmetrize(&(x1.transpose() * q * x1)).into_inner();
    let v_bar = gains.iter().map(|g| -(x1.transpose() * q * g)).collect();
    let r_bar = (0..np)
        .map(|j| {
            SymMat::symmetrize(&(c.r[i][j].as_mat() + gains[j].transpose() * q * &gains[j]))
                .into_inner()
        })
        .collect();
    let s_bar = (0..np)
        .map(|j| {
            (0..np)
                .map(|k| (j != k).then(|| gains[j].transpose() * q * &gains[k]))
                .collect()
        })
        .collect();
    Ok(CostBlocks {
        q_bar,
        v_bar,
        r_bar,
        s_bar,
    })
}

/// Everything the forward solver needs about one cost tuple.
#[derive(Debug, Clone)]
pub struct ReducedCosts {
    pub blocks: Vec<CostBlocks>,
    /// `Mᵢ` per player.
    pub m: Vec<Mat>,
    /// `Ḡ`, `m × m`.
    pub g_bar: Mat,
    /// `V̄ᵀ` with block row `i` equal to `V̄ᵢᵢᵀ`, `m × r`.
    pub v_bar_t: Mat,
}

impl ReducedCosts {
    pub fn new(rg: &ReducedGame, c: &CostParameters) -> Result<Self> {
        let np = rg.n_players();
        let blocks = (0..np)
            .map(|i| cost_blocks(rg, c, i))
            .collect::<Result<Vec<_>>>()?;
        let m = blocks.iter().map(CostBlocks::m_matrix).collect();
        let g_bar = gbar_from_blocks(&blocks);
        let rows: Vec<Mat> = (0..np).map(|i| blocks[i].v_bar[i].transpose()).collect();
        Ok(Self {
            blocks,
            m,
            g_bar,
            v_bar_t: linalg::vstack(&rows),
        })
    }
}

fn gbar_from_blocks(blocks: &[CostBlocks]) -> Mat {
    let np = blocks.len();
    let rows: Vec<Mat> = (0..np)
        .map(|i| {
            let row: Vec<Mat> = (0..np)
                .map(|j| {
                    if i == j {
                        blocks[i].r_bar[i].clone()
                    } else {
                        blocks[i].s_bar(i, j).clone()
                    }
                })
                .collect();
            hstack(&row)
        })
        .collect();
    linalg::vstack(&rows)
}

/// `Ḡ` with diagonal blocks `R̄ᵢᵢ` and off-diagonal blocks `S̄ᵢᵢⱼ`.
pub fn gbar_matrix(rg: &ReducedGame, c: &CostParameters) -> Result<Mat> {
    let blocks = (0..rg.n_players())
        .map(|i| cost_blocks(rg, c, i))
        .collect::<Result<Vec<_>>>()?;
    Ok(gbar_from_blocks(&blocks))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{mat, Vector};
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

    fn gt_costs() -> CostParameters {
        CostParameters::new(
            vec![
                SymMat::from_diagonal(&[1.0, 0.5, 0.1]),
                SymMat::from_diagonal(&[3.0, 2.0, 0.1]),
            ],
            vec![
                vec![SymMat::from_diagonal(&[2.0]), SymMat::from_diagonal(&[0.5])],
                vec![SymMat::from_diagonal(&[1.0]), SymMat::from_diagonal(&[0.5])],
            ],
        )
    }

    #[test]
    fn lane_keeping_algebraic_part_is_the_input_sum() {
        let rg = reduce_game(&lane_keeping());
        assert_eq!(rg.r(), 2);
        // x₂ direction in full coordinates: X₂B̄₂ᵢ = −e₃/K_s for both players,
        // i.e. δ = (u_h + u_a)/K_s.
        for i in 0..2 {
            let g = rg.algebraic_gain(i);
            assert_relative_eq!(g, mat(3, 1, &[0.0, 0.0, -0.1]), epsilon = 1e-14);
        }
    }

    #[test]
    fn ode_game_reduces_to_itself() {
        let a = mat(2, 2, &[0.0, 1.0, -1.0, 0.5]);
        let b = mat(2, 1, &[0.0, 1.0]);
        let g = DescriptorGame::new(Mat::identity(2, 2), a.clone(), vec![b.clone()]).unwrap();
        let rg = reduce_game(&g);
        assert_eq!(rg.j, a);
        assert_eq!(rg.b1_bar[0], b);
        assert_eq!(rg.b2_bar[0].shape(), (0, 1));
        let c = CostParameters::new(
            vec![SymMat::identity(2)],
            vec![vec![SymMat::from_diagonal(&[3.0])]],
        );
        let blocks = cost_blocks(&rg, &c, 0).unwrap();
        assert_eq!(blocks.r_bar[0], mat(1, 1, &[3.0]));
        assert_eq!(blocks.v_bar[0], Mat::zeros(2, 1));
        assert_eq!(blocks.q_bar, Mat::identity(2, 2));
    }

    #[test]
    fn zero_state_weight_blocks() {
        let rg = reduce_game(&lane_keeping());
        let mut c = gt_costs();
        c.q = vec![SymMat::zeros(3), SymMat::zeros(3)];
        for i in 0..2 {
            let b = cost_blocks(&rg, &c, i).unwrap();
            assert_eq!(b.q_bar, Mat::zeros(2, 2));
            for j in 0..2 {
                assert_eq!(b.v_bar[j], Mat::zeros(2, 1));
                assert_eq!(&b.r_bar[j], c.r[i][j].as_mat());
            }
            assert_eq!(b.s_bar(0, 1), &Mat::zeros(1, 1));
        }
    }

    #[test]
    fn lane_keeping_ground_truth_blocks() {
        let rg = reduce_game(&lane_keeping());
        let c = gt_costs();
        let b = cost_blocks(&rg, &c, 0).unwrap();
        // R̄_hh = R_hh + Q_h[δ,δ]/K_s² = 2 + 0.1/100
        assert_relative_eq!(b.r_bar[0][(0, 0)], 2.001, epsilon = 1e-12);
        let g = gbar_matrix(&rg, &c).unwrap();
        assert!(g.determinant().abs() > 1e-3);
    }

    #[test]
    fn gbar_small_cases() {
        let rg = reduce_game(&lane_keeping());
        let mut c = CostParameters::zeros(3, &[1, 1]);
        for i in 0..2 {
            for j in 0..2 {
                c.r[i][j] = SymMat::identity(1);
            }
        }
        assert_eq!(gbar_matrix(&rg, &c).unwrap(), Mat::identity(2, 2));

        let g1 = DescriptorGame::new(
            Mat::identity(2, 2),
            mat(2, 2, &[0.0, 1.0, 0.0, 0.0]),
            vec![mat(2, 1, &[0.0, 1.0])],
        )
        .unwrap();
        let rg1 = reduce_game(&g1);
        let c1 = CostParameters::new(
            vec![SymMat::identity(2)],
            vec![vec![SymMat::from_diagonal(&[4.0])]],
        );
        let blocks = cost_blocks(&rg1, &c1, 0).unwrap();
        assert_eq!(gbar_matrix(&rg1, &c1).unwrap(), blocks.r_bar[0]);
    }

    #[test]
    fn unstabilizable_pair_is_rejected() {
        // second state is an uncontrollable unstable mode
        let err = DescriptorGame::new(
            Mat::identity(2, 2),
            mat(2, 2, &[0.0, 0.0, 0.0, 1.0]),
            vec![mat(2, 1, &[1.0, 0.0])],
        )
        .unwrap_err();
        assert!(matches!(err, Error::NotStabilizable { player: 0 }));
    }
}
