//! Finite-dimensional model of the split state space `H = H0 ⊕ H1`.
//!
//! A state is a flat vector laid out as `(x0 | x1)`. The generator is stored
//! blockwise as
//!
//! ```text
//!     A = [ -R0   D0 ]  = D - R
//!         [  D1  -R1 ]
//! ```
//!
//! with `R = diag(R0, R1)` the resistance and `D` the purely off-diagonal
//! interconnection.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{arg_err, dim_err, Error, Result};
use crate::scalar::Real;

pub type StateVector<T> = DVector<T>;

/// Dimensions of the two truncated subspaces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpaceDecomposition {
    n0: usize,
    n1: usize,
}

/// Selects one of the two subspaces.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    H0,
    H1,
}

impl SpaceDecomposition {
    pub fn new(n0: usize, n1: usize) -> Result<Self> {
        if n0 == 0 || n1 == 0 {
            return Err(arg_err(format!(
                "both subspaces need dimension >= 1 (got n0 = {n0}, n1 = {n1})"
            )));
        }
        Ok(Self { n0, n1 })
    }

    pub fn n0(&self) -> usize {
        self.n0
    }

    pub fn n1(&self) -> usize {
        self.n1
    }

    /// Total dimension `n0 + n1`.
    pub fn dim(&self) -> usize {
        self.n0 + self.n1
    }

    fn check<T: Real>(&self, x: &DVector<T>) -> Result<()> {
        if x.len() != self.dim() {
            return Err(dim_err(format!(
                "state of length {} does not match decomposition {} + {}",
                x.len(),
                self.n0,
                self.n1
            )));
        }
        Ok(())
    }

    /// Orthogonal projection `P0` or `P1`: zeroes the complementary block.
    pub fn project<T: Real>(&self, x: &DVector<T>, which: Block) -> Result<DVector<T>> {
        self.check(x)?;
        let mut out = x.clone();
        let zeroed = match which {
            Block::H0 => self.n0..self.dim(),
            Block::H1 => 0..self.n0,
        };
        for i in zeroed {
            out[i] = T::zero();
        }
        Ok(out)
    }

    /// Copies out the coordinates of one block (length `n0` or `n1`).
    pub fn component<T: Real>(&self, x: &DVector<T>, which: Block) -> Result<DVector<T>> {
        self.check(x)?;
        Ok(match which {
            Block::H0 => x.rows(0, self.n0).into_owned(),
            Block::H1 => x.rows(self.n0, self.n1).into_owned(),
        })
    }

    /// Glues `(x0 | x1)` back into a full state.
    pub fn join<T: Real>(&self, x0: &DVector<T>, x1: &DVector<T>) -> Result<DVector<T>> {
        if x0.len() != self.n0 || x1.len() != self.n1 {
            return Err(dim_err(format!(
                "blocks of lengths ({}, {}) do not match decomposition ({}, {})",
                x0.len(),
                x1.len(),
                self.n0,
                self.n1
            )));
        }
        let mut out = DVector::zeros(self.dim());
        out.rows_mut(0, self.n0).copy_from(x0);
        out.rows_mut(self.n0, self.n1).copy_from(x1);
        Ok(out)
    }
}

/// Free-function form of [`SpaceDecomposition::project`].
pub fn project<T: Real>(
    space: &SpaceDecomposition,
    x: &DVector<T>,
    which: Block,
) -> Result<DVector<T>> {
    space.project(x, which)
}

/// The four blocks of the generator `A = D - R`.
///
/// `r0`, `r1` are the resistance blocks as they enter `R` (so `A` carries
/// `-r0`, `-r1` on its diagonal). `d0` maps `H1 -> H0`, `d1` maps `H0 -> H1`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockOperator<T: Real> {
    r0: DMatrix<T>,
    r1: DMatrix<T>,
    d0: DMatrix<T>,
    d1: DMatrix<T>,
}

impl<T: Real> BlockOperator<T> {
    pub fn new(r0: DMatrix<T>, r1: DMatrix<T>, d0: DMatrix<T>, d1: DMatrix<T>) -> Result<Self> {
        let (n0, n1) = (r0.nrows(), r1.nrows());
        if !r0.is_square() || !r1.is_square() {
            return Err(dim_err("R0 and R1 must be square"));
        }
        if n0 == 0 || n1 == 0 {
            return Err(dim_err("empty resistance block"));
        }
        if d0.shape() != (n0, n1) {
            return Err(dim_err(format!(
                "D0 must be {n0}x{n1}, got {}x{}",
                d0.nrows(),
                d0.ncols()
            )));
        }
        if d1.shape() != (n1, n0) {
            return Err(dim_err(format!(
                "D1 must be {n1}x{n0}, got {}x{}",
                d1.nrows(),
                d1.ncols()
            )));
        }
        Ok(Self { r0, r1, d0, d1 })
    }

    pub fn decomposition(&self) -> SpaceDecomposition {
        SpaceDecomposition {
            n0: self.r0.nrows(),
            n1: self.r1.nrows(),
        }
    }

    pub fn r0(&self) -> &DMatrix<T> {
        &self.r0
    }

    pub fn r1(&self) -> &DMatrix<T> {
        &self.r1
    }

    pub fn d0(&self) -> &DMatrix<T> {
        &self.d0
    }

    pub fn d1(&self) -> &DMatrix<T> {
        &self.d1
    }

    /// Dense `A = D - R`.
    pub fn assemble(&self) -> DMatrix<T> {
        let mut a = self.d_part();
        let n0 = self.r0.nrows();
        let n1 = self.r1.nrows();
        a.view_mut((0, 0), (n0, n0)).copy_from(&(-&self.r0));
        a.view_mut((n0, n0), (n1, n1)).copy_from(&(-&self.r1));
        a
    }

    /// Block-diagonal resistance `R = diag(R0, R1)`.
    pub fn r_part(&self) -> DMatrix<T> {
        let (n0, n1) = (self.r0.nrows(), self.r1.nrows());
        let mut r = DMatrix::zeros(n0 + n1, n0 + n1);
        r.view_mut((0, 0), (n0, n0)).copy_from(&self.r0);
        r.view_mut((n0, n0), (n1, n1)).copy_from(&self.r1);
        r
    }

    /// Off-diagonal interconnection `D`.
    pub fn d_part(&self) -> DMatrix<T> {
        let (n0, n1) = (self.r0.nrows(), self.r1.nrows());
        let mut d = DMatrix::zeros(n0 + n1, n0 + n1);
        d.view_mut((0, n0), (n0, n1)).copy_from(&self.d0);
        d.view_mut((n0, 0), (n1, n0)).copy_from(&self.d1);
        d
    }

    /// Inverse of [`assemble`](Self::assemble).
    pub fn split(space: &SpaceDecomposition, a: &DMatrix<T>) -> Result<Self> {
        let n = space.dim();
        if a.shape() != (n, n) {
            return Err(dim_err(format!(
                "matrix is {}x{}, decomposition needs {n}x{n}",
                a.nrows(),
                a.ncols()
            )));
        }
        let (n0, n1) = (space.n0, space.n1);
        Self::new(
            -a.view((0, 0), (n0, n0)).into_owned(),
            -a.view((n0, n0), (n1, n1)).into_owned(),
            a.view((0, n0), (n0, n1)).into_owned(),
            a.view((n0, 0), (n1, n0)).into_owned(),
        )
    }

    /// Largest entrywise deviation of `D1` from `-D0^T`.
    pub fn skew_defect(&self) -> T {
        let t = self.d0.transpose();
        (&self.d1 + &t).amax()
    }

    /// True when `D1 = -D0^T` holds exactly.
    pub fn is_skew(&self) -> bool {
        self.skew_defect() == T::zero()
    }
}

/// `exp(tA)`, by scaling-and-squaring with a Padé approximant.
pub fn semigroup<T: Real>(a: &DMatrix<T>, t: T) -> Result<DMatrix<T>> {
    if !a.is_square() {
        return Err(dim_err("generator must be square"));
    }
    if t < T::zero() {
        return Err(arg_err(format!("semigroup time must be >= 0, got {t}")));
    }
    if t == T::zero() {
        return Ok(DMatrix::identity(a.nrows(), a.ncols()));
    }
    Ok((a * t).exp())
}

/// `S(t)x = exp(tA) x`.
pub fn semigroup_apply<T: Real>(a: &DMatrix<T>, t: T, x: &DVector<T>) -> Result<DVector<T>> {
    if x.len() != a.ncols() {
        return Err(dim_err(format!(
            "state of length {} for a {}x{} generator",
            x.len(),
            a.nrows(),
            a.ncols()
        )));
    }
    Ok(semigroup(a, t)? * x)
}

/// Chain of `m` mass–spring cells: positions in `H0`, momenta in `H1`.
///
/// `R0 = r_q I`, `R1 = r_p I`, `D0 = k K` with `K` the lower bidiagonal
/// backward-difference matrix, and `D1 = -D0^T`.
pub fn build_damped_wave_chain<T: Real>(m: usize, r_q: T, r_p: T, k: T) -> Result<BlockOperator<T>> {
    if m < 1 {
        return Err(arg_err("wave chain needs at least one cell"));
    }
    if r_q < T::zero() || r_p < T::zero() {
        return Err(arg_err("damping coefficients must be non-negative"));
    }
    let mut diff = DMatrix::<T>::identity(m, m);
    for i in 1..m {
        diff[(i, i - 1)] = -T::one();
    }
    let d0 = diff * k;
    let d1 = -d0.transpose();
    BlockOperator::new(
        DMatrix::identity(m, m) * r_q,
        DMatrix::identity(m, m) * r_p,
        d0,
        d1,
    )
}

/// Text form of a block operator: keys `n0`, `n1`, `R0`, `R1`, `D0`, `D1`,
/// matrices as row-major nested arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockOperatorDoc {
    pub n0: usize,
    pub n1: usize,
    #[serde(rename = "R0")]
    pub r0: Vec<Vec<f64>>,
    #[serde(rename = "R1")]
    pub r1: Vec<Vec<f64>>,
    #[serde(rename = "D0")]
    pub d0: Vec<Vec<f64>>,
    #[serde(rename = "D1")]
    pub d1: Vec<Vec<f64>>,
}

pub(crate) fn matrix_from_rows<T: Real>(
    name: &str,
    rows: &[Vec<f64>],
    nrows: usize,
    ncols: usize,
) -> Result<DMatrix<T>> {
    if rows.len() != nrows || rows.iter().any(|r| r.len() != ncols) {
        return Err(dim_err(format!("{name} must be {nrows}x{ncols}")));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| T::lit(rows[i][j])))
}

pub(crate) fn matrix_to_rows<T: Real>(m: &DMatrix<T>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)].to_f64_lossy()).collect())
        .collect()
}

impl BlockOperatorDoc {
    pub fn from_operator<T: Real>(op: &BlockOperator<T>) -> Self {
        let space = op.decomposition();
        Self {
            n0: space.n0,
            n1: space.n1,
            r0: matrix_to_rows(&op.r0),
            r1: matrix_to_rows(&op.r1),
            d0: matrix_to_rows(&op.d0),
            d1: matrix_to_rows(&op.d1),
        }
    }

    pub fn to_operator<T: Real>(&self) -> Result<BlockOperator<T>> {
        let (n0, n1) = (self.n0, self.n1);
        SpaceDecomposition::new(n0, n1)?;
        BlockOperator::new(
            matrix_from_rows("R0", &self.r0, n0, n0)?,
            matrix_from_rows("R1", &self.r1, n1, n1)?,
            matrix_from_rows("D0", &self.d0, n0, n1)?,
            matrix_from_rows("D1", &self.d1, n1, n0)?,
        )
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("plain numeric document always serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }
}
