//! Contraction-rate certificate for the generator and coefficients.
//!
//! ```text
//! λ_i   : <R_i x_i, x_i> >= λ_i |x_i|^2
//! β     : <D x, x>       <= β |x|^2
//! α     = min(λ0, λ1) - β
//! a     = α - sqrt(L_F)
//! ε     = 2a - L_sigma - L_gamma
//! ω     = -α                  (|S(t)| <= e^{ωt})
//! ```
//!
//! `ε > 0` certifies exponential mean-square stability at rate `ε` and
//! Wasserstein-2 contraction at rate `ε / 2`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::coefficients::CoefficientSet;
use crate::error::{dim_err, Error, Result};
use crate::linalg::{op_norm, sym_eigenvalues};
use crate::scalar::Real;
use crate::space::BlockOperator;

/// How `β` is obtained from the off-diagonal blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaMode {
    /// Top eigenvalue of the symmetric part of `D`.
    Sharp,
    /// `(|D0| + |D1|) / 2` from Young's inequality.
    RemarkBounded,
    /// `0`, valid only when `D1 = -D0^T`.
    RemarkSkew,
}

impl BetaMode {
    pub fn name(self) -> &'static str {
        match self {
            Self::Sharp => "sharp",
            Self::RemarkBounded => "remark_bounded",
            Self::RemarkSkew => "remark_skew",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "sharp" => Ok(Self::Sharp),
            "remark_bounded" => Ok(Self::RemarkBounded),
            "remark_skew" => Ok(Self::RemarkSkew),
            other => Err(Error::Config(format!("unknown beta mode '{other}'"))),
        }
    }
}

/// Smallest eigenvalue of `(R + R^T) / 2`: the sharpest `λ` with
/// `<R x, x> >= λ |x|^2`.
pub fn lambda_bound<T: Real>(r: &DMatrix<T>) -> Result<T> {
    Ok(sym_eigenvalues(r)?[0])
}

pub fn beta_bound<T: Real>(d0: &DMatrix<T>, d1: &DMatrix<T>, mode: BetaMode) -> Result<T> {
    let (n0, n1) = d0.shape();
    if d1.shape() != (n1, n0) {
        return Err(dim_err(format!(
            "D0 is {n0}x{n1} so D1 must be {n1}x{n0}, got {}x{}",
            d1.nrows(),
            d1.ncols()
        )));
    }
    match mode {
        BetaMode::Sharp => {
            let n = n0 + n1;
            let mut d = DMatrix::<T>::zeros(n, n);
            d.view_mut((0, n0), (n0, n1)).copy_from(d0);
            d.view_mut((n0, 0), (n1, n0)).copy_from(d1);
            Ok(*sym_eigenvalues(&d)?.last().expect("non-empty spectrum"))
        }
        BetaMode::RemarkBounded => Ok((op_norm(d0) + op_norm(d1)) * T::lit(0.5)),
        BetaMode::RemarkSkew => {
            let defect = (d1 + d0.transpose()).amax();
            if defect != T::zero() {
                return Err(Error::NotSkew(defect.to_f64_lossy()));
            }
            Ok(T::zero())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilityCertificate<T: Real> {
    pub lambda0: T,
    pub lambda1: T,
    pub beta: T,
    pub alpha: T,
    pub l_f: T,
    pub l_sigma: T,
    pub l_gamma: T,
    pub a: T,
    pub epsilon: T,
    pub omega: T,
    pub stable: bool,
}

impl<T: Real> StabilityCertificate<T> {
    /// Fills the derived fields from the five input constants.
    pub fn from_constants(lambda0: T, lambda1: T, beta: T, l_f: T, l_sigma: T, l_gamma: T) -> Self {
        let alpha = lambda0.min(lambda1) - beta;
        let a = alpha - l_f.sqrt();
        let epsilon = a + a - l_sigma - l_gamma;
        Self {
            lambda0,
            lambda1,
            beta,
            alpha,
            l_f,
            l_sigma,
            l_gamma,
            a,
            epsilon,
            omega: -alpha,
            stable: epsilon > T::zero(),
        }
    }

    /// Mean-square bound `e^{-εt} |x - y|^2`.
    pub fn mean_square_bound(&self, t: T, initial_sq_gap: T) -> T {
        (-self.epsilon * t).exp() * initial_sq_gap
    }

    /// Wasserstein bound `e^{-εt/2} W2(0)`.
    pub fn wasserstein_bound(&self, t: T, initial: T) -> T {
        (-self.epsilon * t * T::lit(0.5)).exp() * initial
    }
}

pub fn compute_certificate<T: Real>(
    blocks: &BlockOperator<T>,
    coeffs: &CoefficientSet<T>,
    mode: BetaMode,
) -> Result<StabilityCertificate<T>> {
    if blocks.decomposition() != coeffs.space() {
        return Err(dim_err("operator and coefficients use different decompositions"));
    }
    let lambda0 = lambda_bound(blocks.r0())?;
    let lambda1 = lambda_bound(blocks.r1())?;
    let beta = beta_bound(blocks.d0(), blocks.d1(), mode)?;
    let (l_f, l_sigma, l_gamma) = coeffs.lipschitz_constants();
    Ok(StabilityCertificate::from_constants(lambda0, lambda1, beta, l_f, l_sigma, l_gamma))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DissipativityReport<T: Real> {
    /// Largest `(<A(x-y), x-y> + <F(x)-F(y), x-y>) / |x-y|^2` seen.
    pub max_ratio: T,
    /// `-a`.
    pub bound: T,
    pub tolerance: T,
    pub pairs_checked: usize,
    pub pass: bool,
}

/// Tolerance on dissipativity ratios.
pub const DISSIPATIVITY_TOL: f64 = 1e-9;

/// Spot-checks `<Ax - Ay + F(x) - F(y), x - y> <= -a |x - y|^2` on sampled
/// pairs. Coincident pairs are skipped.
pub fn verify_dissipativity<T, I>(
    blocks: &BlockOperator<T>,
    coeffs: &CoefficientSet<T>,
    cert: &StabilityCertificate<T>,
    pairs: I,
) -> DissipativityReport<T>
where
    T: Real,
    I: IntoIterator<Item = (DVector<T>, DVector<T>)>,
{
    let a_mat = blocks.assemble();
    let drift = coeffs.drift();
    let mut max_ratio = T::lit(f64::NEG_INFINITY);
    let mut checked = 0;
    for (x, y) in pairs {
        let d = &x - &y;
        let d2 = d.norm_squared();
        if d2 == T::zero() {
            continue;
        }
        checked += 1;
        let lhs = (&a_mat * &d).dot(&d) + (drift.eval(&x) - drift.eval(&y)).dot(&d);
        let r = lhs / d2;
        if r > max_ratio {
            max_ratio = r;
        }
    }
    let bound = -cert.a;
    let tolerance = T::lit(DISSIPATIVITY_TOL);
    DissipativityReport {
        max_ratio,
        bound,
        tolerance,
        pairs_checked: checked,
        pass: checked > 0 && max_ratio <= bound + tolerance,
    }
}
