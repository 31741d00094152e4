//! Nonlinear coefficients: drift `F`, diffusion `σ`, jump amplitude `γ`.
//!
//! Every map carries a declared *squared* Lipschitz constant:
//!
//! ```text
//! |F(x) - F(y)|^2                      <= L_F     |x - y|^2
//! |(σ(x) - σ(y)) q_half|_HS^2          <= L_sigma |x - y|^2
//! ∫ |γ(x, η) - γ(y, η)|^2 μ(dη)         <= L_gamma |x - y|^2
//! ```
//!
//! The diffusion acts on Wiener increments `ΔW = q_half ξ sqrt(dt)` living in
//! the state space, so `σ(x)` is `n x n` and its Hilbert–Schmidt norm is
//! taken on the range of `q_half`.
//!
//! Built-in families compute their constants analytically; user-supplied maps
//! implement the traits directly and declare their own.

use std::fmt::Debug;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{arg_err, dim_err, Result};
use crate::linalg::op_norm;
use crate::noise::{derive_stream, tag, RngStream};
use crate::scalar::Real;
use crate::space::SpaceDecomposition;

pub trait DriftMap<T: Real>: Send + Sync + Debug {
    fn dim(&self) -> usize;
    fn eval(&self, x: &DVector<T>) -> DVector<T>;
    /// Declared squared Lipschitz constant `L_F`.
    fn lipschitz(&self) -> T;
    /// Range restricted to `{0} ⊕ H1`.
    fn port_flag(&self) -> bool {
        false
    }
}

pub trait DiffusionMap<T: Real>: Send + Sync + Debug {
    fn dim(&self) -> usize;
    /// `σ(x)`, an `n x n` operator applied to Wiener increments.
    fn eval(&self, x: &DVector<T>) -> DMatrix<T>;
    /// `σ(x) ΔW`; override when the matrix need not be formed.
    fn apply(&self, x: &DVector<T>, dw: &DVector<T>) -> DVector<T> {
        self.eval(x) * dw
    }
    /// Declared squared Lipschitz constant `L_sigma` (Hilbert–Schmidt on the
    /// range of `q_half`).
    fn lipschitz(&self) -> T;
    fn port_flag(&self) -> bool {
        false
    }
    /// True when `σ` does not depend on the state.
    fn is_additive(&self) -> bool {
        false
    }
}

pub trait JumpMap<T: Real>: Send + Sync + Debug {
    fn dim(&self) -> usize;
    fn eval(&self, x: &DVector<T>, mark: &DVector<T>) -> DVector<T>;
    /// Declared jump Lipschitz constant `L_gamma`.
    fn lipschitz(&self) -> T;
    fn port_flag(&self) -> bool {
        false
    }
    /// `∫ γ(x, η) μ(dη)` when known in closed form.
    fn closed_form_mean(&self, _x: &DVector<T>, _measure: &JumpMeasure<T>) -> Option<DVector<T>> {
        None
    }
    /// `∫ |γ(x, η) - γ(y, η)|^2 μ(dη)` when known in closed form.
    fn closed_form_sq_diff(
        &self,
        _x: &DVector<T>,
        _y: &DVector<T>,
        _measure: &JumpMeasure<T>,
    ) -> Option<T> {
        None
    }
    /// True when `γ(x, η) = 0` for all arguments.
    fn is_zero(&self) -> bool {
        false
    }
}

/// Normalised mark law `μ / λ`. Every mark coordinate is drawn i.i.d.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MarkDistribution<T: Real> {
    None,
    /// `±c` with probability 1/2 each.
    UniformPm { c: T },
    Gaussian { mean: T, std: T },
    Constant { value: T },
}

impl<T: Real> MarkDistribution<T> {
    pub fn name(&self) -> &'static str {
        match self {
            Self::None => "none",
            Self::UniformPm { .. } => "uniform_pm",
            Self::Gaussian { .. } => "gaussian",
            Self::Constant { .. } => "constant",
        }
    }

    /// Builds a law from its config name and parameter list.
    pub fn from_name(name: &str, params: &[f64]) -> Result<Self> {
        let need = |k: usize| -> Result<()> {
            if params.len() != k {
                return Err(arg_err(format!(
                    "mark distribution '{name}' takes {k} parameter(s), got {}",
                    params.len()
                )));
            }
            Ok(())
        };
        match name {
            "none" => Ok(Self::None),
            "uniform_pm" => {
                need(1)?;
                Ok(Self::UniformPm { c: T::lit(params[0]) })
            }
            "gaussian" => {
                need(2)?;
                if params[1] < 0.0 {
                    return Err(arg_err("gaussian mark std must be >= 0"));
                }
                Ok(Self::Gaussian {
                    mean: T::lit(params[0]),
                    std: T::lit(params[1]),
                })
            }
            "constant" => {
                need(1)?;
                Ok(Self::Constant { value: T::lit(params[0]) })
            }
            other => Err(arg_err(format!("unknown mark distribution '{other}'"))),
        }
    }

    pub fn params(&self) -> Vec<f64> {
        match *self {
            Self::None => vec![],
            Self::UniformPm { c } => vec![c.to_f64_lossy()],
            Self::Gaussian { mean, std } => vec![mean.to_f64_lossy(), std.to_f64_lossy()],
            Self::Constant { value } => vec![value.to_f64_lossy()],
        }
    }

    /// Per-coordinate mean `E[η_i]`.
    pub fn mean(&self) -> T {
        match *self {
            Self::None | Self::UniformPm { .. } => T::zero(),
            Self::Gaussian { mean, .. } => mean,
            Self::Constant { value } => value,
        }
    }

    /// Per-coordinate second moment `E[η_i^2]`.
    pub fn second_moment(&self) -> T {
        match *self {
            Self::None => T::zero(),
            Self::UniformPm { c } => c * c,
            Self::Gaussian { mean, std } => mean * mean + std * std,
            Self::Constant { value } => value * value,
        }
    }

    fn sample_coord(&self, rng: &mut RngStream) -> T {
        match *self {
            Self::None => T::zero(),
            Self::UniformPm { c } => {
                if rng.uniform() < 0.5 {
                    -c
                } else {
                    c
                }
            }
            Self::Gaussian { mean, std } => mean + std * T::lit(rng.standard_normal()),
            Self::Constant { value } => value,
        }
    }
}

/// Finite-activity Lévy measure `μ = λ · (mark law)` on `R^k`.
#[derive(Debug, Clone, PartialEq)]
pub struct JumpMeasure<T: Real> {
    intensity: T,
    marks: MarkDistribution<T>,
    mark_dim: usize,
}

impl<T: Real> JumpMeasure<T> {
    pub fn new(intensity: T, marks: MarkDistribution<T>, mark_dim: usize) -> Result<Self> {
        if !(intensity >= T::zero()) || !intensity.is_finite_val() {
            return Err(arg_err(format!("jump intensity must be finite and >= 0, got {intensity}")));
        }
        if mark_dim == 0 {
            return Err(arg_err("mark dimension must be >= 1"));
        }
        if marks == MarkDistribution::None && intensity > T::zero() {
            return Err(arg_err("mark distribution 'none' requires zero intensity"));
        }
        Ok(Self {
            intensity,
            marks,
            mark_dim,
        })
    }

    /// The zero measure (no jump term).
    pub fn none(mark_dim: usize) -> Self {
        Self {
            intensity: T::zero(),
            marks: MarkDistribution::None,
            mark_dim: mark_dim.max(1),
        }
    }

    /// Total mass `μ(E)`.
    pub fn intensity(&self) -> T {
        self.intensity
    }

    pub fn marks(&self) -> MarkDistribution<T> {
        self.marks
    }

    pub fn mark_dim(&self) -> usize {
        self.mark_dim
    }

    pub fn is_active(&self) -> bool {
        self.intensity > T::zero()
    }

    pub fn sample_mark(&self, rng: &mut RngStream) -> DVector<T> {
        DVector::from_fn(self.mark_dim, |_, _| self.marks.sample_coord(rng))
    }

    /// `E[η]` under the normalised law.
    pub fn mark_mean(&self) -> DVector<T> {
        DVector::from_element(self.mark_dim, self.marks.mean())
    }
}

fn port_mask<T: Real>(v: &mut DVector<T>, port: Option<usize>) {
    if let Some(n0) = port {
        for i in 0..n0.min(v.len()) {
            v[i] = T::zero();
        }
    }
}

fn port_rows<T: Real>(mut m: DMatrix<T>, port: Option<usize>) -> DMatrix<T> {
    if let Some(n0) = port {
        for i in 0..n0.min(m.nrows()) {
            m.row_mut(i).fill(T::zero());
        }
    }
    m
}

fn check_declared<T: Real>(l: T) -> Result<T> {
    if !(l >= T::zero()) || !l.is_finite_val() {
        return Err(arg_err(format!("declared Lipschitz constant must be finite and >= 0, got {l}")));
    }
    Ok(l)
}

#[derive(Debug, Clone, PartialEq)]
pub enum DriftFamily<T: Real> {
    Zero,
    Constant(DVector<T>),
    /// `F(x) = B x`.
    Linear(DMatrix<T>),
    /// `F(x) = B tanh(x)`, tanh taken coordinatewise.
    Saturating(DMatrix<T>),
}

/// Built-in drift. With a port the first `n0` output rows are zeroed.
#[derive(Debug, Clone)]
pub struct Drift<T: Real> {
    family: DriftFamily<T>,
    dim: usize,
    port: Option<usize>,
    lipschitz: T,
}

impl<T: Real> Drift<T> {
    pub fn new(family: DriftFamily<T>, dim: usize, port: Option<&SpaceDecomposition>) -> Result<Self> {
        let port = port.map(|s| s.n0());
        let lipschitz = match &family {
            DriftFamily::Zero => T::zero(),
            DriftFamily::Constant(c) => {
                if c.len() != dim {
                    return Err(dim_err(format!("constant drift has length {}, expected {dim}", c.len())));
                }
                T::zero()
            }
            DriftFamily::Linear(b) | DriftFamily::Saturating(b) => {
                if b.shape() != (dim, dim) {
                    return Err(dim_err(format!("drift matrix must be {dim}x{dim}")));
                }
                // tanh is 1-Lipschitz coordinatewise
                let n = op_norm(&port_rows(b.clone(), port));
                n * n
            }
        };
        Ok(Self {
            family,
            dim,
            port,
            lipschitz,
        })
    }

    pub fn zero(dim: usize) -> Self {
        Self {
            family: DriftFamily::Zero,
            dim,
            port: None,
            lipschitz: T::zero(),
        }
    }

    /// Replaces the analytic constant with a user declaration.
    pub fn with_declared_lipschitz(mut self, l: T) -> Result<Self> {
        self.lipschitz = check_declared(l)?;
        Ok(self)
    }

    pub fn family(&self) -> &DriftFamily<T> {
        &self.family
    }
}

impl<T: Real> DriftMap<T> for Drift<T> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, x: &DVector<T>) -> DVector<T> {
        let mut out = match &self.family {
            DriftFamily::Zero => DVector::zeros(self.dim),
            DriftFamily::Constant(c) => c.clone(),
            DriftFamily::Linear(b) => b * x,
            DriftFamily::Saturating(b) => b * x.map(|v| v.tanh()),
        };
        port_mask(&mut out, self.port);
        out
    }

    fn lipschitz(&self) -> T {
        self.lipschitz
    }

    fn port_flag(&self) -> bool {
        self.port.is_some()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DiffusionFamily<T: Real> {
    Zero,
    /// `σ(x) = S`, state independent.
    Additive(DMatrix<T>),
    /// `σ(x) = s · diag(x)`.
    Diagonal(T),
    /// Column `j` of `σ(x)` is `C_j x`.
    Linear(Vec<DMatrix<T>>),
}

#[derive(Debug, Clone)]
pub struct Diffusion<T: Real> {
    family: DiffusionFamily<T>,
    dim: usize,
    port: Option<usize>,
    lipschitz: T,
}

impl<T: Real> Diffusion<T> {
    /// `q_half` enters the analytic constant through the Hilbert–Schmidt norm
    /// of `σ q_half`.
    pub fn new(
        family: DiffusionFamily<T>,
        dim: usize,
        q_half: &DMatrix<T>,
        port: Option<&SpaceDecomposition>,
    ) -> Result<Self> {
        if q_half.nrows() != dim {
            return Err(dim_err(format!("q_half has {} rows, expected {dim}", q_half.nrows())));
        }
        match &family {
            DiffusionFamily::Additive(s) if s.shape() != (dim, dim) => {
                return Err(dim_err(format!("additive diffusion must be {dim}x{dim}")));
            }
            DiffusionFamily::Linear(cs) if cs.len() != dim || cs.iter().any(|c| c.shape() != (dim, dim)) => {
                return Err(dim_err(format!("linear diffusion needs {dim} matrices of size {dim}x{dim}")));
            }
            _ => {}
        }
        let mut out = Self {
            family,
            dim,
            port: port.map(|s| s.n0()),
            lipschitz: T::zero(),
        };
        out.lipschitz = out.sharp_lipschitz(q_half);
        Ok(out)
    }

    pub fn zero(dim: usize) -> Self {
        Self {
            family: DiffusionFamily::Zero,
            dim,
            port: None,
            lipschitz: T::zero(),
        }
    }

    pub fn with_declared_lipschitz(mut self, l: T) -> Result<Self> {
        self.lipschitz = check_declared(l)?;
        Ok(self)
    }

    pub fn family(&self) -> &DiffusionFamily<T> {
        &self.family
    }

    /// The state-dependent part is linear in `x`, so the sharp constant is
    /// the squared operator norm of `Δ ↦ vec(σ_lin(Δ) q_half)`.
    fn sharp_lipschitz(&self, q_half: &DMatrix<T>) -> T {
        match self.family {
            DiffusionFamily::Zero | DiffusionFamily::Additive(_) => T::zero(),
            _ => {
                let n = self.dim;
                let m = q_half.ncols();
                let mut lift = DMatrix::<T>::zeros(n * m, n);
                let zero = DVector::<T>::zeros(n);
                let base = self.eval(&zero);
                for k in 0..n {
                    let mut e = DVector::<T>::zeros(n);
                    e[k] = T::one();
                    let col = (self.eval(&e) - &base) * q_half;
                    for (idx, v) in col.iter().enumerate() {
                        lift[(idx, k)] = *v;
                    }
                }
                let s = op_norm(&lift);
                s * s
            }
        }
    }
}

impl<T: Real> DiffusionMap<T> for Diffusion<T> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, x: &DVector<T>) -> DMatrix<T> {
        let m = match &self.family {
            DiffusionFamily::Zero => DMatrix::zeros(self.dim, self.dim),
            DiffusionFamily::Additive(s) => s.clone(),
            DiffusionFamily::Diagonal(s) => DMatrix::from_diagonal(&(x * *s)),
            DiffusionFamily::Linear(cs) => {
                let mut out = DMatrix::zeros(self.dim, self.dim);
                for (j, c) in cs.iter().enumerate() {
                    out.set_column(j, &(c * x));
                }
                out
            }
        };
        port_rows(m, self.port)
    }

    fn apply(&self, x: &DVector<T>, dw: &DVector<T>) -> DVector<T> {
        let mut out = match &self.family {
            DiffusionFamily::Zero => DVector::zeros(self.dim),
            DiffusionFamily::Additive(s) => s * dw,
            DiffusionFamily::Diagonal(s) => x.component_mul(dw) * *s,
            DiffusionFamily::Linear(_) => return self.eval(x) * dw,
        };
        port_mask(&mut out, self.port);
        out
    }

    fn lipschitz(&self) -> T {
        self.lipschitz
    }

    fn port_flag(&self) -> bool {
        self.port.is_some()
    }

    fn is_additive(&self) -> bool {
        matches!(self.family, DiffusionFamily::Zero | DiffusionFamily::Additive(_))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum JumpFamily<T: Real> {
    Zero,
    /// `γ(x, η) = c`.
    Constant(DVector<T>),
    /// `γ(x, η) = B η`, `B` is `n x k`.
    Additive(DMatrix<T>),
    /// `γ(x, η) = η_0 G x`.
    Multiplicative(DMatrix<T>),
    /// `γ(x, η) = G x`.
    Linear(DMatrix<T>),
}

#[derive(Debug, Clone)]
pub struct Jump<T: Real> {
    family: JumpFamily<T>,
    dim: usize,
    port: Option<usize>,
    lipschitz: T,
}

impl<T: Real> Jump<T> {
    /// The analytic constant integrates against `measure`, so the same
    /// measure must be used when simulating.
    pub fn new(
        family: JumpFamily<T>,
        dim: usize,
        measure: &JumpMeasure<T>,
        port: Option<&SpaceDecomposition>,
    ) -> Result<Self> {
        let port = port.map(|s| s.n0());
        let lam = measure.intensity();
        let lipschitz = match &family {
            JumpFamily::Zero => T::zero(),
            JumpFamily::Constant(c) => {
                if c.len() != dim {
                    return Err(dim_err(format!("constant jump has length {}, expected {dim}", c.len())));
                }
                T::zero()
            }
            JumpFamily::Additive(b) => {
                if b.shape() != (dim, measure.mark_dim()) {
                    return Err(dim_err(format!(
                        "additive jump matrix must be {dim}x{}",
                        measure.mark_dim()
                    )));
                }
                T::zero()
            }
            JumpFamily::Multiplicative(g) | JumpFamily::Linear(g) => {
                if g.shape() != (dim, dim) {
                    return Err(dim_err(format!("jump matrix must be {dim}x{dim}")));
                }
                let n = op_norm(&port_rows(g.clone(), port));
                let weight = match family {
                    JumpFamily::Multiplicative(_) => measure.marks().second_moment(),
                    _ => T::one(),
                };
                lam * weight * n * n
            }
        };
        Ok(Self {
            family,
            dim,
            port,
            lipschitz,
        })
    }

    pub fn zero(dim: usize) -> Self {
        Self {
            family: JumpFamily::Zero,
            dim,
            port: None,
            lipschitz: T::zero(),
        }
    }

    pub fn with_declared_lipschitz(mut self, l: T) -> Result<Self> {
        self.lipschitz = check_declared(l)?;
        Ok(self)
    }

    pub fn family(&self) -> &JumpFamily<T> {
        &self.family
    }
}

impl<T: Real> JumpMap<T> for Jump<T> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, x: &DVector<T>, mark: &DVector<T>) -> DVector<T> {
        let mut out = match &self.family {
            JumpFamily::Zero => DVector::zeros(self.dim),
            JumpFamily::Constant(c) => c.clone(),
            JumpFamily::Additive(b) => b * mark,
            JumpFamily::Multiplicative(g) => g * x * mark[0],
            JumpFamily::Linear(g) => g * x,
        };
        port_mask(&mut out, self.port);
        out
    }

    fn lipschitz(&self) -> T {
        self.lipschitz
    }

    fn port_flag(&self) -> bool {
        self.port.is_some()
    }

    fn closed_form_mean(&self, x: &DVector<T>, measure: &JumpMeasure<T>) -> Option<DVector<T>> {
        let lam = measure.intensity();
        let mut out = match &self.family {
            JumpFamily::Zero => DVector::zeros(self.dim),
            JumpFamily::Constant(c) => c * lam,
            JumpFamily::Additive(b) => b * measure.mark_mean() * lam,
            JumpFamily::Multiplicative(g) => g * x * (lam * measure.marks().mean()),
            JumpFamily::Linear(g) => g * x * lam,
        };
        port_mask(&mut out, self.port);
        Some(out)
    }

    fn closed_form_sq_diff(&self, x: &DVector<T>, y: &DVector<T>, measure: &JumpMeasure<T>) -> Option<T> {
        let lam = measure.intensity();
        let diff = |g: &DMatrix<T>| {
            let mut d = g * (x - y);
            port_mask(&mut d, self.port);
            d.norm_squared()
        };
        Some(match &self.family {
            JumpFamily::Zero | JumpFamily::Constant(_) | JumpFamily::Additive(_) => T::zero(),
            JumpFamily::Multiplicative(g) => lam * measure.marks().second_moment() * diff(g),
            JumpFamily::Linear(g) => lam * diff(g),
        })
    }

    fn is_zero(&self) -> bool {
        matches!(self.family, JumpFamily::Zero)
    }
}

/// The full coefficient set sharing one decomposition.
#[derive(Debug, Clone)]
pub struct CoefficientSet<T: Real> {
    space: SpaceDecomposition,
    drift: Arc<dyn DriftMap<T>>,
    diffusion: Arc<dyn DiffusionMap<T>>,
    jump: Arc<dyn JumpMap<T>>,
    jump_measure: JumpMeasure<T>,
}

impl<T: Real> CoefficientSet<T> {
    pub fn new(
        space: SpaceDecomposition,
        drift: Arc<dyn DriftMap<T>>,
        diffusion: Arc<dyn DiffusionMap<T>>,
        jump: Arc<dyn JumpMap<T>>,
        jump_measure: JumpMeasure<T>,
    ) -> Result<Self> {
        let n = space.dim();
        for (name, d) in [("drift", drift.dim()), ("diffusion", diffusion.dim()), ("jump", jump.dim())] {
            if d != n {
                return Err(dim_err(format!("{name} acts on dimension {d}, space has {n}")));
            }
        }
        Ok(Self {
            space,
            drift,
            diffusion,
            jump,
            jump_measure,
        })
    }

    /// All coefficients zero, no jumps.
    pub fn zero(space: SpaceDecomposition) -> Self {
        let n = space.dim();
        Self {
            space,
            drift: Arc::new(Drift::zero(n)),
            diffusion: Arc::new(Diffusion::zero(n)),
            jump: Arc::new(Jump::zero(n)),
            jump_measure: JumpMeasure::none(1),
        }
    }

    pub fn space(&self) -> SpaceDecomposition {
        self.space
    }

    pub fn drift(&self) -> &dyn DriftMap<T> {
        self.drift.as_ref()
    }

    pub fn diffusion(&self) -> &dyn DiffusionMap<T> {
        self.diffusion.as_ref()
    }

    pub fn jump(&self) -> &dyn JumpMap<T> {
        self.jump.as_ref()
    }

    pub fn jump_measure(&self) -> &JumpMeasure<T> {
        &self.jump_measure
    }

    pub fn with_drift(mut self, drift: Arc<dyn DriftMap<T>>) -> Result<Self> {
        self.drift = drift;
        Self::new(self.space, self.drift, self.diffusion, self.jump, self.jump_measure)
    }

    pub fn with_diffusion(mut self, diffusion: Arc<dyn DiffusionMap<T>>) -> Result<Self> {
        self.diffusion = diffusion;
        Self::new(self.space, self.drift, self.diffusion, self.jump, self.jump_measure)
    }

    pub fn with_jump(mut self, jump: Arc<dyn JumpMap<T>>, measure: JumpMeasure<T>) -> Result<Self> {
        self.jump = jump;
        self.jump_measure = measure;
        Self::new(self.space, self.drift, self.diffusion, self.jump, self.jump_measure)
    }

    /// `(L_F, L_sigma, L_gamma)`.
    pub fn lipschitz_constants(&self) -> (T, T, T) {
        (self.drift.lipschitz(), self.diffusion.lipschitz(), self.jump.lipschitz())
    }

    /// True when the jump term contributes nothing.
    pub fn jumps_inactive(&self) -> bool {
        self.jump.is_zero() || !self.jump_measure.is_active()
    }
}

/// `∫ γ(x, η) μ(dη)` with a per-coordinate standard error.
#[derive(Debug, Clone, PartialEq)]
pub struct CompensatorEstimate<T: Real> {
    pub mean: DVector<T>,
    pub std_error: DVector<T>,
    pub closed_form: bool,
}

/// Seed of the fixed mark stream behind Monte-Carlo compensators; keeps the
/// estimate a pure function of its inputs.
pub const COMPENSATOR_SEED: u64 = 0x0C0F_FEE5;

/// Compensator `∫ γ(x, η) μ(dη)`: closed form when the map provides one,
/// else a Monte-Carlo mean over `n_mc` marks from a fixed stream.
pub fn jump_compensator_mean<T: Real>(
    jump: &dyn JumpMap<T>,
    measure: &JumpMeasure<T>,
    x: &DVector<T>,
    n_mc: usize,
) -> CompensatorEstimate<T> {
    if !measure.is_active() {
        return CompensatorEstimate {
            mean: DVector::zeros(x.len()),
            std_error: DVector::zeros(x.len()),
            closed_form: true,
        };
    }
    if let Some(mean) = jump.closed_form_mean(x, measure) {
        return CompensatorEstimate {
            std_error: DVector::zeros(mean.len()),
            mean,
            closed_form: true,
        };
    }
    let mut rng = derive_stream(COMPENSATOR_SEED, 0).substream(tag::COMPENSATOR);
    monte_carlo_compensator(jump, measure, x, n_mc, &mut rng)
}

/// Monte-Carlo compensator over marks drawn from `rng`.
pub fn monte_carlo_compensator<T: Real>(
    jump: &dyn JumpMap<T>,
    measure: &JumpMeasure<T>,
    x: &DVector<T>,
    n_mc: usize,
    rng: &mut RngStream,
) -> CompensatorEstimate<T> {
    let n = x.len();
    let samples = n_mc.max(1);
    let mut sum = DVector::<T>::zeros(n);
    let mut sq = DVector::<T>::zeros(n);
    for _ in 0..samples {
        let g = jump.eval(x, &measure.sample_mark(rng));
        sq += g.component_mul(&g);
        sum += g;
    }
    let k = T::from_usize(samples).expect("sample count fits in scalar");
    let lam = measure.intensity();
    let mean = &sum / k;
    let std_error = if samples > 1 {
        let km1 = k - T::one();
        let var = (sq - mean.component_mul(&mean) * k) / km1;
        var.map(|v| (v.max(T::zero()) / k).sqrt() * lam)
    } else {
        DVector::zeros(n)
    };
    CompensatorEstimate {
        mean: mean * lam,
        std_error,
        closed_form: false,
    }
}

/// Anything whose squared increment `|f(x) - f(y)|^2` can be measured.
pub trait LipschitzProbe<T: Real> {
    fn sq_diff(&self, x: &DVector<T>, y: &DVector<T>) -> T;
    fn declared(&self) -> T;
}

pub struct DriftProbe<'a, T: Real>(pub &'a dyn DriftMap<T>);

impl<T: Real> LipschitzProbe<T> for DriftProbe<'_, T> {
    fn sq_diff(&self, x: &DVector<T>, y: &DVector<T>) -> T {
        (self.0.eval(x) - self.0.eval(y)).norm_squared()
    }

    fn declared(&self) -> T {
        self.0.lipschitz()
    }
}

/// Hilbert–Schmidt increment `|(σ(x) - σ(y)) q_half|_HS^2`.
pub struct DiffusionProbe<'a, T: Real> {
    pub map: &'a dyn DiffusionMap<T>,
    pub q_half: &'a DMatrix<T>,
}

impl<T: Real> LipschitzProbe<T> for DiffusionProbe<'_, T> {
    fn sq_diff(&self, x: &DVector<T>, y: &DVector<T>) -> T {
        ((self.map.eval(x) - self.map.eval(y)) * self.q_half).norm_squared()
    }

    fn declared(&self) -> T {
        self.map.lipschitz()
    }
}

/// `∫ |γ(x, η) - γ(y, η)|^2 μ(dη)`, closed form when available, otherwise a
/// common-random-numbers Monte-Carlo integral with `n_mc` marks.
pub struct JumpProbe<'a, T: Real> {
    pub map: &'a dyn JumpMap<T>,
    pub measure: &'a JumpMeasure<T>,
    pub n_mc: usize,
}

impl<T: Real> LipschitzProbe<T> for JumpProbe<'_, T> {
    fn sq_diff(&self, x: &DVector<T>, y: &DVector<T>) -> T {
        if !self.measure.is_active() {
            return T::zero();
        }
        if let Some(v) = self.map.closed_form_sq_diff(x, y, self.measure) {
            return v;
        }
        let mut rng = derive_stream(COMPENSATOR_SEED, 1).substream(tag::COMPENSATOR);
        let n = self.n_mc.max(1);
        let mut acc = T::zero();
        for _ in 0..n {
            let m = self.measure.sample_mark(&mut rng);
            acc += (self.map.eval(x, &m) - self.map.eval(y, &m)).norm_squared();
        }
        acc / T::from_usize(n).expect("sample count fits in scalar") * self.measure.intensity()
    }

    fn declared(&self) -> T {
        self.map.lipschitz()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LipschitzEstimate<T: Real> {
    /// Largest observed `|f(x) - f(y)|^2 / |x - y|^2` (a lower bound).
    pub estimate: T,
    pub declared: T,
    /// Estimate exceeds the declaration by more than `1e-9` relative.
    pub violation: bool,
    pub pairs_used: usize,
    pub pairs_skipped: usize,
}

/// Sampled lower bound on the squared Lipschitz constant. Coincident pairs
/// are skipped.
pub fn estimate_lipschitz<T, P, I>(probe: &P, pairs: I) -> LipschitzEstimate<T>
where
    T: Real,
    P: LipschitzProbe<T> + ?Sized,
    I: IntoIterator<Item = (DVector<T>, DVector<T>)>,
{
    let mut best = T::zero();
    let (mut used, mut skipped) = (0, 0);
    for (x, y) in pairs {
        let d2 = (&x - &y).norm_squared();
        if d2 == T::zero() {
            skipped += 1;
            continue;
        }
        used += 1;
        let r = probe.sq_diff(&x, &y) / d2;
        if r > best {
            best = r;
        }
    }
    let declared = probe.declared();
    let tol = T::lit(1e-9) * declared.max(T::lit(f64::MIN_POSITIVE));
    LipschitzEstimate {
        estimate: best,
        declared,
        violation: best > declared + tol,
        pairs_used: used,
        pairs_skipped: skipped,
    }
}

/// Gaussian pairs `x, y ~ N(0, scale^2 I)` drawn from `rng`.
pub fn gaussian_pairs<T: Real>(
    dim: usize,
    scale: T,
    count: usize,
    rng: &mut RngStream,
) -> Vec<(DVector<T>, DVector<T>)> {
    (0..count)
        .map(|_| {
            let x = DVector::from_fn(dim, |_, _| scale * T::lit(rng.standard_normal()));
            let y = DVector::from_fn(dim, |_, _| scale * T::lit(rng.standard_normal()));
            (x, y)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomentReport<T: Real> {
    /// `∫ |γ(x, η)|^2 μ(dη)`
    pub second: T,
    /// `∫ |γ(x, η)|^4 μ(dη)`
    pub fourth: T,
    pub se_second: T,
    pub se_fourth: T,
    /// Set when a sample was non-finite.
    pub diagnostic: Option<String>,
}

impl<T: Real> MomentReport<T> {
    pub fn finite(&self) -> bool {
        self.diagnostic.is_none()
    }
}

/// Monte-Carlo second and fourth jump moments at `x`.
pub fn moment_check<T: Real>(
    jump: &dyn JumpMap<T>,
    measure: &JumpMeasure<T>,
    x: &DVector<T>,
    n_mc: usize,
    rng: &mut RngStream,
) -> Result<MomentReport<T>> {
    if n_mc < 2 {
        return Err(arg_err("moment check needs at least 2 samples"));
    }
    if !measure.is_active() {
        return Ok(MomentReport {
            second: T::zero(),
            fourth: T::zero(),
            se_second: T::zero(),
            se_fourth: T::zero(),
            diagnostic: None,
        });
    }
    let mut s2 = Vec::with_capacity(n_mc);
    let mut diagnostic = None;
    for i in 0..n_mc {
        let v = jump.eval(x, &measure.sample_mark(rng)).norm_squared();
        if !v.is_finite_val() {
            diagnostic = Some(format!("non-finite jump amplitude at sample {i}"));
            break;
        }
        s2.push(v);
    }
    let lam = measure.intensity();
    let (m2, se2) = mean_se(s2.iter().copied());
    let (m4, se4) = mean_se(s2.iter().map(|v| *v * *v));
    Ok(MomentReport {
        second: m2 * lam,
        fourth: m4 * lam,
        se_second: se2 * lam,
        se_fourth: se4 * lam,
        diagnostic,
    })
}

/// Sample mean and its standard error.
pub(crate) fn mean_se<T: Real>(xs: impl Iterator<Item = T> + Clone) -> (T, T) {
    let n = xs.clone().count();
    if n == 0 {
        return (T::zero(), T::zero());
    }
    let k = T::from_usize(n).expect("count fits");
    let mean = xs.clone().fold(T::zero(), |a, b| a + b) / k;
    if n < 2 {
        return (mean, T::zero());
    }
    let var = xs.fold(T::zero(), |a, b| a + (b - mean) * (b - mean)) / (k - T::one());
    (mean, (var / k).sqrt())
}
