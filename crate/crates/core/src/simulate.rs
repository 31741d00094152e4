//! Mild-solution time stepping.
//!
//! One exponential-Euler step from `x` over `dt` is
//!
//! ```text
//! x' = S(dt) [ x + F(x) dt + σ(x) ΔW + Σ_j γ(x, η_j) - dt ∫ γ(x, η) μ(dη) ]
//! ```
//!
//! so the linear flow is reproduced exactly and all jumps of a step act on the
//! state at the start of the step. Paths are independent work items; each one
//! owns the streams `(seed, path, WIENER)` and `(seed, path, JUMP)`, and
//! ensemble statistics are reduced in path order, so output does not depend
//! on the thread schedule.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::coefficients::{jump_compensator_mean, mean_se, CoefficientSet};
use crate::error::{arg_err, dim_err, Error, Result};
use crate::noise::{derive_stream, sample_jump_batch, sample_wiener_increment, tag, JumpBatch, QWienerSpec, RngStream};
use crate::scalar::Real;
use crate::space::{semigroup, BlockOperator};
use crate::transport::EmpiricalMeasure;

/// Paths whose norm exceeds this are aborted.
pub const OVERFLOW_NORM: f64 = 1e12;

/// Mark samples per Monte-Carlo compensator evaluation (maps without a
/// closed-form mean only).
pub const DEFAULT_COMPENSATOR_SAMPLES: usize = 256;

/// Generator, coefficients and noise covariance of one SPDE truncation.
#[derive(Debug, Clone)]
pub struct Model<T: Real> {
    generator: DMatrix<T>,
    coeffs: CoefficientSet<T>,
    wiener: QWienerSpec<T>,
}

impl<T: Real> Model<T> {
    pub fn new(blocks: &BlockOperator<T>, coeffs: CoefficientSet<T>, wiener: QWienerSpec<T>) -> Result<Self> {
        if blocks.decomposition() != coeffs.space() {
            return Err(dim_err("operator and coefficients use different decompositions"));
        }
        Self::from_generator(blocks.assemble(), coeffs, wiener)
    }

    pub fn from_generator(generator: DMatrix<T>, coeffs: CoefficientSet<T>, wiener: QWienerSpec<T>) -> Result<Self> {
        let n = coeffs.space().dim();
        if generator.shape() != (n, n) {
            return Err(dim_err(format!("generator must be {n}x{n}")));
        }
        if wiener.state_dim() != n {
            return Err(dim_err(format!("q_half has {} rows, state has {n}", wiener.state_dim())));
        }
        Ok(Self {
            generator,
            coeffs,
            wiener,
        })
    }

    pub fn generator(&self) -> &DMatrix<T> {
        &self.generator
    }

    pub fn coeffs(&self) -> &CoefficientSet<T> {
        &self.coeffs
    }

    pub fn wiener(&self) -> &QWienerSpec<T> {
        &self.wiener
    }

    pub fn dim(&self) -> usize {
        self.generator.nrows()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig<T: Real> {
    pub dt: T,
    pub t_end: T,
    pub n_paths: usize,
    pub seed: u64,
    pub record_every: usize,
}

impl<T: Real> SimConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > T::zero()) || !self.dt.is_finite_val() {
            return Err(arg_err(format!("dt must be finite and > 0, got {}", self.dt)));
        }
        if !(self.t_end > T::zero()) || !self.t_end.is_finite_val() {
            return Err(arg_err(format!("t_end must be finite and > 0, got {}", self.t_end)));
        }
        if self.dt > self.t_end {
            return Err(arg_err("dt must not exceed t_end"));
        }
        if self.n_paths == 0 {
            return Err(arg_err("n_paths must be >= 1"));
        }
        if self.record_every == 0 {
            return Err(arg_err("record_every must be >= 1"));
        }
        Ok(())
    }

    /// `ceil(t_end / dt)`, ignoring round-off of order `1e-9` steps.
    pub fn n_steps(&self) -> usize {
        let ratio = (self.t_end / self.dt).to_f64_lossy();
        (ratio - 1e-9).ceil().max(1.0) as usize
    }

    /// Step indices that get recorded: every `record_every`-th, plus the last.
    pub fn recorded_steps(&self) -> Vec<usize> {
        let n = self.n_steps();
        let mut ks: Vec<usize> = (0..=n).step_by(self.record_every).collect();
        if *ks.last().expect("k = 0 is always recorded") != n {
            ks.push(n);
        }
        ks
    }

    pub fn recorded_times(&self) -> Vec<T> {
        self.recorded_steps()
            .into_iter()
            .map(|k| self.dt * T::from_usize(k).expect("step index fits"))
            .collect()
    }

    pub fn with_dt(mut self, dt: T) -> Self {
        self.dt = dt;
        self
    }

    pub fn with_record_every(mut self, k: usize) -> Self {
        self.record_every = k;
        self
    }
}

/// Why a path stopped early.
#[derive(Debug, Clone, PartialEq)]
pub struct Abort {
    pub time: f64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<T: Real> {
    pub times: Vec<T>,
    pub states: Vec<DVector<T>>,
    pub abort: Option<Abort>,
}

impl<T: Real> Trajectory<T> {
    pub fn is_complete(&self) -> bool {
        self.abort.is_none()
    }
}

/// Precomputed one-step map for a fixed `dt`.
#[derive(Debug, Clone)]
pub struct Stepper<'m, T: Real> {
    model: &'m Model<T>,
    propagator: DMatrix<T>,
    dt: T,
    compensator_samples: usize,
}

impl<'m, T: Real> Stepper<'m, T> {
    pub fn new(model: &'m Model<T>, dt: T) -> Result<Self> {
        if !(dt > T::zero()) {
            return Err(arg_err(format!("time step must be > 0, got {dt}")));
        }
        Ok(Self {
            model,
            propagator: semigroup(&model.generator, dt)?,
            dt,
            compensator_samples: DEFAULT_COMPENSATOR_SAMPLES,
        })
    }

    pub fn with_compensator_samples(mut self, n: usize) -> Self {
        self.compensator_samples = n.max(1);
        self
    }

    pub fn dt(&self) -> T {
        self.dt
    }

    /// `S(dt)` for this step size.
    pub fn propagator(&self) -> &DMatrix<T> {
        &self.propagator
    }

    /// Advances `x` by one step under the given noise realisation.
    pub fn step(&self, x: &DVector<T>, dw: &DVector<T>, jumps: &JumpBatch<T>) -> Result<DVector<T>> {
        let c = self.model.coeffs();
        let mut inc = x.clone();
        inc += c.drift().eval(x) * self.dt;
        inc += c.diffusion().apply(x, dw);
        if !c.jumps_inactive() {
            for mark in jumps.marks() {
                inc += c.jump().eval(x, mark);
            }
            let comp = jump_compensator_mean(c.jump(), c.jump_measure(), x, self.compensator_samples);
            inc -= comp.mean * self.dt;
        }
        let next = &self.propagator * inc;
        let norm = next.norm();
        if !norm.is_finite_val() {
            return Err(Error::PathAborted {
                time: f64::NAN,
                reason: "non-finite state".into(),
            });
        }
        if norm.to_f64_lossy() > OVERFLOW_NORM {
            return Err(Error::PathAborted {
                time: f64::NAN,
                reason: format!("state norm {:e} exceeds {OVERFLOW_NORM:e}", norm.to_f64_lossy()),
            });
        }
        Ok(next)
    }
}

/// One exponential-Euler step with an explicit generator. Computes `exp(dt A)`
/// on every call; use [`Stepper`] in loops.
pub fn step<T: Real>(
    x: &DVector<T>,
    generator: &DMatrix<T>,
    coeffs: &CoefficientSet<T>,
    dt: T,
    dw: &DVector<T>,
    jumps: &JumpBatch<T>,
) -> Result<DVector<T>> {
    let model = Model::from_generator(generator.clone(), coeffs.clone(), QWienerSpec::identity(generator.nrows()))?;
    Stepper::new(&model, dt)?.step(x, dw, jumps)
}

/// Noise drivers of one path.
struct PathNoise {
    wiener: RngStream,
    jump: RngStream,
}

impl PathNoise {
    fn new(stream: &RngStream) -> Self {
        Self {
            wiener: stream.substream(tag::WIENER),
            jump: stream.substream(tag::JUMP),
        }
    }

    fn draw<T: Real>(&mut self, model: &Model<T>, dt: T) -> Result<(DVector<T>, JumpBatch<T>)> {
        let dw = sample_wiener_increment(model.wiener(), dt, &mut self.wiener)?;
        let jumps = sample_jump_batch(model.coeffs().jump_measure(), dt, &mut self.jump)?;
        Ok((dw, jumps))
    }
}

fn check_state<T: Real>(model: &Model<T>, x: &DVector<T>) -> Result<()> {
    if x.len() != model.dim() {
        return Err(dim_err(format!("initial state has length {}, model has {}", x.len(), model.dim())));
    }
    Ok(())
}

fn run_path<T: Real>(
    stepper: &Stepper<'_, T>,
    x0: DVector<T>,
    config: &SimConfig<T>,
    stream: &RngStream,
) -> Result<Trajectory<T>> {
    let n = config.n_steps();
    let every = config.record_every;
    let mut noise = PathNoise::new(stream);
    let mut traj = Trajectory {
        times: vec![T::zero()],
        states: vec![x0.clone()],
        abort: None,
    };
    let mut x = x0;
    for k in 1..=n {
        let (dw, jumps) = noise.draw(stepper.model, config.dt)?;
        match stepper.step(&x, &dw, &jumps) {
            Ok(next) => x = next,
            Err(Error::PathAborted { reason, .. }) => {
                traj.abort = Some(Abort {
                    time: (config.dt * T::from_usize(k).expect("fits")).to_f64_lossy(),
                    reason,
                });
                return Ok(traj);
            }
            Err(e) => return Err(e),
        }
        if k % every == 0 || k == n {
            traj.times.push(config.dt * T::from_usize(k).expect("step index fits"));
            traj.states.push(x.clone());
        }
    }
    Ok(traj)
}

/// Single path from `x0` driven by the substreams of `stream`.
pub fn integrate<T: Real>(
    x0: &DVector<T>,
    model: &Model<T>,
    config: &SimConfig<T>,
    stream: &RngStream,
) -> Result<Trajectory<T>> {
    config.validate()?;
    check_state(model, x0)?;
    let stepper = Stepper::new(model, config.dt)?;
    let traj = run_path(&stepper, x0.clone(), config, stream)?;
    if let Some(a) = &traj.abort {
        return Err(Error::PathAborted {
            time: a.time,
            reason: a.reason.clone(),
        });
    }
    Ok(traj)
}

/// Initial distribution of an ensemble.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialLaw<T: Real> {
    Dirac(DVector<T>),
    /// `mean + factor ξ`, `ξ ~ N(0, I)`.
    Gaussian { mean: DVector<T>, factor: DMatrix<T> },
}

impl<T: Real> InitialLaw<T> {
    pub fn dim(&self) -> usize {
        match self {
            Self::Dirac(x) => x.len(),
            Self::Gaussian { mean, .. } => mean.len(),
        }
    }

    pub fn sample(&self, rng: &mut RngStream) -> DVector<T> {
        match self {
            Self::Dirac(x) => x.clone(),
            Self::Gaussian { mean, factor } => {
                let xi = DVector::from_fn(factor.ncols(), |_, _| T::lit(rng.standard_normal()));
                mean + factor * xi
            }
        }
    }
}

/// Mean with its Monte-Carlo standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate<T: Real> {
    pub mean: T,
    pub se: T,
    pub samples: usize,
}

impl<T: Real> Estimate<T> {
    fn of(values: &[T]) -> Self {
        let (mean, se) = mean_se(values.iter().copied());
        Self {
            mean,
            se,
            samples: values.len(),
        }
    }
}

fn time_index<T: Real>(times: &[T], t: T) -> Result<usize> {
    let tol = T::lit(1e-9) * t.abs().max(T::one());
    times
        .iter()
        .position(|s| (*s - t).abs() <= tol)
        .ok_or_else(|| arg_err(format!("t = {t} is not a recorded time")))
}

/// Independent paths sharing one model.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble<T: Real> {
    pub times: Vec<T>,
    pub paths: Vec<Trajectory<T>>,
}

pub fn integrate_ensemble<T: Real>(init: &InitialLaw<T>, model: &Model<T>, config: &SimConfig<T>) -> Result<Ensemble<T>> {
    config.validate()?;
    if init.dim() != model.dim() {
        return Err(dim_err("initial law and model dimensions differ"));
    }
    let stepper = Stepper::new(model, config.dt)?;
    let paths = (0..config.n_paths)
        .into_par_iter()
        .map(|i| {
            let stream = derive_stream(config.seed, i as u64);
            let x0 = init.sample(&mut stream.substream(tag::INITIAL));
            run_path(&stepper, x0, config, &stream)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Ensemble {
        times: config.recorded_times(),
        paths,
    })
}

impl<T: Real> Ensemble<T> {
    pub fn index_of(&self, t: T) -> Result<usize> {
        time_index(&self.times, t)
    }

    fn complete(&self) -> impl Iterator<Item = &Trajectory<T>> {
        self.paths.iter().filter(|p| p.is_complete())
    }

    pub fn aborted(&self) -> usize {
        self.paths.iter().filter(|p| !p.is_complete()).count()
    }

    /// Per-coordinate mean and standard error at recorded index `k`.
    pub fn mean_state(&self, k: usize) -> (DVector<T>, DVector<T>) {
        let n = self.paths.first().map_or(0, |p| p.states[0].len());
        let mut mean = DVector::zeros(n);
        let mut se = DVector::zeros(n);
        for i in 0..n {
            let vals: Vec<T> = self.complete().map(|p| p.states[k][i]).collect();
            let e = Estimate::of(&vals);
            mean[i] = e.mean;
            se[i] = e.se;
        }
        (mean, se)
    }

    pub fn mean_energy(&self, t: T) -> Result<Estimate<T>> {
        let k = self.index_of(t)?;
        Ok(self.mean_energy_at(k))
    }

    pub fn mean_energy_at(&self, k: usize) -> Estimate<T> {
        let vals: Vec<T> = self.complete().map(|p| energy(&p.states[k])).collect();
        Estimate::of(&vals)
    }

    /// Equal-weight point cloud of the completed paths at index `k`.
    pub fn measure_at(&self, k: usize) -> Result<EmpiricalMeasure<T>> {
        EmpiricalMeasure::new(self.complete().map(|p| p.states[k].clone()).collect())
    }
}

/// Pairs of paths from `x0` and `y0` driven by identical noise.
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledEnsemble<T: Real> {
    pub times: Vec<T>,
    pub pairs: Vec<(Trajectory<T>, Trajectory<T>)>,
}

pub fn integrate_coupled<T: Real>(
    x0: &DVector<T>,
    y0: &DVector<T>,
    model: &Model<T>,
    config: &SimConfig<T>,
) -> Result<CoupledEnsemble<T>> {
    config.validate()?;
    check_state(model, x0)?;
    check_state(model, y0)?;
    let stepper = Stepper::new(model, config.dt)?;
    let pairs = (0..config.n_paths)
        .into_par_iter()
        .map(|i| run_pair(&stepper, x0, y0, config, &derive_stream(config.seed, i as u64)))
        .collect::<Result<Vec<_>>>()?;
    Ok(CoupledEnsemble {
        times: config.recorded_times(),
        pairs,
    })
}

fn run_pair<T: Real>(
    stepper: &Stepper<'_, T>,
    x0: &DVector<T>,
    y0: &DVector<T>,
    config: &SimConfig<T>,
    stream: &RngStream,
) -> Result<(Trajectory<T>, Trajectory<T>)> {
    let n = config.n_steps();
    let mut noise = PathNoise::new(stream);
    let start = |x: &DVector<T>| Trajectory {
        times: vec![T::zero()],
        states: vec![x.clone()],
        abort: None,
    };
    let (mut tx, mut ty) = (start(x0), start(y0));
    let (mut x, mut y) = (x0.clone(), y0.clone());
    for k in 1..=n {
        let t = config.dt * T::from_usize(k).expect("step index fits");
        let (dw, jumps) = noise.draw(stepper.model, config.dt)?;
        let nx = stepper.step(&x, &dw, &jumps);
        let ny = stepper.step(&y, &dw, &jumps);
        match (nx, ny) {
            (Ok(a), Ok(b)) => {
                x = a;
                y = b;
            }
            (rx, ry) => {
                for (r, tr) in [(rx, &mut tx), (ry, &mut ty)] {
                    match r {
                        Err(Error::PathAborted { reason, .. }) => {
                            tr.abort = Some(Abort {
                                time: t.to_f64_lossy(),
                                reason,
                            })
                        }
                        Err(e) => return Err(e),
                        Ok(_) => {
                            tr.abort = Some(Abort {
                                time: t.to_f64_lossy(),
                                reason: "coupled partner aborted".into(),
                            })
                        }
                    }
                }
                return Ok((tx, ty));
            }
        }
        if k % config.record_every == 0 || k == n {
            tx.times.push(t);
            tx.states.push(x.clone());
            ty.times.push(t);
            ty.states.push(y.clone());
        }
    }
    Ok((tx, ty))
}

impl<T: Real> CoupledEnsemble<T> {
    pub fn index_of(&self, t: T) -> Result<usize> {
        time_index(&self.times, t)
    }

    fn complete(&self) -> impl Iterator<Item = &(Trajectory<T>, Trajectory<T>)> {
        self.pairs.iter().filter(|(a, b)| a.is_complete() && b.is_complete())
    }

    pub fn aborted(&self) -> usize {
        self.pairs.len() - self.complete().count()
    }

    /// Point cloud of the X (`first = true`) or Y marginal at index `k`.
    pub fn marginal_at(&self, k: usize, first: bool) -> Result<EmpiricalMeasure<T>> {
        EmpiricalMeasure::new(
            self.complete()
                .map(|(a, b)| if first { a.states[k].clone() } else { b.states[k].clone() })
                .collect(),
        )
    }

    pub fn mean_square_gap_at(&self, k: usize) -> Estimate<T> {
        let vals: Vec<T> = self
            .complete()
            .map(|(a, b)| (&a.states[k] - &b.states[k]).norm_squared())
            .collect();
        Estimate::of(&vals)
    }
}

/// Monte-Carlo `E |X_t - Y_t|^2` over the coupled pairs.
pub fn mean_square_gap<T: Real>(ensemble: &CoupledEnsemble<T>, t: T) -> Result<Estimate<T>> {
    Ok(ensemble.mean_square_gap_at(ensemble.index_of(t)?))
}

/// Quadratic Hamiltonian `|x|^2 / 2`.
pub fn energy<T: Real>(x: &DVector<T>) -> T {
    x.norm_squared() * T::lit(0.5)
}

pub fn mean_energy<T: Real>(ensemble: &Ensemble<T>, t: T) -> Result<Estimate<T>> {
    ensemble.mean_energy(t)
}
