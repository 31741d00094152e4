//! Q-Wiener increments and compound-Poisson jump events.
//!
//! Randomness is organised as counter-based streams: the ChaCha key is a hash
//! of `(seed, substream tag)` and the ChaCha stream id is the path index, so
//! each `(seed, path, tag)` triple owns an independent, reproducible sequence
//! no matter which thread consumes it.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};

use crate::coefficients::JumpMeasure;
use crate::error::{arg_err, dim_err, Result};
use crate::scalar::Real;

/// Substream tags. The Wiener and jump drivers never share a tag.
pub mod tag {
    pub const MAIN: u64 = 0;
    pub const WIENER: u64 = 1;
    pub const JUMP: u64 = 2;
    pub const INITIAL: u64 = 3;
    pub const COMPENSATOR: u64 = 4;
    pub const SAMPLER: u64 = 5;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn chacha_key(seed: u64, tag: u64) -> [u8; 32] {
    let mut key = [0u8; 32];
    let mut state = splitmix64(seed ^ splitmix64(tag.wrapping_add(0xA5A5_A5A5)));
    for chunk in key.chunks_exact_mut(8) {
        state = splitmix64(state);
        chunk.copy_from_slice(&state.to_le_bytes());
    }
    key
}

/// Single-owner random stream identified by `(seed, path_index, tag)`.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    path_index: u64,
    tag: u64,
    rng: ChaCha8Rng,
}

/// Stream for one Monte-Carlo path. Equal arguments give identical sequences.
pub fn derive_stream(seed: u64, path_index: u64) -> RngStream {
    RngStream::keyed(seed, path_index, tag::MAIN)
}

impl RngStream {
    fn keyed(seed: u64, path_index: u64, tag: u64) -> Self {
        let mut rng = ChaCha8Rng::from_seed(chacha_key(seed, tag));
        rng.set_stream(path_index);
        Self {
            seed,
            path_index,
            tag,
            rng,
        }
    }

    /// Fresh stream for the same `(seed, path)` under a different tag.
    pub fn substream(&self, tag: u64) -> Self {
        Self::keyed(self.seed, self.path_index, tag)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn path_index(&self) -> u64 {
        self.path_index
    }

    pub fn tag(&self) -> u64 {
        self.tag
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn poisson(&mut self, mean: f64) -> u64 {
        if mean <= 0.0 {
            return 0;
        }
        let dist = Poisson::new(mean).expect("positive finite Poisson mean");
        dist.sample(&mut self.rng) as u64
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

/// Square-root factor of the noise covariance, `Q = q_half q_half^T`.
///
/// `q_half` is `n x m`: it maps `m` standard normals into the `n`-dimensional
/// state space, so its column space is the Cameron–Martin truncation.
#[derive(Debug, Clone, PartialEq)]
pub struct QWienerSpec<T: Real> {
    q_half: DMatrix<T>,
}

impl<T: Real> QWienerSpec<T> {
    pub fn new(q_half: DMatrix<T>) -> Result<Self> {
        if q_half.nrows() == 0 || q_half.ncols() == 0 {
            return Err(dim_err("q_half must have at least one row and column"));
        }
        if q_half.iter().any(|v| !v.is_finite_val()) {
            return Err(arg_err("q_half contains non-finite entries"));
        }
        Ok(Self { q_half })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            q_half: DMatrix::identity(n, n),
        }
    }

    pub fn q_half(&self) -> &DMatrix<T> {
        &self.q_half
    }

    pub fn state_dim(&self) -> usize {
        self.q_half.nrows()
    }

    pub fn noise_dim(&self) -> usize {
        self.q_half.ncols()
    }

    pub fn covariance(&self) -> DMatrix<T> {
        &self.q_half * self.q_half.transpose()
    }

    pub fn trace(&self) -> T {
        self.q_half.norm_squared()
    }
}

/// `q_half ξ sqrt(dt)` with `ξ ~ N(0, I_m)`.
pub fn sample_wiener_increment<T: Real>(
    spec: &QWienerSpec<T>,
    dt: T,
    rng: &mut RngStream,
) -> Result<DVector<T>> {
    if !(dt > T::zero()) {
        return Err(arg_err(format!("time step must be > 0, got {dt}")));
    }
    let xi = DVector::from_fn(spec.noise_dim(), |_, _| T::lit(rng.standard_normal()));
    Ok(&spec.q_half * xi * dt.sqrt())
}

/// Jump events falling into one time step.
#[derive(Debug, Clone, PartialEq)]
pub struct JumpBatch<T: Real> {
    marks: Vec<DVector<T>>,
}

impl<T: Real> JumpBatch<T> {
    pub fn empty() -> Self {
        Self { marks: Vec::new() }
    }

    pub fn from_marks(marks: Vec<DVector<T>>) -> Self {
        Self { marks }
    }

    pub fn count(&self) -> usize {
        self.marks.len()
    }

    pub fn marks(&self) -> &[DVector<T>] {
        &self.marks
    }

    pub fn is_empty(&self) -> bool {
        self.marks.is_empty()
    }
}

/// Poisson(`λ dt`) jump count with i.i.d. marks from the normalised mark law.
pub fn sample_jump_batch<T: Real>(
    measure: &JumpMeasure<T>,
    dt: T,
    rng: &mut RngStream,
) -> Result<JumpBatch<T>> {
    if !(dt > T::zero()) {
        return Err(arg_err(format!("time step must be > 0, got {dt}")));
    }
    let rate = (measure.intensity() * dt).to_f64_lossy();
    let count = rng.poisson(rate);
    let marks = (0..count).map(|_| measure.sample_mark(rng)).collect();
    Ok(JumpBatch { marks })
}
