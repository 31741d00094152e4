//! Stability laboratory for stochastic port-Hamiltonian systems with jumps.
//!
//! A finite-dimensional truncation `H = H0 ⊕ H1` carries the block generator
//! `A = D - R`, Lipschitz coefficients `F`, `σ`, `γ`, a Q-Wiener process and a
//! compensated Poisson random measure. The crate computes the contraction
//! rate `ε` certifying exponential mean-square stability, simulates the mild
//! solution with an exponential Euler scheme, and checks the predicted decay
//! with exact empirical Wasserstein-2 distances.
//!
//! Numerical code is generic over [`scalar::Real`] (`f32` or `f64`); the
//! aliases below fix the scalar. The experiment harness in [`lab`] works in
//! `f64`.

// `!(x >= 0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod certificate;
pub mod coefficients;
pub mod error;
pub mod lab;
pub mod linalg;
pub mod noise;
pub mod scalar;
pub mod simulate;
pub mod space;
pub mod transport;

pub use error::{Error, Result};
pub use scalar::Real;

pub type BlockOperatorF64 = space::BlockOperator<f64>;
pub type BlockOperatorF32 = space::BlockOperator<f32>;
pub type CertificateF64 = certificate::StabilityCertificate<f64>;
pub type CertificateF32 = certificate::StabilityCertificate<f32>;
pub type CoefficientSetF64 = coefficients::CoefficientSet<f64>;
pub type CoefficientSetF32 = coefficients::CoefficientSet<f32>;
pub type ModelF64 = simulate::Model<f64>;
pub type ModelF32 = simulate::Model<f32>;
pub type SimConfigF64 = simulate::SimConfig<f64>;
pub type SimConfigF32 = simulate::SimConfig<f32>;
pub type EmpiricalMeasureF64 = transport::EmpiricalMeasure<f64>;
pub type EmpiricalMeasureF32 = transport::EmpiricalMeasure<f32>;
pub type GaussianMeasureF64 = transport::GaussianMeasure<f64>;
pub type GaussianMeasureF32 = transport::GaussianMeasure<f32>;
