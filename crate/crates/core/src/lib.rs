//! Numerical laboratory for sharpness-aware minimization (SAM) dynamics.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`]: dense vectors, matrices, a tensor symmetric in its last two
//!   indices, Jacobi and Lanczos eigensolvers, and seeded random streams.
//! * [`quad`]: the quadratic regression model `f(θ) = y + Gθ + ½Q(θ,θ)` with
//!   exact GD, SAM, SGD and SAM-SGD maps in `(z, J)` coordinates, the
//!   lowest-order SAM map, and the learning-rate-free rescaled dynamics.
//! * [`theory`]: closed-form edge-of-stability predictions, one-step
//!   expectation formulas and the Monte Carlo harness that checks them.
//! * [`spectral`]: NTK spectrum recording and stabilization detection.
//! * [`mlp`]: a small fully-connected network with exact Jacobians.
//!
//! All numeric code is generic over [`Real`] (`f32` or `f64`); the `*64`
//! aliases below fix the scalar to `f64`.

pub mod error;
pub mod mlp;
pub mod quad;
pub mod scalar;
pub mod spectral;
pub mod tensor;
pub mod theory;

pub use error::{Error, Result};
pub use scalar::Real;

pub type Vector64 = tensor::Vector<f64>;
pub type Mat64 = tensor::Mat<f64>;
pub type SymTensor64 = tensor::SymTensor3<f64>;
pub type QuadraticModel64 = quad::QuadraticModel<f64>;
pub type DynState64 = quad::DynState<f64>;
pub type Vector32 = tensor::Vector<f32>;
pub type Mat32 = tensor::Mat<f32>;
pub type QuadraticModel32 = quad::QuadraticModel<f32>;
pub type DynState32 = quad::DynState<f32>;
