//! Dense small-scale linear algebra kernels.

mod eig;
mod lanczos;
mod matrix;
mod rng;
mod sym3;
mod vector;

pub use eig::{sym_eig, sym_eigvals, sym_eigvals_jacobi, tridiag_eig, tridiag_eigvals, SymEig};
pub use lanczos::{top_eigs_lanczos, LanczosOptions};
pub use matrix::Mat;
pub use rng::{gauss_fill, GaussFill, RngStream};
pub use sym3::SymTensor3;
pub use vector::{axpy, dot, Vector};
