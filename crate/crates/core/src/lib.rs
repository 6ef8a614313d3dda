//! Hyperbolic metric learning on the Poincaré ball.
//!
//! The crate is `no_std` and only needs `alloc`. It covers:
//!
//! - [`ball`]: gyrovector operations (Möbius addition, geodesic distance,
//!   Möbius matrix-vector product, exp/log maps, Einstein midpoint).
//! - [`hyperbolicity`]: Gromov products and δ-hyperbolicity of finite metric spaces.
//! - [`autodiff`]: a small reverse-mode tape over dense matrices.
//! - [`gradcheck`]: finite-difference check of the adapted distance gradients.
//! - [`ghdm`]: the pair-adaptive distance `d_{M,c}(x, y) = d_c(M ⊗_c x, M ⊗_c y)`
//!   with a low-rank residual projection generator and a curvature generator.
//! - [`lowrank`]: truncated factorizations and the low-rank approximation experiment.
//! - [`mining`]: Einstein-midpoint prototypes and ratio-based hard query mining.
//! - [`trainer`]: synthetic hierarchical data, episodic training and evaluation.
//!
//! Curvature is always carried as a positive magnitude `κ = |c|`.
#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod autodiff;
pub mod ball;
mod error;
pub mod ghdm;
pub mod gradcheck;
pub mod hyperbolicity;
pub mod lowrank;
pub mod matrix;
pub mod mining;
pub mod rng;
pub mod trainer;

mod math;

pub use error::{Error, Result};
pub use matrix::Matrix;

/// Points are kept at Euclidean norm at most `(1 - BOUNDARY_EPS) / √κ`.
pub const BOUNDARY_EPS: f64 = 1e-5;

/// Added to norm denominators to avoid `0 / 0` at the origin.
pub const DENOM_EPS: f64 = 1e-15;
