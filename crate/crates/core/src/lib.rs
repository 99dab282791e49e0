//! Forward and inverse Born series for scalar and diffuse waves in a ball.
//!
//! The unknown is an absorption perturbation `eta` on a cubic grid inside the
//! ball `B_a`; data are sampled on a concentric sphere by point sources and
//! detectors. [`forward`] sums the Born series and solves the discretized
//! integral equation directly, [`inverse`] runs the inverse series built on a
//! truncated-SVD pseudoinverse, and [`bounds`] supplies the constants that
//! certify both.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod experiment;
pub mod forward;
pub mod greens;
pub mod grid;
pub mod inverse;
mod linalg;

pub type C64 = nalgebra::Complex<f64>;
