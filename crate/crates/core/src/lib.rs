//! Reconstruction of a Robin boundary coefficient on an inaccessible part of
//! the boundary from noisy measurements on the accessible part, for
//! stationary (elliptic) and time-dependent (parabolic) diffusion problems.
//!
//! The iteration is Levenberg-Marquardt with the regularization weight set to
//! the current squared data misfit, and each linearized subproblem is solved
//! in closed form through a majorizing surrogate functional. Derivatives and
//! adjoints are the exact discrete transposes of the P1 finite element
//! forward solver.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cli;
pub mod elliptic;
pub mod error;
pub mod experiments;
pub mod fem;
pub mod lm;
pub mod mesh;
pub mod parabolic;
pub mod verify;

pub use error::{Error, Result};
