//! Implicit regularization enhancement (IRE) for first-order optimizers.
//!
//! IRE boosts the flat-direction components of a base optimizer's update by a
//! factor `1 + κ` while leaving sharp directions untouched, which speeds up
//! the optimizer's drift toward flatter minima without hurting stability.
//!
//! - [`linalg`]: Jacobi eigensolver, spectral projectors, order statistics.
//! - [`landscapes`]: objective abstraction and analytic test landscapes.
//! - [`optim`]: GD, SGD, momentum, Adam(W) and both SAM variants.
//! - [`ire`]: diagonal-Hessian estimators, flat masks and the boosted step.
//! - [`theory`]: limiting map, two-phase protocol, drift, SDE and lemma checks.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod ire;
pub mod landscapes;
pub mod linalg;
pub mod optim;
pub mod rng;
pub mod theory;
pub mod trajectory;

pub use error::{Error, Result};
pub use landscapes::Landscape;
