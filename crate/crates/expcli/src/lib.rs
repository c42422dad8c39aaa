//! Experiment driver for the IRE lab: configuration files, CSV output and
//! the verification suites behind the `ire-lab` binary.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod experiments;
pub mod output;
pub mod setup;
pub mod verify;
