//! Desk-scale numerics for semiclassical tunneling in Schrodinger operators
//! `H = hbar^2 L + hbar W + V` on graphs discretizing intervals, rectangles,
//! flat tori and spheres.

// NaN-rejecting guards are written as negated comparisons on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod agmon;
pub mod asymptotics;
pub mod config;
pub mod ddouble;
pub mod eig;
pub mod error;
pub mod expr;
pub mod interaction;
pub mod mesh;
pub mod operator;
pub mod pipeline;
pub mod potential;
pub mod sparse;

pub use error::{Error, Result};
