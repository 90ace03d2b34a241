//! Desk-scale vision-language UAV navigation workbench.

// `!(x > 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod controller;
pub mod geometry;
pub mod grid;
pub mod harness;
pub mod instruction;
pub mod planner;
pub mod retrieval;
pub mod world;
