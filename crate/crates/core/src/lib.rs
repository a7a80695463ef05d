// Validation is written `!(x > 0.0)` on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dynamics;
pub mod kinematics;
pub mod controllers;
pub mod trajopt;
pub mod harness;
pub mod config;
