//! Independent reference computations used to check the simulator.

#![allow(clippy::needless_range_loop)]

pub mod qp;
pub mod residual;
pub mod rows;
