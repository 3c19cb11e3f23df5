//! Multi-agent control barrier function filters with proprioceptive
//! feedback, plus a lane-swap traffic simulator built on them.
//!
//! The crate is organised bottom-up:
//!
//! - [`dynamics`]: kinematic bicycle model and input saturation
//! - [`barrier`]: ellipse and road barriers and their linear constraint rows
//! - [`qp`]: slack-softened box-constrained QP solved by an active-set Newton method
//! - [`controllers`]: baseline controller and the no-MPF / full-MPF / split-MPF filters
//! - [`impairment`]: actuator impairments and the passivity classifier
//! - [`fastloop`]: scalar delay models of the fast loop
//! - [`scenario`]: world generation, the simulation engine and Monte Carlo batches
//! - [`io`]: CSV / JSONL writers

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod barrier;
pub mod controllers;
pub mod dynamics;
pub mod error;
pub mod exec;
pub mod fastloop;
pub mod impairment;
pub mod io;
pub mod qp;
pub mod scenario;

pub use error::{ConfigError, FastLoopError, ImpairmentError, QpError, ScenarioError};
