//! Lane-swap scenario: configuration, world generation, simulation and
//! Monte Carlo batches.

pub mod config;
pub mod coordination;
pub mod engine;
pub mod metrics;
pub mod monte_carlo;
pub mod world;

pub use config::{ImpairmentCase, ScenarioConfig};
pub use engine::{run, run_with, RunOptions, RunOutput, TrajectoryLog};
pub use metrics::{LoopTimeStats, RunMetrics};
pub use monte_carlo::{derive_seed, monte_carlo, ControllerSummary, McResult, McRow};
pub use world::{generate, generate_with_seed, World};
