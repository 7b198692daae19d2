//! Robust data-enabled predictive leading cruise control (RDeeP-LCC) for
//! mixed vehicle platoons.
//!
//! The crate covers the full pipeline: zonotope set algebra, nonlinear
//! platoon simulation with an optimal-velocity car-following model, offline
//! data collection with persistently exciting inputs, matrix-zonotope
//! over-approximation of the unknown dynamics, reachability of the error
//! system, probabilistically validated feedback gain synthesis, and the
//! tube-style data-driven predictive controller together with all-human,
//! model-based MPC, and standard DeePC baselines.
//!
//! See the `examples/` directory for one runnable example per capability,
//! and the `lcc` binary for the `collect`/`synth`/`run`/`compare` workflow.

pub mod config;
pub mod ctrl;
pub mod datagen;
pub mod error;
pub mod gainsynth;
pub mod harness;
pub mod platoon;
pub mod qp;
pub mod sysid;
pub mod zonoset;

pub use error::{Error, Result};
