//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: String,
        got: String,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("no interior equilibrium: v* = {v_star} outside (0, {v_max})")]
    NoEquilibrium { v_star: f64, v_max: f64 },

    #[error("collision at step {step}: spacing of vehicle {vehicle} is {spacing:.3} m")]
    Collision {
        step: usize,
        vehicle: usize,
        spacing: f64,
    },

    #[error("excitation is not persistently exciting at order {order}")]
    NotPersistentlyExciting { order: usize },

    #[error("data length {t} below requirement {required} for T_ini={t_ini}, N={horizon}, n={n}")]
    DataTooShort {
        t: usize,
        required: usize,
        t_ini: usize,
        horizon: usize,
        n: usize,
    },

    #[error("data matrix rank deficient: rank {rank} of {required} required rows; dependent rows {dependent:?}")]
    RankDeficient {
        rank: usize,
        required: usize,
        dependent: Vec<usize>,
    },

    #[error("center pair (A, B) is not stabilizable: {0}")]
    NotStabilizable(String),

    #[error(
        "gain validation failed after {retries} retunes: worst spectral radius {worst_radius:.6}"
    )]
    GainValidationFailed { worst_radius: f64, retries: usize },

    #[error("tube exceeds constraints at step {step}: coordinate {coord} tightened to empty set")]
    TubeExceedsConstraints { step: usize, coord: usize },

    #[error("quadratic program infeasible or not converged: {0}")]
    QpFailure(String),

    #[error("controller window not filled: have {have} of {need} samples")]
    WindowNotFilled { have: usize, need: usize },

    #[error("invalid profile table: {0}")]
    InvalidProfile(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code for the CLI: 2 config, 3 solver, 4 collision.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Collision { .. } => 4,
            Error::QpFailure(_)
            | Error::TubeExceedsConstraints { .. }
            | Error::GainValidationFailed { .. }
            | Error::NotStabilizable(_)
            | Error::RankDeficient { .. } => 3,
            _ => 2,
        }
    }
}
