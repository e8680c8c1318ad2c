use thiserror::Error;

use crate::gait::Phase;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("pose is singular for the force map (alpha={alpha:.6} rad, beta={beta:.6} rad)")]
    SingularPose { alpha: f64, beta: f64 },

    #[error("water content {w} outside catalog span [{min}, {max}]")]
    OutOfRange { w: f64, min: f64, max: f64 },

    #[error("torque {tau:.4} N·m exceeds actuator limit {limit:.4} N·m")]
    TorqueLimit { tau: f64, limit: f64 },

    #[error("vertical force never reached {threshold} N during insertion")]
    NoContact { threshold: f64 },

    #[error("fit window is degenerate: {0}")]
    DegenerateWindow(&'static str),

    #[error("no extraction peak above {threshold} N")]
    NoPeak { threshold: f64 },

    #[error("commanded depth {depth:.4} m is unreachable")]
    WorkspaceExceeded { depth: f64 },

    #[error("step log has no {0:?} phase")]
    MissingPhase(Phase),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
