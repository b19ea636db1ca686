use std::io;

use thiserror::Error;

use crate::grid::Axis;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("axis {0:?} is inactive on this grid")]
    InactiveAxis(Axis),

    #[error("insufficient history: need {needed} levels, have {have}")]
    InsufficientHistory { needed: usize, have: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("projection singularity: |m| = 0 at cell {cell:?}")]
    ProjectionSingularity { cell: [usize; 3] },

    #[error("non-finite magnetization at cell {cell:?}")]
    NonFinite { cell: [usize; 3] },

    #[error(
        "step {step} rejected: GMRES did not converge after {iterations} iterations \
         (residual {residual:.3e}, target {target:.3e})"
    )]
    StepRejected {
        step: usize,
        iterations: usize,
        residual: f64,
        target: f64,
    },

    #[error("degenerate cell dimensions {0:?}")]
    DegenerateCell([f64; 3]),

    #[error("wall lost: no sign change of m_x along the strip")]
    WallLost,

    #[error("kernel cache: {0}")]
    Cache(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    /// True for failures of the numerics (as opposed to bad input or IO).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::ProjectionSingularity { .. }
                | Error::NonFinite { .. }
                | Error::StepRejected { .. }
                | Error::WallLost
        )
    }
}
