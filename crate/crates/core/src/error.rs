use thiserror::Error;

use crate::flow::Trajectory;

/// Errors raised by the numerical engine.
#[derive(Debug, Error)]
pub enum Error {
    /// A point left the chart's validity box. Integrators attach the partial
    /// trajectory computed up to the located exit time.
    #[error("point {point:?} is outside the chart domain{}", fmt_time(*.time))]
    OutOfChart {
        point: Vec<f64>,
        time: Option<f64>,
        partial: Option<Box<Trajectory>>,
    },

    #[error("frame is degenerate at {point:?} (singular value ratio {ratio:e})")]
    DegenerateFrame { point: Vec<f64>, ratio: f64 },

    #[error("adaptive step size underflow at t = {t} (h = {h:e})")]
    StepFailure { t: f64, h: f64 },

    #[error("curve is not horizontal (complement control magnitude {magnitude:e})")]
    NonHorizontal { magnitude: f64 },

    #[error("Hamiltonian drift {drift:e} exceeds the bound {bound:e}")]
    EnergyDrift { drift: f64, bound: f64 },

    #[error("solver did not converge (best residual {residual:e})")]
    NoConvergence { residual: f64 },

    #[error("submanifold is not transversal to the distribution at {point:?} (rank {rank} < {dim})")]
    TransversalityFailure { point: Vec<f64>, rank: usize, dim: usize },

    #[error("curve has zero length")]
    ZeroLength,

    #[error("no unit covector annihilates the hypersurface at {} sample(s), first at {:?}", .samples.len(), .samples.first())]
    NormalizationFailure { samples: Vec<Vec<f64>> },

    #[error("wavefront map is singular at {} sample(s), first at {:?}", .samples.len(), .samples.first())]
    SingularJacobian { samples: Vec<Vec<f64>> },

    #[error("singular transition matrix at t = {t}")]
    SingularTransition { t: f64 },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("parse error at offset {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn fmt_time(t: Option<f64>) -> String {
    match t {
        Some(t) => format!(" at t = {t}"),
        None => String::new(),
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
