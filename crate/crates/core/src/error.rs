use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not square ({rows}x{cols})")]
    NonSquare { rows: usize, cols: usize },

    #[error("dimension mismatch in {context}: {left:?} vs {right:?}")]
    DimensionMismatch {
        context: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("matrix has non-finite entries")]
    NonFinite,

    #[error("matrix is singular to working precision")]
    Singular,

    #[error("argument is not Schur stable (spectral radius {spectral_radius})")]
    UnstableArgument { spectral_radius: f64 },

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("system is not stabilizable: {0}")]
    NotStabilizable(String),

    #[error("gain is not stabilizing (closed-loop spectral radius {spectral_radius})")]
    UnstableGain { spectral_radius: f64 },

    #[error("invalid system: {0}")]
    InvalidSystem(String),

    #[error("normalized gap baseline is degenerate (C(K0) - C(K*) = {denominator})")]
    DegenerateBaseline { denominator: f64 },

    #[error("cost query at a destabilizing gain (closed-loop spectral radius {spectral_radius})")]
    DestabilizedQuery { spectral_radius: f64 },

    #[error("sublevel-set sampling accepted {accepted} of {proposed} proposals")]
    DegenerateSublevel { accepted: usize, proposed: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
