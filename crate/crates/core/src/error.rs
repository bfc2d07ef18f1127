use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    /// The Green's function diverges in dimensions one and two.
    #[error("simple random walk in dimension {dim} is recurrent; g(0,0) is infinite")]
    RecurrentWalk { dim: usize },

    #[error("numerical blowup at site {site}, step {step}: {detail}")]
    NumericalBlowup {
        site: usize,
        step: u64,
        detail: String,
    },

    #[error("quadrature residual {residual:.3e} exceeds tolerance {tolerance:.3e} at site {site}, t = {time}")]
    Quadrature {
        site: usize,
        time: f64,
        residual: f64,
        tolerance: f64,
    },

    #[error("unknown experiment `{0}`")]
    UnknownExperiment(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
