use thiserror::Error;

/// Errors shared across the simulation and probe pipeline.
#[derive(Error, Debug, Clone)]
pub enum Error {
    #[error("metric evaluation produced a non-finite component at {coords:?}")]
    Evaluation { coords: Vec<f64> },

    #[error("metric is numerically singular at {coords:?}")]
    SingularMetric { coords: Vec<f64> },

    #[error("zero vectors are not causal")]
    ZeroVector,

    #[error("geodesic integration produced a non-finite state")]
    Integration,

    #[error("backward path left the chart before the exit time resolved; inside up to s = {partial_bound}")]
    ChartExit { partial_bound: f64 },

    #[error("no null geodesic from the event reaches the worldline inside the parameter window")]
    NoConnection,

    #[error("target coincides with the source event")]
    DegenerateTarget,

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("flowout transversality failed: smallest singular value {sigma_min:.3e} below threshold {threshold:.3e}")]
    Transversality { sigma_min: f64, threshold: f64 },

    #[error("mollification width {epsilon} must be smaller than the patch extent {extent}")]
    Mollification { epsilon: f64, extent: f64 },

    #[error("kernel parameters invalid: {0}")]
    KernelParam(String),

    #[error("fixed-point iteration diverged after {iterations} sweeps (last change {last_change:.3e}); reduce the source amplitude")]
    NoContraction { iterations: usize, last_change: f64 },

    #[error("null congruence develops a caustic inside the detector region; shrink the detector")]
    Caustic,

    #[error("source directions are tangent to a single geodesic")]
    Tangency,

    #[error("target point is outside the causal diamond")]
    Domain,

    #[error("measurement is identically zero; nothing to detect")]
    EmptyDetection,

    #[error("config error at {pointer}: {message}")]
    Config { pointer: String, message: String },

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
