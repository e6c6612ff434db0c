use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("non-finite state at step {step} (t = {time}); time step likely too large")]
    NonFiniteState { step: usize, time: f64 },

    #[error("volume constraint {volume} is outside (0, 2π)")]
    InfeasibleVolume { volume: f64 },

    #[error("model `{model}` violates {hypothesis}: {detail}")]
    HypothesisViolation {
        model: String,
        hypothesis: &'static str,
        detail: String,
    },

    #[error("inadmissible control: {0}")]
    InadmissibleControl(String),

    #[error("unknown model `{0}`")]
    UnknownModel(String),

    #[error("degenerate support: {0}")]
    DegenerateSupport(String),

    #[error("time step {dt} too coarse for wavenumber {k}: need dt <= {limit}")]
    ResolutionExceeded { dt: f64, k: usize, limit: f64 },

    #[error("line search stalled at iteration {iteration} after {halvings} halvings")]
    StalledLineSearch { iteration: usize, halvings: usize },

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }
}
