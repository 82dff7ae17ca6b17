use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    Grid(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("outside domain: {0}")]
    Domain(String),

    #[error("hypothesis violated for {constant}: {detail}")]
    Hypothesis { constant: String, detail: String },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("window collapsed below dt at t = {time}")]
    WindowCollapse { time: f64 },

    #[error("blow-up at t = {time} although the system is declared dissipative")]
    DissipativeBlowup { time: f64 },

    #[error("invalid scenario: {0}")]
    Scenario(String),

    #[error("invalid control: {0}")]
    Control(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for errors caused by bad input rather than by the numerics.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Grid(_)
                | Error::Shape(_)
                | Error::Hypothesis { .. }
                | Error::Precondition(_)
                | Error::Scenario(_)
                | Error::Control(_)
                | Error::Config(_)
        )
    }
}
