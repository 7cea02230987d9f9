use thiserror::Error;

/// Errors raised across the pipeline, tagged by the stage that produced them.
#[derive(Error, Debug, Clone, PartialEq)]
pub enum Error {
    #[error("invalid point: {0}")]
    InvalidPoint(String),
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("integrator error: {0}")]
    Integrator(String),
    #[error("timeout: {0}")]
    Timeout(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("degenerate critical point {id}: smallest |eigenvalue| {eig:e}")]
    Degenerate { id: usize, eig: f64 },
    #[error("level {0} is not a regular value")]
    NotRegular(f64),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("isolation failure: {0}")]
    Isolation(String),
    #[error("shooting error: {0}")]
    Shooting(String),
    #[error("Morse-Smale violation: {0}")]
    MorseSmale(String),
    #[error("resolution error: {0}")]
    Resolution(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("input error: {0}")]
    Input(String),
    #[error("complex error: {0}")]
    Complex(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("coverage error: {0}")]
    Coverage(String),
    #[error("construction error: {0}")]
    Construction(String),
    #[error("rasterization error: {0}")]
    Rasterization(String),
    #[error("basis error: {0}")]
    Basis(String),
    #[error("probe error: {0}")]
    Probe(String),
    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    /// Process exit code for the CLI contract.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Input(_) | Error::Io(_) | Error::Unsupported(_) => 2,
            Error::Isolation(_)
            | Error::MorseSmale(_)
            | Error::Coverage(_)
            | Error::Construction(_)
            | Error::Degenerate { .. }
            | Error::NotRegular(_) => 1,
            _ => 3,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
