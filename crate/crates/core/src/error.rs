use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("system not observable at theta: {0}")]
    NotObservable(String),

    #[error("Sylvester equation singular: spectra of the coefficient matrices intersect")]
    SylvesterSingular,

    #[error("exosystem/filter pairing degenerate: M_delta is singular")]
    DegeneratePairing,

    #[error("pole placement infeasible: {0}")]
    PolePlacementInfeasible(String),

    #[error("{what} divergence at t = {t}: {detail}")]
    Divergence {
        what: &'static str,
        t: f64,
        detail: String,
    },

    #[error("empty excitation window")]
    EmptyWindow,

    #[error("internal inconsistency: {0}")]
    Inconsistent(String),

    #[error("plot data error: {0}")]
    Plot(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("config parse error: {0}")]
    Toml(#[from] toml::de::Error),
}

pub(crate) fn config(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}
