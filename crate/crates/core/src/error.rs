use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("numerical divergence at step {step}")]
    Divergence { step: u64 },

    #[error("stick capsized (inclination {inclination:.3} rad)")]
    Capsize { inclination: f64 },

    #[error("trace alignment error: {0}")]
    Alignment(String),

    #[error("kernel matrix is ill-conditioned: {0}")]
    IllConditioned(String),

    #[error("calibration failed: {0}")]
    CalibrationFailed(String),

    #[error("unknown liquid preset `{0}`")]
    UnknownLiquid(String),

    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
