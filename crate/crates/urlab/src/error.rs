use thiserror::Error;

/// Every failure the library can report.
///
/// Validation-type errors (bad parameters, bad configs) are distinguished from
/// numerical failures through [`Error::is_validation`], which the CLI maps to
/// separate exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parameter error: {0}")]
    Parameter(String),
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("resolution error: {0}")]
    Resolution(String),
    #[error("fit error: {0}")]
    Fit(String),
    #[error("search failure at resolution {resolution}: {message}")]
    SearchFailure { resolution: f64, message: String },
    #[error("connectivity error: {0}")]
    Connectivity(String),
    #[error("placement error: {0}")]
    Placement(String),
    #[error("ellipticity error: {0}")]
    Ellipticity(String),
    #[error("convergence error after {iterations} iterations (last residual {last:e})")]
    Convergence {
        iterations: usize,
        last: f64,
        history: Vec<f64>,
    },
    #[error("triviality error: {0}")]
    Triviality(String),
    #[error("positivity error: {0}")]
    Positivity(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("projection error: {0}")]
    Projection(String),
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for errors caused by invalid input rather than numerics.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Parameter(_) | Error::Dimension(_) | Error::Validation(_) => true,
            Error::Stage { source, .. } => source.is_validation(),
            _ => false,
        }
    }

    pub fn in_stage(self, stage: &str) -> Error {
        Error::Stage {
            stage: stage.to_string(),
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
