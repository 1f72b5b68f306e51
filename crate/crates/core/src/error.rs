use thiserror::Error;

/// Errors raised across the crate. Variants follow the failure classes of
/// the public operations (configuration, numerics, policy validity, ...).
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("input error: {0}")]
    Input(String),
    #[error("policy error: {0}")]
    Policy(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("range error: {0}")]
    Range(String),
    #[error("unsupported mode: {0}")]
    Unsupported(String),
    #[error("transition error: {0}")]
    Transition(String),
    #[error("fit error: {0}")]
    Fit(String),
    #[error("degenerate direction: {0}")]
    DegenerateDirection(String),
    #[error("oracle error: {0}")]
    Oracle(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("episode {episode}: {source}")]
    AtEpisode {
        episode: usize,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True when the root cause is a numeric failure.
    pub fn is_numeric(&self) -> bool {
        match self {
            Error::Numeric(_) | Error::DegenerateDirection(_) => true,
            Error::AtEpisode { source, .. } => source.is_numeric(),
            _ => false,
        }
    }

    pub(crate) fn at_episode(self, episode: usize) -> Error {
        match self {
            e @ Error::AtEpisode { .. } => e,
            e => Error::AtEpisode {
                episode,
                source: Box::new(e),
            },
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn ensure_finite(values: &[f64], what: &str) -> Result<()> {
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("{what}[{i}] is not finite")));
    }
    Ok(())
}
