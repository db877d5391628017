use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid process spec: {0}")]
    InvalidSpec(String),

    #[error("ambiguous eigenvalue clustering: {0}; retry with a different tolerance")]
    Clustering(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("fit error: {0}")]
    Fit(String),

    #[error("insufficient samples: {0}")]
    InsufficientSamples(String),

    #[error("degenerate estimate at a = {a}: no path entered the ball")]
    DegenerateCell { a: f64 },

    #[error("regime not covered: {0}")]
    NotCovered(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("point budget exceeded: {requested} points requested, limit {limit}")]
    Budget { requested: u64, limit: u64 },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable machine-readable code, used by the CLI error JSON.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Shape(_) => "shape",
            Error::Domain(_) => "domain",
            Error::InvalidSpec(_) => "invalid_spec",
            Error::Clustering(_) => "clustering",
            Error::Numerical(_) => "numerical",
            Error::Fit(_) => "fit",
            Error::InsufficientSamples(_) => "insufficient_samples",
            Error::DegenerateCell { .. } => "degenerate_cell",
            Error::NotCovered(_) => "not_covered",
            Error::Unsupported(_) => "unsupported",
            Error::Budget { .. } => "budget",
            Error::Parse(_) => "parse",
            Error::Io(_) => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
