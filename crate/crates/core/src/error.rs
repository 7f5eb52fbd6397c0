use thiserror::Error;

/// Errors produced across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{field}: {message}")]
    Domain { field: String, message: String },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("index {index} out of range: {message}")]
    Index { index: usize, message: String },

    #[error("linear algebra failure: {0}")]
    LinAlg(String),

    #[error("no convergence after {iterations} iterations: {message}")]
    Convergence { iterations: usize, message: String },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("line {line}: expected {expected} columns, found {found}")]
    Format {
        line: usize,
        expected: usize,
        found: usize,
    },

    #[error("missing data in {} cells; first: {}", .0.len(), .0.first().map(|g| g.to_string()).unwrap_or_default())]
    MissingData(Vec<DataGap>),

    #[error("dataset specification: {0}")]
    Spec(String),

    #[error("panel has no entry for year {year}, population {population}")]
    Gap { year: i32, population: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn domain(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Domain {
            field: field.into(),
            message: message.into(),
        }
    }
}

/// One missing `(country, year, age)` cell reported by dataset assembly.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataGap {
    pub country: String,
    pub year: i32,
    pub age: u32,
    pub what: &'static str,
}

impl std::fmt::Display for DataGap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} {} year {} age {}",
            self.country, self.what, self.year, self.age
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
