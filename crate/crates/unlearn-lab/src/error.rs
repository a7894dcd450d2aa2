//! Workspace-wide error type with stable machine-readable categories.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Every failure mode the library reports, grouped by category so the CLI
/// can emit machine-readable error objects and tests can match on kind.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor or layer shapes disagree.
    #[error("dimension error: {0}")]
    Dimension(String),
    /// Caller-supplied data violates a precondition (bad label, empty set).
    #[error("input error: {0}")]
    Input(String),
    /// Invalid configuration value or unknown configuration key.
    #[error("config error: {0}")]
    Config(String),
    /// Malformed binary container (bad magic, truncation).
    #[error("format error: {0}")]
    Format(String),
    /// Two artifacts that must agree do not (e.g. image/label counts).
    #[error("consistency error: {0}")]
    Consistency(String),
    /// Training or unlearning produced a non-finite quantity.
    #[error("training error: {0}")]
    Training(String),
    /// A simulated trajectory left the representable range.
    #[error("divergence error: {0}")]
    Divergence(String),
    /// Cosine similarity requested for a zero vector.
    #[error("undefined-similarity error: {0}")]
    UndefinedSimilarity(String),
    /// Correlation requested for a constant (zero-variance) trace.
    #[error("undefined-correlation error: {0}")]
    UndefinedCorrelation(String),
    /// A required upstream artifact is missing (e.g. retrain reports).
    #[error("dependency error: {0}")]
    Dependency(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable short code used in the CLI's machine-readable error output.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Dimension(_) => "dimension",
            Error::Input(_) => "input",
            Error::Config(_) => "config",
            Error::Format(_) => "format",
            Error::Consistency(_) => "consistency",
            Error::Training(_) => "training",
            Error::Divergence(_) => "divergence",
            Error::UndefinedSimilarity(_) => "undefined_similarity",
            Error::UndefinedCorrelation(_) => "undefined_correlation",
            Error::Dependency(_) => "dependency",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn codes_are_stable() {
        assert_eq!(Error::Dimension("x".into()).code(), "dimension");
        assert_eq!(Error::Config("x".into()).code(), "config");
        assert_eq!(Error::UndefinedSimilarity("x".into()).code(), "undefined_similarity");
    }

    #[test]
    fn display_includes_category_and_message() {
        let e = Error::Format("bad magic at offset 0".into());
        assert_eq!(e.to_string(), "format error: bad magic at offset 0");
    }
}
