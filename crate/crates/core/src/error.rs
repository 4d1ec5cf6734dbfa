//! Crate-wide error type and exit-code mapping.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, CcvxError>;

#[derive(Debug, Error)]
pub enum CcvxError {
    #[error("dimension {0} outside supported range 2..={1}")]
    Dimension(usize, usize),
    #[error("range error: {0}")]
    Range(&'static str),
    #[error("point off boundary: |rho| = {rho:.3e}")]
    OffBoundary { rho: f64 },
    #[error("degenerate defining-function gradient (norm {0:.3e})")]
    GradientDegenerate(f64),
    #[error("curvature sign violates strong C-convexity (nu = {0:.3e})")]
    CurvatureSign(f64),
    #[error("map indeterminate at point (|beta0| = {0:.3e})")]
    Indeterminacy(f64),
    #[error("singular matrix in {0}")]
    Singular(&'static str),
    #[error("normal ray exits the domain before reaching the cut wall")]
    ExitThroughBoundary,
    #[error("net construction failed: {0}")]
    NetConstruction(String),
    #[error("certificate violated: {0}")]
    Certificate(String),
    #[error("bracket failure: {0}")]
    Bracket(String),
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CcvxError {
    /// CLI exit code: 2 for configuration problems, 3 for failed
    /// certificates/audits/brackets, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CcvxError::Config(_) => 2,
            CcvxError::Certificate(_) | CcvxError::NetConstruction(_) | CcvxError::Bracket(_) => 3,
            _ => 1,
        }
    }

    /// Short variant label, safe for CSV fields.
    pub fn tag(&self) -> &'static str {
        match self {
            CcvxError::Dimension(..) => "dimension",
            CcvxError::Range(_) => "range",
            CcvxError::OffBoundary { .. } => "off_boundary",
            CcvxError::GradientDegenerate(_) => "gradient",
            CcvxError::CurvatureSign(_) => "curvature",
            CcvxError::Indeterminacy(_) => "indeterminacy",
            CcvxError::Singular(_) => "singular",
            CcvxError::ExitThroughBoundary => "exit_through_boundary",
            CcvxError::NetConstruction(_) => "net",
            CcvxError::Certificate(_) => "certificate",
            CcvxError::Bracket(_) => "bracket",
            CcvxError::Config(_) => "config",
            CcvxError::Io(_) => "io",
        }
    }
}
