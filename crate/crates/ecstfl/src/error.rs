use crate::annotation::EmotionCategory;

/// Crate-wide error type.
///
/// Variants split into two families: input/validation problems (bad flags,
/// malformed files, contract violations) and numerical failures (undefined
/// statistics, divergent training). The CLI maps the former to exit code 1
/// and the latter to exit code 2.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("validation: {0}")]
    Validation(String),

    #[error("{path}:{line}: {msg}")]
    Schema {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("ambiguous single label: {0:?} all exceed the threshold; raise r to at least half the annotator count")]
    AmbiguousLabel(Vec<EmotionCategory>),

    #[error("degenerate agreement: every assignment falls in one category, so expected agreement is 1 and kappa is the undefined form 0/0")]
    DegenerateAgreement,

    #[error("collapsed features: all cross-class feature distances are zero, the EC-STFL denominator vanished")]
    CollapsedFeatures,

    #[error("training diverged at epoch {epoch}, batch {batch}: {detail}")]
    Divergence {
        epoch: usize,
        batch: usize,
        detail: String,
    },

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code for the CLI: 1 for validation/usage, 2 for
    /// numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::DegenerateAgreement
            | Error::CollapsedFeatures
            | Error::Divergence { .. } => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

/// Shorthand for `Error::Validation` with format args.
#[macro_export]
macro_rules! validation {
    ($($arg:tt)*) => {
        $crate::Error::Validation(format!($($arg)*))
    };
}
