use std::path::PathBuf;

/// Errors produced anywhere in the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("degenerate pose: {0}")]
    DegeneratePose(String),
    #[error("sequence has {0} frame(s); at least 2 are required")]
    TooFewFrames(usize),
    #[error("format map requires source keypoint {index} but only {available} were supplied")]
    MissingSourceJoint { index: usize, available: usize },
    #[error("invalid skeleton: {0}")]
    InvalidSkeleton(String),
    #[error("invalid format map: {0}")]
    InvalidFormatMap(String),
    #[error("invalid pose: {0}")]
    InvalidPose(String),
    #[error("bank holds {bank} pose(s) but k = {k}")]
    BankTooSmall { bank: usize, k: usize },
    #[error("k = {0} is too small; the prior pose needs at least 2 neighbours")]
    KTooSmall(usize),
    #[error("reference distance is zero in the ground-truth pose")]
    DegenerateReference,
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("alignment error: {0}")]
    AlignmentError(String),
    #[error("error bank is empty")]
    EmptyBank,
    #[error("no ground-truth poses supplied")]
    EmptyGts,
    #[error("training data contains no fake samples")]
    NoFakes,
    #[error("training data contains no real samples")]
    NoReals,
    #[error("validation set is empty")]
    EmptyValidation,
    #[error("format version mismatch: {0}")]
    FormatVersionMismatch(String),
    #[error("corrupt file: {0}")]
    Corrupt(String),
    #[error("checkpoint skeleton hash {found:016x} does not match expected {expected:016x}")]
    SkeletonMismatch { expected: u64, found: u64 },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("config error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the command-line front end: 1 for usage and
    /// configuration problems, 2 for bad data, 3 for numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidSkeleton(_) | Error::InvalidFormatMap(_) => 1,
            Error::NumericalFailure(_) => 3,
            _ => 2,
        }
    }
}
