//! Error kinds and their process exit codes.

use std::fmt;

use fcna_core::FcnaError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorKind {
    Internal,
    Usage,
    Config,
    MissingInput,
    MissingCheckpoint,
    Dimension,
    Io,
    Diverged,
    Checkpoint,
    Data,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Internal => 1,
            ErrorKind::Usage | ErrorKind::Config => 2,
            ErrorKind::MissingInput | ErrorKind::MissingCheckpoint => 3,
            ErrorKind::Dimension => 4,
            ErrorKind::Io => 5,
            ErrorKind::Diverged => 6,
            ErrorKind::Checkpoint => 7,
            ErrorKind::Data => 8,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorKind::Internal => "internal",
            ErrorKind::Usage => "usage",
            ErrorKind::Config => "config",
            ErrorKind::MissingInput => "missing-input",
            ErrorKind::MissingCheckpoint => "missing-checkpoint",
            ErrorKind::Dimension => "dimension",
            ErrorKind::Io => "io",
            ErrorKind::Diverged => "diverged",
            ErrorKind::Checkpoint => "checkpoint",
            ErrorKind::Data => "data",
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub kind: ErrorKind,
    pub message: String,
}

impl CliError {
    pub fn new(kind: ErrorKind, message: impl Into<String>) -> Self {
        CliError { kind, message: message.into() }
    }

    pub fn exit_code(&self) -> i32 {
        self.kind.exit_code()
    }
}

impl fmt::Display for CliError {
    /// A single line: `error[<kind>]: <message>`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let one_line = self.message.replace('\n', " ");
        write!(f, "error[{}]: {one_line}", self.kind.as_str())
    }
}

impl std::error::Error for CliError {}

impl From<FcnaError> for CliError {
    fn from(e: FcnaError) -> Self {
        use FcnaError::*;
        let kind = match &e {
            ShapeMismatch { .. }
            | InvalidTensor(_)
            | InvalidGeometry(_)
            | LayerInputTooSmall { .. }
            | InputTooSmall { .. }
            | ImageSmallerThanCrop { .. } => ErrorKind::Dimension,
            CropBelowMinimum { .. } | InvalidSpec(_) | InvalidConfig(_) => ErrorKind::Config,
            BadMagic | UnsupportedVersion(_) | Truncated(_) | CheckpointShape(_) => ErrorKind::Checkpoint,
            Diverged(_) => ErrorKind::Diverged,
            Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => ErrorKind::MissingInput,
            Io { .. } | Image { .. } | Csv(_) => ErrorKind::Io,
            LabelOutOfRange { .. }
            | EvalModeCache
            | Manifest(_)
            | ClassTooSmall { .. }
            | UpsampleRefused { .. }
            | EmptyClass(_)
            | UndefinedCorrelation { .. }
            | Eval(_)
            | ReportParse { .. } => ErrorKind::Data,
        };
        CliError::new(kind, e.to_string())
    }
}
