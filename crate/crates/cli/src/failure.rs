use std::fmt::Display;

use tpnet::datagen::CorpusIoError;
use tpnet::model::CheckpointError;

pub const IO: i32 = 1;
pub const USAGE: i32 = 2;
pub const DIVERGED: i32 = 3;
pub const NON_FINITE: i32 = 4;
pub const CHECKPOINT: i32 = 5;

#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    pub fn new(code: i32, message: impl Display) -> Self {
        Self { code, message: message.to_string() }
    }

    pub fn usage(message: impl Display) -> Self {
        Self::new(USAGE, message)
    }

    pub fn io(message: impl Display) -> Self {
        Self::new(IO, message)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Self::io(e)
    }
}

impl From<CorpusIoError> for Failure {
    fn from(e: CorpusIoError) -> Self {
        match e {
            CorpusIoError::Io { .. } => Self::io(e),
            _ => Self::usage(e),
        }
    }
}

/// A missing file is an ordinary I/O error; anything unreadable past that
/// counts as a corrupt checkpoint.
pub fn checkpoint(path: &std::path::Path, e: CheckpointError) -> Failure {
    match &e {
        CheckpointError::Io(io) if io.kind() == std::io::ErrorKind::NotFound => {
            Failure::io(format!("{}: {e}", path.display()))
        }
        _ => Failure::new(CHECKPOINT, format!("{}: {e}", path.display())),
    }
}

pub type CliResult = Result<(), Failure>;
