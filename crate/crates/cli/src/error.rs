use std::fmt;

use icat_core::data::DataError;
use icat_core::embed::EmbedError;
use icat_core::llm::{FailureKind, LlmError};
use icat_core::prompt::PromptError;
use icat_core::select::SelectError;

/// Process exit status classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitKind {
    Config,
    Backend,
    FixtureMiss,
}

impl ExitKind {
    pub fn code(self) -> i32 {
        match self {
            ExitKind::Config => 2,
            ExitKind::Backend => 3,
            ExitKind::FixtureMiss => 4,
        }
    }

    pub fn from_failure(kind: FailureKind) -> Self {
        match kind {
            FailureKind::Backend => ExitKind::Backend,
            FailureKind::ReplayMiss => ExitKind::FixtureMiss,
            FailureKind::Budget | FailureKind::Config => ExitKind::Config,
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub kind: ExitKind,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        Self {
            kind: ExitKind::Config,
            message: message.into(),
        }
    }

    pub fn code(&self) -> i32 {
        self.kind.code()
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::config(e.to_string())
    }
}

impl From<PromptError> for CliError {
    fn from(e: PromptError) -> Self {
        CliError::config(e.to_string())
    }
}

impl From<EmbedError> for CliError {
    fn from(e: EmbedError) -> Self {
        let kind = match e {
            EmbedError::BackendUnavailable { .. } | EmbedError::Backend(_) => ExitKind::Backend,
            _ => ExitKind::Config,
        };
        Self {
            kind,
            message: e.to_string(),
        }
    }
}

impl From<SelectError> for CliError {
    fn from(e: SelectError) -> Self {
        match e {
            SelectError::Embed(inner) => inner.into(),
            other => CliError::config(other.to_string()),
        }
    }
}

impl From<LlmError> for CliError {
    fn from(e: LlmError) -> Self {
        Self {
            kind: ExitKind::from_failure(e.kind()),
            message: e.to_string(),
        }
    }
}
