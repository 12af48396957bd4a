use std::fmt;

use sleepformer::dataset::DatasetError;
use sleepformer::eval::EvalError;
use sleepformer::model::ModelError;
use sleepformer::subject::SubjectError;
use sleepformer::training::TrainError;

/// Process exit status.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExitKind {
    /// Bad flags, config keys or values.
    User = 1,
    /// Missing, malformed or unusable input data.
    Data = 2,
    /// An invariant inside the pipeline broke.
    Internal = 3,
}

#[derive(Debug)]
pub struct CliError {
    pub kind: ExitKind,
    pub message: String,
}

impl CliError {
    pub fn user(message: impl Into<String>) -> Self {
        Self { kind: ExitKind::User, message: message.into() }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self { kind: ExitKind::Data, message: message.into() }
    }

    pub fn context(mut self, what: impl fmt::Display) -> Self {
        self.message = format!("{what}: {}", self.message);
        self
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::data(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self::user(e.to_string())
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        let kind = match e {
            DatasetError::BadSplitSpec(_) | DatasetError::BadSynthConfig(_) => ExitKind::User,
            _ => ExitKind::Data,
        };
        Self { kind, message: e.to_string() }
    }
}

impl From<SubjectError> for CliError {
    fn from(e: SubjectError) -> Self {
        Self::data(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        let kind = match e {
            ModelError::BadConfig(_) => ExitKind::User,
            ModelError::CorruptCheckpoint(_) | ModelError::LayoutMismatch(_) | ModelError::Io(_) => ExitKind::Data,
            ModelError::Shape(_) | ModelError::Autodiff(_) => ExitKind::Internal,
        };
        Self { kind, message: e.to_string() }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Model(m) => m.into(),
            EvalError::Training(t) => (*t).into(),
            e => {
                let kind = match e {
                    EvalError::UnknownChannel(_) => ExitKind::User,
                    EvalError::LengthMismatch { .. } | EvalError::BadLabel(_) => ExitKind::Internal,
                    _ => ExitKind::Data,
                };
                Self { kind, message: e.to_string() }
            }
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Model(m) => m.into(),
            TrainError::Eval(v) => v.into(),
            e => {
                let kind = match e {
                    TrainError::Config { .. } | TrainError::UnknownChannel(_) | TrainError::ConfigMismatch(_) => {
                        ExitKind::User
                    }
                    TrainError::DivergedLoss { .. } | TrainError::Autodiff(_) => ExitKind::Internal,
                    _ => ExitKind::Data,
                };
                Self { kind, message: e.to_string() }
            }
        }
    }
}
