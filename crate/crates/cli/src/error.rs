use std::path::PathBuf;

use dadl_core::Error as CoreError;

/// Failure classes, each with its own process exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(CoreError),
    #[error("numerical error: {0}")]
    Numerical(CoreError),
    #[error("i/o error on {path}: {source}", path = .0.display(), source = .1)]
    Io(PathBuf, #[source] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numerical(_) => 4,
            CliError::Io(..) => 5,
        }
    }
}

fn is_numerical(e: &CoreError) -> bool {
    match e {
        CoreError::Column { source, .. } => is_numerical(source),
        CoreError::GramDeficient { .. }
        | CoreError::Infeasible { .. }
        | CoreError::NonFinite(_)
        | CoreError::NegativeResidual { .. }
        | CoreError::DegenerateGraph { .. } => true,
        _ => false,
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::InvalidHyperparams(_)
            | CoreError::SparsityOutOfRange { .. }
            | CoreError::InvalidKernel(_)
            | CoreError::InvalidSynth(_) => CliError::Config(e.to_string()),
            e if is_numerical(&e) => CliError::Numerical(e),
            e => CliError::Data(e),
        }
    }
}
