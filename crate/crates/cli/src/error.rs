use thiserror::Error;

/// Error classes with distinct process exit codes.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("runtime failure: {0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Runtime(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

/// Wraps an I/O error with the path involved.
pub fn io_err(path: &std::path::Path, e: impl std::fmt::Display) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

macro_rules! data_errors {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Data(e.to_string())
            }
        }
    )*};
}

data_errors!(
    ltlm_core::io::LatticeIoError,
    ltlm_core::symbols::SymbolError,
    ltlm_core::ngram::NgramError,
    ltlm_core::LatticeError,
    ltlm_core::align::AlignError,
    ltlm_latgen::LatgenError
);

impl From<ltlm_model::ModelError> for CliError {
    fn from(e: ltlm_model::ModelError) -> Self {
        match e {
            ltlm_model::ModelError::InvalidConfig(m) => CliError::Config(m),
            ltlm_model::ModelError::Checkpoint(_)
            | ltlm_model::ModelError::Io(_)
            | ltlm_model::ModelError::EmptyDataset
            | ltlm_model::ModelError::Lattice(_)
            | ltlm_model::ModelError::Autodiff(ltlm_autodiff::AutodiffError::Checkpoint(_) | ltlm_autodiff::AutodiffError::Io(_)) => {
                CliError::Data(e.to_string())
            }
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<ltlm_rescore::RescoreError> for CliError {
    fn from(e: ltlm_rescore::RescoreError) -> Self {
        match e {
            ltlm_rescore::RescoreError::Model(m) => m.into(),
            other => CliError::Data(other.to_string()),
        }
    }
}
