use serde::Serialize;
use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Model(#[from] covslice::verilog::ModelError),
    #[error(transparent)]
    Trace(#[from] covslice::tracker::TraceError),
    #[error(transparent)]
    Patch(#[from] covslice::patcher::PatchError),
    #[error(transparent)]
    Coverage(#[from] covslice::coverage::CoverageError),
    #[error(transparent)]
    Ir(#[from] covslice::ir::IrError),
    #[error(transparent)]
    Protocol(#[from] covslice::protocols::ProtocolError),
    #[error(transparent)]
    Library(#[from] covslice::protocols::LibraryError),
    #[error(transparent)]
    Llm(#[from] covslice::llm::LlmError),
    #[error(transparent)]
    Refine(#[from] covslice::refine::RefineError),
    #[error("{} IR finding(s) are errors", .0)]
    IrInvalid(usize),
    #[error("{}: {message}", path.display())]
    Config { path: PathBuf, message: String },
    #[error("{}: {message}", path.display())]
    BadInput { path: PathBuf, message: String },
    #[error("cannot access {}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

/// The object written to stderr when a command fails.
#[derive(Debug, Serialize)]
pub struct ErrorReport {
    pub error: String,
    pub message: String,
}

impl CliError {
    /// Stable machine-readable error kind.
    pub fn kind(&self) -> &'static str {
        use covslice::coverage::CoverageError as C;
        use covslice::protocols::ProtocolError as P;
        use covslice::refine::RefineError as R;
        use covslice::verilog::ModelError as M;
        match self {
            CliError::Model(M::Syntax(_)) => "syntax-error",
            CliError::Model(M::TopModuleNotFound(_)) => "top-module-not-found",
            CliError::Model(_) => "design-error",
            CliError::Trace(_) => "trace-error",
            CliError::Patch(_) => "patch-error",
            CliError::Coverage(C::NoItems) => "no-coverage-items",
            CliError::Coverage(C::UnrecognizedFormat) => "unrecognized-report-format",
            CliError::Coverage(_) => "coverage-error",
            CliError::Ir(_) => "ir-parse-error",
            CliError::IrInvalid(_) => "ir-invalid",
            CliError::Protocol(P::FrozenRegionViolation { .. }) => "frozen-region-violation",
            CliError::Protocol(P::ProtocolUnsupported(_)) => "protocol-unsupported",
            CliError::Protocol(P::LlmUnavailable(_)) | CliError::Llm(_) => "llm-unavailable",
            CliError::Protocol(_) | CliError::Library(_) => "protocol-error",
            CliError::Refine(R::SimulatorUnavailable(_)) => "simulator-unavailable",
            CliError::Refine(R::InvalidConfig(_)) => "invalid-config",
            CliError::Refine(_) => "refine-error",
            CliError::Config { .. } => "invalid-config",
            CliError::BadInput { .. } => "bad-input",
            CliError::Io { .. } => "io-error",
        }
    }

    pub fn report(&self) -> ErrorReport {
        ErrorReport {
            error: self.kind().to_string(),
            message: self.to_string(),
        }
    }
}
