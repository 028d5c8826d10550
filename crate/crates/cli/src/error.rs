use std::fmt::Display;
use std::path::Path;

use rescon_core::analysis::AnalysisError;
use rescon_core::controller_runtime::{RuntimeError, TraceCsvError};
use rescon_core::crypto_paillier::PaillierError;
use rescon_core::netdemo::NetError;
use rescon_core::synthesis::SynthesisError;
use serde_json::json;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("invariant `{invariant}` violated: {detail}")]
    Invariant { invariant: &'static str, detail: String },
    #[error("certificate rejected: {}", failures.join(", "))]
    Rejected { failures: Vec<String> },
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Synthesis(#[from] SynthesisError),
    #[error(transparent)]
    Paillier(#[from] PaillierError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Csv(#[from] TraceCsvError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.display().to_string(), source }
    }

    pub fn invariant(invariant: &'static str, detail: impl Display) -> Self {
        CliError::Invariant { invariant, detail: detail.to_string() }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Io { .. } => "io",
            CliError::Parse { .. } => "parse",
            CliError::Invariant { .. } => "invalid-config",
            CliError::Rejected { .. } => "certificate-rejected",
            CliError::Runtime(_) => "runtime",
            CliError::Analysis(_) => "analysis",
            CliError::Synthesis(_) => "synthesis",
            CliError::Paillier(_) => "paillier",
            CliError::Net(_) => "netdemo",
            CliError::Csv(_) => "csv",
            CliError::Json(_) => "json",
        }
    }

    /// The machine-readable form written to stderr.
    pub fn to_json(&self) -> serde_json::Value {
        let mut v = json!({ "error": self.kind(), "message": self.to_string() });
        match self {
            CliError::Invariant { invariant, .. } => v["invariant"] = json!(invariant),
            CliError::Rejected { failures } => v["failures"] = json!(failures),
            _ => {}
        }
        v
    }
}
