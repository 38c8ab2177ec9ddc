use serde_json::json;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Usage(String),
    #[error("{context}: {message}")]
    Module {
        module: &'static str,
        context: String,
        message: String,
    },
    /// The command ran but a result check did not hold.
    #[error("{message}")]
    Check { message: String, detail: serde_json::Value },
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Usage(_) => "usage",
            CliError::Module { module, .. } => module,
            CliError::Check { .. } => "check",
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Usage(_) => 2,
            CliError::Module { .. } => 1,
            CliError::Check { .. } => 3,
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        let mut v = json!({ "error": self.kind(), "message": self.to_string() });
        match self {
            CliError::Module { context, .. } => v["context"] = json!(context),
            CliError::Check { detail, .. } => v["detail"] = detail.clone(),
            _ => {}
        }
        v
    }
}

/// Attaches a module name and what was being done to any displayable error.
pub trait Context<T> {
    fn ctx(self, module: &'static str, context: impl FnOnce() -> String) -> Result<T, CliError>;
}

impl<T, E: std::fmt::Display> Context<T> for Result<T, E> {
    fn ctx(self, module: &'static str, context: impl FnOnce() -> String) -> Result<T, CliError> {
        self.map_err(|e| CliError::Module {
            module,
            context: context(),
            message: e.to_string(),
        })
    }
}
