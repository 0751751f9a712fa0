//! Structured, machine-parseable pipeline diagnostics.

use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Info,
    Warning,
    Error,
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Severity::Info => "info",
            Severity::Warning => "warning",
            Severity::Error => "error",
        })
    }
}

/// One diagnostic line: `stage=<s> severity=<s> code=<c> message="<m>"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub stage: String,
    pub severity: Severity,
    pub code: String,
    pub message: String,
}

impl Diagnostic {
    pub fn new(stage: &str, severity: Severity, code: &str, message: impl Into<String>) -> Self {
        Self {
            stage: stage.to_string(),
            severity,
            code: code.to_string(),
            message: message.into(),
        }
    }

    pub fn info(stage: &str, code: &str, message: impl Into<String>) -> Self {
        Self::new(stage, Severity::Info, code, message)
    }

    pub fn warning(stage: &str, code: &str, message: impl Into<String>) -> Self {
        Self::new(stage, Severity::Warning, code, message)
    }

    pub fn error(stage: &str, code: &str, message: impl Into<String>) -> Self {
        Self::new(stage, Severity::Error, code, message)
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "stage={} severity={} code={} message={}",
            self.stage,
            self.severity,
            self.code,
            serde_json::Value::String(self.message.clone())
        )
    }
}
