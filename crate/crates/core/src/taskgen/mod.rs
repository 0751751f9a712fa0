//! Verifiable task generation: template synthesis, data-driven
//! instantiation and execution-based verification under rollback.

mod instantiate;
mod run;
mod synth;
mod template;
mod verify;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use instantiate::instantiate;
pub use run::{run_generation, GenerationOutput};
pub use synth::{synthesize_templates, validate_template};
pub use template::{placeholder_names, render, PLACEHOLDER_NAME};
pub use verify::verify;

use crate::db::DbError;
use crate::provider::ProviderError;
use crate::value::{ResultSet, Value};

#[derive(Debug, Error)]
pub enum TaskGenError {
    #[error("placeholder `{placeholder}` of template {template_id} has no candidate values")]
    NoCandidateValues { template_id: String, placeholder: String },
    #[error("template {template_id}: {message}")]
    InvalidTemplate { template_id: String, message: String },
    #[error(transparent)]
    Db(#[from] DbError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Operation {
    Select,
    Insert,
    Update,
    Delete,
}

impl Operation {
    pub const ALL: [Operation; 4] = [
        Operation::Select,
        Operation::Insert,
        Operation::Update,
        Operation::Delete,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Operation::Select => "SELECT",
            Operation::Insert => "INSERT",
            Operation::Update => "UPDATE",
            Operation::Delete => "DELETE",
        }
    }

    pub fn is_mutation(&self) -> bool {
        *self != Operation::Select
    }

    /// The operation named by the statement's first keyword.
    pub fn of_statement(sql: &str) -> Option<Operation> {
        sql.split_whitespace().next()?.parse().ok()
    }
}

impl FromStr for Operation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_uppercase().as_str() {
            "SELECT" => Ok(Operation::Select),
            "INSERT" => Ok(Operation::Insert),
            "UPDATE" => Ok(Operation::Update),
            "DELETE" => Ok(Operation::Delete),
            _ => Err(format!("unknown operation `{s}`")),
        }
    }
}

impl fmt::Display for Operation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A join used when sampling candidate values for a placeholder.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JoinEdge {
    pub from_table: String,
    pub from_column: String,
    pub to_table: String,
    pub to_column: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PlaceholderSource {
    /// Authentic values sampled from a column, optionally through a join.
    ColumnValue {
        table: String,
        column: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        via: Option<JoinEdge>,
    },
    /// Fresh values derived from existing records of a column.
    GeneratedVariant {
        table: String,
        column: String,
    },
    LiteralChoice {
        values: Vec<Value>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quoting {
    AsValueParameter,
    AsIdentifier,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaceholderSpec {
    pub name: String,
    pub source: PlaceholderSource,
    pub quoting: Quoting,
}

/// A post-mutation count check. `expected = None` means the count is
/// captured at verification time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckDraft {
    pub sql: String,
    #[serde(default)]
    pub expected: Option<u64>,
}

/// A template as proposed by a provider, before validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateDraft {
    pub pattern: String,
    pub operation: Operation,
    pub tables: Vec<String>,
    pub intents: BTreeMap<String, String>,
    pub sql: String,
    pub placeholders: Vec<PlaceholderSpec>,
    #[serde(default)]
    pub state_checks: Vec<CheckDraft>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskTemplate {
    pub id: String,
    pub workflow_id: String,
    pub pattern: String,
    pub operation: Operation,
    pub tables: Vec<String>,
    pub intents: BTreeMap<String, String>,
    pub sql_template: String,
    pub placeholders: Vec<PlaceholderSpec>,
    pub state_checks: Vec<CheckDraft>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    AuthenticRow,
    Variant,
    Literal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Binding {
    pub value: Value,
    pub provenance: Provenance,
}

/// Statement text with positional `?` parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundStatement {
    pub sql: String,
    pub params: Vec<Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatePredicate {
    pub statement: BoundStatement,
    pub expected_count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PendingCheck {
    pub statement: BoundStatement,
    pub expected: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GroundTruth {
    Query {
        answer: ResultSet,
    },
    Mutation {
        affected_rows: u64,
        predicates: Vec<StatePredicate>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskInstance {
    pub id: String,
    pub template_id: String,
    pub workflow_id: String,
    pub site: String,
    pub operation: Operation,
    pub tables: Vec<String>,
    pub bindings: BTreeMap<String, Binding>,
    pub intents_resolved: BTreeMap<String, String>,
    pub verification_sql: BoundStatement,
    pub checks: Vec<PendingCheck>,
    /// Filled in by [`verify`] when the instance verifies.
    pub ground_truth: Option<GroundTruth>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerificationStatus {
    Verified,
    Rejected,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    Ok,
    SqlError,
    EmptyResult,
    ZeroRowsAffected,
    Timeout,
    PredicateUnsatisfiable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub instance_id: String,
    pub status: VerificationStatus,
    pub reason: RejectReason,
    pub rows: u64,
    pub cols: u64,
    pub affected_rows: u64,
    pub duration_ms: u64,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub detail: String,
}

impl VerificationReport {
    pub fn is_verified(&self) -> bool {
        self.status == VerificationStatus::Verified
    }
}
