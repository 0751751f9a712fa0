//! Semantic inference behind a pluggable transport.
//!
//! Every request travels as a structured document through a
//! [`ProviderBackend`]; the typed methods on [`Provider`] build the
//! request, count the call and validate the response, so the rule-based
//! mock and the HTTP client are held to the same contract.

mod http;
mod mock;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicU64, Ordering};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

pub use http::HttpBackend;
pub use mock::MockBackend;

use crate::config::{ProviderKind, RunConfig};
use crate::db::{ColumnMeta, NormalizedType};
use crate::discovery::{Confidence, Relation, RelationOrigin, TableProfile, Workflow};
use crate::taskgen::{placeholder_names, Operation, TemplateDraft};
use crate::value::Value;

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("provider unavailable: {0}")]
    Unavailable(String),
    #[error("malformed provider response: {0}")]
    MalformedResponse(String),
    #[error("invalid provider request: {0}")]
    InvalidRequest(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequestKind {
    InferPurpose,
    SuggestRelations,
    DescribeWorkflow,
    DraftTemplates,
    VariantValues,
}

impl RequestKind {
    const ALL: [RequestKind; 5] = [
        RequestKind::InferPurpose,
        RequestKind::SuggestRelations,
        RequestKind::DescribeWorkflow,
        RequestKind::DraftTemplates,
        RequestKind::VariantValues,
    ];

    fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderRequest {
    pub kind: RequestKind,
    pub payload: serde_json::Value,
    pub languages: Vec<String>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderResponse {
    pub kind: RequestKind,
    pub payload: serde_json::Value,
    pub provider_id: String,
}

/// Transport for provider requests.
pub trait ProviderBackend: Send + Sync {
    fn id(&self) -> String;
    fn complete(&self, request: &ProviderRequest) -> Result<ProviderResponse, ProviderError>;
}

/// A table as shown to the provider for purpose inference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableDescriptor {
    pub table: String,
    pub columns: Vec<ColumnMeta>,
    pub sample_rows: Vec<Vec<Value>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PurposeInference {
    pub business_purpose: String,
    pub key_fields: Vec<String>,
}

/// Drafts that passed provider-level validation plus the ones that did not.
#[derive(Debug, Default)]
pub struct DraftBatch {
    pub drafts: Vec<TemplateDraft>,
    pub malformed: Vec<(String, ProviderError)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct RelationCandidate {
    from_table: String,
    from_column: String,
    to_table: String,
    to_column: String,
}

pub struct Provider {
    backend: Box<dyn ProviderBackend>,
    seed: u64,
    languages: Vec<String>,
    counters: [AtomicU64; 5],
}

impl std::fmt::Debug for Provider {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Provider")
            .field("id", &self.backend.id())
            .field("calls", &self.call_count())
            .finish()
    }
}

impl Provider {
    pub fn new(backend: Box<dyn ProviderBackend>, seed: u64, languages: Vec<String>) -> Self {
        Self {
            backend,
            seed,
            languages,
            counters: Default::default(),
        }
    }

    pub fn mock(seed: u64, aliases: BTreeMap<String, Vec<String>>) -> Self {
        Self::new(Box::new(MockBackend::new(aliases)), seed, vec!["en".into()])
    }

    pub fn from_config(cfg: &RunConfig) -> Self {
        let backend: Box<dyn ProviderBackend> = match cfg.provider.kind {
            ProviderKind::Mock => Box::new(MockBackend::new(cfg.provider.aliases.clone())),
            ProviderKind::Http => Box::new(HttpBackend::new(&cfg.provider)),
        };
        Self::new(backend, cfg.seed, cfg.generation.languages.clone())
    }

    pub fn id(&self) -> String {
        self.backend.id()
    }

    /// Total calls issued so far (monotonically nondecreasing).
    pub fn call_count(&self) -> u64 {
        self.counters.iter().map(|c| c.load(Ordering::SeqCst)).sum()
    }

    pub fn calls_of(&self, kind: RequestKind) -> u64 {
        self.counters[kind.index()].load(Ordering::SeqCst)
    }

    pub fn call_counts(&self) -> BTreeMap<String, u64> {
        RequestKind::ALL
            .iter()
            .map(|k| {
                let name = serde_json::to_value(k)
                    .ok()
                    .and_then(|v| v.as_str().map(String::from))
                    .unwrap_or_default();
                (name, self.calls_of(*k))
            })
            .collect()
    }

    fn call<T: DeserializeOwned>(&self, kind: RequestKind, payload: serde_json::Value) -> Result<T, ProviderError> {
        self.counters[kind.index()].fetch_add(1, Ordering::SeqCst);
        let req = ProviderRequest {
            kind,
            payload,
            languages: self.languages.clone(),
            seed: self.seed,
        };
        let resp = self.backend.complete(&req)?;
        if resp.kind != kind {
            return Err(ProviderError::MalformedResponse(format!(
                "expected {kind:?} response, got {:?}",
                resp.kind
            )));
        }
        serde_json::from_value(resp.payload).map_err(|e| ProviderError::MalformedResponse(e.to_string()))
    }

    /// One purpose and key-field list per input table, in input order.
    pub fn infer_purpose(&self, tables: &[TableDescriptor]) -> Result<Vec<PurposeInference>, ProviderError> {
        if let Some(t) = tables.iter().find(|t| t.columns.is_empty()) {
            return Err(ProviderError::InvalidRequest(format!(
                "table {} has no columns",
                t.table
            )));
        }
        #[derive(Deserialize)]
        struct Resp {
            results: Vec<PurposeInference>,
        }
        let resp: Resp = self.call(RequestKind::InferPurpose, json!({ "tables": tables }))?;
        if resp.results.len() != tables.len() {
            return Err(ProviderError::MalformedResponse(format!(
                "expected {} purpose results, got {}",
                tables.len(),
                resp.results.len()
            )));
        }
        for (t, r) in tables.iter().zip(&resp.results) {
            if let Some(k) = r.key_fields.iter().find(|k| !t.columns.iter().any(|c| &c.name == *k)) {
                return Err(ProviderError::MalformedResponse(format!(
                    "key field {k} is not a column of {}",
                    t.table
                )));
            }
        }
        Ok(resp.results)
    }

    /// Candidate inferred relations between distinct profiled tables.
    ///
    /// Returned relations carry `confidence = rejected` until probed.
    pub fn suggest_relations(&self, profiles: &[TableProfile]) -> Result<Vec<Relation>, ProviderError> {
        if profiles.len() < 2 {
            return Ok(Vec::new());
        }
        #[derive(Deserialize)]
        struct Resp {
            candidates: Vec<RelationCandidate>,
        }
        let resp: Resp = self.call(RequestKind::SuggestRelations, json!({ "profiles": profiles }))?;
        let has_col = |t: &str, c: &str| {
            profiles
                .iter()
                .any(|p| p.table == t && p.columns.iter().any(|x| x.name == c))
        };
        let mut out = Vec::new();
        let mut seen = BTreeSet::new();
        for c in resp.candidates {
            if c.from_table == c.to_table {
                return Err(ProviderError::MalformedResponse(format!(
                    "candidate on a single table {}",
                    c.from_table
                )));
            }
            if !has_col(&c.from_table, &c.from_column) || !has_col(&c.to_table, &c.to_column) {
                return Err(ProviderError::MalformedResponse(format!(
                    "candidate {}.{} -> {}.{} names unknown columns",
                    c.from_table, c.from_column, c.to_table, c.to_column
                )));
            }
            if seen.insert((
                c.from_table.clone(),
                c.from_column.clone(),
                c.to_table.clone(),
                c.to_column.clone(),
            )) {
                out.push(Relation {
                    from_table: c.from_table,
                    from_column: c.from_column,
                    to_table: c.to_table,
                    to_column: c.to_column,
                    origin: RelationOrigin::Inferred,
                    confidence: Confidence::Rejected,
                    probe_rows: 0,
                });
            }
        }
        Ok(out)
    }

    /// Business description of a group of related tables.
    pub fn describe_workflow(
        &self,
        core_tables: &[String],
        relations: &[Relation],
        profiles: &[&TableProfile],
    ) -> Result<String, ProviderError> {
        #[derive(Deserialize)]
        struct Resp {
            description: String,
        }
        let resp: Resp = self.call(
            RequestKind::DescribeWorkflow,
            json!({ "core_tables": core_tables, "relations": relations, "profiles": profiles }),
        )?;
        if resp.description.trim().is_empty() {
            return Err(ProviderError::MalformedResponse("empty workflow description".into()));
        }
        Ok(resp.description)
    }

    /// Template drafts for a workflow. Drafts failing placeholder parity
    /// or lacking a requested language land in `malformed`.
    pub fn draft_templates(
        &self,
        workflow: &Workflow,
        profiles: &[TableProfile],
        languages: &[String],
        operations: &[Operation],
        allow_self_join: bool,
    ) -> Result<DraftBatch, ProviderError> {
        if workflow.core_tables.is_empty() {
            return Err(ProviderError::InvalidRequest("workflow has no core tables".into()));
        }
        #[derive(Deserialize)]
        struct Resp {
            drafts: Vec<TemplateDraft>,
        }
        let resp: Resp = self.call(
            RequestKind::DraftTemplates,
            json!({
                "workflow": workflow,
                "profiles": profiles,
                "languages": languages,
                "operations": operations,
                "allow_self_join": allow_self_join,
            }),
        )?;
        let mut batch = DraftBatch::default();
        for d in resp.drafts {
            match validate_draft(&d, languages) {
                Ok(()) => batch.drafts.push(d),
                Err(e) => batch.malformed.push((d.pattern.clone(), e)),
            }
        }
        Ok(batch)
    }

    /// `n` fresh values for a column, none equal to an existing sample.
    pub fn variant_values(
        &self,
        column: &ColumnMeta,
        samples: &[Value],
        n: usize,
    ) -> Result<Vec<Value>, ProviderError> {
        if n == 0 {
            return Err(ProviderError::InvalidRequest("variant count must be >= 1".into()));
        }
        if samples.is_empty() && !column.normalized_type.is_numeric() {
            return Err(ProviderError::InvalidRequest(format!(
                "no existing samples for column {}",
                column.name
            )));
        }
        #[derive(Deserialize)]
        struct Resp {
            values: Vec<Value>,
        }
        let resp: Resp = self.call(
            RequestKind::VariantValues,
            json!({ "column": column, "samples": samples, "n": n }),
        )?;
        if resp.values.len() != n {
            return Err(ProviderError::MalformedResponse(format!(
                "expected {n} variants, got {}",
                resp.values.len()
            )));
        }
        for v in &resp.values {
            if !type_compatible(column.normalized_type, v) {
                return Err(ProviderError::MalformedResponse(format!(
                    "variant {v} does not fit column {}",
                    column.name
                )));
            }
            if samples.contains(v) {
                return Err(ProviderError::MalformedResponse(format!(
                    "variant {v} duplicates an existing value"
                )));
            }
        }
        Ok(resp.values)
    }
}

fn type_compatible(t: NormalizedType, v: &Value) -> bool {
    match (t, v) {
        (_, Value::Null) => false,
        (NormalizedType::Integer | NormalizedType::Boolean, Value::Integer(_)) => true,
        (NormalizedType::Real, Value::Integer(_) | Value::Real(_)) => true,
        (NormalizedType::Text | NormalizedType::Datetime, Value::Text(_)) => true,
        (NormalizedType::Blob, Value::Blob(_)) => true,
        (NormalizedType::Other, _) => true,
        _ => false,
    }
}

/// Provider-level contract for a draft: every requested language has an
/// intent, and the placeholder sets of all intents and the SQL agree.
pub fn validate_draft(d: &TemplateDraft, languages: &[String]) -> Result<(), ProviderError> {
    let bad = |m: String| Err(ProviderError::MalformedResponse(format!("draft {}: {m}", d.pattern)));
    let sql_names = match placeholder_names(&d.sql) {
        Ok(n) => n,
        Err(e) => return bad(e),
    };
    if let Some(lang) = languages.iter().find(|l| !d.intents.contains_key(*l)) {
        return bad(format!("missing intent for language {lang}"));
    }
    for (lang, text) in &d.intents {
        match placeholder_names(text) {
            Ok(n) if n == sql_names => {}
            Ok(n) => {
                return bad(format!(
                    "placeholders differ between SQL {:?} and {lang} intent {:?}",
                    sql_names, n
                ))
            }
            Err(e) => return bad(e),
        }
    }
    let declared: BTreeSet<String> = d.placeholders.iter().map(|p| p.name.clone()).collect();
    if declared.len() != d.placeholders.len() {
        return bad("duplicate placeholder definitions".into());
    }
    if declared != sql_names {
        return bad(format!(
            "declared placeholders {declared:?} differ from SQL placeholders {sql_names:?}"
        ));
    }
    Ok(())
}
