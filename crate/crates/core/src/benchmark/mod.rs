//! Benchmark construction, export and SQL-grounded evaluation.

mod evaluate;
mod export;
mod stats;

use std::collections::{BTreeMap, HashSet};
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use evaluate::{
    apply_reference_mutation, evaluate_query, evaluate_state, evaluate_task, parse_answer, self_check_state, Verdict,
    VerdictReason,
};
pub use export::{export, load_tasks, manifest, to_canonical_json, Manifest, MANIFEST_FILE, TASKS_FILE};
pub use stats::{stats, StatsReport};

use crate::config::RunConfig;
use crate::db::{AdapterHandle, DbError};
use crate::difficulty::{score, DifficultyError, DifficultyScore, DifficultyWeights, Thresholds};
use crate::taskgen::{BoundStatement, GroundTruth, Operation, StatePredicate, TaskInstance, VerificationReport};
use crate::value::{ResultSet, Value};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum BenchmarkError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("instance {instance_id}: {message}")]
    Build { instance_id: String, message: String },
    #[error(transparent)]
    Difficulty(#[from] DifficultyError),
    #[error(transparent)]
    Db(#[from] DbError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EvalSpec {
    SqlQueryMatch {
        reference_sql: BoundStatement,
        reference_answer: ResultSet,
    },
    SqlStateCheck {
        state_predicates: Vec<StatePredicate>,
        expected_affected_rows: u64,
    },
}

/// One exported task. Besides the WebArena-style fields it carries the
/// bound values and the verification statement, which dedup and the
/// evaluator's self-checks rely on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkTask {
    pub task_id: u64,
    pub sites: Vec<String>,
    pub start_url: String,
    pub require_login: bool,
    pub require_reset: bool,
    pub intent: String,
    pub intents_i18n: BTreeMap<String, String>,
    pub operation: Operation,
    pub eval: EvalSpec,
    pub difficulty: DifficultyScore,
    pub workflow_id: String,
    pub template_id: String,
    pub instance_id: String,
    pub tables: Vec<String>,
    pub bindings: BTreeMap<String, Value>,
    pub verification_sql: BoundStatement,
}

/// Why a task left the corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Removal {
    pub instance_id: String,
    pub reason: String,
}

fn renumber(tasks: &mut [BenchmarkTask]) {
    for (i, t) in tasks.iter_mut().enumerate() {
        t.task_id = i as u64;
    }
}

/// Scores verified instances and turns them into tasks with dense ids.
pub fn build_tasks(
    instances: &[TaskInstance],
    reports: &[VerificationReport],
    cfg: &RunConfig,
) -> Result<Vec<BenchmarkTask>, BenchmarkError> {
    let by_id: BTreeMap<&str, &VerificationReport> = reports.iter().map(|r| (r.instance_id.as_str(), r)).collect();
    let weights = cfg.difficulty.weights();
    let thresholds = cfg.difficulty.thresholds();
    let primary = cfg.generation.primary_language();
    let mut out = Vec::with_capacity(instances.len());
    for inst in instances {
        let build_err = |message: &str| BenchmarkError::Build {
            instance_id: inst.id.clone(),
            message: message.to_string(),
        };
        let report = by_id
            .get(inst.id.as_str())
            .ok_or_else(|| build_err("no verification report"))?;
        let difficulty = score(inst, report, weights, thresholds)?;
        let eval = match inst.ground_truth.clone().ok_or_else(|| build_err("no ground truth"))? {
            GroundTruth::Query { answer } => EvalSpec::SqlQueryMatch {
                reference_sql: inst.verification_sql.clone(),
                reference_answer: answer,
            },
            GroundTruth::Mutation {
                affected_rows,
                predicates,
            } => EvalSpec::SqlStateCheck {
                state_predicates: predicates,
                expected_affected_rows: affected_rows,
            },
        };
        let intent = inst
            .intents_resolved
            .get(primary)
            .cloned()
            .ok_or_else(|| build_err("no intent in the primary language"))?;
        out.push(BenchmarkTask {
            task_id: out.len() as u64,
            sites: vec![cfg.site.name.clone()],
            start_url: cfg.site.base_url.clone(),
            require_login: cfg.site.require_login,
            require_reset: inst.operation.is_mutation(),
            intent,
            intents_i18n: inst.intents_resolved.clone(),
            operation: inst.operation,
            eval,
            difficulty,
            workflow_id: inst.workflow_id.clone(),
            template_id: inst.template_id.clone(),
            instance_id: inst.id.clone(),
            tables: inst.tables.clone(),
            bindings: inst
                .bindings
                .iter()
                .map(|(k, b)| (k.clone(), b.value.clone()))
                .collect(),
            verification_sql: inst.verification_sql.clone(),
        });
    }
    Ok(out)
}

fn normalize(text: &str) -> String {
    let collapsed = text.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
    collapsed
        .trim_end_matches(['.', '?', '!', '。', '？', '！'])
        .trim_end()
        .to_string()
}

/// Dedup key: (masked normalized intent, operation, sorted tables, sorted
/// bound values).
pub fn dedup_key(t: &BenchmarkTask) -> (String, Operation, Vec<String>, Vec<String>) {
    let mut pairs: Vec<(String, &String)> = t.bindings.iter().map(|(k, v)| (v.to_string(), k)).collect();
    // longest values first so a value never masks part of a longer one
    pairs.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then_with(|| a.0.cmp(&b.0)));
    let mut masked = t.intent.clone();
    for (value, name) in &pairs {
        if !value.is_empty() {
            masked = masked.replace(value.as_str(), &format!("{{{{{name}}}}}"));
        }
    }
    let mut tables = t.tables.clone();
    tables.sort();
    let mut values: Vec<String> = t.bindings.values().map(Value::canonical_text).collect();
    values.sort();
    (normalize(&masked), t.operation, tables, values)
}

/// Drops later tasks whose key matches an earlier one; ids are re-densified.
pub fn dedup(tasks: Vec<BenchmarkTask>) -> Vec<BenchmarkTask> {
    let mut seen = HashSet::new();
    let mut out: Vec<BenchmarkTask> = tasks.into_iter().filter(|t| seen.insert(dedup_key(t))).collect();
    renumber(&mut out);
    out
}

/// Removes tasks with illegal answers or evaluation SQL that no longer runs
/// against `h` (the seed database). Ids are re-densified.
pub fn filter_illegal(
    tasks: Vec<BenchmarkTask>,
    h: &mut AdapterHandle,
) -> Result<(Vec<BenchmarkTask>, Vec<Removal>), DbError> {
    let mut kept = Vec::new();
    let mut removed = Vec::new();
    for t in tasks {
        match check_legal(&t, h)? {
            None => kept.push(t),
            Some(reason) => removed.push(Removal {
                instance_id: t.instance_id.clone(),
                reason,
            }),
        }
    }
    renumber(&mut kept);
    Ok((kept, removed))
}

fn check_legal(t: &BenchmarkTask, h: &mut AdapterHandle) -> Result<Option<String>, DbError> {
    let rerun = |h: &mut AdapterHandle, st: &BoundStatement| match h.execute_rollback(&st.sql, &st.params) {
        Ok(o) => Ok(Ok(o)),
        Err(e) if e.is_fatal() => Err(e),
        Err(e) => Ok(Err(format!("sql_error: {e}"))),
    };
    match &t.eval {
        EvalSpec::SqlQueryMatch {
            reference_sql,
            reference_answer,
        } => {
            if reference_answer.is_empty_or_all_null() {
                return Ok(Some("empty_answer".into()));
            }
            match rerun(h, reference_sql)? {
                Err(e) => Ok(Some(e)),
                Ok(o) => {
                    let again = o.into_result_set().canonicalize();
                    Ok((again != *reference_answer).then(|| "answer_changed".to_string()))
                }
            }
        }
        EvalSpec::SqlStateCheck { state_predicates, .. } => {
            for p in state_predicates {
                if let Err(e) = rerun(h, &p.statement)? {
                    return Ok(Some(e));
                }
            }
            Ok(None)
        }
    }
}

/// Recomputes every task's difficulty with new weights and thresholds.
pub fn rescore(tasks: &mut [BenchmarkTask], weights: DifficultyWeights, thresholds: Thresholds) {
    for t in tasks {
        t.difficulty = DifficultyScore::from_dimensions(t.difficulty.dimensions(), weights, thresholds);
    }
}
