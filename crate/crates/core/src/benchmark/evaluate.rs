//! Deterministic adjudication of agent results.
//!
//! Answer grammar: one row per line, cells separated by `|` (single-column
//! answers are not split). Cells compare case-insensitively after whitespace
//! collapse, or numerically with relative tolerance [`REL_TOL`] when both
//! sides parse as numbers. Rows form a multiset: order is free, duplicates
//! count.

use serde::{Deserialize, Serialize};

use super::{BenchmarkTask, EvalSpec};
use crate::db::{AdapterHandle, DbError, ExecOutcome};
use crate::taskgen::BoundStatement;
use crate::value::{ResultSet, Value};

pub const REL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum VerdictReason {
    Ok,
    AnswerMismatch,
    PredicateFailed { index: usize },
    SqlError,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub task_id: u64,
    pub success: bool,
    pub reason: VerdictReason,
    pub details: String,
}

impl Verdict {
    fn new(task_id: u64, reason: VerdictReason, details: impl Into<String>) -> Self {
        Self {
            task_id,
            success: reason == VerdictReason::Ok,
            reason,
            details: details.into(),
        }
    }
}

/// Splits a submitted answer into rows of cells.
pub fn parse_answer(text: &str, columns: usize) -> Vec<Vec<String>> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(|l| {
            if columns <= 1 {
                vec![l.to_string()]
            } else {
                l.split('|').map(|c| c.trim().to_string()).collect()
            }
        })
        .collect()
}

fn collapse(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

fn cell_matches(reference: &Value, submitted: &str) -> bool {
    if let (Some(a), Ok(b)) = (reference.as_f64(), submitted.trim().parse::<f64>()) {
        if matches!(reference, Value::Integer(_) | Value::Real(_)) {
            return (a - b).abs() <= REL_TOL * a.abs().max(b.abs()) || a == b;
        }
    }
    if reference.is_null() {
        return matches!(collapse(submitted).as_str(), "" | "null");
    }
    collapse(&reference.to_string()) == collapse(submitted)
}

fn row_matches(reference: &[Value], submitted: &[String]) -> bool {
    reference.len() == submitted.len() && reference.iter().zip(submitted).all(|(r, s)| cell_matches(r, s))
}

/// Multiset comparison of a parsed answer against a reference result.
pub(crate) fn answer_matches(reference: &ResultSet, submitted: &str) -> bool {
    let rows = parse_answer(submitted, reference.columns.len());
    if rows.len() != reference.rows.len() {
        return false;
    }
    let mut used = vec![false; reference.rows.len()];
    rows.iter().all(|s| {
        let hit = reference
            .rows
            .iter()
            .enumerate()
            .find(|(i, r)| !used[*i] && row_matches(r, s))
            .map(|(i, _)| i);
        match hit {
            Some(i) => {
                used[i] = true;
                true
            }
            None => false,
        }
    })
}

/// Re-executes the reference query on `h` and compares `submitted` to it.
pub fn evaluate_query(task: &BenchmarkTask, submitted: &str, h: &mut AdapterHandle) -> Result<Verdict, DbError> {
    let EvalSpec::SqlQueryMatch { reference_sql, .. } = &task.eval else {
        return Ok(Verdict::new(
            task.task_id,
            VerdictReason::SqlError,
            "task has no query evaluator",
        ));
    };
    let reference = match h.execute_rollback(&reference_sql.sql, &reference_sql.params) {
        Ok(o) => o.into_result_set().canonicalize(),
        Err(e) if e.is_fatal() => return Err(e),
        Err(e) => return Ok(Verdict::new(task.task_id, VerdictReason::SqlError, e.to_string())),
    };
    if answer_matches(&reference, submitted) {
        Ok(Verdict::new(task.task_id, VerdictReason::Ok, ""))
    } else {
        Ok(Verdict::new(
            task.task_id,
            VerdictReason::AnswerMismatch,
            format!("expected {:?}", reference.render_answer()),
        ))
    }
}

fn check_predicates(
    task: &BenchmarkTask,
    mut run: impl FnMut(&BoundStatement) -> Result<ExecOutcome, DbError>,
) -> Result<Verdict, DbError> {
    let EvalSpec::SqlStateCheck { state_predicates, .. } = &task.eval else {
        return Ok(Verdict::new(
            task.task_id,
            VerdictReason::SqlError,
            "task has no state evaluator",
        ));
    };
    for (index, p) in state_predicates.iter().enumerate() {
        let out = match run(&p.statement) {
            Ok(o) => o,
            Err(e) if e.is_fatal() => return Err(e),
            Err(e) => {
                return Ok(Verdict::new(
                    task.task_id,
                    VerdictReason::SqlError,
                    format!("predicate {index}: {e}"),
                ))
            }
        };
        let got = out.single_count();
        if got != Some(p.expected_count as i64) {
            return Ok(Verdict::new(
                task.task_id,
                VerdictReason::PredicateFailed { index },
                format!(
                    "expected {}, found {}",
                    p.expected_count,
                    got.map_or("no count".into(), |n| n.to_string())
                ),
            ));
        }
    }
    Ok(Verdict::new(task.task_id, VerdictReason::Ok, ""))
}

/// Runs the state predicates in order against the post-agent database.
pub fn evaluate_state(task: &BenchmarkTask, h: &mut AdapterHandle) -> Result<Verdict, DbError> {
    check_predicates(task, |st| h.execute_rollback(&st.sql, &st.params))
}

/// Applies the task's reference mutation and checks its predicates in one
/// transaction that is rolled back afterwards.
pub fn self_check_state(task: &BenchmarkTask, h: &mut AdapterHandle) -> Result<Verdict, DbError> {
    let _token = h.mutation_token();
    h.in_rollback(|h| {
        let st = &task.verification_sql;
        if let Err(e) = h.execute(&st.sql, &st.params) {
            if e.is_fatal() {
                return Err(e);
            }
            return Ok(Verdict::new(
                task.task_id,
                VerdictReason::SqlError,
                format!("reference mutation: {e}"),
            ));
        }
        check_predicates(task, |st| h.execute(&st.sql, &st.params))
    })
}

/// Query tasks need `answer`; state tasks ignore it.
pub fn evaluate_task(task: &BenchmarkTask, answer: Option<&str>, h: &mut AdapterHandle) -> Result<Verdict, DbError> {
    match (&task.eval, answer) {
        (EvalSpec::SqlQueryMatch { .. }, Some(a)) => evaluate_query(task, a, h),
        (EvalSpec::SqlQueryMatch { .. }, None) => Ok(Verdict::new(
            task.task_id,
            VerdictReason::AnswerMismatch,
            "no answer submitted",
        )),
        (EvalSpec::SqlStateCheck { .. }, _) => evaluate_state(task, h),
    }
}

/// Commits the task's own verification statement on `h`, standing in for an
/// agent that performed the task. Only meant for scratch copies.
pub fn apply_reference_mutation(task: &BenchmarkTask, h: &mut AdapterHandle) -> Result<u64, DbError> {
    let st = &task.verification_sql;
    Ok(h.execute(&st.sql, &st.params)?.affected_rows.unwrap_or(0))
}
