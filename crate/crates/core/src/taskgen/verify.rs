use std::time::Instant;

use super::{
    BoundStatement, GroundTruth, Operation, RejectReason, StatePredicate, TaskInstance, VerificationReport,
    VerificationStatus,
};
use crate::db::{AdapterHandle, DbError, OutcomeKind};

struct Outcome {
    reason: RejectReason,
    rows: u64,
    cols: u64,
    affected_rows: u64,
    detail: String,
    truth: Option<GroundTruth>,
}

impl Outcome {
    fn reject(reason: RejectReason, detail: impl Into<String>) -> Self {
        Self {
            reason,
            rows: 0,
            cols: 0,
            affected_rows: 0,
            detail: detail.into(),
            truth: None,
        }
    }

    fn from_error(e: DbError) -> Result<Self, DbError> {
        match e {
            e if e.is_fatal() => Err(e),
            DbError::Timeout(ms) => Ok(Self::reject(RejectReason::Timeout, format!("exceeded {ms} ms"))),
            e => Ok(Self::reject(RejectReason::SqlError, e.to_string())),
        }
    }
}

fn count(h: &mut AdapterHandle, st: &BoundStatement) -> Result<Option<u64>, DbError> {
    let out = h.execute(&st.sql, &st.params)?;
    Ok(out.single_count().and_then(|n| u64::try_from(n).ok()))
}

fn verify_select(inst: &TaskInstance, h: &mut AdapterHandle) -> Result<Outcome, DbError> {
    let out = match h.execute_rollback(&inst.verification_sql.sql, &inst.verification_sql.params) {
        Ok(o) => o,
        Err(e) => return Outcome::from_error(e),
    };
    if out.kind != OutcomeKind::Rows {
        return Ok(Outcome::reject(
            RejectReason::SqlError,
            "statement returned no result set",
        ));
    }
    let answer = out.into_result_set().canonicalize();
    let (rows, cols) = (answer.rows.len() as u64, answer.columns.len() as u64);
    if answer.is_empty_or_all_null() {
        let mut o = Outcome::reject(
            RejectReason::EmptyResult,
            if rows == 0 { "no rows" } else { "every cell is NULL" },
        );
        (o.rows, o.cols) = (rows, cols);
        return Ok(o);
    }
    Ok(Outcome {
        reason: RejectReason::Ok,
        rows,
        cols,
        affected_rows: 0,
        detail: String::new(),
        truth: Some(GroundTruth::Query { answer }),
    })
}

fn verify_mutation(inst: &TaskInstance, h: &mut AdapterHandle) -> Result<Outcome, DbError> {
    let _token = h.mutation_token();
    let checks = &inst.checks;
    let run = h.in_rollback(|h| {
        let before = checks
            .iter()
            .map(|c| count(h, &c.statement))
            .collect::<Result<Vec<_>, _>>()?;
        let out = h.execute(&inst.verification_sql.sql, &inst.verification_sql.params)?;
        let after = checks
            .iter()
            .map(|c| count(h, &c.statement))
            .collect::<Result<Vec<_>, _>>()?;
        Ok((before, out, after))
    });
    let (before, out, after) = match run {
        Ok(r) => r,
        Err(e) => return Outcome::from_error(e),
    };
    let affected = match (out.kind, out.affected_rows) {
        (OutcomeKind::Mutation, Some(n)) => n,
        _ => {
            return Ok(Outcome::reject(
                RejectReason::SqlError,
                "statement did not report affected rows",
            ))
        }
    };
    let mut o = Outcome::reject(RejectReason::Ok, "");
    o.affected_rows = affected;
    if affected == 0 {
        o.reason = RejectReason::ZeroRowsAffected;
        return Ok(o);
    }
    let mut predicates = Vec::with_capacity(checks.len());
    for (i, c) in checks.iter().enumerate() {
        let Some(got) = after[i] else {
            o.reason = RejectReason::SqlError;
            o.detail = format!("state check {i} did not return a single count");
            return Ok(o);
        };
        if let Some(want) = c.expected {
            if got != want {
                o.reason = RejectReason::PredicateUnsatisfiable;
                o.detail = format!("state check {i}: expected {want}, found {got}");
                return Ok(o);
            }
        }
        predicates.push(StatePredicate {
            statement: c.statement.clone(),
            expected_count: got,
        });
    }
    // A predicate set that already holds before the mutation cannot tell a
    // performed task from an untouched database.
    if !predicates.is_empty()
        && predicates
            .iter()
            .zip(&before)
            .all(|(p, b)| *b == Some(p.expected_count))
    {
        o.reason = RejectReason::PredicateUnsatisfiable;
        o.detail = "state checks already hold before the mutation".into();
        return Ok(o);
    }
    o.truth = Some(GroundTruth::Mutation {
        affected_rows: affected,
        predicates,
    });
    Ok(o)
}

/// Executes an instance inside a transaction that is always rolled back and
/// reports whether it is a valid task. On success the ground truth is
/// returned alongside the report.
///
/// Mutations take the database's mutation token for their duration, so the
/// caller must not already hold it. Only fatal adapter errors (a failed
/// rollback) are returned as `Err`.
pub fn verify(
    inst: &TaskInstance,
    h: &mut AdapterHandle,
) -> Result<(VerificationReport, Option<GroundTruth>), DbError> {
    let start = Instant::now();
    let o = if inst.operation == Operation::Select {
        verify_select(inst, h)?
    } else {
        verify_mutation(inst, h)?
    };
    let status = if o.reason == RejectReason::Ok {
        VerificationStatus::Verified
    } else {
        VerificationStatus::Rejected
    };
    let report = VerificationReport {
        instance_id: inst.id.clone(),
        status,
        reason: o.reason,
        rows: o.rows,
        cols: o.cols,
        affected_rows: o.affected_rows,
        duration_ms: start.elapsed().as_millis() as u64,
        detail: o.detail,
    };
    Ok((report, o.truth))
}
