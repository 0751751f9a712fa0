//! Weighted task difficulty.
//!
//! `total = w_table·d_table + w_rel·d_rel + w_op·d_op + w_result·d_result + w_sql·d_sql`
//! where the dimensions come from the verification statement's structure,
//! its operation class, and the size of its verified result.

mod features;

use std::ops::Add;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use features::{extract_features, referenced_tables, SqlFeatures, UnsupportedSyntax};

use crate::taskgen::{Operation, TaskInstance, VerificationReport, VerificationStatus};

#[derive(Debug, Error)]
pub enum DifficultyError {
    #[error("instance {0} is not verified")]
    UnverifiedInstance(String),
    #[error(transparent)]
    Syntax(#[from] UnsupportedSyntax),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DifficultyWeights {
    pub w_table: f64,
    pub w_rel: f64,
    pub w_op: f64,
    pub w_result: f64,
    pub w_sql: f64,
}

impl DifficultyWeights {
    pub fn as_array(&self) -> [f64; 5] {
        [self.w_table, self.w_rel, self.w_op, self.w_result, self.w_sql]
    }
}

impl Default for DifficultyWeights {
    fn default() -> Self {
        Self {
            w_table: 0.15,
            w_rel: 0.15,
            w_op: 0.30,
            w_result: 0.10,
            w_sql: 0.30,
        }
    }
}

impl Add for DifficultyWeights {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        Self {
            w_table: self.w_table + o.w_table,
            w_rel: self.w_rel + o.w_rel,
            w_op: self.w_op + o.w_op,
            w_result: self.w_result + o.w_result,
            w_sql: self.w_sql + o.w_sql,
        }
    }
}

/// Level cut points: easy below `medium`, hard at or above `hard`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub medium: f64,
    pub hard: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self { medium: 1.0, hard: 2.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Easy,
    Medium,
    Hard,
}

impl Level {
    pub fn as_str(&self) -> &'static str {
        match self {
            Level::Easy => "easy",
            Level::Medium => "medium",
            Level::Hard => "hard",
        }
    }
}

/// The five complexity dimensions before weighting.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Dimensions {
    pub d_table: f64,
    pub d_rel: f64,
    pub d_op: f64,
    pub d_result: f64,
    pub d_sql: f64,
}

impl Dimensions {
    /// For mutations pass `rows = affected_rows` and `cols = 0`.
    pub fn new(features: &SqlFeatures, operation: Operation, rows: u64, cols: u64) -> Self {
        Self {
            d_table: f64::from(features.n_tables),
            d_rel: f64::from(features.n_joins),
            d_op: operation_weight(operation),
            d_result: rows.min(10) as f64 / 10.0 + cols.min(10) as f64 / 10.0,
            d_sql: f64::from(
                features.n_joins + features.n_where_predicates + 2 * features.n_subqueries + features.n_aggregates,
            ),
        }
    }

    pub fn weighted_total(&self, w: &DifficultyWeights) -> f64 {
        w.w_table * self.d_table
            + w.w_rel * self.d_rel
            + w.w_op * self.d_op
            + w.w_result * self.d_result
            + w.w_sql * self.d_sql
    }
}

pub fn operation_weight(op: Operation) -> f64 {
    match op {
        Operation::Select => 1.0,
        Operation::Insert => 2.0,
        Operation::Update => 3.0,
        Operation::Delete => 4.0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifficultyScore {
    pub d_table: f64,
    pub d_rel: f64,
    pub d_op: f64,
    pub d_result: f64,
    pub d_sql: f64,
    pub weights: DifficultyWeights,
    pub total: f64,
    pub level: Level,
}

impl DifficultyScore {
    pub fn from_dimensions(dims: Dimensions, weights: DifficultyWeights, thresholds: Thresholds) -> Self {
        let total = dims.weighted_total(&weights);
        Self {
            d_table: dims.d_table,
            d_rel: dims.d_rel,
            d_op: dims.d_op,
            d_result: dims.d_result,
            d_sql: dims.d_sql,
            weights,
            total,
            level: bucket(total, thresholds),
        }
    }

    pub fn dimensions(&self) -> Dimensions {
        Dimensions {
            d_table: self.d_table,
            d_rel: self.d_rel,
            d_op: self.d_op,
            d_result: self.d_result,
            d_sql: self.d_sql,
        }
    }
}

/// Left-closed bucketing: `[.., medium)` easy, `[medium, hard)` medium, rest hard.
pub fn bucket(total: f64, thresholds: Thresholds) -> Level {
    if total < thresholds.medium {
        Level::Easy
    } else if total < thresholds.hard {
        Level::Medium
    } else {
        Level::Hard
    }
}

/// Scores a verified instance from its statement and verification outcome.
pub fn score(
    inst: &TaskInstance,
    report: &VerificationReport,
    weights: DifficultyWeights,
    thresholds: Thresholds,
) -> Result<DifficultyScore, DifficultyError> {
    if report.status != VerificationStatus::Verified || report.instance_id != inst.id {
        return Err(DifficultyError::UnverifiedInstance(inst.id.clone()));
    }
    let features = extract_features(&inst.verification_sql.sql)?;
    let (rows, cols) = if inst.operation == Operation::Select {
        (report.rows, report.cols)
    } else {
        (report.affected_rows, 0)
    };
    let dims = Dimensions::new(&features, inst.operation, rows, cols);
    Ok(DifficultyScore::from_dimensions(dims, weights, thresholds))
}
