//! Engine-neutral scalars and result sets.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

/// Field separator used in canonical row serialization.
pub const FIELD_SEP: u8 = 0x1F;
/// Row separator used in canonical row serialization.
pub const ROW_SEP: u8 = 0x1E;
/// Token standing in for SQL NULL in canonical serialization.
pub const NULL_TOKEN: &str = "\u{0}";

/// A single SQL scalar as seen by the pipeline.
///
/// Serialized untagged: JSON `null`, integers, floats and strings map
/// directly; blobs become `{"blob": "<hex>"}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Null,
    Integer(i64),
    Real(f64),
    Text(String),
    Blob(Blob),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Blob {
    #[serde(with = "hex")]
    pub blob: Vec<u8>,
}

impl Value {
    pub fn is_null(&self) -> bool {
        matches!(self, Value::Null)
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Integer(i) => Some(*i as f64),
            Value::Real(r) => Some(*r),
            _ => None,
        }
    }

    pub fn as_i64(&self) -> Option<i64> {
        match self {
            Value::Integer(i) => Some(*i),
            Value::Real(r) if r.fract() == 0.0 && r.abs() < 9.0e15 => Some(*r as i64),
            _ => None,
        }
    }

    /// Canonical text used for digests and ordering-stable serialization.
    ///
    /// Integers are decimal, reals use the shortest text that round-trips,
    /// NULL is a distinguished token, text is passed through and blobs are
    /// hex with an `\x` prefix.
    pub fn canonical_text(&self) -> String {
        match self {
            Value::Null => NULL_TOKEN.to_string(),
            Value::Integer(i) => i.to_string(),
            Value::Real(r) => format_real(*r),
            Value::Text(s) => s.clone(),
            Value::Blob(b) => format!("\\x{}", hex::encode(&b.blob)),
        }
    }

    fn type_rank(&self) -> u8 {
        match self {
            Value::Null => 0,
            Value::Integer(_) | Value::Real(_) => 1,
            Value::Text(_) => 2,
            Value::Blob(_) => 3,
        }
    }

    /// Total order used for canonical sorting: NULL < numbers < text < blobs.
    pub fn canonical_cmp(&self, other: &Value) -> Ordering {
        match (self, other) {
            (Value::Integer(a), Value::Integer(b)) => a.cmp(b),
            (a @ (Value::Integer(_) | Value::Real(_)), b @ (Value::Integer(_) | Value::Real(_))) => {
                let (x, y) = (a.as_f64().unwrap_or(0.0), b.as_f64().unwrap_or(0.0));
                x.total_cmp(&y).then_with(|| a.type_rank().cmp(&b.type_rank()))
            }
            (Value::Text(a), Value::Text(b)) => a.cmp(b),
            (Value::Blob(a), Value::Blob(b)) => a.blob.cmp(&b.blob),
            _ => self.type_rank().cmp(&other.type_rank()),
        }
    }
}

fn format_real(r: f64) -> String {
    // Rust's Display for f64 is the shortest representation that round-trips.
    format!("{r}")
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Null => f.write_str("NULL"),
            Value::Integer(i) => write!(f, "{i}"),
            Value::Real(r) => f.write_str(&format_real(*r)),
            Value::Text(s) => f.write_str(s),
            Value::Blob(b) => write!(f, "\\x{}", hex::encode(&b.blob)),
        }
    }
}

impl From<i64> for Value {
    fn from(v: i64) -> Self {
        Value::Integer(v)
    }
}

impl From<f64> for Value {
    fn from(v: f64) -> Self {
        Value::Real(v)
    }
}

impl From<&str> for Value {
    fn from(v: &str) -> Self {
        Value::Text(v.to_string())
    }
}

impl From<String> for Value {
    fn from(v: String) -> Self {
        Value::Text(v)
    }
}

pub fn cmp_rows(a: &[Value], b: &[Value]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        let o = x.canonical_cmp(y);
        if o != Ordering::Equal {
            return o;
        }
    }
    a.len().cmp(&b.len())
}

/// Appends one canonical row (fields joined by 0x1F, terminated by 0x1E).
pub fn write_canonical_row(out: &mut Vec<u8>, row: &[Value]) {
    for (i, v) in row.iter().enumerate() {
        if i > 0 {
            out.push(FIELD_SEP);
        }
        out.extend_from_slice(v.canonical_text().as_bytes());
    }
    out.push(ROW_SEP);
}

/// A tabular query result with ordered column names.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ResultSet {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Value>>,
}

impl ResultSet {
    pub fn new(columns: Vec<String>, rows: Vec<Vec<Value>>) -> Self {
        Self { columns, rows }
    }

    /// Sorts rows by full row tuple so comparisons are order-insensitive.
    pub fn canonicalize(mut self) -> Self {
        self.rows.sort_by(|a, b| cmp_rows(a, b));
        self
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// True when there are no rows or every cell is NULL.
    pub fn is_empty_or_all_null(&self) -> bool {
        self.rows.iter().all(|r| r.iter().all(Value::is_null))
    }

    /// Renders the answer grammar: one row per line, cells joined by `|`.
    pub fn render_answer(&self) -> String {
        self.rows
            .iter()
            .map(|r| r.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("|"))
            .collect::<Vec<_>>()
            .join("\n")
    }
}
