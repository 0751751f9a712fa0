//! Engine-agnostic database access.
//!
//! [`open_adapter`] picks a backend from the site profile. Everything above
//! this module talks to an [`AdapterHandle`], which owns transaction state,
//! statement timeouts and the rollback discipline used for verification.

#[cfg(feature = "postgres")]
mod postgres;
mod sqlite;

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, OnceLock};
use std::time::Duration;

use parking_lot::{ArcMutexGuard, Mutex, RawMutex};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::SiteProfile;
use crate::value::{cmp_rows, write_canonical_row, ResultSet, Value};

/// Default per-statement timeout.
pub const DEFAULT_TIMEOUT_MS: u64 = 5000;

#[derive(Debug, Error)]
pub enum DbError {
    #[error("unsupported database engine `{0}`")]
    UnsupportedEngine(String),
    #[error("cannot connect to {target}: {cause}")]
    ConnectionFailed { target: String, cause: String },
    #[error("no such table `{0}`")]
    NoSuchTable(String),
    #[error("sql error: {0}")]
    SqlError(String),
    #[error("statement exceeded {0} ms")]
    Timeout(u64),
    #[error("introspection query failed: {0}")]
    QueryFailed(String),
    #[error("a transaction is already open on this handle")]
    TransactionOpen,
    #[error("rollback failed, handle is unusable: {0}")]
    RollbackFailed(String),
    #[error("handle is unusable after a failed rollback")]
    HandleUnusable,
}

impl DbError {
    /// Errors that must abort a run rather than reject a single task.
    pub fn is_fatal(&self) -> bool {
        matches!(
            self,
            DbError::RollbackFailed(_) | DbError::HandleUnusable | DbError::TransactionOpen
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EngineKind {
    EmbeddedFileDb,
    MysqlLike,
    PostgresLike,
}

impl FromStr for EngineKind {
    type Err = DbError;

    fn from_str(s: &str) -> Result<Self, DbError> {
        match s.trim().to_ascii_lowercase().as_str() {
            "embedded_file_db" | "sqlite" => Ok(EngineKind::EmbeddedFileDb),
            "postgres_like" | "postgres" | "postgresql" => Ok(EngineKind::PostgresLike),
            "mysql_like" | "mysql" | "mariadb" => Ok(EngineKind::MysqlLike),
            _ => Err(DbError::UnsupportedEngine(s.to_string())),
        }
    }
}

impl fmt::Display for EngineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EngineKind::EmbeddedFileDb => "embedded_file_db",
            EngineKind::MysqlLike => "mysql_like",
            EngineKind::PostgresLike => "postgres_like",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizedType {
    Integer,
    Real,
    Text,
    Datetime,
    Boolean,
    Blob,
    Other,
}

impl NormalizedType {
    /// Maps an engine type string onto the normalized family.
    pub fn from_declared(declared: &str) -> Self {
        let t = declared.to_ascii_uppercase();
        let has = |s: &str| t.contains(s);
        if has("BOOL") {
            NormalizedType::Boolean
        } else if has("DATE") || has("TIME") {
            NormalizedType::Datetime
        } else if has("INT") || has("SERIAL") {
            NormalizedType::Integer
        } else if has("CHAR") || has("CLOB") || has("TEXT") || has("UUID") || has("JSON") {
            NormalizedType::Text
        } else if has("BLOB") || has("BYTEA") || has("BINARY") {
            NormalizedType::Blob
        } else if has("REAL") || has("FLOA") || has("DOUB") || has("NUMERIC") || has("DECIMAL") {
            NormalizedType::Real
        } else {
            NormalizedType::Other
        }
    }

    pub fn is_numeric(&self) -> bool {
        matches!(self, NormalizedType::Integer | NormalizedType::Real)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnMeta {
    pub name: String,
    pub declared_type: String,
    pub normalized_type: NormalizedType,
    pub nullable: bool,
    pub is_primary_key: bool,
}

impl ColumnMeta {
    pub fn new(name: &str, declared_type: &str, nullable: bool, is_primary_key: bool) -> Self {
        Self {
            name: name.to_string(),
            declared_type: declared_type.to_string(),
            normalized_type: NormalizedType::from_declared(declared_type),
            nullable,
            is_primary_key,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ForeignKeyMeta {
    pub from_table: String,
    pub from_column: String,
    pub to_table: String,
    pub to_column: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeKind {
    Rows,
    Mutation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecOutcome {
    pub kind: OutcomeKind,
    pub column_names: Vec<String>,
    /// Positional records aligned with `column_names`; empty for mutations.
    pub rows: Vec<Vec<Value>>,
    pub affected_rows: Option<u64>,
    pub duration_ms: u64,
}

impl ExecOutcome {
    pub fn into_result_set(self) -> ResultSet {
        ResultSet::new(self.column_names, self.rows)
    }

    /// The single integer of a one-row, one-column result (e.g. `COUNT(*)`).
    pub fn single_count(&self) -> Option<i64> {
        match self.rows.as_slice() {
            [row] if row.len() == 1 => row[0].as_i64(),
            _ => None,
        }
    }
}

/// What every engine backend must provide.
pub(crate) trait Backend: Send {
    fn identity(&self) -> String;
    fn user_tables(&mut self) -> Result<Vec<String>, DbError>;
    fn describe(&mut self, table: &str) -> Result<(Vec<ColumnMeta>, Vec<ForeignKeyMeta>), DbError>;
    fn run(&mut self, sql: &str, params: &[Value], timeout: Duration) -> Result<ExecOutcome, DbError>;
    fn begin(&mut self) -> Result<(), DbError>;
    fn rollback(&mut self) -> Result<(), DbError>;
    fn quote_ident(&self, ident: &str) -> String;
}

/// An open connection plus its transaction discipline.
pub struct AdapterHandle {
    engine_kind: EngineKind,
    backend: Box<dyn Backend>,
    timeout: Duration,
    in_transaction: bool,
    poisoned: bool,
    identity: String,
}

impl fmt::Debug for AdapterHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AdapterHandle")
            .field("engine_kind", &self.engine_kind)
            .field("identity", &self.identity)
            .field("timeout", &self.timeout)
            .field("in_transaction", &self.in_transaction)
            .field("poisoned", &self.poisoned)
            .finish()
    }
}

/// Factory: builds the adapter named by `site.engine`.
pub fn open_adapter(site: &SiteProfile) -> Result<AdapterHandle, DbError> {
    open_with_timeout(&site.engine, &site.database, DEFAULT_TIMEOUT_MS)
}

/// Like [`open_adapter`] with an explicit per-statement timeout.
pub fn open_with_timeout(engine: &str, database: &str, timeout_ms: u64) -> Result<AdapterHandle, DbError> {
    let kind: EngineKind = engine.parse()?;
    let timeout = Duration::from_millis(timeout_ms.max(1));
    let backend: Box<dyn Backend> = match kind {
        EngineKind::EmbeddedFileDb => Box::new(sqlite::SqliteBackend::open(database)?),
        #[cfg(feature = "postgres")]
        EngineKind::PostgresLike => Box::new(postgres::PostgresBackend::connect(database, timeout)?),
        _ => return Err(DbError::UnsupportedEngine(engine.to_string())),
    };
    let identity = backend.identity();
    Ok(AdapterHandle {
        engine_kind: kind,
        backend,
        timeout,
        in_transaction: false,
        poisoned: false,
        identity,
    })
}

/// Exclusive right to run a mutation-class verification on one database.
pub struct MutationToken {
    _guard: ArcMutexGuard<RawMutex, ()>,
}

fn mutation_locks() -> &'static Mutex<HashMap<String, Arc<Mutex<()>>>> {
    static LOCKS: OnceLock<Mutex<HashMap<String, Arc<Mutex<()>>>>> = OnceLock::new();
    LOCKS.get_or_init(Default::default)
}

impl AdapterHandle {
    pub fn engine_kind(&self) -> EngineKind {
        self.engine_kind
    }

    /// Stable identity of the physical database (canonical path or URL).
    pub fn identity(&self) -> &str {
        &self.identity
    }

    pub fn timeout_ms(&self) -> u64 {
        self.timeout.as_millis() as u64
    }

    pub fn set_timeout_ms(&mut self, ms: u64) {
        self.timeout = Duration::from_millis(ms.max(1));
    }

    pub fn is_usable(&self) -> bool {
        !self.poisoned
    }

    pub fn in_transaction(&self) -> bool {
        self.in_transaction
    }

    pub fn quote_ident(&self, ident: &str) -> String {
        self.backend.quote_ident(ident)
    }

    /// Blocks until this database's mutation token is free.
    pub fn mutation_token(&self) -> MutationToken {
        let lock = mutation_locks()
            .lock()
            .entry(self.identity.clone())
            .or_default()
            .clone();
        MutationToken {
            _guard: lock.lock_arc(),
        }
    }

    fn ensure_usable(&self) -> Result<(), DbError> {
        if self.poisoned {
            Err(DbError::HandleUnusable)
        } else {
            Ok(())
        }
    }

    fn ensure_idle(&self) -> Result<(), DbError> {
        self.ensure_usable()?;
        if self.in_transaction {
            Err(DbError::TransactionOpen)
        } else {
            Ok(())
        }
    }

    /// User tables (system tables excluded), ascending by name.
    pub fn user_tables(&mut self) -> Result<Vec<String>, DbError> {
        self.ensure_usable()?;
        let mut t = self.backend.user_tables()?;
        t.sort();
        Ok(t)
    }

    pub fn row_count(&mut self, table: &str) -> Result<u64, DbError> {
        let sql = format!("SELECT COUNT(*) FROM {}", self.quote_ident(table));
        let out = self
            .execute(&sql, &[])
            .map_err(|e| DbError::QueryFailed(e.to_string()))?;
        out.single_count()
            .map(|n| n as u64)
            .ok_or_else(|| DbError::QueryFailed(format!("row count of {table} is not an integer")))
    }

    /// Non-empty user tables passing the include/exclude globs, by name.
    pub fn list_nonempty_tables(
        &mut self,
        include: &[String],
        exclude: &[String],
    ) -> Result<Vec<(String, u64)>, DbError> {
        let compile = |ps: &[String]| -> Result<Vec<glob::Pattern>, DbError> {
            ps.iter()
                .map(|p| glob::Pattern::new(p).map_err(|e| DbError::QueryFailed(format!("bad pattern `{p}`: {e}"))))
                .collect()
        };
        let (inc, exc) = (compile(include)?, compile(exclude)?);
        let mut out = Vec::new();
        for table in self.user_tables()? {
            let included = inc.is_empty() || inc.iter().any(|p| p.matches(&table));
            if !included || exc.iter().any(|p| p.matches(&table)) {
                continue;
            }
            let n = self.row_count(&table)?;
            if n >= 1 {
                out.push((table, n));
            }
        }
        Ok(out)
    }

    /// Columns in declaration order and the foreign keys declared in DDL.
    pub fn describe_table(&mut self, table: &str) -> Result<(Vec<ColumnMeta>, Vec<ForeignKeyMeta>), DbError> {
        self.ensure_usable()?;
        self.backend.describe(table)
    }

    /// Runs one statement. Auto-commits unless a rollback scope is open.
    pub fn execute(&mut self, sql: &str, params: &[Value]) -> Result<ExecOutcome, DbError> {
        self.ensure_usable()?;
        self.backend.run(sql, params, self.timeout)
    }

    /// Runs `f` inside a transaction that is always rolled back.
    ///
    /// A failed rollback poisons the handle and is reported as
    /// [`DbError::RollbackFailed`] regardless of what `f` returned.
    pub fn in_rollback<T>(&mut self, f: impl FnOnce(&mut Self) -> Result<T, DbError>) -> Result<T, DbError> {
        self.ensure_idle()?;
        self.backend.begin()?;
        self.in_transaction = true;
        let result = f(self);
        let rolled_back = self.backend.rollback();
        self.in_transaction = false;
        if let Err(e) = rolled_back {
            self.poisoned = true;
            return Err(DbError::RollbackFailed(e.to_string()));
        }
        result
    }

    /// BEGIN; execute; ROLLBACK. The database is left as it was found.
    pub fn execute_rollback(&mut self, sql: &str, params: &[Value]) -> Result<ExecOutcome, DbError> {
        self.in_rollback(|h| h.execute(sql, params))
    }

    /// SHA-256 over every user table's rows in canonical form.
    ///
    /// Tables are visited by name; rows are ordered by primary key (then by
    /// the full row) with columns in declaration order.
    pub fn snapshot_digest(&mut self) -> Result<String, DbError> {
        self.ensure_idle()?;
        let mut hasher = Sha256::new();
        for table in self.user_tables()? {
            let (cols, _) = self.describe_table(&table)?;
            let list = cols
                .iter()
                .map(|c| self.quote_ident(&c.name))
                .collect::<Vec<_>>()
                .join(", ");
            let sql = format!("SELECT {list} FROM {}", self.quote_ident(&table));
            let mut rows = self
                .execute(&sql, &[])
                .map_err(|e| DbError::QueryFailed(e.to_string()))?
                .rows;
            let pk: Vec<usize> = cols
                .iter()
                .enumerate()
                .filter(|(_, c)| c.is_primary_key)
                .map(|(i, _)| i)
                .collect();
            rows.sort_by(|a, b| {
                let ka: Vec<Value> = pk.iter().map(|&i| a[i].clone()).collect();
                let kb: Vec<Value> = pk.iter().map(|&i| b[i].clone()).collect();
                cmp_rows(&ka, &kb).then_with(|| cmp_rows(a, b))
            });
            let mut buf = Vec::new();
            buf.extend_from_slice(table.as_bytes());
            buf.push(crate::value::ROW_SEP);
            for r in &rows {
                write_canonical_row(&mut buf, r);
            }
            buf.push(0x1D);
            hasher.update(&buf);
        }
        Ok(hex::encode(hasher.finalize()))
    }
}

/// Shortens and flattens an engine message for reports.
pub(crate) fn sanitize(msg: &str) -> String {
    let flat: String = msg.split_whitespace().collect::<Vec<_>>().join(" ");
    if flat.chars().count() > 300 {
        let cut: String = flat.chars().take(300).collect();
        format!("{cut}...")
    } else {
        flat
    }
}
