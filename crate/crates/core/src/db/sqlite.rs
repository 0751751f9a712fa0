use std::path::Path;
use std::time::{Duration, Instant};

use rusqlite::types::{ToSqlOutput, ValueRef};
use rusqlite::{Connection, ErrorCode, OpenFlags};

use super::{sanitize, Backend, ColumnMeta, DbError, ExecOutcome, ForeignKeyMeta, OutcomeKind};
use crate::value::{Blob, Value};

pub(crate) struct SqliteBackend {
    conn: Connection,
    identity: String,
}

impl SqliteBackend {
    pub(crate) fn open(path: &str) -> Result<Self, DbError> {
        let failed = |cause: String| DbError::ConnectionFailed {
            target: path.to_string(),
            cause,
        };
        let p = Path::new(path);
        if !p.is_file() {
            return Err(failed("file does not exist".into()));
        }
        let conn = Connection::open_with_flags(p, OpenFlags::SQLITE_OPEN_READ_WRITE | OpenFlags::SQLITE_OPEN_NO_MUTEX)
            .map_err(|e| failed(e.to_string()))?;
        conn.execute_batch("PRAGMA foreign_keys = ON;")
            .map_err(|e| failed(e.to_string()))?;
        // Reject files that are not databases up front.
        conn.query_row("SELECT COUNT(*) FROM sqlite_master", [], |_| Ok(()))
            .map_err(|e| failed(e.to_string()))?;
        let identity = p
            .canonicalize()
            .map(|c| format!("sqlite:{}", c.display()))
            .unwrap_or_else(|_| format!("sqlite:{path}"));
        Ok(Self { conn, identity })
    }
}

struct Param<'a>(&'a Value);

impl rusqlite::ToSql for Param<'_> {
    fn to_sql(&self) -> rusqlite::Result<ToSqlOutput<'_>> {
        Ok(match self.0 {
            Value::Null => ToSqlOutput::Borrowed(ValueRef::Null),
            Value::Integer(i) => ToSqlOutput::Borrowed(ValueRef::Integer(*i)),
            Value::Real(r) => ToSqlOutput::Borrowed(ValueRef::Real(*r)),
            Value::Text(s) => ToSqlOutput::Borrowed(ValueRef::Text(s.as_bytes())),
            Value::Blob(b) => ToSqlOutput::Borrowed(ValueRef::Blob(&b.blob)),
        })
    }
}

fn from_ref(v: ValueRef<'_>) -> Value {
    match v {
        ValueRef::Null => Value::Null,
        ValueRef::Integer(i) => Value::Integer(i),
        ValueRef::Real(r) => Value::Real(r),
        ValueRef::Text(t) => Value::Text(String::from_utf8_lossy(t).into_owned()),
        ValueRef::Blob(b) => Value::Blob(Blob { blob: b.to_vec() }),
    }
}

fn map_err(e: rusqlite::Error, timeout: Duration) -> DbError {
    if e.sqlite_error_code() == Some(ErrorCode::OperationInterrupted) {
        DbError::Timeout(timeout.as_millis() as u64)
    } else {
        DbError::SqlError(sanitize(&e.to_string()))
    }
}

impl SqliteBackend {
    fn run_inner(&mut self, sql: &str, params: &[Value], timeout: Duration) -> Result<ExecOutcome, DbError> {
        let started = Instant::now();
        let mut stmt = self.conn.prepare(sql).map_err(|e| map_err(e, timeout))?;
        let expected = stmt.parameter_count();
        if expected != params.len() {
            return Err(DbError::SqlError(format!(
                "statement expects {expected} parameters, got {}",
                params.len()
            )));
        }
        let column_names: Vec<String> = stmt.column_names().into_iter().map(str::to_string).collect();
        let bound: Vec<Param<'_>> = params.iter().map(Param).collect();
        let params = rusqlite::params_from_iter(bound.iter());
        if column_names.is_empty() {
            let n = stmt.execute(params).map_err(|e| map_err(e, timeout))?;
            return Ok(ExecOutcome {
                kind: OutcomeKind::Mutation,
                column_names,
                rows: Vec::new(),
                affected_rows: Some(n as u64),
                duration_ms: started.elapsed().as_millis() as u64,
            });
        }
        let width = column_names.len();
        let mut rows = Vec::new();
        let mut cursor = stmt.query(params).map_err(|e| map_err(e, timeout))?;
        while let Some(row) = cursor.next().map_err(|e| map_err(e, timeout))? {
            let mut rec = Vec::with_capacity(width);
            for i in 0..width {
                rec.push(from_ref(row.get_ref(i).map_err(|e| map_err(e, timeout))?));
            }
            rows.push(rec);
        }
        Ok(ExecOutcome {
            kind: OutcomeKind::Rows,
            column_names,
            rows,
            affected_rows: None,
            duration_ms: started.elapsed().as_millis() as u64,
        })
    }

    fn pk_column(&self, table: &str) -> Result<Option<String>, DbError> {
        let mut stmt = self
            .conn
            .prepare(&format!("PRAGMA table_info({})", self.quote_ident(table)))
            .map_err(|e| DbError::QueryFailed(e.to_string()))?;
        let pks = stmt
            .query_map([], |r| Ok((r.get::<_, String>(1)?, r.get::<_, i64>(5)?)))
            .map_err(|e| DbError::QueryFailed(e.to_string()))?
            .filter_map(Result::ok)
            .filter(|(_, pk)| *pk > 0)
            .map(|(n, _)| n)
            .collect::<Vec<_>>();
        Ok(pks.into_iter().next())
    }
}

impl Backend for SqliteBackend {
    fn identity(&self) -> String {
        self.identity.clone()
    }

    fn user_tables(&mut self) -> Result<Vec<String>, DbError> {
        let mut stmt = self
            .conn
            .prepare("SELECT name FROM sqlite_master WHERE type = 'table' AND name NOT LIKE 'sqlite\\_%' ESCAPE '\\' ORDER BY name")
            .map_err(|e| DbError::QueryFailed(e.to_string()))?;
        let names = stmt
            .query_map([], |r| r.get::<_, String>(0))
            .map_err(|e| DbError::QueryFailed(e.to_string()))?
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| DbError::QueryFailed(e.to_string()))?;
        Ok(names)
    }

    fn describe(&mut self, table: &str) -> Result<(Vec<ColumnMeta>, Vec<ForeignKeyMeta>), DbError> {
        let q = |e: rusqlite::Error| DbError::QueryFailed(e.to_string());
        let mut stmt = self
            .conn
            .prepare(&format!("PRAGMA table_info({})", self.quote_ident(table)))
            .map_err(q)?;
        let cols = stmt
            .query_map([], |r| {
                let name: String = r.get(1)?;
                let ty: String = r.get(2)?;
                let notnull: i64 = r.get(3)?;
                let pk: i64 = r.get(5)?;
                Ok(ColumnMeta::new(&name, &ty, notnull == 0 && pk == 0, pk > 0))
            })
            .map_err(q)?
            .collect::<Result<Vec<_>, _>>()
            .map_err(q)?;
        if cols.is_empty() {
            return Err(DbError::NoSuchTable(table.to_string()));
        }
        let mut stmt = self
            .conn
            .prepare(&format!("PRAGMA foreign_key_list({})", self.quote_ident(table)))
            .map_err(q)?;
        let raw = stmt
            .query_map([], |r| {
                Ok((
                    r.get::<_, String>(2)?,
                    r.get::<_, String>(3)?,
                    r.get::<_, Option<String>>(4)?,
                ))
            })
            .map_err(q)?
            .collect::<Result<Vec<_>, _>>()
            .map_err(q)?;
        drop(stmt);
        let mut fks = Vec::with_capacity(raw.len());
        for (to_table, from_column, to_column) in raw {
            let to_column = match to_column {
                Some(c) => c,
                None => self.pk_column(&to_table)?.unwrap_or_else(|| "rowid".to_string()),
            };
            fks.push(ForeignKeyMeta {
                from_table: table.to_string(),
                from_column,
                to_table,
                to_column,
            });
        }
        fks.sort();
        Ok((cols, fks))
    }

    fn run(&mut self, sql: &str, params: &[Value], timeout: Duration) -> Result<ExecOutcome, DbError> {
        let deadline = Instant::now() + timeout;
        self.conn
            .progress_handler(1000, Some(move || Instant::now() > deadline));
        let out = self.run_inner(sql, params, timeout);
        self.conn.progress_handler(0, None::<fn() -> bool>);
        out
    }

    fn begin(&mut self) -> Result<(), DbError> {
        self.conn
            .execute_batch("BEGIN")
            .map_err(|e| DbError::SqlError(sanitize(&e.to_string())))
    }

    fn rollback(&mut self) -> Result<(), DbError> {
        if self.conn.is_autocommit() {
            // The engine already unwound the transaction (e.g. after an interrupt).
            return Ok(());
        }
        self.conn
            .execute_batch("ROLLBACK")
            .map_err(|e| DbError::SqlError(sanitize(&e.to_string())))
    }

    fn quote_ident(&self, ident: &str) -> String {
        format!("\"{}\"", ident.replace('"', "\"\""))
    }
}
