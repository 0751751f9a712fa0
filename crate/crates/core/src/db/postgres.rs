use std::time::{Duration, Instant};

use postgres::types::{ToSql, Type};
use postgres::{Client, NoTls, Row};

use super::{sanitize, Backend, ColumnMeta, DbError, ExecOutcome, ForeignKeyMeta, OutcomeKind};
use crate::value::{Blob, Value};

pub(crate) struct PostgresBackend {
    client: Client,
    identity: String,
    session_timeout: Duration,
}

impl PostgresBackend {
    pub(crate) fn connect(url: &str, timeout: Duration) -> Result<Self, DbError> {
        let failed = |cause: String| DbError::ConnectionFailed {
            target: redact(url),
            cause,
        };
        let mut config: postgres::Config = url.parse().map_err(|e: postgres::Error| failed(e.to_string()))?;
        config.connect_timeout(Duration::from_secs(5));
        let mut client = config.connect(NoTls).map_err(|e| failed(e.to_string()))?;
        client
            .batch_execute(&format!("SET statement_timeout = {}", timeout.as_millis()))
            .map_err(|e| failed(e.to_string()))?;
        Ok(Self {
            client,
            identity: format!("postgres:{}", redact(url)),
            session_timeout: timeout,
        })
    }

    fn set_timeout(&mut self, timeout: Duration) -> Result<(), DbError> {
        if timeout != self.session_timeout {
            self.client
                .batch_execute(&format!("SET statement_timeout = {}", timeout.as_millis()))
                .map_err(|e| DbError::SqlError(sanitize(&e.to_string())))?;
            self.session_timeout = timeout;
        }
        Ok(())
    }
}

/// Drops any password from a connection URL before it is logged.
fn redact(url: &str) -> String {
    match (url.find("://"), url.rfind('@')) {
        (Some(s), Some(at)) if at > s => {
            let creds = &url[s + 3..at];
            let user = creds.split(':').next().unwrap_or("");
            format!("{}{user}@{}", &url[..s + 3], &url[at + 1..])
        }
        _ => url.to_string(),
    }
}

/// Rewrites `?` placeholders as `$1..$n`, leaving string literals and
/// quoted identifiers untouched.
pub(crate) fn number_placeholders(sql: &str) -> String {
    let mut out = String::with_capacity(sql.len() + 8);
    let mut n = 0;
    let mut quote: Option<char> = None;
    for c in sql.chars() {
        match quote {
            Some(q) => {
                out.push(c);
                if c == q {
                    quote = None;
                }
            }
            None => match c {
                '\'' | '"' => {
                    quote = Some(c);
                    out.push(c);
                }
                '?' => {
                    n += 1;
                    out.push('$');
                    out.push_str(&n.to_string());
                }
                _ => out.push(c),
            },
        }
    }
    out
}

fn to_param(v: &Value, ty: &Type) -> Result<Box<dyn ToSql + Sync>, DbError> {
    let mismatch = || DbError::SqlError(format!("cannot bind {v:?} as {ty}"));
    Ok(match v {
        Value::Null => match *ty {
            Type::INT2 => Box::new(None::<i16>),
            Type::INT4 => Box::new(None::<i32>),
            Type::INT8 => Box::new(None::<i64>),
            Type::FLOAT4 => Box::new(None::<f32>),
            Type::FLOAT8 => Box::new(None::<f64>),
            Type::BOOL => Box::new(None::<bool>),
            Type::BYTEA => Box::new(None::<Vec<u8>>),
            _ => Box::new(None::<String>),
        },
        Value::Integer(i) => match *ty {
            Type::INT2 => Box::new(i16::try_from(*i).map_err(|_| mismatch())?),
            Type::INT4 => Box::new(i32::try_from(*i).map_err(|_| mismatch())?),
            Type::FLOAT4 => Box::new(*i as f32),
            Type::FLOAT8 => Box::new(*i as f64),
            Type::BOOL => Box::new(*i != 0),
            Type::TEXT | Type::VARCHAR | Type::BPCHAR | Type::NAME => Box::new(i.to_string()),
            _ => Box::new(*i),
        },
        Value::Real(r) => match *ty {
            Type::FLOAT4 => Box::new(*r as f32),
            Type::TEXT | Type::VARCHAR | Type::BPCHAR => Box::new(r.to_string()),
            _ => Box::new(*r),
        },
        Value::Text(s) => Box::new(s.clone()),
        Value::Blob(b) => Box::new(b.blob.clone()),
    })
}

fn from_row(row: &Row, i: usize) -> Result<Value, DbError> {
    let ty = row.columns()[i].type_().clone();
    let e = |e: postgres::Error| DbError::SqlError(sanitize(&e.to_string()));
    Ok(match ty {
        Type::INT2 => row
            .try_get::<_, Option<i16>>(i)
            .map_err(e)?
            .map_or(Value::Null, |x| Value::Integer(x.into())),
        Type::INT4 => row
            .try_get::<_, Option<i32>>(i)
            .map_err(e)?
            .map_or(Value::Null, |x| Value::Integer(x.into())),
        Type::INT8 => row
            .try_get::<_, Option<i64>>(i)
            .map_err(e)?
            .map_or(Value::Null, Value::Integer),
        Type::FLOAT4 => row
            .try_get::<_, Option<f32>>(i)
            .map_err(e)?
            .map_or(Value::Null, |x| Value::Real(x.into())),
        Type::FLOAT8 => row
            .try_get::<_, Option<f64>>(i)
            .map_err(e)?
            .map_or(Value::Null, Value::Real),
        Type::BOOL => row
            .try_get::<_, Option<bool>>(i)
            .map_err(e)?
            .map_or(Value::Null, |b| Value::Integer(b as i64)),
        Type::BYTEA => row
            .try_get::<_, Option<Vec<u8>>>(i)
            .map_err(e)?
            .map_or(Value::Null, |b| Value::Blob(Blob { blob: b })),
        _ => match row.try_get::<_, Option<String>>(i) {
            Ok(v) => v.map_or(Value::Null, Value::Text),
            Err(_) => return Err(DbError::SqlError(format!("unsupported result column type {ty}"))),
        },
    })
}

fn classify(e: postgres::Error, timeout: Duration) -> DbError {
    if e.code() == Some(&postgres::error::SqlState::QUERY_CANCELED) {
        DbError::Timeout(timeout.as_millis() as u64)
    } else {
        DbError::SqlError(sanitize(&e.to_string()))
    }
}

impl Backend for PostgresBackend {
    fn identity(&self) -> String {
        self.identity.clone()
    }

    fn user_tables(&mut self) -> Result<Vec<String>, DbError> {
        let rows = self
            .client
            .query(
                "SELECT table_name::text FROM information_schema.tables \
                 WHERE table_schema = current_schema() AND table_type = 'BASE TABLE' ORDER BY 1",
                &[],
            )
            .map_err(|e| DbError::QueryFailed(e.to_string()))?;
        Ok(rows.iter().map(|r| r.get::<_, String>(0)).collect())
    }

    fn describe(&mut self, table: &str) -> Result<(Vec<ColumnMeta>, Vec<ForeignKeyMeta>), DbError> {
        let q = |e: postgres::Error| DbError::QueryFailed(e.to_string());
        let pk_rows = self
            .client
            .query(
                "SELECT k.column_name::text FROM information_schema.table_constraints c \
                 JOIN information_schema.key_column_usage k \
                   ON c.constraint_name = k.constraint_name AND c.table_schema = k.table_schema \
                 WHERE c.constraint_type = 'PRIMARY KEY' AND c.table_schema = current_schema() AND c.table_name = $1",
                &[&table],
            )
            .map_err(q)?;
        let pks: Vec<String> = pk_rows.iter().map(|r| r.get(0)).collect();
        let col_rows = self
            .client
            .query(
                "SELECT column_name::text, data_type::text, is_nullable::text FROM information_schema.columns \
                 WHERE table_schema = current_schema() AND table_name = $1 ORDER BY ordinal_position",
                &[&table],
            )
            .map_err(q)?;
        if col_rows.is_empty() {
            return Err(DbError::NoSuchTable(table.to_string()));
        }
        let cols = col_rows
            .iter()
            .map(|r| {
                let name: String = r.get(0);
                let is_pk = pks.contains(&name);
                ColumnMeta::new(
                    &name,
                    &r.get::<_, String>(1),
                    r.get::<_, String>(2) == "YES" && !is_pk,
                    is_pk,
                )
            })
            .collect();
        let fk_rows = self
            .client
            .query(
                "SELECT kcu.column_name::text, ccu.table_name::text, ccu.column_name::text \
                 FROM information_schema.table_constraints tc \
                 JOIN information_schema.key_column_usage kcu \
                   ON tc.constraint_name = kcu.constraint_name AND tc.table_schema = kcu.table_schema \
                 JOIN information_schema.constraint_column_usage ccu \
                   ON ccu.constraint_name = tc.constraint_name AND ccu.table_schema = tc.table_schema \
                 WHERE tc.constraint_type = 'FOREIGN KEY' AND tc.table_schema = current_schema() AND tc.table_name = $1",
                &[&table],
            )
            .map_err(q)?;
        let mut fks: Vec<ForeignKeyMeta> = fk_rows
            .iter()
            .map(|r| ForeignKeyMeta {
                from_table: table.to_string(),
                from_column: r.get(0),
                to_table: r.get(1),
                to_column: r.get(2),
            })
            .collect();
        fks.sort();
        fks.dedup();
        Ok((cols, fks))
    }

    fn run(&mut self, sql: &str, params: &[Value], timeout: Duration) -> Result<ExecOutcome, DbError> {
        self.set_timeout(timeout)?;
        let started = Instant::now();
        let stmt = self
            .client
            .prepare(&number_placeholders(sql))
            .map_err(|e| classify(e, timeout))?;
        if stmt.params().len() != params.len() {
            return Err(DbError::SqlError(format!(
                "statement expects {} parameters, got {}",
                stmt.params().len(),
                params.len()
            )));
        }
        let boxed = params
            .iter()
            .zip(stmt.params())
            .map(|(v, ty)| to_param(v, ty))
            .collect::<Result<Vec<_>, _>>()?;
        let refs: Vec<&(dyn ToSql + Sync)> = boxed.iter().map(|b| b.as_ref()).collect();
        let column_names: Vec<String> = stmt.columns().iter().map(|c| c.name().to_string()).collect();
        if column_names.is_empty() {
            let n = self.client.execute(&stmt, &refs).map_err(|e| classify(e, timeout))?;
            return Ok(ExecOutcome {
                kind: OutcomeKind::Mutation,
                column_names,
                rows: Vec::new(),
                affected_rows: Some(n),
                duration_ms: started.elapsed().as_millis() as u64,
            });
        }
        let raw = self.client.query(&stmt, &refs).map_err(|e| classify(e, timeout))?;
        let rows = raw
            .iter()
            .map(|r| {
                (0..column_names.len())
                    .map(|i| from_row(r, i))
                    .collect::<Result<Vec<_>, _>>()
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(ExecOutcome {
            kind: OutcomeKind::Rows,
            column_names,
            rows,
            affected_rows: None,
            duration_ms: started.elapsed().as_millis() as u64,
        })
    }

    fn begin(&mut self) -> Result<(), DbError> {
        self.client
            .batch_execute("BEGIN")
            .map_err(|e| DbError::SqlError(sanitize(&e.to_string())))
    }

    fn rollback(&mut self) -> Result<(), DbError> {
        self.client
            .batch_execute("ROLLBACK")
            .map_err(|e| DbError::SqlError(sanitize(&e.to_string())))
    }

    fn quote_ident(&self, ident: &str) -> String {
        format!("\"{}\"", ident.replace('"', "\"\""))
    }
}
