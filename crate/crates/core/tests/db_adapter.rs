mod common;

use entforge_core::db::{open_with_timeout, DbError, EngineKind, NormalizedType, OutcomeKind};
use entforge_core::fixture::create_fixture;
use entforge_core::value::Value;

/// Row counts read straight from the file, bypassing the adapter.
fn oracle_counts(path: &std::path::Path) -> Vec<(String, u64)> {
    let conn = rusqlite::Connection::open(path).unwrap();
    let mut stmt = conn
        .prepare("SELECT name FROM sqlite_master WHERE type = 'table' AND name NOT LIKE 'sqlite_%' ORDER BY name")
        .unwrap();
    let names: Vec<String> = stmt.query_map([], |r| r.get(0)).unwrap().map(Result::unwrap).collect();
    names
        .into_iter()
        .map(|n| {
            let c: i64 = conn
                .query_row(&format!("SELECT COUNT(*) FROM \"{n}\""), [], |r| r.get(0))
                .unwrap();
            (n, c as u64)
        })
        .collect()
}

fn s(v: &[&str]) -> Vec<String> {
    v.iter().map(|x| x.to_string()).collect()
}

#[test]
fn fixture_shape() {
    let env = common::Env::new();
    let counts = oracle_counts(&env.db);
    assert_eq!(counts.len(), 6);
    let get = |t: &str| counts.iter().find(|(n, _)| n == t).unwrap().1;
    assert_eq!(get("account"), 4);
    assert_eq!(get("contact"), 6);
    assert_eq!(get("opportunity"), 5);
    assert_eq!(get("ticket"), 5);
    assert_eq!(get("note"), 3);
    assert_eq!(get("audit_log"), 0);
}

#[test]
fn fixture_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.sqlite"), dir.path().join("b.sqlite"));
    create_fixture(&a).unwrap();
    create_fixture(&b).unwrap();
    assert_eq!(
        common::open(&a).snapshot_digest().unwrap(),
        common::open(&b).snapshot_digest().unwrap()
    );
    create_fixture(&a).unwrap();
    assert_eq!(
        common::open(&a).snapshot_digest().unwrap(),
        common::open(&b).snapshot_digest().unwrap()
    );
}

#[test]
fn open_errors() {
    let env = common::Env::new();
    let h = common::open(&env.db);
    assert_eq!(h.engine_kind(), EngineKind::EmbeddedFileDb);
    assert!(matches!(
        open_with_timeout("oracle", "x", 10),
        Err(DbError::UnsupportedEngine(_))
    ));
    let missing = env.path("nope/missing.sqlite");
    assert!(matches!(
        open_with_timeout("embedded_file_db", missing.to_str().unwrap(), 10),
        Err(DbError::ConnectionFailed { .. })
    ));
}

#[test]
fn nonempty_tables_match_direct_counts() {
    let env = common::Env::new();
    let mut h = common::open(&env.db);
    let expected: Vec<(String, u64)> = oracle_counts(&env.db).into_iter().filter(|(_, c)| *c > 0).collect();
    assert_eq!(h.list_nonempty_tables(&s(&["*"]), &[]).unwrap(), expected);
    let without_note: Vec<_> = expected.iter().filter(|(n, _)| n != "note").cloned().collect();
    assert_eq!(h.list_nonempty_tables(&s(&["*"]), &s(&["note"])).unwrap(), without_note);
    assert_eq!(without_note.len(), 4);

    let empty = env.path("empty.sqlite");
    rusqlite::Connection::open(&empty).unwrap();
    assert!(common::open(&empty)
        .list_nonempty_tables(&s(&["*"]), &[])
        .unwrap()
        .is_empty());
}

#[test]
fn describe_reads_declared_keys() {
    let env = common::Env::new();
    let mut h = common::open(&env.db);
    let (cols, fks) = h.describe_table("contact").unwrap();
    let account_id = cols.iter().find(|c| c.name == "account_id").unwrap();
    assert_eq!(account_id.normalized_type, NormalizedType::Integer);
    assert_eq!(fks.len(), 1);
    assert_eq!((fks[0].to_table.as_str(), fks[0].to_column.as_str()), ("account", "id"));

    let (_, note_fks) = h.describe_table("note").unwrap();
    assert!(note_fks.is_empty());
    assert!(matches!(h.describe_table("ghost"), Err(DbError::NoSuchTable(_))));
}

#[test]
fn execute_reads() {
    let env = common::Env::new();
    let mut h = common::open(&env.db);
    let o = h.execute("SELECT name FROM account ORDER BY name", &[]).unwrap();
    assert_eq!(o.kind, OutcomeKind::Rows);
    assert_eq!(o.column_names, ["name"]);
    assert_eq!(o.rows.len(), 4);
    assert!(h.execute("SELECT 1 WHERE 1=0", &[]).unwrap().rows.is_empty());
    assert!(matches!(h.execute("SELEC 1", &[]), Err(DbError::SqlError(_))));
}

#[test]
fn rollback_leaves_no_trace() {
    let env = common::Env::new();
    let mut h = common::open(&env.db);
    let before = h.snapshot_digest().unwrap();
    assert_eq!(before, h.snapshot_digest().unwrap());

    let o = h
        .execute_rollback("DELETE FROM ticket WHERE status = 'closed'", &[])
        .unwrap();
    assert_eq!(o.kind, OutcomeKind::Mutation);
    assert_eq!(o.affected_rows, Some(2));
    assert_eq!(h.row_count("ticket").unwrap(), 5);
    assert_eq!(
        h.execute_rollback("UPDATE account SET industry = 'x' WHERE 1=0", &[])
            .unwrap()
            .affected_rows,
        Some(0)
    );
    let ins = h
        .execute_rollback(
            "INSERT INTO account(id, name, industry) VALUES (?, ?, ?)",
            &[Value::Integer(99), "Hooli".into(), "Tech".into()],
        )
        .unwrap();
    assert_eq!(ins.affected_rows, Some(1));
    assert_eq!(h.snapshot_digest().unwrap(), before);
    assert_eq!(
        oracle_counts(&env.db).iter().find(|(n, _)| n == "account").unwrap().1,
        4
    );
}

#[test]
fn committed_write_changes_digest() {
    let env = common::Env::new();
    let scratch = env.scratch_copy("scratch.sqlite");
    let mut h = common::open(&scratch);
    let before = h.snapshot_digest().unwrap();
    h.execute(
        "INSERT INTO account(id, name, industry) VALUES (99, 'Hooli', 'Tech')",
        &[],
    )
    .unwrap();
    assert_ne!(h.snapshot_digest().unwrap(), before);
}

#[test]
fn nested_transaction_is_refused() {
    let env = common::Env::new();
    let mut h = common::open(&env.db);
    let r = h.in_rollback(|h| h.execute_rollback("SELECT 1", &[]));
    assert!(matches!(r, Err(DbError::TransactionOpen)));
    assert!(h.is_usable());
    assert!(h.execute_rollback("SELECT 1", &[]).is_ok());
}
