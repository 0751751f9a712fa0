//! A small CRM database used by the examples, tests and `entforge fixture`.
//!
//! Row counts: account 4, contact 6, opportunity 5, ticket 5, note 3,
//! audit_log 0. `note.parent_id` has no declared foreign key; its values
//! are contact ids and never collide with account ids.

use std::fs;
use std::path::{Path, PathBuf};

use crate::db::DbError;

pub const SITE_NAME: &str = "minicrm";
pub const DB_FILE: &str = "minicrm.sqlite";
pub const CONFIG_FILE: &str = "minicrm.toml";

pub const FIXTURE_SQL: &str = r#"
CREATE TABLE account (
    id INTEGER PRIMARY KEY,
    name TEXT NOT NULL,
    industry TEXT
);
CREATE TABLE contact (
    id INTEGER PRIMARY KEY,
    account_id INTEGER NOT NULL REFERENCES account(id),
    name TEXT NOT NULL,
    title TEXT,
    email TEXT
);
CREATE TABLE opportunity (
    id INTEGER PRIMARY KEY,
    account_id INTEGER NOT NULL REFERENCES account(id),
    name TEXT NOT NULL,
    stage TEXT,
    amount REAL
);
CREATE TABLE ticket (
    id INTEGER PRIMARY KEY,
    contact_id INTEGER REFERENCES contact(id),
    subject TEXT NOT NULL,
    status TEXT NOT NULL,
    priority TEXT
);
CREATE TABLE note (
    id INTEGER PRIMARY KEY,
    parent_id INTEGER,
    body TEXT NOT NULL
);
CREATE TABLE audit_log (
    id INTEGER PRIMARY KEY,
    action TEXT NOT NULL,
    created_at TEXT
);

INSERT INTO account VALUES
    (1, 'Acme', 'Manufacturing'),
    (2, 'Globex', 'Software'),
    (3, 'Initech', 'Software'),
    (4, 'Umbrella', 'Energy');
INSERT INTO contact VALUES
    (101, 1, 'Alice Chen', 'Buyer', 'alice@acme.example'),
    (102, 1, 'Bob Diaz', 'Engineer', 'bob@acme.example'),
    (103, 1, 'Carol Evans', 'Director', 'carol@acme.example'),
    (104, 2, 'Dan Fox', 'Buyer', 'dan@globex.example'),
    (105, 3, 'Erin Gray', 'Engineer', 'erin@initech.example'),
    (106, 4, 'Frank Hill', 'Buyer', NULL);
INSERT INTO opportunity VALUES
    (201, 1, 'Acme renewal', 'won', 12000.0),
    (202, 1, 'Acme expansion', 'open', 8000.0),
    (203, 2, 'Globex pilot', 'open', 5000.0),
    (204, 3, 'Initech upgrade', 'lost', 3000.0),
    (205, 4, 'Umbrella audit', 'open', 7500.0);
INSERT INTO ticket VALUES
    (301, 101, 'Login fails', 'open', 'high'),
    (302, 102, 'Invoice missing', 'closed', 'low'),
    (303, 104, 'Slow dashboard', 'open', 'medium'),
    (304, 105, 'Export error', 'closed', 'high'),
    (305, 101, 'Password reset', 'pending', 'low');
INSERT INTO note VALUES
    (401, 101, 'Prefers email'),
    (402, 102, 'Call after 3pm'),
    (403, 104, 'Renewal due in Q3');
"#;

/// Creates (or replaces) the fixture database at `path`.
pub fn create_fixture(path: &Path) -> Result<(), DbError> {
    let fail = |e: &dyn std::fmt::Display| DbError::ConnectionFailed {
        target: path.display().to_string(),
        cause: e.to_string(),
    };
    if path.exists() {
        fs::remove_file(path).map_err(|e| fail(&e))?;
    }
    let conn = rusqlite::Connection::open(path).map_err(|e| fail(&e))?;
    conn.execute_batch(FIXTURE_SQL)
        .map_err(|e| DbError::SqlError(e.to_string()))?;
    Ok(())
}

/// Config layer pointing a run at the fixture database.
pub fn site_layer(db_path: &Path) -> String {
    let mut site = toml::Table::new();
    site.insert("name".into(), SITE_NAME.into());
    site.insert("base_url".into(), "http://localhost:7860".into());
    site.insert("engine".into(), "embedded_file_db".into());
    site.insert("database".into(), db_path.display().to_string().into());
    let mut aliases = toml::Table::new();
    aliases.insert(
        "parent".into(),
        toml::Value::Array(vec!["contact".into(), "account".into()]),
    );
    let mut provider = toml::Table::new();
    provider.insert("aliases".into(), aliases.into());
    let mut root = toml::Table::new();
    root.insert("site".into(), site.into());
    root.insert("provider".into(), provider.into());
    toml::to_string(&root).expect("table serializes")
}

/// Writes `DB_FILE` and `CONFIG_FILE` into `dir`; returns both paths.
pub fn write_fixture(dir: &Path) -> Result<(PathBuf, PathBuf), DbError> {
    fs::create_dir_all(dir).map_err(|e| DbError::ConnectionFailed {
        target: dir.display().to_string(),
        cause: e.to_string(),
    })?;
    let dir = dir.canonicalize().map_err(|e| DbError::ConnectionFailed {
        target: dir.display().to_string(),
        cause: e.to_string(),
    })?;
    let db = dir.join(DB_FILE);
    create_fixture(&db)?;
    let cfg = dir.join(CONFIG_FILE);
    fs::write(&cfg, site_layer(&db)).map_err(|e| DbError::ConnectionFailed {
        target: cfg.display().to_string(),
        cause: e.to_string(),
    })?;
    Ok((db, cfg))
}
