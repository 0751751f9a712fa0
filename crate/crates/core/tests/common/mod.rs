#![allow(dead_code)]

use std::path::{Path, PathBuf};

use entforge_core::config::{load_config, RunConfig};
use entforge_core::fixture::write_fixture;

pub struct Env {
    pub dir: tempfile::TempDir,
    pub db: PathBuf,
    pub layer: PathBuf,
}

impl Env {
    pub fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let (db, layer) = write_fixture(&dir.path().join("fixture")).unwrap();
        Self { dir, db, layer }
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    pub fn config(&self, overrides: &[&str]) -> RunConfig {
        let mut all = vec![
            format!("cache_dir={}", self.path("cache").display()),
            "seed=7".to_string(),
        ];
        all.extend(overrides.iter().map(|s| s.to_string()));
        load_config(&[&self.layer], &all).unwrap()
    }

    /// A byte copy of the fixture database.
    pub fn scratch_copy(&self, name: &str) -> PathBuf {
        let p = self.path(name);
        std::fs::copy(&self.db, &p).unwrap();
        p
    }
}

pub fn open(path: &Path) -> entforge_core::db::AdapterHandle {
    entforge_core::db::open_with_timeout("embedded_file_db", path.to_str().unwrap(), 5000).unwrap()
}
