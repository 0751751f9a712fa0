use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BenchmarkError, BenchmarkTask, TOOL_VERSION};
use crate::difficulty::Level;
use crate::taskgen::Operation;

pub const TASKS_FILE: &str = "tasks.json";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub site: BTreeMap<String, u64>,
    pub operation: BTreeMap<String, u64>,
    pub difficulty: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool_version: String,
    pub config_digest: String,
    pub total: u64,
    pub counts: Counts,
}

/// Sorted keys, two-space indent, trailing newline.
pub fn to_canonical_json<T: Serialize>(x: &T) -> String {
    let v = serde_json::to_value(x).expect("serializable");
    let mut s = serde_json::to_string_pretty(&v).expect("serializable");
    s.push('\n');
    s
}

pub fn manifest(tasks: &[BenchmarkTask], config_digest: &str) -> Manifest {
    let mut counts = Counts {
        site: BTreeMap::new(),
        operation: Operation::ALL.iter().map(|o| (o.to_string(), 0)).collect(),
        difficulty: [Level::Easy, Level::Medium, Level::Hard]
            .iter()
            .map(|l| (l.as_str().to_string(), 0))
            .collect(),
    };
    for t in tasks {
        for s in &t.sites {
            *counts.site.entry(s.clone()).or_default() += 1;
        }
        *counts.operation.entry(t.operation.to_string()).or_default() += 1;
        *counts
            .difficulty
            .entry(t.difficulty.level.as_str().to_string())
            .or_default() += 1;
    }
    Manifest {
        tool_version: TOOL_VERSION.to_string(),
        config_digest: config_digest.to_string(),
        total: tasks.len() as u64,
        counts,
    }
}

fn write(path: &Path, text: &str) -> Result<(), BenchmarkError> {
    fs::write(path, text).map_err(|source| BenchmarkError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes `tasks.json` and `manifest.json` into `out_dir`.
pub fn export(tasks: &[BenchmarkTask], out_dir: &Path, config_digest: &str) -> Result<Manifest, BenchmarkError> {
    fs::create_dir_all(out_dir).map_err(|source| BenchmarkError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    let m = manifest(tasks, config_digest);
    write(&out_dir.join(TASKS_FILE), &to_canonical_json(&tasks))?;
    write(&out_dir.join(MANIFEST_FILE), &to_canonical_json(&m))?;
    Ok(m)
}

pub fn load_tasks(path: &Path) -> Result<Vec<BenchmarkTask>, BenchmarkError> {
    let text = fs::read_to_string(path).map_err(|source| BenchmarkError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| BenchmarkError::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::super::tests::task;
    use super::*;

    #[test]
    fn export_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let tasks = vec![task(0, "a", &[("name", "Acme")]), task(1, "b", &[])];
        let m = export(&tasks, dir.path(), "d").unwrap();
        assert_eq!(m.total, 2);
        assert_eq!(m.counts.operation["SELECT"], 2);
        assert_eq!(m.counts.operation["DELETE"], 0);
        let back = load_tasks(&dir.path().join(TASKS_FILE)).unwrap();
        assert_eq!(back, tasks);
        let text = fs::read_to_string(dir.path().join(TASKS_FILE)).unwrap();
        assert!(text.ends_with("}\n]\n"));
        // keys are sorted
        let eval = text.find("\"eval\"").unwrap();
        let intent = text.find("\"intent\"").unwrap();
        assert!(eval < intent);
    }
}
