use std::fmt::Write;

use serde::Serialize;

use super::{manifest, BenchmarkTask};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Row {
    pub label: String,
    pub count: u64,
    pub percentage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StatsReport {
    pub total: u64,
    pub site: Vec<Row>,
    pub operation: Vec<Row>,
    pub difficulty: Vec<Row>,
}

fn rows(counts: &std::collections::BTreeMap<String, u64>, total: u64, order: &[&str]) -> Vec<Row> {
    let mut labels: Vec<&String> = counts.keys().collect();
    labels.sort_by_key(|l| order.iter().position(|o| o == l).unwrap_or(usize::MAX));
    labels
        .into_iter()
        .map(|l| Row {
            label: l.clone(),
            count: counts[l],
            percentage: if total == 0 {
                0.0
            } else {
                100.0 * counts[l] as f64 / total as f64
            },
        })
        .collect()
}

/// Task distribution by site, operation and difficulty level.
pub fn stats(tasks: &[BenchmarkTask]) -> StatsReport {
    let m = manifest(tasks, "");
    StatsReport {
        total: m.total,
        site: rows(&m.counts.site, m.total, &[]),
        operation: rows(&m.counts.operation, m.total, &["SELECT", "INSERT", "UPDATE", "DELETE"]),
        difficulty: rows(&m.counts.difficulty, m.total, &["easy", "medium", "hard"]),
    }
}

impl StatsReport {
    pub fn render(&self) -> String {
        if self.total == 0 {
            return "0 tasks\n".into();
        }
        let mut s = format!("{} tasks\n", self.total);
        for (title, rows) in [
            ("site", &self.site),
            ("operation", &self.operation),
            ("difficulty", &self.difficulty),
        ] {
            let _ = writeln!(s, "\n{title} | count | percentage");
            for r in rows {
                let _ = writeln!(s, "{} | {} | {:.1}%", r.label, r.count, r.percentage);
            }
        }
        s
    }
}
