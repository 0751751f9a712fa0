//! Stage orchestration and the on-disk artifacts passed between stages.
//!
//! Every stage reads and writes canonical JSON under one output directory:
//!
//! | file | written by |
//! |---|---|
//! | `schema_graph.json`, `workflows.json`, `discovery_report.json` | discover |
//! | `templates.json`, `instances.json`, `verification_report.json` | generate |
//! | `tasks.json`, `manifest.json`, `export_report.json` | export, score |
//! | `verdicts.json` | evaluate |

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::benchmark::{self, to_canonical_json, BenchmarkError, BenchmarkTask, Manifest, Removal, Verdict};
use crate::config::{effective_config_digest, ConfigError, RunConfig};
use crate::db::{open_adapter, AdapterHandle, DbError};
use crate::diagnostics::Diagnostic;
use crate::discovery::{self, CacheOutcome, DiscoveryError, RejectedCandidate, SchemaGraph, Workflow};
use crate::provider::Provider;
use crate::taskgen::{self, RejectReason, TaskGenError, TaskInstance, TaskTemplate, VerificationReport};

pub const SCHEMA_GRAPH_FILE: &str = "schema_graph.json";
pub const WORKFLOWS_FILE: &str = "workflows.json";
pub const DISCOVERY_REPORT_FILE: &str = "discovery_report.json";
pub const TEMPLATES_FILE: &str = "templates.json";
pub const INSTANCES_FILE: &str = "instances.json";
pub const VERIFICATION_REPORT_FILE: &str = "verification_report.json";
pub const EXPORT_REPORT_FILE: &str = "export_report.json";
pub const VERDICTS_FILE: &str = "verdicts.json";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Db(#[from] DbError),
    #[error(transparent)]
    Discovery(#[from] DiscoveryError),
    #[error(transparent)]
    TaskGen(#[from] TaskGenError),
    #[error(transparent)]
    Benchmark(#[from] BenchmarkError),
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("no profiled tables: every table is empty or filtered out")]
    NoProfiledTables,
    #[error("database changed during the run (digest {before} -> {after})")]
    DigestChanged { before: String, after: String },
}

impl PipelineError {
    /// Stage tag used in diagnostics.
    pub fn stage(&self) -> &'static str {
        match self {
            PipelineError::Config(_) => "config",
            PipelineError::Db(_) | PipelineError::DigestChanged { .. } => "db",
            PipelineError::Discovery(_) | PipelineError::NoProfiledTables => "discover",
            PipelineError::TaskGen(_) => "generate",
            PipelineError::Benchmark(_) => "export",
            PipelineError::Io { .. } => "io",
        }
    }

    pub fn code(&self) -> &'static str {
        match self {
            PipelineError::Config(_) => "invalid_config",
            PipelineError::Db(_) => "database_error",
            PipelineError::DigestChanged { .. } => "digest_changed",
            PipelineError::Discovery(_) => "discovery_failed",
            PipelineError::NoProfiledTables => "no_profiled_tables",
            PipelineError::TaskGen(_) => "generation_failed",
            PipelineError::Benchmark(_) => "export_failed",
            PipelineError::Io { .. } => "io_error",
        }
    }

    pub fn to_diagnostic(&self) -> Diagnostic {
        Diagnostic::error(self.stage(), self.code(), self.to_string())
    }
}

pub fn write_json<T: Serialize>(path: &Path, x: &T) -> Result<(), PipelineError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| PipelineError::Io {
            path: dir.to_path_buf(),
            message: e.to_string(),
        })?;
    }
    fs::write(path, to_canonical_json(x)).map_err(|e| PipelineError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, PipelineError> {
    let text = fs::read_to_string(path).map_err(|e| PipelineError::Io {
        path: path.to_path_buf(),
        message: format!("{e} (has the producing stage run?)"),
    })?;
    serde_json::from_str(&text).map_err(|e| PipelineError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WorkflowEntry {
    pub id: String,
    pub core_tables: Vec<String>,
    pub cache_key: String,
    pub cache: CacheOutcome,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiscoveryReport {
    pub site: String,
    pub profiled_tables: BTreeMap<String, u64>,
    pub relations: usize,
    pub rejected_candidates: Vec<RejectedCandidate>,
    pub workflows: Vec<WorkflowEntry>,
    pub provider_calls: BTreeMap<String, u64>,
    pub diagnostics: Vec<Diagnostic>,
}

#[derive(Debug, Clone)]
pub struct DiscoveryOutput {
    pub graph: SchemaGraph,
    pub workflows: Vec<Workflow>,
    pub report: DiscoveryReport,
}

/// Profiles, infers relations and abstracts workflows.
pub fn discover(cfg: &RunConfig, h: &mut AdapterHandle, p: &Provider) -> Result<DiscoveryOutput, PipelineError> {
    let (graph, rejected) = discovery::build_schema_graph(h, cfg, p)?;
    if graph.profiles.is_empty() {
        return Err(PipelineError::NoProfiledTables);
    }
    let set = discovery::discover_workflows(&graph, p, &cfg.cache_dir, cfg.discovery.max_core_tables)?;
    let mut diagnostics = set.diagnostics.clone();
    for r in &rejected {
        let rel = &r.relation;
        diagnostics.push(Diagnostic::info(
            "discover",
            "candidate_rejected",
            format!(
                "{}.{} -> {}.{}: {}",
                rel.from_table, rel.from_column, rel.to_table, rel.to_column, r.reason
            ),
        ));
    }
    let report = DiscoveryReport {
        site: cfg.site.name.clone(),
        profiled_tables: graph.profiles.iter().map(|(t, p)| (t.clone(), p.row_count)).collect(),
        relations: graph.relations.len(),
        rejected_candidates: rejected,
        workflows: set
            .workflows
            .iter()
            .zip(&set.cache)
            .map(|(w, c)| WorkflowEntry {
                id: w.id.clone(),
                core_tables: w.core_tables.clone(),
                cache_key: w.cache_key.clone(),
                cache: *c,
            })
            .collect(),
        provider_calls: p.call_counts(),
        diagnostics,
    };
    Ok(DiscoveryOutput {
        graph,
        workflows: set.workflows,
        report,
    })
}

pub fn write_discovery(out: &Path, d: &DiscoveryOutput) -> Result<(), PipelineError> {
    write_json(&out.join(SCHEMA_GRAPH_FILE), &d.graph)?;
    write_json(&out.join(WORKFLOWS_FILE), &d.workflows)?;
    write_json(&out.join(DISCOVERY_REPORT_FILE), &d.report)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerificationSummary {
    pub attempted: usize,
    pub verified: usize,
    pub by_reason: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerificationDocument {
    pub summary: VerificationSummary,
    pub reports: Vec<VerificationReport>,
    pub diagnostics: Vec<Diagnostic>,
}

impl VerificationDocument {
    pub fn new(reports: Vec<VerificationReport>, diagnostics: Vec<Diagnostic>) -> Self {
        let mut by_reason = BTreeMap::new();
        for r in &reports {
            let key = serde_json::to_value(r.reason)
                .ok()
                .and_then(|v| v.as_str().map(String::from))
                .unwrap_or_default();
            *by_reason.entry(key).or_default() += 1;
        }
        Self {
            summary: VerificationSummary {
                attempted: reports.len(),
                verified: reports.iter().filter(|r| r.reason == RejectReason::Ok).count(),
                by_reason,
            },
            reports,
            diagnostics,
        }
    }
}

#[derive(Debug)]
pub struct GenerateOutput {
    pub templates: Vec<TaskTemplate>,
    pub instances: Vec<TaskInstance>,
    pub verification: VerificationDocument,
}

pub fn generate(
    cfg: &RunConfig,
    graph: &SchemaGraph,
    workflows: &[Workflow],
    h: &mut AdapterHandle,
    p: &Provider,
    jobs: usize,
) -> Result<GenerateOutput, PipelineError> {
    let g = taskgen::run_generation(cfg, graph, workflows, h, p, jobs)?;
    Ok(GenerateOutput {
        templates: g.templates,
        instances: g.instances,
        verification: VerificationDocument::new(g.reports, g.diagnostics),
    })
}

pub fn write_generation(out: &Path, g: &GenerateOutput) -> Result<(), PipelineError> {
    write_json(&out.join(TEMPLATES_FILE), &g.templates)?;
    write_json(&out.join(INSTANCES_FILE), &g.instances)?;
    write_json(&out.join(VERIFICATION_REPORT_FILE), &g.verification)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExportReport {
    pub built: usize,
    pub duplicates_removed: usize,
    pub illegal_removed: Vec<Removal>,
    pub exported: usize,
}

#[derive(Debug)]
pub struct ExportOutput {
    pub tasks: Vec<BenchmarkTask>,
    pub manifest: Manifest,
    pub report: ExportReport,
}

/// Scores, de-duplicates, filters and writes the benchmark.
pub fn export(
    cfg: &RunConfig,
    instances: &[TaskInstance],
    reports: &[VerificationReport],
    h: &mut AdapterHandle,
    out: &Path,
) -> Result<ExportOutput, PipelineError> {
    let built = benchmark::build_tasks(instances, reports, cfg)?;
    let n_built = built.len();
    let unique = benchmark::dedup(built);
    let n_unique = unique.len();
    let (tasks, illegal_removed) = benchmark::filter_illegal(unique, h)?;
    let manifest = benchmark::export(&tasks, out, &effective_config_digest(cfg))?;
    let report = ExportReport {
        built: n_built,
        duplicates_removed: n_built - n_unique,
        illegal_removed,
        exported: tasks.len(),
    };
    write_json(&out.join(EXPORT_REPORT_FILE), &report)?;
    Ok(ExportOutput {
        tasks,
        manifest,
        report,
    })
}

/// Re-scores an exported corpus in place with the configured weights.
pub fn rescore_export(cfg: &RunConfig, out: &Path) -> Result<Manifest, PipelineError> {
    let path = out.join(benchmark::TASKS_FILE);
    let mut tasks = benchmark::load_tasks(&path)?;
    benchmark::rescore(&mut tasks, cfg.difficulty.weights(), cfg.difficulty.thresholds());
    Ok(benchmark::export(&tasks, out, &effective_config_digest(cfg))?)
}

#[derive(Debug)]
pub struct RunSummary {
    pub digest_before: String,
    pub digest_after: String,
    pub workflows: usize,
    pub attempted: usize,
    pub verified: usize,
    pub exported: usize,
    pub manifest: Manifest,
    pub diagnostics: Vec<Diagnostic>,
}

/// discover, generate, score, dedup/filter and export in one go.
///
/// The seed database's digest is taken before and after; a difference is
/// reported as an error.
pub fn run_all(cfg: &RunConfig, out: &Path, jobs: usize) -> Result<RunSummary, PipelineError> {
    let mut h = open_adapter(&cfg.site)?;
    let p = Provider::from_config(cfg);
    let digest_before = h.snapshot_digest()?;
    let d = discover(cfg, &mut h, &p)?;
    write_discovery(out, &d)?;
    let g = generate(cfg, &d.graph, &d.workflows, &mut h, &p, jobs)?;
    write_generation(out, &g)?;
    let e = export(cfg, &g.instances, &g.verification.reports, &mut h, out)?;
    let digest_after = h.snapshot_digest()?;
    if digest_after != digest_before {
        return Err(PipelineError::DigestChanged {
            before: digest_before,
            after: digest_after,
        });
    }
    let mut diagnostics = d.report.diagnostics.clone();
    diagnostics.extend(g.verification.diagnostics.iter().cloned());
    for r in &e.report.illegal_removed {
        diagnostics.push(Diagnostic::info(
            "export",
            "task_removed",
            format!("{}: {}", r.instance_id, r.reason),
        ));
    }
    Ok(RunSummary {
        digest_before,
        digest_after,
        workflows: d.workflows.len(),
        attempted: g.verification.summary.attempted,
        verified: g.verification.summary.verified,
        exported: e.tasks.len(),
        manifest: e.manifest,
        diagnostics,
    })
}

/// Evaluates every task against `h`. `answers` maps task ids to submitted
/// text. With `self_check` each task is judged against its own reference:
/// query tasks submit the reference answer, state tasks apply the reference
/// mutation inside a rolled-back transaction.
pub fn evaluate_all(
    tasks: &[BenchmarkTask],
    answers: &BTreeMap<u64, String>,
    self_check: bool,
    h: &mut AdapterHandle,
) -> Result<Vec<Verdict>, PipelineError> {
    tasks
        .iter()
        .map(|t| {
            let v = match (&t.eval, self_check) {
                (benchmark::EvalSpec::SqlQueryMatch { reference_answer, .. }, true) => {
                    benchmark::evaluate_query(t, &reference_answer.render_answer(), h)?
                }
                (benchmark::EvalSpec::SqlStateCheck { .. }, true) => benchmark::self_check_state(t, h)?,
                (_, false) => benchmark::evaluate_task(t, answers.get(&t.task_id).map(String::as_str), h)?,
            };
            Ok(v)
        })
        .collect()
}
