use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use entforge_core::benchmark::{self, BenchmarkTask, TASKS_FILE};
use entforge_core::config::{load_config, RunConfig};
use entforge_core::db::{open_adapter, open_with_timeout, AdapterHandle};
use entforge_core::diagnostics::Diagnostic;
use entforge_core::discovery::{SchemaGraph, Workflow};
use entforge_core::fixture::write_fixture;
use entforge_core::pipeline::{self, PipelineError, VerificationDocument};
use entforge_core::provider::Provider;
use entforge_core::taskgen::TaskInstance;

#[derive(Parser)]
#[command(
    name = "entforge",
    version,
    about = "Synthesize database-grounded agent benchmarks from a SQL schema"
)]
struct Cli {
    #[command(flatten)]
    shared: Shared,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Shared {
    /// Config layer, applied in order after the built-in defaults.
    #[arg(long = "config", global = true)]
    configs: Vec<PathBuf>,
    /// Dotted-path override, e.g. `generation.max_instances_per_template=2`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, env = "ENTFORGE_CACHE_DIR")]
    cache_dir: Option<PathBuf>,
    /// Worker handles for read-only verification.
    #[arg(long, global = true, default_value_t = 4)]
    jobs: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Write the mini-CRM fixture database and its site config into --out.
    Fixture,
    /// Profile tables, infer relations and abstract workflows.
    Discover,
    /// Synthesize, instantiate and verify tasks from a prior discover run.
    Generate,
    /// Re-score an existing export with the configured weights.
    Score,
    /// Score, dedup, filter and write tasks.json from a prior generate run.
    Export,
    /// Adjudicate submitted results against a database.
    Evaluate(EvaluateArgs),
    /// Print the task distribution of an export.
    Stats {
        #[arg(long)]
        tasks: Option<PathBuf>,
    },
    /// Run discover, generate and export in sequence.
    All,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    tasks: Option<PathBuf>,
    /// JSON object mapping task ids to submitted answer text.
    #[arg(long)]
    answers: Option<PathBuf>,
    /// Database to evaluate against; defaults to the configured site database.
    #[arg(long)]
    database: Option<String>,
    #[arg(long, default_value = "embedded_file_db")]
    engine: String,
    /// Submit each query task's own reference answer.
    #[arg(long)]
    self_check: bool,
}

fn report(diags: &[Diagnostic]) {
    for d in diags {
        eprintln!("{d}");
    }
}

impl Shared {
    fn config(&self) -> Result<RunConfig, PipelineError> {
        let mut overrides = Vec::new();
        if let Some(s) = self.seed {
            overrides.push(format!("seed={s}"));
        }
        if let Some(c) = &self.cache_dir {
            overrides.push(format!("cache_dir={}", c.display()));
        }
        overrides.extend(self.sets.iter().cloned());
        Ok(load_config(&self.configs, &overrides)?)
    }

    fn tasks_path(&self, explicit: &Option<PathBuf>) -> PathBuf {
        explicit.clone().unwrap_or_else(|| self.out.join(TASKS_FILE))
    }
}

fn open(cfg: &RunConfig) -> Result<(AdapterHandle, Provider), PipelineError> {
    Ok((open_adapter(&cfg.site)?, Provider::from_config(cfg)))
}

fn cmd_discover(s: &Shared) -> Result<ExitCode, PipelineError> {
    let cfg = s.config()?;
    let (mut h, p) = open(&cfg)?;
    let d = pipeline::discover(&cfg, &mut h, &p)?;
    pipeline::write_discovery(&s.out, &d)?;
    report(&d.report.diagnostics);
    println!(
        "{} tables profiled, {} relations, {} workflows",
        d.graph.profiles.len(),
        d.graph.relations.len(),
        d.workflows.len()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_generate(s: &Shared) -> Result<ExitCode, PipelineError> {
    let cfg = s.config()?;
    let graph: SchemaGraph = pipeline::read_json(&s.out.join(pipeline::SCHEMA_GRAPH_FILE))?;
    let workflows: Vec<Workflow> = pipeline::read_json(&s.out.join(pipeline::WORKFLOWS_FILE))?;
    let (mut h, p) = open(&cfg)?;
    let g = pipeline::generate(&cfg, &graph, &workflows, &mut h, &p, s.jobs)?;
    pipeline::write_generation(&s.out, &g)?;
    report(&g.verification.diagnostics);
    let sum = &g.verification.summary;
    println!(
        "{} templates, {} of {} instances verified",
        g.templates.len(),
        sum.verified,
        sum.attempted
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_export(s: &Shared) -> Result<ExitCode, PipelineError> {
    let cfg = s.config()?;
    let instances: Vec<TaskInstance> = pipeline::read_json(&s.out.join(pipeline::INSTANCES_FILE))?;
    let doc: VerificationDocument = pipeline::read_json(&s.out.join(pipeline::VERIFICATION_REPORT_FILE))?;
    let mut h = open_adapter(&cfg.site)?;
    let e = pipeline::export(&cfg, &instances, &doc.reports, &mut h, &s.out)?;
    println!(
        "{} tasks exported ({} duplicates, {} illegal removed)",
        e.tasks.len(),
        e.report.duplicates_removed,
        e.report.illegal_removed.len()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_score(s: &Shared) -> Result<ExitCode, PipelineError> {
    let cfg = s.config()?;
    let m = pipeline::rescore_export(&cfg, &s.out)?;
    println!("{} tasks re-scored", m.total);
    Ok(ExitCode::SUCCESS)
}

fn cmd_all(s: &Shared) -> Result<ExitCode, PipelineError> {
    let cfg = s.config()?;
    let r = pipeline::run_all(&cfg, &s.out, s.jobs)?;
    report(&r.diagnostics);
    println!(
        "{} workflows, {} of {} instances verified, {} tasks exported to {}",
        r.workflows,
        r.verified,
        r.attempted,
        r.exported,
        s.out.display()
    );
    if r.exported == 0 {
        report(&[Diagnostic::error(
            "export",
            "no_tasks",
            "no task survived verification and filtering",
        )]);
        return Ok(ExitCode::FAILURE);
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_stats(s: &Shared, tasks: &Option<PathBuf>) -> anyhow::Result<ExitCode> {
    let tasks = benchmark::load_tasks(&s.tasks_path(tasks))?;
    print!("{}", benchmark::stats(&tasks).render());
    Ok(ExitCode::SUCCESS)
}

fn load_answers(path: &Path) -> anyhow::Result<BTreeMap<u64, String>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let raw: BTreeMap<String, String> = serde_json::from_str(&text)
        .with_context(|| format!("{}: expected an object of task id -> answer", path.display()))?;
    raw.into_iter()
        .map(|(k, v)| Ok((k.trim().parse::<u64>().with_context(|| format!("task id `{k}`"))?, v)))
        .collect()
}

fn cmd_evaluate(s: &Shared, a: &EvaluateArgs) -> anyhow::Result<ExitCode> {
    let tasks: Vec<BenchmarkTask> = benchmark::load_tasks(&s.tasks_path(&a.tasks))?;
    let answers = match &a.answers {
        Some(p) => load_answers(p)?,
        None => BTreeMap::new(),
    };
    let mut h = match &a.database {
        Some(db) => open_with_timeout(&a.engine, db, 5000)?,
        None => open_adapter(&s.config()?.site)?,
    };
    let verdicts = pipeline::evaluate_all(&tasks, &answers, a.self_check, &mut h)?;
    pipeline::write_json(&s.out.join(pipeline::VERDICTS_FILE), &verdicts)?;
    let passed = verdicts.iter().filter(|v| v.success).count();
    println!("{passed} of {} tasks succeeded", verdicts.len());
    Ok(if passed == verdicts.len() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

fn run(cli: &Cli) -> anyhow::Result<ExitCode> {
    let s = &cli.shared;
    let staged = match &cli.command {
        Command::Fixture => {
            let (db, layer) = write_fixture(&s.out).context("creating fixture")?;
            println!("{}\n{}", db.display(), layer.display());
            return Ok(ExitCode::SUCCESS);
        }
        Command::Stats { tasks } => return cmd_stats(s, tasks),
        Command::Evaluate(a) => return cmd_evaluate(s, a),
        Command::Discover => cmd_discover(s),
        Command::Generate => cmd_generate(s),
        Command::Score => cmd_score(s),
        Command::Export => cmd_export(s),
        Command::All => cmd_all(s),
    };
    match staged {
        Ok(code) => Ok(code),
        Err(e) => {
            report(&[e.to_diagnostic()]);
            Ok(ExitCode::FAILURE)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            report(&[Diagnostic::error("cli", "error", format!("{e:#}"))]);
            ExitCode::FAILURE
        }
    }
}
