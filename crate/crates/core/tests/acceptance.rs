//! End-to-end acceptance checks over the fixture. Prints one PASS/FAIL line
//! per criterion and exits nonzero if any fails.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use entforge_core::benchmark::{
    apply_reference_mutation, dedup, evaluate_query, evaluate_state, load_tasks, to_canonical_json, BenchmarkTask,
    EvalSpec, TASKS_FILE,
};
use entforge_core::difficulty::{
    extract_features, DifficultyScore, DifficultyWeights, Dimensions, SqlFeatures, Thresholds,
};
use entforge_core::discovery::{build_schema_graph, discover_workflows, RelationOrigin};
use entforge_core::pipeline::{self, read_json, run_all, VerificationDocument};
use entforge_core::provider::{Provider, RequestKind};
use entforge_core::taskgen::{instantiate, synthesize_templates, verify, Operation, TaskGenError};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn corpus(env: &common::Env, out: &str, overrides: &[&str]) -> Result<Vec<BenchmarkTask>, String> {
    let cfg = env.config(overrides);
    let out = env.path(out);
    run_all(&cfg, &out, 4).map_err(|e| e.to_string())?;
    load_tasks(&out.join(TASKS_FILE)).map_err(|e| e.to_string())
}

fn rollback_purity() -> Outcome {
    let started = Instant::now();
    let env = common::Env::new();
    let cfg = env.config(&[]);
    let mut h = common::open(&env.db);
    let p = Provider::from_config(&cfg);
    let initial = h.snapshot_digest().map_err(|e| e.to_string())?;
    let d = pipeline::discover(&cfg, &mut h, &p).map_err(|e| e.to_string())?;
    let (mut calls, mut cud) = (0, 0);
    for wf in &d.workflows {
        let (templates, _) = synthesize_templates(wf, &d.graph, &p, &cfg).map_err(|e| e.to_string())?;
        for t in &templates {
            let instances = match instantiate(t, &mut h, &p, &cfg) {
                Ok(i) => i,
                Err(TaskGenError::NoCandidateValues { .. }) => continue,
                Err(e) => return Err(e.to_string()),
            };
            for inst in &instances {
                let before = h.snapshot_digest().map_err(|e| e.to_string())?;
                verify(inst, &mut h).map_err(|e| format!("{}: {e}", inst.id))?;
                let after = h.snapshot_digest().map_err(|e| e.to_string())?;
                ensure!(before == after, "digest changed verifying {}", inst.id);
                calls += 1;
                cud += usize::from(inst.operation.is_mutation());
            }
        }
    }
    let run = run_all(&cfg, &env.path("out"), 4).map_err(|e| e.to_string())?;
    ensure!(run.digest_before == run.digest_after, "pipeline changed the database");
    let end = h.snapshot_digest().map_err(|e| e.to_string())?;
    ensure!(
        initial == end && initial == run.digest_before,
        "database differs from its initial state"
    );
    let secs = started.elapsed().as_secs_f64();
    ensure!(calls >= 50, "only {calls} verification calls");
    ensure!(cud >= 10, "only {cud} CUD verifications");
    ensure!(secs < 60.0, "took {secs:.1} s");
    Ok(format!(
        "{calls} verifications ({cud} CUD), digest stable per call and per run, {secs:.2} s"
    ))
}

fn verification_soundness() -> Outcome {
    let env = common::Env::new();
    let tasks = corpus(&env, "out", &[])?;
    let doc: VerificationDocument =
        read_json(&env.path("out").join(pipeline::VERIFICATION_REPORT_FILE)).map_err(|e| e.to_string())?;
    let reports: BTreeMap<&str, _> = doc.reports.iter().map(|r| (r.instance_id.as_str(), r)).collect();
    let mut h = common::open(&env.db);
    let (mut reads, mut writes) = (0, 0);
    for t in &tasks {
        match &t.eval {
            EvalSpec::SqlQueryMatch {
                reference_sql,
                reference_answer,
            } => {
                ensure!(
                    !reference_answer.is_empty_or_all_null(),
                    "task {} has an empty answer",
                    t.task_id
                );
                let again = h
                    .execute_rollback(&reference_sql.sql, &reference_sql.params)
                    .map_err(|e| format!("task {}: {e}", t.task_id))?
                    .into_result_set()
                    .canonicalize();
                ensure!(&again == reference_answer, "task {} re-executes differently", t.task_id);
                reads += 1;
            }
            EvalSpec::SqlStateCheck {
                expected_affected_rows, ..
            } => {
                let r = reports
                    .get(t.instance_id.as_str())
                    .ok_or(format!("no report for {}", t.instance_id))?;
                ensure!(
                    r.affected_rows >= 1 && *expected_affected_rows >= 1,
                    "task {} affected no rows",
                    t.task_id
                );
                writes += 1;
            }
        }
    }
    ensure!(reads > 0 && writes > 0, "corpus lacks reads or writes");
    Ok(format!(
        "{reads}/{reads} SELECT answers non-empty and stable, {writes}/{writes} CUD affected >= 1 row"
    ))
}

fn relation_inference() -> Outcome {
    let env = common::Env::new();
    let cfg = env.config(&[]);
    let mut h = common::open(&env.db);
    let p = Provider::from_config(&cfg);
    let (graph, rejected) = build_schema_graph(&mut h, &cfg, &p).map_err(|e| e.to_string())?;
    let edge = |a: &str, b: &str, c: &str, d: &str| (a.to_string(), b.to_string(), c.to_string(), d.to_string());
    let declared: BTreeSet<_> = [
        edge("contact", "account_id", "account", "id"),
        edge("opportunity", "account_id", "account", "id"),
        edge("ticket", "contact_id", "contact", "id"),
    ]
    .into();
    let kept: BTreeMap<_, _> = graph
        .relations
        .iter()
        .map(|r| (edge(&r.from_table, &r.from_column, &r.to_table, &r.to_column), r.origin))
        .collect();
    let found = declared
        .iter()
        .filter(|e| kept.get(*e) == Some(&RelationOrigin::ExplicitFk))
        .count();
    ensure!(found == declared.len(), "explicit recall {found}/{}", declared.len());
    let planted = edge("note", "parent_id", "contact", "id");
    ensure!(
        kept.get(&planted) == Some(&RelationOrigin::Inferred),
        "planted relation missing"
    );
    let decoy = edge("note", "parent_id", "account", "id");
    ensure!(!kept.contains_key(&decoy), "non-joinable candidate retained");
    ensure!(
        rejected
            .iter()
            .any(|c| c.relation.to_table == "account" && c.relation.from_table == "note"),
        "decoy not reported as rejected"
    );
    Ok(format!(
        "explicit recall {found}/3, note.parent_id->contact.id retained, note.parent_id->account.id excluded"
    ))
}

fn cache_efficacy() -> Outcome {
    let env = common::Env::new();
    let cfg = env.config(&[]);
    let mut h = common::open(&env.db);
    let cold_provider = Provider::from_config(&cfg);
    let (graph, _) = build_schema_graph(&mut h, &cfg, &cold_provider).map_err(|e| e.to_string())?;
    let cold = discover_workflows(&graph, &cold_provider, &cfg.cache_dir, cfg.discovery.max_core_tables)
        .map_err(|e| e.to_string())?;
    ensure!(
        cold_provider.calls_of(RequestKind::DescribeWorkflow) > 0,
        "cold run made no description calls"
    );

    let warm_provider = Provider::from_config(&cfg);
    let (graph2, _) = build_schema_graph(&mut h, &cfg, &warm_provider).map_err(|e| e.to_string())?;
    let before = warm_provider.calls_of(RequestKind::DescribeWorkflow);
    let warm = discover_workflows(&graph2, &warm_provider, &cfg.cache_dir, cfg.discovery.max_core_tables)
        .map_err(|e| e.to_string())?;
    let delta = warm_provider.calls_of(RequestKind::DescribeWorkflow) - before;
    ensure!(delta == 0, "warm run made {delta} description calls");
    ensure!(warm.workflows == cold.workflows, "warm workflows differ");
    Ok(format!(
        "description call delta 0, {} workflow(s) structurally equal",
        warm.workflows.len()
    ))
}

struct Case {
    sql: &'static str,
    op: Operation,
    // n_tables, n_joins, n_where_predicates, n_subqueries, n_aggregates
    counts: [u32; 5],
    rows: u64,
    cols: u64,
    total: f64,
}

const fn case(sql: &'static str, op: Operation, counts: [u32; 5], rows: u64, cols: u64, total: f64) -> Case {
    Case {
        sql,
        op,
        counts,
        rows,
        cols,
        total,
    }
}

// Counts tallied by reading each statement; totals evaluated separately in
// exact rational arithmetic under the default weights.
const CASES: [Case; 20] = [
    case("SELECT name FROM account WHERE industry = ?", Operation::Select, [1, 0, 1, 0, 0], 3, 1, 0.79),
    case(
        "SELECT a.name FROM contact c JOIN account a ON c.account_id = a.id WHERE c.name = ?",
        Operation::Select,
        [2, 1, 1, 0, 0],
        1,
        1,
        1.37,
    ),
    case("SELECT COUNT(*) FROM ticket WHERE status = ? AND priority = ?", Operation::Select, [1, 0, 2, 0, 1], 1, 1, 1.37),
    case("SELECT AVG(amount) FROM opportunity WHERE stage = ?", Operation::Select, [1, 0, 1, 0, 1], 1, 1, 1.07),
    case("SELECT name, email FROM contact", Operation::Select, [1, 0, 0, 0, 0], 6, 2, 0.53),
    case(
        "SELECT t.subject FROM ticket t JOIN contact c ON t.contact_id = c.id JOIN account a ON c.account_id = a.id WHERE a.name = ? AND t.status = ?",
        Operation::Select,
        [3, 2, 2, 0, 0],
        2,
        1,
        2.28,
    ),
    case(
        "SELECT name FROM account WHERE id IN (SELECT account_id FROM opportunity WHERE stage = 'won')",
        Operation::Select,
        [2, 0, 1, 1, 0],
        2,
        1,
        1.53,
    ),
    case("SELECT MAX(amount), MIN(amount) FROM opportunity", Operation::Select, [1, 0, 0, 0, 2], 1, 2, 1.08),
    case("SELECT stage, SUM(amount) FROM opportunity GROUP BY stage", Operation::Select, [1, 0, 0, 0, 1], 3, 2, 0.8),
    case(
        "SELECT name FROM contact WHERE title = ? OR title = ? OR email IS NULL",
        Operation::Select,
        [1, 0, 3, 0, 0],
        12,
        1,
        1.46,
    ),
    case(
        "SELECT id FROM opportunity WHERE amount BETWEEN 1000 AND 5000 AND stage = 'open'",
        Operation::Select,
        [1, 0, 2, 0, 0],
        15,
        12,
        1.25,
    ),
    case("INSERT INTO account (id, name, industry) VALUES (?, ?, ?)", Operation::Insert, [1, 0, 0, 0, 0], 1, 0, 0.76),
    case(
        "INSERT INTO note (id, parent_id, body) VALUES (?, (SELECT id FROM contact WHERE name = ? LIMIT 1), ?)",
        Operation::Insert,
        [2, 0, 0, 1, 0],
        1,
        0,
        1.51,
    ),
    case("UPDATE contact SET title = ? WHERE name = ?", Operation::Update, [1, 0, 1, 0, 0], 1, 0, 1.36),
    case(
        "UPDATE ticket SET status = 'closed' WHERE status = 'open' AND priority = 'high'",
        Operation::Update,
        [1, 0, 2, 0, 0],
        2,
        0,
        1.67,
    ),
    case(
        "UPDATE contact SET account_id = (SELECT id FROM account WHERE name = ?) WHERE name = ?",
        Operation::Update,
        [2, 0, 1, 1, 0],
        1,
        0,
        2.11,
    ),
    case("DELETE FROM ticket WHERE status = 'closed'", Operation::Delete, [1, 0, 1, 0, 0], 2, 0, 1.67),
    case(
        "DELETE FROM contact WHERE account_id IN (SELECT id FROM account WHERE industry = ? AND name <> ?)",
        Operation::Delete,
        [2, 0, 1, 1, 0],
        3,
        0,
        2.43,
    ),
    case(
        "DELETE FROM note WHERE parent_id = (SELECT id FROM contact WHERE email = (SELECT email FROM contact WHERE id = 101))",
        Operation::Delete,
        [2, 0, 1, 2, 0],
        1,
        0,
        3.01,
    ),
    case(
        "SELECT COUNT(DISTINCT c.id) FROM contact c JOIN ticket t ON t.contact_id = c.id WHERE t.status <> 'closed'",
        Operation::Select,
        [2, 1, 1, 0, 1],
        1,
        1,
        1.67,
    ),
];

fn difficulty_metric() -> Outcome {
    let w = DifficultyWeights::default();
    let th = Thresholds::default();
    let mut worst = 0.0f64;
    for (i, c) in CASES.iter().enumerate() {
        let f = extract_features(c.sql).map_err(|e| format!("case {i}: {e}"))?;
        let [n_tables, n_joins, n_where_predicates, n_subqueries, n_aggregates] = c.counts;
        let hand = SqlFeatures {
            n_tables,
            n_joins,
            n_where_predicates,
            n_subqueries,
            n_aggregates,
        };
        ensure!(f == hand, "case {i}: extracted {f:?}, hand count {hand:?}");
        let s = DifficultyScore::from_dimensions(Dimensions::new(&f, c.op, c.rows, c.cols), w, th);
        let err = (s.total - c.total).abs();
        ensure!(
            err <= 1e-12,
            "case {i}: total {} vs {} (|diff| {err:e})",
            s.total,
            c.total
        );
        worst = worst.max(err);

        let by_op: Vec<f64> = Operation::ALL
            .iter()
            .map(|op| DifficultyScore::from_dimensions(Dimensions::new(&f, *op, c.rows, c.cols), w, th).total)
            .collect();
        ensure!(
            by_op.windows(2).all(|p| p[0] < p[1]),
            "case {i}: operation ordering {by_op:?}"
        );
    }
    Ok(format!(
        "{} statements: features exact, max |total - hand| = {worst:e}, SELECT < INSERT < UPDATE < DELETE",
        CASES.len()
    ))
}

fn export_integrity() -> Outcome {
    let env = common::Env::new();
    let variants: [(&str, &[&str]); 4] = [
        ("seed7", &[]),
        ("seed11", &["seed=11"]),
        ("select", &["generation.operations=[\"SELECT\"]"]),
        (
            "zh",
            &[
                "generation.languages=[\"zh\", \"en\"]",
                "generation.max_instances_per_template=5",
            ],
        ),
    ];
    let mut total = 0;
    for (name, overrides) in variants {
        let tasks = corpus(&env, name, overrides)?;
        let text = std::fs::read_to_string(env.path(name).join(TASKS_FILE)).map_err(|e| e.to_string())?;
        ensure!(to_canonical_json(&tasks) == text, "{name}: serialize(parse(x)) != x");
        let again: Vec<BenchmarkTask> = serde_json::from_str(&to_canonical_json(&tasks)).map_err(|e| e.to_string())?;
        ensure!(again == tasks, "{name}: parse(serialize(x)) != x");
        ensure!(!tasks.is_empty(), "{name}: empty corpus");
        ensure!(
            tasks.iter().enumerate().all(|(i, t)| t.task_id == i as u64),
            "{name}: task ids not dense"
        );
        ensure!(
            tasks
                .iter()
                .all(|t| t.require_reset == (t.operation != Operation::Select)),
            "{name}: require_reset mismatch"
        );
        ensure!(dedup(tasks.clone()) == tasks, "{name}: dedup not idempotent");
        total += tasks.len();
    }
    Ok(format!(
        "4 corpora, {total} tasks: round-trip exact, ids dense, require_reset consistent, dedup idempotent"
    ))
}

fn evaluator_oracle() -> Outcome {
    let env = common::Env::new();
    let tasks = corpus(&env, "out", &[])?;
    let mut seed = common::open(&env.db);
    let (mut pos, mut neg) = (0, 0);
    for t in &tasks {
        match &t.eval {
            EvalSpec::SqlQueryMatch { reference_answer, .. } => {
                let answer = reference_answer.render_answer();
                let ok = evaluate_query(t, &answer, &mut seed).map_err(|e| e.to_string())?;
                ensure!(
                    ok.success,
                    "task {}: reference answer rejected: {}",
                    t.task_id,
                    ok.details
                );
                let wrong = evaluate_query(t, &format!("{answer}\nnot part of the answer"), &mut seed)
                    .map_err(|e| e.to_string())?;
                ensure!(!wrong.success, "task {}: perturbed answer accepted", t.task_id);
            }
            EvalSpec::SqlStateCheck { .. } => {
                let copy = env.scratch_copy(&format!("scratch-{}.sqlite", t.task_id));
                let mut h = common::open(&copy);
                apply_reference_mutation(t, &mut h).map_err(|e| format!("task {}: {e}", t.task_id))?;
                let ok = evaluate_state(t, &mut h).map_err(|e| e.to_string())?;
                ensure!(ok.success, "task {}: mutated copy fails: {}", t.task_id, ok.details);
                drop(h);
                let _ = std::fs::remove_file(&copy);
                let untouched = evaluate_state(t, &mut seed).map_err(|e| e.to_string())?;
                ensure!(!untouched.success, "task {}: untouched seed passes", t.task_id);
            }
        }
        pos += 1;
        neg += 1;
    }
    Ok(format!(
        "positive {pos}/{}, negative control {neg}/{}",
        tasks.len(),
        tasks.len()
    ))
}

fn same_bytes(a: &Path, b: &Path) -> Result<bool, String> {
    let read = |p: &Path| std::fs::read(p).map_err(|e| format!("{}: {e}", p.display()));
    Ok(read(a)? == read(b)?)
}

fn determinism() -> Outcome {
    let env = common::Env::new();
    let base = env.config(&[]);
    let mut outs = Vec::new();
    for (i, cache) in ["cache-a", "cache-b", "cache-b"].iter().enumerate() {
        let mut cfg = base.clone();
        cfg.cache_dir = env.path(cache);
        let out = env.path(&format!("run{i}"));
        run_all(&cfg, &out, 1 + i).map_err(|e| e.to_string())?;
        outs.push(out.join(TASKS_FILE));
    }
    ensure!(same_bytes(&outs[0], &outs[1])?, "two cold runs differ");
    ensure!(same_bytes(&outs[1], &outs[2])?, "warm-cache rerun differs");
    let n = std::fs::metadata(&outs[0]).map_err(|e| e.to_string())?.len();
    Ok(format!(
        "3 runs (cold, cold, warm; 1-3 jobs) byte-identical tasks.json ({n} bytes)"
    ))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("rollback purity", rollback_purity),
        ("verification soundness", verification_soundness),
        ("relation inference", relation_inference),
        ("cache efficacy", cache_efficacy),
        ("difficulty metric", difficulty_metric),
        ("export integrity", export_integrity),
        ("evaluator oracle", evaluator_oracle),
        ("determinism", determinism),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("PASS {} {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {} {name}: {why}", i + 1);
            }
        }
    }
    println!(
        "acceptance: {} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
