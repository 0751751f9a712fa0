mod common;

use entforge_core::benchmark::{
    apply_reference_mutation, dedup, evaluate_query, evaluate_state, filter_illegal, load_tasks, BenchmarkTask,
    EvalSpec, VerdictReason, TASKS_FILE,
};
use entforge_core::pipeline::run_all;
use entforge_core::taskgen::Operation;
use entforge_core::value::ResultSet;

fn corpus(env: &common::Env, overrides: &[&str]) -> Vec<BenchmarkTask> {
    let cfg = env.config(overrides);
    let out = env.path("out");
    run_all(&cfg, &out, 2).unwrap();
    load_tasks(&out.join(TASKS_FILE)).unwrap()
}

#[test]
fn dedup_is_idempotent_on_the_corpus() {
    let env = common::Env::new();
    let tasks = corpus(&env, &[]);
    let once = dedup(tasks.clone());
    assert_eq!(once, tasks);
    assert_eq!(dedup(once.clone()), once);
}

#[test]
fn verified_tasks_survive_the_filter() {
    let env = common::Env::new();
    let tasks = corpus(&env, &[]);
    let mut h = common::open(&env.db);
    let (kept, removed) = filter_illegal(tasks.clone(), &mut h).unwrap();
    assert!(removed.is_empty(), "{removed:?}");
    assert_eq!(kept, tasks);
}

#[test]
fn filter_drops_broken_and_empty_tasks() {
    let env = common::Env::new();
    let mut tasks = corpus(&env, &[]);
    let scratch = env.scratch_copy("scratch.sqlite");
    rusqlite::Connection::open(&scratch)
        .unwrap()
        .execute_batch("DROP TABLE note")
        .unwrap();

    let on_note = tasks
        .iter()
        .filter(|t| t.operation == Operation::Select && t.tables.iter().any(|x| x == "note"))
        .count();
    let first_other = tasks
        .iter()
        .position(|t| t.operation == Operation::Select && !t.tables.iter().any(|x| x == "note"))
        .unwrap();
    if let EvalSpec::SqlQueryMatch { reference_answer, .. } = &mut tasks[first_other].eval {
        *reference_answer = ResultSet::new(reference_answer.columns.clone(), vec![]);
    }

    let mut h = common::open(&scratch);
    let n = tasks.len();
    let (kept, removed) = filter_illegal(tasks, &mut h).unwrap();
    assert!(removed.iter().any(|r| r.reason == "empty_answer"));
    let sql_errors = removed.iter().filter(|r| r.reason.starts_with("sql_error")).count();
    assert!(sql_errors >= on_note);
    assert_eq!(kept.len() + removed.len(), n);
    assert!(kept.iter().enumerate().all(|(i, t)| t.task_id == i as u64));
}

#[test]
fn select_only_manifest() {
    let env = common::Env::new();
    let tasks = corpus(&env, &["generation.operations=[\"SELECT\"]"]);
    let m: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(env.path("out/manifest.json")).unwrap()).unwrap();
    assert_eq!(m["total"], tasks.len());
    assert_eq!(m["counts"]["operation"]["SELECT"], tasks.len());
    assert_eq!(m["counts"]["operation"]["DELETE"], 0);
}

#[test]
fn state_checks_against_scratch_and_seed() {
    let env = common::Env::new();
    let tasks = corpus(&env, &[]);
    let task = tasks
        .iter()
        .find(|t| t.operation == Operation::Delete && t.tables == ["ticket"])
        .unwrap();

    let scratch = env.scratch_copy("applied.sqlite");
    let mut h = common::open(&scratch);
    assert!(apply_reference_mutation(task, &mut h).unwrap() >= 1);
    let v = evaluate_state(task, &mut h).unwrap();
    assert!(v.success, "{v:?}");

    let mut seed = common::open(&env.db);
    assert_eq!(
        evaluate_state(task, &mut seed).unwrap().reason,
        VerdictReason::PredicateFailed { index: 0 }
    );

    let dropped = env.scratch_copy("dropped.sqlite");
    rusqlite::Connection::open(&dropped)
        .unwrap()
        .execute_batch("ALTER TABLE ticket DROP COLUMN subject; ALTER TABLE ticket DROP COLUMN status")
        .unwrap();
    assert_eq!(
        evaluate_state(task, &mut common::open(&dropped)).unwrap().reason,
        VerdictReason::SqlError
    );
}

#[test]
fn query_answers_are_matched() {
    let env = common::Env::new();
    let tasks = corpus(&env, &[]);
    let mut h = common::open(&env.db);
    let count = tasks
        .iter()
        .find(|t| t.intent.starts_with("How many ticket records have status closed"))
        .unwrap();
    assert!(evaluate_query(count, "2", &mut h).unwrap().success);
    assert!(evaluate_query(count, " 2.0 ", &mut h).unwrap().success);
    assert_eq!(
        evaluate_query(count, "3", &mut h).unwrap().reason,
        VerdictReason::AnswerMismatch
    );
}
