mod common;

use std::collections::BTreeSet;

use entforge_core::discovery::{
    build_schema_graph, cache_key, discover_workflows, profile_schema, CacheOutcome, Confidence, DiscoveryError,
    RelationOrigin,
};
use entforge_core::provider::{Provider, RequestKind};

type Edge = (String, String, String, String);

fn declared_fks(path: &std::path::Path) -> BTreeSet<Edge> {
    let conn = rusqlite::Connection::open(path).unwrap();
    let mut out = BTreeSet::new();
    for t in ["account", "contact", "opportunity", "ticket", "note", "audit_log"] {
        let mut st = conn.prepare(&format!("PRAGMA foreign_key_list(\"{t}\")")).unwrap();
        let rows = st
            .query_map([], |r| {
                Ok((r.get::<_, String>(2)?, r.get::<_, String>(3)?, r.get::<_, String>(4)?))
            })
            .unwrap();
        for r in rows {
            let (to, from_col, to_col) = r.unwrap();
            out.insert((t.to_string(), from_col, to, to_col));
        }
    }
    out
}

fn joinable_rows(path: &std::path::Path, e: &Edge) -> i64 {
    let conn = rusqlite::Connection::open(path).unwrap();
    conn.query_row(
        &format!(
            "SELECT COUNT(*) FROM {0} JOIN {2} ON {0}.{1} = {2}.{3}",
            e.0, e.1, e.2, e.3
        ),
        [],
        |r| r.get(0),
    )
    .unwrap()
}

fn edge(a: &str, b: &str, c: &str, d: &str) -> Edge {
    (a.into(), b.into(), c.into(), d.into())
}

#[test]
fn profiles_skip_empty_tables() {
    let env = common::Env::new();
    let cfg = env.config(&[]);
    let mut h = common::open(&env.db);
    let p = Provider::from_config(&cfg);
    let profiles = profile_schema(&mut h, &cfg, &p).unwrap();
    let names: Vec<&str> = profiles.iter().map(|p| p.table.as_str()).collect();
    assert_eq!(names, ["account", "contact", "note", "opportunity", "ticket"]);
    let account = &profiles[0];
    assert_eq!(account.key_fields, ["id", "name"]);
    assert!(account.business_purpose.contains("account"));
}

#[test]
fn unreachable_provider_names_the_table() {
    let env = common::Env::new();
    let cfg = env.config(&[
        "provider.kind=http",
        "provider.endpoint=http://127.0.0.1:9/v1",
        "provider.timeout_ms=200",
    ]);
    let mut h = common::open(&env.db);
    let p = Provider::from_config(&cfg);
    match profile_schema(&mut h, &cfg, &p) {
        Err(DiscoveryError::Provider { table, .. }) => assert_eq!(table, "account"),
        other => panic!("expected provider error, got {other:?}"),
    }
}

#[test]
fn relations_follow_ddl_and_probes() {
    let env = common::Env::new();
    let cfg = env.config(&[]);
    let mut h = common::open(&env.db);
    let p = Provider::from_config(&cfg);
    let (graph, rejected) = build_schema_graph(&mut h, &cfg, &p).unwrap();

    let explicit_oracle = declared_fks(&env.db);
    assert_eq!(explicit_oracle.len(), 3);
    let explicit: BTreeSet<Edge> = graph
        .relations
        .iter()
        .filter(|r| r.origin == RelationOrigin::ExplicitFk)
        .map(|r| edge(&r.from_table, &r.from_column, &r.to_table, &r.to_column))
        .collect();
    assert_eq!(explicit, explicit_oracle);

    let planted = edge("note", "parent_id", "contact", "id");
    assert!(joinable_rows(&env.db, &planted) >= 1);
    let kept = graph
        .relations
        .iter()
        .find(|r| edge(&r.from_table, &r.from_column, &r.to_table, &r.to_column) == planted)
        .expect("planted relation retained");
    assert_eq!(kept.origin, RelationOrigin::Inferred);
    assert_eq!(kept.confidence, Confidence::High);

    let decoy = edge("note", "parent_id", "account", "id");
    assert_eq!(joinable_rows(&env.db, &decoy), 0);
    assert!(graph
        .relations
        .iter()
        .all(|r| edge(&r.from_table, &r.from_column, &r.to_table, &r.to_column) != decoy));
    let rej = rejected
        .iter()
        .find(|c| {
            edge(
                &c.relation.from_table,
                &c.relation.from_column,
                &c.relation.to_table,
                &c.relation.to_column,
            ) == decoy
        })
        .expect("decoy reported");
    assert_eq!(rej.relation.probe_rows, 0);
    assert_eq!(rej.relation.confidence, Confidence::Rejected);
    assert_eq!(graph.relations.len(), 4);
}

#[test]
fn one_workflow_and_warm_cache() {
    let env = common::Env::new();
    let cfg = env.config(&[]);
    let mut h = common::open(&env.db);
    let p = Provider::from_config(&cfg);
    let (graph, _) = build_schema_graph(&mut h, &cfg, &p).unwrap();

    let cold = discover_workflows(&graph, &p, &cfg.cache_dir, cfg.discovery.max_core_tables).unwrap();
    assert_eq!(cold.workflows.len(), 1);
    let wf = &cold.workflows[0];
    assert_eq!(wf.core_tables, ["account", "contact", "note", "opportunity", "ticket"]);
    assert_eq!(wf.cache_key, cache_key(&wf.core_tables));
    assert_eq!(cold.cache, [CacheOutcome::Miss]);

    let calls = p.calls_of(RequestKind::DescribeWorkflow);
    let warm = discover_workflows(&graph, &p, &cfg.cache_dir, cfg.discovery.max_core_tables).unwrap();
    assert_eq!(p.calls_of(RequestKind::DescribeWorkflow) - calls, 0);
    assert_eq!(warm.workflows, cold.workflows);
    assert_eq!(warm.cache, [CacheOutcome::Hit]);
}

#[test]
fn excluding_everything_yields_no_workflows() {
    let env = common::Env::new();
    let cfg = env.config(&["site.exclude=[\"*\"]"]);
    let mut h = common::open(&env.db);
    let p = Provider::from_config(&cfg);
    assert!(profile_schema(&mut h, &cfg, &p).unwrap().is_empty());
    let (graph, _) = build_schema_graph(&mut h, &cfg, &p).unwrap();
    let set = discover_workflows(&graph, &p, &cfg.cache_dir, 8).unwrap();
    assert!(set.workflows.is_empty());
}

#[test]
fn split_when_core_table_cap_is_small() {
    let env = common::Env::new();
    let cfg = env.config(&[]);
    let mut h = common::open(&env.db);
    let p = Provider::from_config(&cfg);
    let (graph, _) = build_schema_graph(&mut h, &cfg, &p).unwrap();
    let set = discover_workflows(&graph, &p, &cfg.cache_dir, 2).unwrap();
    assert!(set.workflows.iter().all(|w| w.core_tables.len() <= 2));
    let covered: BTreeSet<&String> = set.workflows.iter().flat_map(|w| &w.core_tables).collect();
    assert_eq!(covered.len(), 5);
}
