//! Schema profiling, relation inference and workflow abstraction.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use md5::{Digest, Md5};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::RunConfig;
use crate::db::{AdapterHandle, ColumnMeta, DbError};
use crate::diagnostics::Diagnostic;
use crate::provider::{Provider, ProviderError, TableDescriptor};

/// Rows shown to the provider per table during purpose inference.
const SAMPLE_ROWS: usize = 3;

#[derive(Debug, Error)]
pub enum DiscoveryError {
    #[error(transparent)]
    Db(#[from] DbError),
    #[error("table {table}: {source}")]
    Provider { table: String, source: ProviderError },
    #[error("workflow description for [{tables}]: {source}")]
    Describe { tables: String, source: ProviderError },
    #[error("relation inference: {0}")]
    Relations(ProviderError),
    #[error("cache directory {path}: {message}")]
    Cache { path: PathBuf, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableProfile {
    pub table: String,
    pub columns: Vec<ColumnMeta>,
    pub row_count: u64,
    pub business_purpose: String,
    pub key_fields: Vec<String>,
}

impl TableProfile {
    pub fn column(&self, name: &str) -> Option<&ColumnMeta> {
        self.columns.iter().find(|c| c.name == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelationOrigin {
    ExplicitFk,
    Inferred,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Confidence {
    High,
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Relation {
    pub from_table: String,
    pub from_column: String,
    pub to_table: String,
    pub to_column: String,
    pub origin: RelationOrigin,
    pub confidence: Confidence,
    pub probe_rows: u64,
}

impl Relation {
    pub fn key(&self) -> (&str, &str, &str, &str) {
        (&self.from_table, &self.from_column, &self.to_table, &self.to_column)
    }

    pub fn is_self_reference(&self) -> bool {
        self.from_table == self.to_table
    }

    pub fn probe_sql(&self, h: &AdapterHandle) -> String {
        let q = |s: &str| h.quote_ident(s);
        format!(
            "SELECT 1 FROM {a} JOIN {b} ON {a}.{c1} = {b}.{c2} LIMIT 1",
            a = q(&self.from_table),
            b = q(&self.to_table),
            c1 = q(&self.from_column),
            c2 = q(&self.to_column)
        )
    }
}

/// A candidate that did not make it into the graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectedCandidate {
    pub relation: Relation,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SchemaGraph {
    pub profiles: BTreeMap<String, TableProfile>,
    /// High-confidence relations only, in key order.
    pub relations: Vec<Relation>,
}

impl SchemaGraph {
    /// Builds a graph, keeping high-confidence relations between profiled
    /// tables and dropping duplicates (explicit entries win).
    pub fn new(profiles: Vec<TableProfile>, relations: Vec<Relation>) -> Self {
        let profiles: BTreeMap<String, TableProfile> = profiles.into_iter().map(|p| (p.table.clone(), p)).collect();
        let mut rels: Vec<Relation> = relations
            .into_iter()
            .filter(|r| r.confidence == Confidence::High)
            .filter(|r| profiles.contains_key(&r.from_table) && profiles.contains_key(&r.to_table))
            .collect();
        rels.sort_by(|a, b| a.key().cmp(&b.key()).then(a.origin.cmp(&b.origin)));
        rels.dedup_by(|b, a| a.key() == b.key());
        Self {
            profiles,
            relations: rels,
        }
    }

    pub fn profiles_of(&self, tables: &[String]) -> Vec<TableProfile> {
        tables.iter().filter_map(|t| self.profiles.get(t).cloned()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Workflow {
    pub id: String,
    pub core_tables: Vec<String>,
    pub relations: Vec<Relation>,
    pub description: String,
    pub cache_key: String,
}

/// md5 over the lowercased, sorted, de-duplicated table names joined by `,`.
pub fn cache_key<S: AsRef<str>>(tables: &[S]) -> String {
    let names: BTreeSet<String> = tables.iter().map(|t| t.as_ref().to_lowercase()).collect();
    let joined = names.into_iter().collect::<Vec<_>>().join(",");
    hex::encode(Md5::digest(joined.as_bytes()))
}

pub fn workflow_id(cache_key: &str) -> String {
    format!("wf-{}", &cache_key[..10.min(cache_key.len())])
}

/// One profile per non-empty table passing the site's globs, by name.
pub fn profile_schema(
    h: &mut AdapterHandle,
    cfg: &RunConfig,
    p: &Provider,
) -> Result<Vec<TableProfile>, DiscoveryError> {
    let mut out = Vec::new();
    for (table, row_count) in h.list_nonempty_tables(&cfg.site.include, &cfg.site.exclude)? {
        let (columns, _) = h.describe_table(&table)?;
        let list = columns
            .iter()
            .map(|c| h.quote_ident(&c.name))
            .collect::<Vec<_>>()
            .join(", ");
        let sample = h.execute(
            &format!(
                "SELECT {list} FROM {} ORDER BY 1 LIMIT {SAMPLE_ROWS}",
                h.quote_ident(&table)
            ),
            &[],
        )?;
        let desc = TableDescriptor {
            table: table.clone(),
            columns: columns.clone(),
            sample_rows: sample.rows,
        };
        let purpose = p
            .infer_purpose(std::slice::from_ref(&desc))
            .map_err(|source| DiscoveryError::Provider {
                table: table.clone(),
                source,
            })?
            .remove(0);
        out.push(TableProfile {
            table,
            columns,
            row_count,
            business_purpose: purpose.business_purpose,
            key_fields: purpose.key_fields,
        });
    }
    Ok(out)
}

/// Explicit foreign keys plus provider candidates that survive a probe.
///
/// Returns the accepted relations and every rejected candidate with its
/// reason. A failing probe rejects its candidate; other adapter errors
/// abort.
pub fn infer_relations(
    profiles: &[TableProfile],
    h: &mut AdapterHandle,
    p: &Provider,
) -> Result<(Vec<Relation>, Vec<RejectedCandidate>), DiscoveryError> {
    let profiled: BTreeSet<&str> = profiles.iter().map(|p| p.table.as_str()).collect();
    let mut accepted: Vec<Relation> = Vec::new();
    let mut rejected = Vec::new();
    for prof in profiles {
        let (_, fks) = h.describe_table(&prof.table)?;
        for fk in fks {
            let rel = Relation {
                from_table: fk.from_table,
                from_column: fk.from_column,
                to_table: fk.to_table,
                to_column: fk.to_column,
                origin: RelationOrigin::ExplicitFk,
                confidence: Confidence::High,
                probe_rows: 0,
            };
            if !profiled.contains(rel.to_table.as_str()) {
                rejected.push(RejectedCandidate {
                    reason: format!("target table {} is empty or filtered out", rel.to_table),
                    relation: Relation {
                        confidence: Confidence::Rejected,
                        ..rel
                    },
                });
            } else if !accepted.iter().any(|a| a.key() == rel.key()) {
                accepted.push(rel);
            }
        }
    }
    let candidates = p.suggest_relations(profiles).map_err(DiscoveryError::Relations)?;
    for mut cand in candidates {
        if accepted.iter().any(|a| a.key() == cand.key()) {
            continue;
        }
        match h.execute(&cand.probe_sql(h), &[]) {
            Ok(out) => {
                cand.probe_rows = out.rows.len().min(1) as u64;
                if cand.probe_rows >= 1 {
                    cand.confidence = Confidence::High;
                    accepted.push(cand);
                } else {
                    rejected.push(RejectedCandidate {
                        relation: cand,
                        reason: "probe join returned no rows".into(),
                    });
                }
            }
            Err(e) if e.is_fatal() => return Err(e.into()),
            Err(e) => rejected.push(RejectedCandidate {
                relation: cand,
                reason: format!("probe failed: {e}"),
            }),
        }
    }
    accepted.sort_by(|a, b| a.key().cmp(&b.key()));
    Ok((accepted, rejected))
}

/// Profiles the schema and infers relations in one pass.
pub fn build_schema_graph(
    h: &mut AdapterHandle,
    cfg: &RunConfig,
    p: &Provider,
) -> Result<(SchemaGraph, Vec<RejectedCandidate>), DiscoveryError> {
    let profiles = profile_schema(h, cfg, p)?;
    if profiles.is_empty() {
        return Ok((SchemaGraph::default(), Vec::new()));
    }
    let (relations, rejected) = infer_relations(&profiles, h, p)?;
    Ok((SchemaGraph::new(profiles, relations), rejected))
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn find(&mut self, i: usize) -> usize {
        let parent = self.0[i];
        if parent == i {
            return i;
        }
        let root = self.find(parent);
        self.0[i] = root;
        root
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = (ra.min(rb), ra.max(rb));
            self.0[hi] = lo;
        }
    }
}

fn components(tables: &[&str], relations: &[&Relation]) -> Vec<Vec<String>> {
    let index: BTreeMap<&str, usize> = tables.iter().enumerate().map(|(i, t)| (*t, i)).collect();
    let mut uf = UnionFind((0..tables.len()).collect());
    for r in relations {
        if let (Some(&a), Some(&b)) = (index.get(r.from_table.as_str()), index.get(r.to_table.as_str())) {
            uf.union(a, b);
        }
    }
    let mut groups: BTreeMap<usize, Vec<String>> = BTreeMap::new();
    for (i, t) in tables.iter().enumerate() {
        groups.entry(uf.find(i)).or_default().push(t.to_string());
    }
    let mut out: Vec<Vec<String>> = groups.into_values().collect();
    for g in &mut out {
        g.sort();
    }
    out.sort();
    out
}

/// Groups tables into connected components, dropping the weakest relations
/// until no component exceeds `max_core_tables`.
pub fn group_tables(graph: &SchemaGraph, max_core_tables: usize) -> Vec<(Vec<String>, Vec<Relation>)> {
    let tables: Vec<&str> = graph.profiles.keys().map(String::as_str).collect();
    let mut kept: Vec<&Relation> = graph.relations.iter().collect();
    let max = max_core_tables.max(1);
    loop {
        let comps = components(&tables, &kept);
        let oversized: Vec<&Vec<String>> = comps.iter().filter(|c| c.len() > max).collect();
        if oversized.is_empty() {
            return comps
                .into_iter()
                .map(|c| {
                    let rels = kept
                        .iter()
                        .filter(|r| c.contains(&r.from_table) && c.contains(&r.to_table))
                        .map(|r| (*r).clone())
                        .collect();
                    (c, rels)
                })
                .collect();
        }
        // Weakest: inferred before explicit, lower probe support first, then
        // the lexically last key.
        let weakest = kept
            .iter()
            .enumerate()
            .filter(|(_, r)| {
                oversized
                    .iter()
                    .any(|c| c.contains(&r.from_table) && !r.is_self_reference())
            })
            .min_by(|(_, a), (_, b)| {
                let rank = |r: &Relation| (r.origin == RelationOrigin::ExplicitFk, r.probe_rows);
                rank(a).cmp(&rank(b)).then_with(|| b.key().cmp(&a.key()))
            })
            .map(|(i, _)| i);
        match weakest {
            Some(i) => {
                kept.remove(i);
            }
            None => unreachable!("an oversized component always has a cross-table relation"),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CacheEntry {
    cache_key: String,
    core_tables: Vec<String>,
    description: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CacheOutcome {
    Hit,
    Miss,
    Recomputed,
}

/// Workflows plus how each description was obtained.
#[derive(Debug, Clone, Default)]
pub struct WorkflowSet {
    pub workflows: Vec<Workflow>,
    pub cache: Vec<CacheOutcome>,
    pub diagnostics: Vec<Diagnostic>,
}

fn read_cache(path: &Path, key: &str, tables: &[String]) -> Result<Option<String>, String> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(e.to_string()),
    };
    let entry: CacheEntry = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    if entry.cache_key != key || entry.core_tables != tables || entry.description.trim().is_empty() {
        return Err("entry does not match its key".into());
    }
    Ok(Some(entry.description))
}

fn write_cache(dir: &Path, key: &str, tables: &[String], description: &str) -> std::io::Result<()> {
    let entry = CacheEntry {
        cache_key: key.to_string(),
        core_tables: tables.to_vec(),
        description: description.to_string(),
    };
    let body = serde_json::to_vec_pretty(&entry)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(&body)?;
    tmp.as_file().sync_all()?;
    tmp.persist(dir.join(key)).map_err(|e| e.error)?;
    Ok(())
}

/// One workflow per connected component (isolated tables included), with
/// descriptions memoized under `cache_dir/<cache_key>`.
pub fn discover_workflows(
    graph: &SchemaGraph,
    p: &Provider,
    cache_dir: &Path,
    max_core_tables: usize,
) -> Result<WorkflowSet, DiscoveryError> {
    let mut set = WorkflowSet::default();
    if graph.profiles.is_empty() {
        return Ok(set);
    }
    fs::create_dir_all(cache_dir).map_err(|e| DiscoveryError::Cache {
        path: cache_dir.to_path_buf(),
        message: e.to_string(),
    })?;
    for (core_tables, relations) in group_tables(graph, max_core_tables) {
        let key = cache_key(&core_tables);
        let path = cache_dir.join(&key);
        let cached = match read_cache(&path, &key, &core_tables) {
            Ok(c) => c,
            Err(e) => {
                set.diagnostics.push(Diagnostic::warning(
                    "discovery",
                    "cache_corrupt",
                    format!("{}: {e}; recomputing", path.display()),
                ));
                None
            }
        };
        let outcome;
        let description = match cached {
            Some(d) => {
                outcome = CacheOutcome::Hit;
                d
            }
            None => {
                outcome = if path.exists() {
                    CacheOutcome::Recomputed
                } else {
                    CacheOutcome::Miss
                };
                let profiles: Vec<&TableProfile> = core_tables.iter().filter_map(|t| graph.profiles.get(t)).collect();
                let d = p
                    .describe_workflow(&core_tables, &relations, &profiles)
                    .map_err(|source| DiscoveryError::Describe {
                        tables: core_tables.join(","),
                        source,
                    })?;
                write_cache(cache_dir, &key, &core_tables, &d).map_err(|e| DiscoveryError::Cache {
                    path: path.clone(),
                    message: e.to_string(),
                })?;
                d
            }
        };
        set.cache.push(outcome);
        set.workflows.push(Workflow {
            id: workflow_id(&key),
            core_tables,
            relations,
            description,
            cache_key: key,
        });
    }
    Ok(set)
}
