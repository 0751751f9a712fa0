//! Deterministic rule-based provider.
//!
//! Rules:
//! - purpose: mentions the table name; key fields are the primary key plus
//!   the first non-key text column.
//! - relations: a column `x_id` (or `x`) points at the table named `x`
//!   (case- and plural-insensitive) or at any table listed under the alias
//!   map entry for `x`, provided that table has a single primary key of a
//!   compatible type.
//! - templates: a fixed pattern library, instantiated per table and per
//!   relation of the workflow.
//! - variants: integers continue past the sample maximum, text gains a
//!   `-vN` suffix.

use std::collections::{BTreeMap, BTreeSet};

use serde::Deserialize;
use serde_json::json;

use super::{ProviderBackend, ProviderError, ProviderRequest, ProviderResponse, RelationCandidate, RequestKind};
use crate::db::{ColumnMeta, NormalizedType};
use crate::discovery::{Relation, TableProfile, Workflow};
use crate::taskgen::{CheckDraft, JoinEdge, Operation, PlaceholderSource, PlaceholderSpec, Quoting, TemplateDraft};
use crate::value::{Blob, Value};

pub struct MockBackend {
    aliases: BTreeMap<String, Vec<String>>,
}

impl MockBackend {
    pub fn new(aliases: BTreeMap<String, Vec<String>>) -> Self {
        let aliases = aliases
            .into_iter()
            .map(|(k, v)| {
                (
                    k.to_ascii_lowercase(),
                    v.into_iter().map(|t| t.to_ascii_lowercase()).collect(),
                )
            })
            .collect();
        Self { aliases }
    }
}

fn parse<T: for<'de> Deserialize<'de>>(v: &serde_json::Value) -> Result<T, ProviderError> {
    serde_json::from_value(v.clone()).map_err(|e| ProviderError::InvalidRequest(e.to_string()))
}

impl ProviderBackend for MockBackend {
    fn id(&self) -> String {
        "mock".into()
    }

    fn complete(&self, req: &ProviderRequest) -> Result<ProviderResponse, ProviderError> {
        let p = &req.payload;
        let payload = match req.kind {
            RequestKind::InferPurpose => {
                #[derive(Deserialize)]
                struct Req {
                    tables: Vec<super::TableDescriptor>,
                }
                let r: Req = parse(p)?;
                let results: Vec<_> = r.tables.iter().map(|t| infer_purpose(&t.table, &t.columns)).collect();
                json!({ "results": results })
            }
            RequestKind::SuggestRelations => {
                #[derive(Deserialize)]
                struct Req {
                    profiles: Vec<TableProfile>,
                }
                let r: Req = parse(p)?;
                json!({ "candidates": self.suggest(&r.profiles) })
            }
            RequestKind::DescribeWorkflow => {
                #[derive(Deserialize)]
                struct Req {
                    core_tables: Vec<String>,
                    relations: Vec<Relation>,
                    profiles: Vec<TableProfile>,
                }
                let r: Req = parse(p)?;
                json!({ "description": describe(&r.core_tables, &r.relations, &r.profiles) })
            }
            RequestKind::DraftTemplates => {
                #[derive(Deserialize)]
                struct Req {
                    workflow: Workflow,
                    profiles: Vec<TableProfile>,
                    languages: Vec<String>,
                    operations: Vec<Operation>,
                    #[serde(default)]
                    allow_self_join: bool,
                }
                let r: Req = parse(p)?;
                let drafts = draft_templates(&r.workflow, &r.profiles, &r.languages, &r.operations, r.allow_self_join);
                json!({ "drafts": drafts })
            }
            RequestKind::VariantValues => {
                #[derive(Deserialize)]
                struct Req {
                    column: ColumnMeta,
                    samples: Vec<Value>,
                    n: usize,
                }
                let r: Req = parse(p)?;
                json!({ "values": variants(&r.column, &r.samples, r.n) })
            }
        };
        Ok(ProviderResponse {
            kind: req.kind,
            payload,
            provider_id: self.id(),
        })
    }
}

pub(crate) fn label_column(columns: &[ColumnMeta]) -> Option<&ColumnMeta> {
    columns
        .iter()
        .find(|c| !c.is_primary_key && c.normalized_type == NormalizedType::Text)
}

fn single_pk(columns: &[ColumnMeta]) -> Option<&ColumnMeta> {
    let mut pks = columns.iter().filter(|c| c.is_primary_key);
    match (pks.next(), pks.next()) {
        (Some(pk), None) => Some(pk),
        _ => None,
    }
}

fn infer_purpose(table: &str, columns: &[ColumnMeta]) -> super::PurposeInference {
    let mut key_fields: Vec<String> = columns
        .iter()
        .filter(|c| c.is_primary_key)
        .map(|c| c.name.clone())
        .collect();
    if let Some(l) = label_column(columns) {
        key_fields.push(l.name.clone());
    }
    super::PurposeInference {
        business_purpose: format!(
            "Maintains {table} records ({} columns) identified by {}.",
            columns.len(),
            if key_fields.is_empty() {
                "row position".to_string()
            } else {
                key_fields.join(", ")
            }
        ),
        key_fields,
    }
}

fn names_match(table: &str, stem: &str) -> bool {
    let (t, s) = (table.to_ascii_lowercase(), stem.to_ascii_lowercase());
    t == s || t == format!("{s}s") || s == format!("{t}s") || t == format!("{s}es") || s == format!("{t}es")
}

fn types_compatible(a: NormalizedType, b: NormalizedType) -> bool {
    a == b || (a.is_numeric() && b.is_numeric())
}

impl MockBackend {
    fn suggest(&self, profiles: &[TableProfile]) -> Vec<RelationCandidate> {
        let mut out = BTreeSet::new();
        for a in profiles {
            for c in a.columns.iter().filter(|c| !c.is_primary_key) {
                let lower = c.name.to_ascii_lowercase();
                let stem = lower.strip_suffix("_id").unwrap_or(&lower);
                let mut targets = vec![stem.to_string()];
                if let Some(extra) = self.aliases.get(stem) {
                    targets.extend(extra.iter().cloned());
                }
                for b in profiles.iter().filter(|b| b.table != a.table) {
                    if !targets.iter().any(|t| names_match(&b.table, t)) {
                        continue;
                    }
                    let Some(pk) = single_pk(&b.columns) else { continue };
                    if types_compatible(c.normalized_type, pk.normalized_type) {
                        out.insert((a.table.clone(), c.name.clone(), b.table.clone(), pk.name.clone()));
                    }
                }
            }
        }
        out.into_iter()
            .map(|(from_table, from_column, to_table, to_column)| RelationCandidate {
                from_table,
                from_column,
                to_table,
                to_column,
            })
            .collect()
    }
}

fn describe(core_tables: &[String], relations: &[Relation], profiles: &[TableProfile]) -> String {
    let mut s = format!("Business workflow over {}", core_tables.join(", "));
    if !relations.is_empty() {
        let links: Vec<String> = relations
            .iter()
            .map(|r| format!("{}.{} -> {}.{}", r.from_table, r.from_column, r.to_table, r.to_column))
            .collect();
        s.push_str(&format!(" linked by {}", links.join("; ")));
    }
    let purposes: Vec<&str> = profiles.iter().map(|p| p.business_purpose.as_str()).collect();
    if !purposes.is_empty() {
        s.push_str(". ");
        s.push_str(&purposes.join(" "));
    }
    s
}

fn variants(column: &ColumnMeta, samples: &[Value], n: usize) -> Vec<Value> {
    match column.normalized_type {
        NormalizedType::Integer | NormalizedType::Boolean => {
            let max = samples.iter().filter_map(Value::as_i64).max().unwrap_or(0);
            (1..=n as i64).map(|k| Value::Integer(max + k)).collect()
        }
        NormalizedType::Real => {
            let max = samples.iter().filter_map(Value::as_f64).fold(0.0f64, f64::max);
            (1..=n).map(|k| Value::Real(max.floor() + k as f64)).collect()
        }
        NormalizedType::Blob => {
            let base = samples
                .iter()
                .find_map(|v| match v {
                    Value::Blob(b) => Some(b.blob.clone()),
                    _ => None,
                })
                .unwrap_or_default();
            (1..=n)
                .map(|k| {
                    let mut b = base.clone();
                    b.extend_from_slice(format!("-v{k}").as_bytes());
                    Value::Blob(Blob { blob: b })
                })
                .collect()
        }
        _ => {
            let base = samples
                .first()
                .map(|v| v.to_string())
                .unwrap_or_else(|| column.name.clone());
            let mut out = Vec::with_capacity(n);
            let mut k = 1;
            while out.len() < n {
                let v = Value::Text(format!("{base}-v{k}"));
                if !samples.contains(&v) {
                    out.push(v);
                }
                k += 1;
            }
            out
        }
    }
}

// ---------------------------------------------------------------------------
// Pattern library
// ---------------------------------------------------------------------------

fn ph_name(column: &str) -> String {
    let mut s: String = column
        .to_ascii_lowercase()
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
        .collect();
    if s.is_empty() || s.starts_with(|c: char| c.is_ascii_digit()) {
        s.insert(0, '_');
    }
    s
}

/// Phrase naming a record by its label, e.g. "account named {{name}}".
fn named_en(table: &str, label: &str, ph: &str) -> String {
    if label.eq_ignore_ascii_case("name") {
        format!("{table} named {{{{{ph}}}}}")
    } else {
        format!("{table} whose {label} is {{{{{ph}}}}}")
    }
}

fn named_zh(table: &str, label: &str, ph: &str) -> String {
    if label.eq_ignore_ascii_case("name") {
        format!("名为{{{{{ph}}}}}的{table}")
    } else {
        format!("{label}为{{{{{ph}}}}}的{table}")
    }
}

fn column_value(table: &str, column: &str, via: Option<&Relation>) -> PlaceholderSource {
    PlaceholderSource::ColumnValue {
        table: table.to_string(),
        column: column.to_string(),
        via: via.map(|r| JoinEdge {
            from_table: r.from_table.clone(),
            from_column: r.from_column.clone(),
            to_table: r.to_table.clone(),
            to_column: r.to_column.clone(),
        }),
    }
}

fn value_ph(name: &str, source: PlaceholderSource) -> PlaceholderSpec {
    PlaceholderSpec {
        name: name.to_string(),
        source,
        quoting: Quoting::AsValueParameter,
    }
}

struct View<'a> {
    p: &'a TableProfile,
    pk: Option<&'a ColumnMeta>,
    label: Option<&'a ColumnMeta>,
    fk_cols: BTreeSet<&'a str>,
}

impl<'a> View<'a> {
    fn new(p: &'a TableProfile, relations: &'a [Relation]) -> Self {
        Self {
            p,
            pk: single_pk(&p.columns),
            label: label_column(&p.columns),
            fk_cols: relations
                .iter()
                .filter(|r| r.from_table == p.table)
                .map(|r| r.from_column.as_str())
                .collect(),
        }
    }

    fn name(&self) -> &str {
        &self.p.table
    }

    /// Non-key, non-label, non-reference columns.
    fn attributes(&self) -> impl Iterator<Item = &'a ColumnMeta> + '_ {
        let label = self.label.map(|l| l.name.as_str());
        self.p.columns.iter().filter(move |c| {
            !c.is_primary_key && Some(c.name.as_str()) != label && !self.fk_cols.contains(c.name.as_str())
        })
    }

    fn category(&self) -> Option<&'a ColumnMeta> {
        self.attributes().find(|c| c.normalized_type == NormalizedType::Text)
    }

    fn measure(&self) -> Option<&'a ColumnMeta> {
        self.attributes().find(|c| c.normalized_type.is_numeric())
    }

    fn updatable(&self) -> Option<&'a ColumnMeta> {
        self.attributes()
            .find(|c| c.normalized_type == NormalizedType::Text || c.normalized_type.is_numeric())
    }

    /// NOT NULL columns an INSERT must supply besides the label and `skip`.
    fn required_extras(&self, skip: Option<&str>) -> Vec<&'a ColumnMeta> {
        let label = self.label.map(|l| l.name.as_str());
        self.p
            .columns
            .iter()
            .filter(|c| {
                !c.is_primary_key && !c.nullable && Some(c.name.as_str()) != label && Some(c.name.as_str()) != skip
            })
            .collect()
    }
}

struct Builder<'l> {
    languages: &'l [String],
}

impl Builder<'_> {
    #[allow(clippy::too_many_arguments)]
    fn draft(
        &self,
        pattern: &str,
        operation: Operation,
        tables: &[&str],
        en: String,
        zh: String,
        sql: String,
        placeholders: Vec<PlaceholderSpec>,
        state_checks: Vec<CheckDraft>,
    ) -> TemplateDraft {
        let mut intents = BTreeMap::new();
        for lang in self.languages {
            let text = match lang.as_str() {
                "en" => en.clone(),
                "zh" => zh.clone(),
                other => format!("[{other}] {en}"),
            };
            intents.insert(lang.clone(), text);
        }
        let mut tables: Vec<String> = tables.iter().map(|t| t.to_string()).collect();
        tables.sort();
        tables.dedup();
        TemplateDraft {
            pattern: pattern.to_string(),
            operation,
            tables,
            intents,
            sql,
            placeholders,
            state_checks,
        }
    }
}

fn check(sql: String, expected: Option<u64>) -> CheckDraft {
    CheckDraft { sql, expected }
}

/// Distinct placeholder names for a child/parent label pair.
fn pair_names(a: &str, la: &str, b: &str, lb: &str) -> (String, String) {
    let (x, y) = (ph_name(la), ph_name(lb));
    if x == y {
        (ph_name(&format!("{a}_{la}")), ph_name(&format!("{b}_{lb}")))
    } else {
        (x, y)
    }
}

fn select_single(v: &View<'_>, b: &Builder<'_>, out: &mut Vec<TemplateDraft>) {
    let t = v.name();
    let Some(label) = v.label else { return };
    let l = &label.name;
    let lp = ph_name(l);
    let others: Vec<Value> = v.attributes().map(|c| Value::Text(c.name.clone())).collect();
    if !others.is_empty() {
        out.push(b.draft(
            "point_lookup",
            Operation::Select,
            &[t],
            format!("List the {{{{col}}}} of the {}", named_en(t, l, &lp)),
            format!("列出{}的{{{{col}}}}", named_zh(t, l, &lp)),
            format!("SELECT {{{{col}}}} FROM {t} WHERE {l} = {{{{{lp}}}}}"),
            vec![
                PlaceholderSpec {
                    name: "col".into(),
                    source: PlaceholderSource::LiteralChoice { values: others },
                    quoting: Quoting::AsIdentifier,
                },
                value_ph(&lp, column_value(t, l, None)),
            ],
            vec![],
        ));
    }
    if let Some(cat) = v.category() {
        let c = &cat.name;
        let cp = ph_name(c);
        out.push(b.draft(
            "filter_projection",
            Operation::Select,
            &[t],
            format!("Show the {l} of every {t} whose {c} is {{{{{cp}}}}}"),
            format!("显示{c}为{{{{{cp}}}}}的所有{t}的{l}"),
            format!("SELECT {l} FROM {t} WHERE {c} = {{{{{cp}}}}}"),
            vec![value_ph(&cp, column_value(t, c, None))],
            vec![],
        ));
        out.push(b.draft(
            "count",
            Operation::Select,
            &[t],
            format!("How many {t} records have {c} {{{{{cp}}}}}?"),
            format!("{c}为{{{{{cp}}}}}的{t}记录有多少条？"),
            format!("SELECT COUNT(*) FROM {t} WHERE {c} = {{{{{cp}}}}}"),
            vec![value_ph(&cp, column_value(t, c, None))],
            vec![],
        ));
        if let Some(m) = v.measure() {
            let n = &m.name;
            out.push(b.draft(
                "aggregate",
                Operation::Select,
                &[t],
                format!("What is the average {n} of {t} records whose {c} is {{{{{cp}}}}}?"),
                format!("{c}为{{{{{cp}}}}}的{t}记录的平均{n}是多少？"),
                format!("SELECT AVG({n}) FROM {t} WHERE {c} = {{{{{cp}}}}}"),
                vec![value_ph(&cp, column_value(t, c, None))],
                vec![],
            ));
        }
    }
}

fn select_joined(r: &Relation, a: &View<'_>, bv: &View<'_>, b: &Builder<'_>, out: &mut Vec<TemplateDraft>) {
    let (Some(la), Some(lb)) = (a.label, bv.label) else {
        return;
    };
    let (at, bt) = (a.name(), bv.name());
    // Self-references need distinct aliases.
    let (ax, bx, from) = if at == bt {
        (
            "child".to_string(),
            "parent".to_string(),
            format!("{at} child JOIN {bt} parent"),
        )
    } else {
        (at.to_string(), bt.to_string(), format!("{at} JOIN {bt}"))
    };
    let on = format!("{ax}.{} = {bx}.{}", r.from_column, r.to_column);
    let (lap, lbp) = (ph_name(&la.name), ph_name(&lb.name));
    out.push(b.draft(
        "join_lookup",
        Operation::Select,
        &[at, bt],
        format!("Which {bt} does the {} belong to?", named_en(at, &la.name, &lap)),
        format!("{}属于哪个{bt}？", named_zh(at, &la.name, &lap)),
        format!(
            "SELECT {bx}.{} FROM {from} ON {on} WHERE {ax}.{} = {{{{{lap}}}}}",
            lb.name, la.name
        ),
        vec![value_ph(&lap, column_value(at, &la.name, Some(r)))],
        vec![],
    ));
    out.push(b.draft(
        "join_filter",
        Operation::Select,
        &[at, bt],
        format!("List the {at} records linked to the {}", named_en(bt, &lb.name, &lbp)),
        format!("列出与{}关联的{at}记录", named_zh(bt, &lb.name, &lbp)),
        format!(
            "SELECT {ax}.{} FROM {from} ON {on} WHERE {bx}.{} = {{{{{lbp}}}}}",
            la.name, lb.name
        ),
        vec![value_ph(&lbp, column_value(bt, &lb.name, Some(r)))],
        vec![],
    ));
    if let Some(m) = a.measure() {
        out.push(b.draft(
            "join_aggregate",
            Operation::Select,
            &[at, bt],
            format!(
                "What is the total {} of {at} records for the {}?",
                m.name,
                named_en(bt, &lb.name, &lbp)
            ),
            format!("{}的{at}记录的{}总和是多少？", named_zh(bt, &lb.name, &lbp), m.name),
            format!(
                "SELECT SUM({ax}.{}) FROM {from} ON {on} WHERE {bx}.{} = {{{{{lbp}}}}}",
                m.name, lb.name
            ),
            vec![value_ph(&lbp, column_value(bt, &lb.name, Some(r)))],
            vec![],
        ));
    }
}

fn extras_clause(
    extras: &[&ColumnMeta],
    table: &str,
    taken: &[&str],
) -> (Vec<String>, Vec<String>, Vec<String>, Vec<PlaceholderSpec>) {
    let mut cols = Vec::new();
    let mut vals = Vec::new();
    let mut phrases = Vec::new();
    let mut specs = Vec::new();
    for c in extras {
        let mut p = ph_name(&c.name);
        if taken.contains(&p.as_str()) {
            p = ph_name(&format!("{table}_{}", c.name));
        }
        cols.push(c.name.clone());
        vals.push(format!("{{{{{p}}}}}"));
        phrases.push(format!("{} {{{{{p}}}}}", c.name));
        specs.push(value_ph(&p, column_value(table, &c.name, None)));
    }
    (cols, vals, phrases, specs)
}

fn zh_extras(phrases: &[String]) -> String {
    phrases
        .iter()
        .map(|p| {
            let (col, ph) = p.split_once(' ').unwrap_or((p, ""));
            format!("，{col}为{ph}")
        })
        .collect()
}

fn mutations_single(
    v: &View<'_>,
    ops: &[Operation],
    b: &Builder<'_>,
    out: &mut BTreeMap<Operation, Vec<TemplateDraft>>,
) {
    let t = v.name();
    let Some(label) = v.label else { return };
    let l = &label.name;
    let lp = ph_name(l);
    if ops.contains(&Operation::Insert) && v.pk.is_some() {
        let extras = v.required_extras(None);
        let (cols, vals, phrases, mut specs) = extras_clause(&extras, t, &[lp.as_str()]);
        let mut en = format!("Create a new {}", named_en(t, l, &lp));
        if !phrases.is_empty() {
            en.push_str(&format!(" with {}", phrases.join(" and ")));
        }
        let zh = format!("新建一个{}{}", named_zh(t, l, &lp), zh_extras(&phrases));
        let mut all_cols = vec![l.clone()];
        all_cols.extend(cols);
        let mut all_vals = vec![format!("{{{{{lp}}}}}")];
        all_vals.extend(vals);
        specs.insert(
            0,
            value_ph(
                &lp,
                PlaceholderSource::GeneratedVariant {
                    table: t.into(),
                    column: l.clone(),
                },
            ),
        );
        out.entry(Operation::Insert).or_default().push(b.draft(
            "insert_record",
            Operation::Insert,
            &[t],
            en,
            zh,
            format!(
                "INSERT INTO {t} ({}) VALUES ({})",
                all_cols.join(", "),
                all_vals.join(", ")
            ),
            specs,
            vec![check(
                format!("SELECT COUNT(*) FROM {t} WHERE {l} = {{{{{lp}}}}}"),
                Some(1),
            )],
        ));
    }
    if ops.contains(&Operation::Update) {
        if let Some(x) = v.updatable() {
            let xn = &x.name;
            let np = ph_name(&format!("new_{xn}"));
            out.entry(Operation::Update).or_default().push(b.draft(
                "update_field",
                Operation::Update,
                &[t],
                format!("Change the {xn} of the {} to {{{{{np}}}}}", named_en(t, l, &lp)),
                format!("将{}的{xn}修改为{{{{{np}}}}}", named_zh(t, l, &lp)),
                format!("UPDATE {t} SET {xn} = {{{{{np}}}}} WHERE {l} = {{{{{lp}}}}}"),
                vec![
                    value_ph(&np, PlaceholderSource::GeneratedVariant { table: t.into(), column: xn.clone() }),
                    value_ph(&lp, column_value(t, l, None)),
                ],
                vec![
                    check(format!("SELECT COUNT(*) FROM {t} WHERE {l} = {{{{{lp}}}}} AND {xn} = {{{{{np}}}}}"), None),
                    check(
                        format!("SELECT COUNT(*) FROM {t} WHERE {l} = {{{{{lp}}}}} AND ({xn} IS NULL OR {xn} <> {{{{{np}}}}})"),
                        Some(0),
                    ),
                ],
            ));
        }
    }
    if ops.contains(&Operation::Delete) {
        out.entry(Operation::Delete).or_default().push(b.draft(
            "delete_record",
            Operation::Delete,
            &[t],
            format!("Delete the {}", named_en(t, l, &lp)),
            format!("删除{}", named_zh(t, l, &lp)),
            format!("DELETE FROM {t} WHERE {l} = {{{{{lp}}}}}"),
            vec![value_ph(&lp, column_value(t, l, None))],
            vec![check(
                format!("SELECT COUNT(*) FROM {t} WHERE {l} = {{{{{lp}}}}}"),
                Some(0),
            )],
        ));
        if let Some(cat) = v.category() {
            let c = &cat.name;
            let cp = ph_name(c);
            out.entry(Operation::Delete).or_default().push(b.draft(
                "delete_by_category",
                Operation::Delete,
                &[t],
                format!("Delete every {t} whose {c} is {{{{{cp}}}}}"),
                format!("删除所有{c}为{{{{{cp}}}}}的{t}"),
                format!("DELETE FROM {t} WHERE {c} = {{{{{cp}}}}}"),
                vec![value_ph(&cp, column_value(t, c, None))],
                vec![check(
                    format!("SELECT COUNT(*) FROM {t} WHERE {c} = {{{{{cp}}}}}"),
                    Some(0),
                )],
            ));
        }
    }
}

fn mutations_joined(
    r: &Relation,
    a: &View<'_>,
    bv: &View<'_>,
    ops: &[Operation],
    b: &Builder<'_>,
    out: &mut BTreeMap<Operation, Vec<TemplateDraft>>,
) {
    let (Some(la), Some(lb)) = (a.label, bv.label) else {
        return;
    };
    let (at, bt) = (a.name(), bv.name());
    if at == bt {
        return;
    }
    let (lap, lbp) = pair_names(at, &la.name, bt, &lb.name);
    let parent = format!(
        "(SELECT {bt}.{} FROM {bt} WHERE {bt}.{} = {{{{{lbp}}}}} LIMIT 1)",
        r.to_column, lb.name
    );
    if ops.contains(&Operation::Insert) && a.pk.is_some() {
        let extras = a.required_extras(Some(&r.from_column));
        let (cols, vals, phrases, extra_specs) = extras_clause(&extras, at, &[lap.as_str(), lbp.as_str()]);
        let mut en = format!(
            "Add a new {} for the {}",
            named_en(at, &la.name, &lap),
            named_en(bt, &lb.name, &lbp)
        );
        if !phrases.is_empty() {
            en.push_str(&format!(" with {}", phrases.join(" and ")));
        }
        let zh = format!(
            "为{}新增一个{}{}",
            named_zh(bt, &lb.name, &lbp),
            named_zh(at, &la.name, &lap),
            zh_extras(&phrases)
        );
        let mut all_cols = vec![la.name.clone(), r.from_column.clone()];
        all_cols.extend(cols);
        let mut all_vals = vec![format!("{{{{{lap}}}}}"), parent.clone()];
        all_vals.extend(vals);
        let mut specs = vec![
            value_ph(
                &lap,
                PlaceholderSource::GeneratedVariant {
                    table: at.into(),
                    column: la.name.clone(),
                },
            ),
            value_ph(&lbp, column_value(bt, &lb.name, None)),
        ];
        specs.extend(extra_specs);
        out.entry(Operation::Insert).or_default().push(b.draft(
            "insert_linked",
            Operation::Insert,
            &[at, bt],
            en,
            zh,
            format!(
                "INSERT INTO {at} ({}) VALUES ({})",
                all_cols.join(", "),
                all_vals.join(", ")
            ),
            specs,
            vec![check(
                format!(
                    "SELECT COUNT(*) FROM {at} WHERE {} = {{{{{lap}}}}} AND {} = {parent}",
                    la.name, r.from_column
                ),
                Some(1),
            )],
        ));
    }
    if ops.contains(&Operation::Update) {
        let fk = &r.from_column;
        out.entry(Operation::Update).or_default().push(b.draft(
            "reassign",
            Operation::Update,
            &[at, bt],
            format!(
                "Move the {} to the {}",
                named_en(at, &la.name, &lap),
                named_en(bt, &lb.name, &lbp)
            ),
            format!(
                "将{}转移到{}名下",
                named_zh(at, &la.name, &lap),
                named_zh(bt, &lb.name, &lbp)
            ),
            format!("UPDATE {at} SET {fk} = {parent} WHERE {} = {{{{{lap}}}}}", la.name),
            vec![
                value_ph(&lbp, column_value(bt, &lb.name, None)),
                value_ph(&lap, column_value(at, &la.name, None)),
            ],
            vec![
                check(
                    format!(
                        "SELECT COUNT(*) FROM {at} WHERE {} = {{{{{lap}}}}} AND {fk} = {parent}",
                        la.name
                    ),
                    None,
                ),
                check(
                    format!(
                        "SELECT COUNT(*) FROM {at} WHERE {} = {{{{{lap}}}}} AND ({fk} IS NULL OR {fk} <> {parent})",
                        la.name
                    ),
                    Some(0),
                ),
            ],
        ));
    }
}

/// Applies the pattern library to a workflow. Operation classes are
/// interleaved so a template cap keeps a mix of reads and writes.
pub(crate) fn draft_templates(
    wf: &Workflow,
    profiles: &[TableProfile],
    languages: &[String],
    ops: &[Operation],
    allow_self_join: bool,
) -> Vec<TemplateDraft> {
    let b = Builder { languages };
    let by_name: BTreeMap<&str, &TableProfile> = profiles.iter().map(|p| (p.table.as_str(), p)).collect();
    let views: BTreeMap<&str, View<'_>> = wf
        .core_tables
        .iter()
        .filter_map(|t| {
            by_name
                .get(t.as_str())
                .map(|p| (t.as_str(), View::new(p, &wf.relations)))
        })
        .collect();
    let mut per_op: BTreeMap<Operation, Vec<TemplateDraft>> = BTreeMap::new();
    if ops.contains(&Operation::Select) {
        let sel = per_op.entry(Operation::Select).or_default();
        for v in views.values() {
            select_single(v, &b, sel);
        }
    }
    for v in views.values() {
        mutations_single(v, ops, &b, &mut per_op);
    }
    for r in &wf.relations {
        let (Some(a), Some(bv)) = (views.get(r.from_table.as_str()), views.get(r.to_table.as_str())) else {
            continue;
        };
        if r.from_table == r.to_table && !allow_self_join {
            continue;
        }
        if ops.contains(&Operation::Select) {
            select_joined(r, a, bv, &b, per_op.entry(Operation::Select).or_default());
        }
        mutations_joined(r, a, bv, ops, &b, &mut per_op);
    }
    let mut queues: Vec<std::vec::IntoIter<TemplateDraft>> = Operation::ALL
        .iter()
        .filter_map(|op| per_op.remove(op))
        .map(Vec::into_iter)
        .collect();
    let mut out = Vec::new();
    loop {
        let mut any = false;
        for q in queues.iter_mut() {
            if let Some(d) = q.next() {
                out.push(d);
                any = true;
            }
        }
        if !any {
            break;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discovery::{cache_key, Confidence, RelationOrigin};
    use crate::provider::validate_draft;

    fn col(name: &str, ty: &str, pk: bool, nullable: bool) -> ColumnMeta {
        ColumnMeta::new(name, ty, nullable, pk)
    }

    fn profile(table: &str, columns: Vec<ColumnMeta>) -> TableProfile {
        TableProfile {
            table: table.into(),
            columns,
            row_count: 1,
            business_purpose: format!("{table} purpose"),
            key_fields: vec![],
        }
    }

    fn account() -> TableProfile {
        profile(
            "account",
            vec![
                col("id", "INTEGER", true, false),
                col("name", "TEXT", false, false),
                col("industry", "TEXT", false, true),
            ],
        )
    }

    fn ticket() -> TableProfile {
        profile(
            "ticket",
            vec![
                col("id", "INTEGER", true, false),
                col("contact_id", "INTEGER", false, true),
                col("subject", "TEXT", false, false),
                col("status", "TEXT", false, false),
            ],
        )
    }

    fn wf(tables: &[&str], relations: Vec<Relation>) -> Workflow {
        let core: Vec<String> = tables.iter().map(|t| t.to_string()).collect();
        Workflow {
            id: "wf".into(),
            cache_key: cache_key(&core),
            core_tables: core,
            relations,
            description: String::new(),
        }
    }

    fn rel(a: &str, ac: &str, b: &str, bc: &str) -> Relation {
        Relation {
            from_table: a.into(),
            from_column: ac.into(),
            to_table: b.into(),
            to_column: bc.into(),
            origin: RelationOrigin::ExplicitFk,
            confidence: Confidence::High,
            probe_rows: 0,
        }
    }

    #[test]
    fn purpose_rule() {
        let p = infer_purpose("account", &account().columns);
        assert!(p.business_purpose.contains("account"));
        assert_eq!(p.key_fields, vec!["id", "name"]);
        let p = infer_purpose(
            "metric",
            &[col("id", "INTEGER", true, false), col("v", "REAL", false, true)],
        );
        assert_eq!(p.key_fields, vec!["id"]);
    }

    #[test]
    fn point_lookup_pattern() {
        let langs = vec!["en".to_string()];
        let drafts = draft_templates(
            &wf(&["account"], vec![]),
            &[account()],
            &langs,
            &[Operation::Select],
            false,
        );
        let d = drafts.iter().find(|d| d.pattern == "point_lookup").unwrap();
        assert_eq!(d.intents["en"], "List the {{col}} of the account named {{name}}");
        assert_eq!(d.sql, "SELECT {{col}} FROM account WHERE name = {{name}}");
        assert!(drafts.iter().all(|d| d.operation == Operation::Select));
        for d in &drafts {
            validate_draft(d, &langs).unwrap();
        }
    }

    #[test]
    fn delete_pattern() {
        let drafts = draft_templates(
            &wf(&["ticket"], vec![]),
            &[ticket()],
            &["en".into()],
            &[Operation::Delete],
            false,
        );
        assert!(!drafts.is_empty());
        assert!(drafts.iter().all(|d| d.sql.starts_with("DELETE FROM ticket WHERE")));
    }

    #[test]
    fn library_covers_every_class() {
        let c = profile(
            "contact",
            vec![
                col("id", "INTEGER", true, false),
                col("account_id", "INTEGER", false, false),
                col("name", "TEXT", false, false),
                col("title", "TEXT", false, true),
                col("score", "REAL", false, true),
            ],
        );
        let langs = vec!["en".to_string(), "zh".to_string(), "fr".to_string()];
        let w = wf(
            &["account", "contact"],
            vec![rel("contact", "account_id", "account", "id")],
        );
        let drafts = draft_templates(&w, &[account(), c], &langs, &Operation::ALL, false);
        let patterns: BTreeSet<&str> = drafts.iter().map(|d| d.pattern.as_str()).collect();
        for p in [
            "point_lookup",
            "filter_projection",
            "count",
            "aggregate",
            "join_lookup",
            "join_filter",
            "join_aggregate",
            "insert_record",
            "insert_linked",
            "update_field",
            "reassign",
            "delete_record",
            "delete_by_category",
        ] {
            assert!(patterns.contains(p), "missing {p}");
        }
        for d in &drafts {
            validate_draft(d, &langs).unwrap_or_else(|e| panic!("{e}"));
            assert!(d.intents["fr"].starts_with("[fr] "));
        }
        let j = drafts.iter().find(|d| d.pattern == "join_lookup").unwrap();
        assert_eq!(
            j.intents["en"],
            "Which account does the contact named {{name}} belong to?"
        );
        // reads and writes are interleaved
        assert_eq!(drafts[0].operation, Operation::Select);
        assert_eq!(drafts[1].operation, Operation::Insert);
    }

    #[test]
    fn self_joins_need_opt_in() {
        let emp = profile(
            "employee",
            vec![
                col("id", "INTEGER", true, false),
                col("manager_id", "INTEGER", false, true),
                col("name", "TEXT", false, false),
            ],
        );
        let w = wf(&["employee"], vec![rel("employee", "manager_id", "employee", "id")]);
        let off = draft_templates(
            &w,
            std::slice::from_ref(&emp),
            &["en".into()],
            &[Operation::Select],
            false,
        );
        assert!(off.iter().all(|d| !d.pattern.starts_with("join")));
        let on = draft_templates(&w, &[emp], &["en".into()], &[Operation::Select], true);
        let j = on.iter().find(|d| d.pattern == "join_lookup").unwrap();
        assert!(j.sql.contains("employee child JOIN employee parent"));
    }

    #[test]
    fn variant_rules() {
        let int = col("id", "INTEGER", true, false);
        let samples: Vec<Value> = (1..=6).map(Value::Integer).collect();
        assert_eq!(variants(&int, &samples, 2), vec![Value::Integer(7), Value::Integer(8)]);
        let name = col("name", "TEXT", false, false);
        assert_eq!(
            variants(&name, &["Acme".into()], 1),
            vec![Value::Text("Acme-v1".into())]
        );
        assert_eq!(
            variants(&name, &["Acme".into(), "Acme-v1".into()], 1),
            vec![Value::Text("Acme-v2".into())]
        );
    }

    #[test]
    fn relation_rule_with_aliases() {
        let note = profile(
            "note",
            vec![
                col("id", "INTEGER", true, false),
                col("parent_id", "INTEGER", false, true),
                col("body", "TEXT", false, false),
            ],
        );
        let contact = profile(
            "contacts",
            vec![col("id", "INTEGER", true, false), col("name", "TEXT", false, false)],
        );
        let m = MockBackend::new([("Parent".to_string(), vec!["CONTACT".to_string()])].into());
        let c = m.suggest(&[note.clone(), contact.clone(), account()]);
        assert_eq!(c.len(), 1);
        assert_eq!((c[0].from_table.as_str(), c[0].to_table.as_str()), ("note", "contacts"));
        assert!(MockBackend::new(BTreeMap::new()).suggest(&[note, contact]).is_empty());
    }
}
