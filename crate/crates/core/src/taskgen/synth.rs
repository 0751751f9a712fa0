use std::collections::BTreeSet;

use super::template::{is_plain_identifier, placeholder_names};
use super::{Operation, PlaceholderSource, Quoting, TaskGenError, TaskTemplate, TemplateDraft};
use crate::config::RunConfig;
use crate::diagnostics::Diagnostic;
use crate::difficulty::extract_features;
use crate::discovery::{SchemaGraph, Workflow};
use crate::provider::{validate_draft, Provider};
use crate::value::Value;

/// Drafts templates for a workflow and keeps the valid ones, up to the
/// configured cap. Every dropped draft yields a diagnostic.
pub fn synthesize_templates(
    wf: &Workflow,
    graph: &SchemaGraph,
    p: &Provider,
    cfg: &RunConfig,
) -> Result<(Vec<TaskTemplate>, Vec<Diagnostic>), TaskGenError> {
    let gen = &cfg.generation;
    let profiles = graph.profiles_of(&wf.core_tables);
    let batch = p.draft_templates(wf, &profiles, &gen.languages, &gen.operations, gen.allow_self_join)?;
    let mut diags: Vec<Diagnostic> = batch
        .malformed
        .iter()
        .map(|(pattern, e)| {
            Diagnostic::warning("taskgen", "malformed_draft", format!("{}: draft {pattern}: {e}", wf.id))
        })
        .collect();
    let mut out = Vec::new();
    for d in batch.drafts {
        if out.len() >= gen.max_templates_per_workflow {
            break;
        }
        if let Err(e) = validate_template(&d, graph, cfg) {
            diags.push(Diagnostic::warning(
                "taskgen",
                "invalid_draft",
                format!("{}: draft {} dropped: {e}", wf.id, d.pattern),
            ));
            continue;
        }
        out.push(TaskTemplate {
            id: format!("{}-t{:02}", wf.id, out.len()),
            workflow_id: wf.id.clone(),
            pattern: d.pattern,
            operation: d.operation,
            tables: d.tables,
            intents: d.intents,
            sql_template: d.sql,
            placeholders: d.placeholders,
            state_checks: d.state_checks,
        });
    }
    Ok((out, diags))
}

/// Checks a draft against the run configuration and the profiled schema.
pub fn validate_template(d: &TemplateDraft, graph: &SchemaGraph, cfg: &RunConfig) -> Result<(), String> {
    if !cfg.generation.allows(d.operation) {
        return Err(format!("operation {} is not allowed", d.operation));
    }
    if Operation::of_statement(&d.sql) != Some(d.operation) {
        return Err(format!("SQL does not start with {}", d.operation));
    }
    validate_draft(d, &cfg.generation.languages).map_err(|e| e.to_string())?;
    if d.tables.is_empty() {
        return Err("no tables listed".into());
    }
    if let Some(t) = d.tables.iter().find(|t| !graph.profiles.contains_key(*t)) {
        return Err(format!("table {t} is not profiled"));
    }
    let has_column = |t: &str, c: &str| graph.profiles.get(t).is_some_and(|p| p.column(c).is_some());
    for ph in &d.placeholders {
        match (&ph.source, ph.quoting) {
            (PlaceholderSource::ColumnValue { table, column, via }, Quoting::AsValueParameter) => {
                if !has_column(table, column) {
                    return Err(format!("placeholder {}: unknown column {table}.{column}", ph.name));
                }
                if let Some(e) = via {
                    if !has_column(&e.from_table, &e.from_column) || !has_column(&e.to_table, &e.to_column) {
                        return Err(format!("placeholder {}: join path names unknown columns", ph.name));
                    }
                    if table != &e.from_table && table != &e.to_table {
                        return Err(format!("placeholder {}: {table} is not on its join path", ph.name));
                    }
                }
            }
            (PlaceholderSource::GeneratedVariant { table, column }, Quoting::AsValueParameter) => {
                if !has_column(table, column) {
                    return Err(format!("placeholder {}: unknown column {table}.{column}", ph.name));
                }
            }
            (PlaceholderSource::LiteralChoice { values }, quoting) => {
                if values.is_empty() {
                    return Err(format!("placeholder {}: empty literal choice", ph.name));
                }
                if quoting == Quoting::AsIdentifier {
                    for v in values {
                        let ok = matches!(v, Value::Text(s) if is_plain_identifier(s)
                            && d.tables.iter().any(|t| has_column(t, s)));
                        if !ok {
                            return Err(format!(
                                "placeholder {}: {v} is not a column of the template tables",
                                ph.name
                            ));
                        }
                    }
                }
            }
            (_, Quoting::AsIdentifier) => {
                return Err(format!(
                    "placeholder {}: identifiers must come from a literal choice",
                    ph.name
                ));
            }
        }
    }
    let declared: BTreeSet<&str> = d.placeholders.iter().map(|p| p.name.as_str()).collect();
    if d.operation.is_mutation() && d.state_checks.is_empty() {
        return Err("mutation template has no state checks".into());
    }
    for c in &d.state_checks {
        if Operation::of_statement(&c.sql) != Some(Operation::Select) {
            return Err("state check is not a SELECT".into());
        }
        let names = placeholder_names(&c.sql)?;
        if let Some(n) = names.iter().find(|n| !declared.contains(n.as_str())) {
            return Err(format!("state check uses undeclared placeholder {n}"));
        }
        let identifiers = d.placeholders.iter().filter(|p| p.quoting == Quoting::AsIdentifier);
        if identifiers.clone().any(|p| names.contains(&p.name)) {
            return Err("state checks may not use identifier placeholders".into());
        }
    }
    extract_features(&d.sql).map_err(|e| e.to_string())?;
    Ok(())
}
