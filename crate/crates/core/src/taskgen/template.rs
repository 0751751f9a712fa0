//! `{{name}}` placeholder handling.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::OnceLock;

use regex::Regex;

use super::{Binding, BoundStatement, PlaceholderSpec, Quoting};

/// Placeholder names: lowercase identifiers.
pub const PLACEHOLDER_NAME: &str = "^[a-z_][a-z0-9_]*$";

fn marker() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{\{([^{}]*)\}\}").expect("valid regex"))
}

pub(crate) fn name_ok(name: &str) -> bool {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(PLACEHOLDER_NAME).expect("valid regex"))
        .is_match(name)
}

/// Distinct placeholder names in `text`; rejects malformed markers.
pub fn placeholder_names(text: &str) -> Result<BTreeSet<String>, String> {
    let mut names = BTreeSet::new();
    for cap in marker().captures_iter(text) {
        let name = &cap[1];
        if !name_ok(name) {
            return Err(format!("invalid placeholder name `{name}`"));
        }
        names.insert(name.to_string());
    }
    let rest = marker().replace_all(text, "");
    if rest.contains("{{") || rest.contains("}}") {
        return Err("unbalanced placeholder braces".into());
    }
    Ok(names)
}

/// Substitutes display text of each binding into an intent.
pub(crate) fn resolve_intent(text: &str, bindings: &BTreeMap<String, Binding>) -> Result<String, String> {
    let mut missing = None;
    let out = marker().replace_all(text, |cap: &regex::Captures<'_>| match bindings.get(&cap[1]) {
        Some(b) => b.value.to_string(),
        None => {
            missing = Some(cap[1].to_string());
            String::new()
        }
    });
    match missing {
        Some(m) => Err(format!("placeholder `{m}` is unbound")),
        None => Ok(out.into_owned()),
    }
}

/// Renders a SQL template: identifier placeholders are spliced (they were
/// validated against the schema), value placeholders become `?` parameters
/// in order of appearance.
pub fn render(
    sql: &str,
    bindings: &BTreeMap<String, Binding>,
    specs: &[PlaceholderSpec],
) -> Result<BoundStatement, String> {
    let mut params = Vec::new();
    let mut out = String::with_capacity(sql.len());
    let mut last = 0;
    for cap in marker().captures_iter(sql) {
        let whole = cap.get(0).expect("group 0");
        out.push_str(&sql[last..whole.start()]);
        last = whole.end();
        let name = &cap[1];
        let spec = specs
            .iter()
            .find(|s| s.name == name)
            .ok_or_else(|| format!("placeholder `{name}` has no definition"))?;
        let binding = bindings
            .get(name)
            .ok_or_else(|| format!("placeholder `{name}` is unbound"))?;
        match spec.quoting {
            Quoting::AsIdentifier => {
                let ident = match &binding.value {
                    crate::value::Value::Text(s) if is_plain_identifier(s) => s.clone(),
                    v => return Err(format!("placeholder `{name}` is not a plain identifier: {v}")),
                };
                out.push_str(&ident);
            }
            Quoting::AsValueParameter => {
                out.push('?');
                params.push(binding.value.clone());
            }
        }
    }
    out.push_str(&sql[last..]);
    Ok(BoundStatement { sql: out, params })
}

pub(crate) fn is_plain_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}
