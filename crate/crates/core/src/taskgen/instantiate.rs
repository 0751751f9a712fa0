use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::template::{render, resolve_intent};
use super::{
    Binding, PendingCheck, PlaceholderSource, PlaceholderSpec, Provenance, TaskGenError, TaskInstance, TaskTemplate,
};
use crate::config::RunConfig;
use crate::db::{AdapterHandle, DbError};
use crate::provider::{Provider, ProviderError};
use crate::value::Value;

/// Per-placeholder RNG seeded by (run seed, template id, placeholder).
fn rng_for(seed: u64, template_id: &str, placeholder: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(template_id.as_bytes());
    h.update([0]);
    h.update(placeholder.as_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}

fn sample_column(
    h: &mut AdapterHandle,
    table: &str,
    column: &str,
    via: Option<&super::JoinEdge>,
    limit: usize,
    descending: bool,
) -> Result<Vec<Value>, DbError> {
    let q = |s: &str| h.quote_ident(s);
    let (target, from) = match via {
        None => (q(column), q(table)),
        Some(e) => {
            let alias = if e.from_table == table { "a" } else { "b" };
            (
                format!("{alias}.{}", q(column)),
                format!(
                    "{} a JOIN {} b ON a.{} = b.{}",
                    q(&e.from_table),
                    q(&e.to_table),
                    q(&e.from_column),
                    q(&e.to_column)
                ),
            )
        }
    };
    let order = if descending { "DESC" } else { "ASC" };
    let sql =
        format!("SELECT DISTINCT {target} FROM {from} WHERE {target} IS NOT NULL ORDER BY 1 {order} LIMIT {limit}");
    Ok(h.execute(&sql, &[])?
        .rows
        .into_iter()
        .filter_map(|mut r| r.pop())
        .collect())
}

fn candidates(
    t: &TaskTemplate,
    spec: &PlaceholderSpec,
    h: &mut AdapterHandle,
    p: &Provider,
    cfg: &RunConfig,
) -> Result<Vec<Binding>, TaskGenError> {
    let gen = &cfg.generation;
    let none = || TaskGenError::NoCandidateValues {
        template_id: t.id.clone(),
        placeholder: spec.name.clone(),
    };
    let (mut values, provenance) = match &spec.source {
        PlaceholderSource::ColumnValue { table, column, via } => (
            sample_column(h, table, column, via.as_ref(), gen.max_sampled_rows, false)?,
            Provenance::AuthenticRow,
        ),
        PlaceholderSource::GeneratedVariant { table, column } => {
            let (cols, _) = h.describe_table(table)?;
            let meta = cols.into_iter().find(|c| &c.name == column).ok_or_else(none)?;
            let samples = sample_column(h, table, column, None, gen.max_sampled_rows, true)?;
            let proposed = match p.variant_values(&meta, &samples, gen.max_instances_per_template) {
                Ok(v) => v,
                Err(ProviderError::InvalidRequest(_)) => Vec::new(),
                Err(e) => return Err(e.into()),
            };
            let probe = format!(
                "SELECT COUNT(*) FROM {} WHERE {} = ?",
                h.quote_ident(table),
                h.quote_ident(column)
            );
            let mut fresh = Vec::new();
            for v in proposed {
                if h.execute(&probe, std::slice::from_ref(&v))?.single_count() == Some(0) && !fresh.contains(&v) {
                    fresh.push(v);
                }
            }
            (fresh, Provenance::Variant)
        }
        PlaceholderSource::LiteralChoice { values } => (values.clone(), Provenance::Literal),
    };
    if values.is_empty() {
        return Err(none());
    }
    if provenance != Provenance::Variant {
        values.shuffle(&mut rng_for(cfg.seed, &t.id, &spec.name));
    }
    Ok(values.into_iter().map(|value| Binding { value, provenance }).collect())
}

/// Binds a template to authentic values and provider variants.
///
/// Candidate lists are sampled per placeholder and combined as a cartesian
/// product (last placeholder varying fastest), capped at
/// `max_instances_per_template`.
pub fn instantiate(
    t: &TaskTemplate,
    h: &mut AdapterHandle,
    p: &Provider,
    cfg: &RunConfig,
) -> Result<Vec<TaskInstance>, TaskGenError> {
    let invalid = |message: String| TaskGenError::InvalidTemplate {
        template_id: t.id.clone(),
        message,
    };
    let mut lists = Vec::with_capacity(t.placeholders.len());
    for spec in &t.placeholders {
        lists.push(candidates(t, spec, h, p, cfg)?);
    }
    let cap = cfg.generation.max_instances_per_template;
    let mut out = Vec::new();
    let mut idx = vec![0usize; lists.len()];
    'product: while out.len() < cap {
        let bindings: BTreeMap<String, Binding> = t
            .placeholders
            .iter()
            .zip(&lists)
            .zip(&idx)
            .map(|((spec, list), &i)| (spec.name.clone(), list[i].clone()))
            .collect();
        let verification_sql = render(&t.sql_template, &bindings, &t.placeholders).map_err(invalid)?;
        let intents_resolved = t
            .intents
            .iter()
            .map(|(lang, text)| resolve_intent(text, &bindings).map(|r| (lang.clone(), r)))
            .collect::<Result<BTreeMap<_, _>, _>>()
            .map_err(invalid)?;
        let checks = t
            .state_checks
            .iter()
            .map(|c| {
                render(&c.sql, &bindings, &t.placeholders).map(|statement| PendingCheck {
                    statement,
                    expected: c.expected,
                })
            })
            .collect::<Result<Vec<_>, _>>()
            .map_err(invalid)?;
        out.push(TaskInstance {
            id: format!("{}-i{:02}", t.id, out.len()),
            template_id: t.id.clone(),
            workflow_id: t.workflow_id.clone(),
            site: cfg.site.name.clone(),
            operation: t.operation,
            tables: t.tables.clone(),
            bindings,
            intents_resolved,
            verification_sql,
            checks,
            ground_truth: None,
        });
        // odometer step
        for k in (0..idx.len()).rev() {
            idx[k] += 1;
            if idx[k] < lists[k].len() {
                continue 'product;
            }
            idx[k] = 0;
        }
        break;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rng_depends_on_every_input() {
        use rand::Rng;
        let a: u64 = rng_for(7, "t", "name").gen();
        assert_eq!(a, rng_for(7, "t", "name").gen::<u64>());
        assert_ne!(a, rng_for(8, "t", "name").gen::<u64>());
        assert_ne!(a, rng_for(7, "u", "name").gen::<u64>());
        assert_ne!(a, rng_for(7, "t", "col").gen::<u64>());
    }
}
