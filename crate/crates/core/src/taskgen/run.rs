use std::thread;

use super::{
    instantiate, synthesize_templates, verify, GroundTruth, TaskGenError, TaskInstance, TaskTemplate,
    VerificationReport,
};
use crate::config::RunConfig;
use crate::db::{open_with_timeout, AdapterHandle, DbError};
use crate::diagnostics::Diagnostic;
use crate::discovery::{SchemaGraph, Workflow};
use crate::provider::{Provider, ProviderError};

#[derive(Debug, Default)]
pub struct GenerationOutput {
    pub templates: Vec<TaskTemplate>,
    /// Verified instances with their ground truth filled in.
    pub instances: Vec<TaskInstance>,
    /// One report per attempted instance, in instance order.
    pub reports: Vec<VerificationReport>,
    pub diagnostics: Vec<Diagnostic>,
}

type Verified = (VerificationReport, Option<GroundTruth>);

/// Verifies read-only instances on `jobs` separate connections.
fn verify_reads(
    cfg: &RunConfig,
    h: &mut AdapterHandle,
    items: &[&TaskInstance],
    jobs: usize,
) -> Result<Vec<Verified>, DbError> {
    if jobs <= 1 || items.len() < 2 {
        return items.iter().map(|i| verify(i, h)).collect();
    }
    let timeout = h.timeout_ms();
    let chunk = items.len().div_ceil(jobs);
    thread::scope(|s| {
        let workers: Vec<_> = items
            .chunks(chunk)
            .map(|part| {
                s.spawn(move || -> Result<Vec<Verified>, DbError> {
                    let mut own = open_with_timeout(&cfg.site.engine, &cfg.site.database, timeout)?;
                    part.iter().map(|i| verify(i, &mut own)).collect()
                })
            })
            .collect();
        let mut out = Vec::with_capacity(items.len());
        for w in workers {
            out.extend(w.join().expect("verification worker panicked")?);
        }
        Ok(out)
    })
}

/// Synthesizes, instantiates and verifies tasks for every workflow.
///
/// Reads are verified first (in parallel when `jobs > 1`), then mutations
/// one at a time on `h`. Reports come back in instance order either way.
pub fn run_generation(
    cfg: &RunConfig,
    graph: &SchemaGraph,
    workflows: &[Workflow],
    h: &mut AdapterHandle,
    p: &Provider,
    jobs: usize,
) -> Result<GenerationOutput, TaskGenError> {
    h.set_timeout_ms(cfg.generation.statement_timeout_ms);
    let mut out = GenerationOutput::default();
    let mut attempted = Vec::new();
    for wf in workflows {
        let (templates, diags) = synthesize_templates(wf, graph, p, cfg)?;
        out.diagnostics.extend(diags);
        for t in &templates {
            match instantiate(t, h, p, cfg) {
                Ok(v) => attempted.extend(v),
                Err(TaskGenError::Db(e)) if e.is_fatal() => return Err(e.into()),
                Err(TaskGenError::Provider(e @ ProviderError::Unavailable(_))) => return Err(e.into()),
                Err(e) => out
                    .diagnostics
                    .push(Diagnostic::warning("taskgen", "template_skipped", e.to_string())),
            }
        }
        out.templates.extend(templates);
    }
    let (reads, writes): (Vec<_>, Vec<_>) = attempted
        .iter()
        .enumerate()
        .partition(|(_, i)| !i.operation.is_mutation());
    let read_refs: Vec<&TaskInstance> = reads.iter().map(|(_, i)| *i).collect();
    let mut results: Vec<Option<Verified>> = vec![None; attempted.len()];
    for ((idx, _), r) in reads.iter().zip(verify_reads(cfg, h, &read_refs, jobs)?) {
        results[*idx] = Some(r);
    }
    for (idx, inst) in &writes {
        results[*idx] = Some(verify(inst, h)?);
    }
    for (inst, r) in attempted.into_iter().zip(results) {
        let (report, truth) = r.expect("every instance verified");
        if report.is_verified() {
            out.instances.push(TaskInstance {
                ground_truth: truth,
                ..inst
            });
        }
        out.reports.push(report);
    }
    Ok(out)
}
