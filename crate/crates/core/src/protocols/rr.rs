use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{run_gc, GcRun, MetricSpec, QueryOutcome};
use crate::error::{Error, Result};
use crate::gallery::{top_k_member, Gallery, Shortlist};
use crate::metrics::{rank_at_k, MetricBundle};
use crate::rerank::{RerankContext, RerankSpec, Reranker};

/// Outcomes of one reranking configuration. TAR is not reported for
/// reranked scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RerankRun {
    pub method: String,
    pub code: String,
    pub outcomes: Vec<QueryOutcome>,
    pub metrics: MetricBundle,
}

#[derive(Debug, Clone)]
pub struct RrRun {
    pub baseline: GcRun,
    pub reranked: RerankRun,
}

/// Outcome of gallery member `query` read off a (reranked) shortlist.
pub fn outcome_from_shortlist(
    gallery: &Gallery,
    query: usize,
    shortlist: &Shortlist,
    has_mate: bool,
) -> Result<QueryOutcome> {
    let first = shortlist.entries.first().ok_or(Error::EmptyGallery)?;
    let s2 = shortlist.entries.get(1).map_or(first.score, |e| e.score);
    let subject = gallery.subject_of(query);
    let rank = if has_mate {
        shortlist
            .entries
            .iter()
            .position(|e| gallery.subject_of(e.index) == subject)
            .map(|p| p + 1)
    } else {
        None
    };
    let r = gallery.record(query);
    Ok(QueryOutcome {
        query_exam_id: r.exam_id.clone(),
        query_subject_id: r.subject_id.clone(),
        rank,
        has_mate,
        top_scores: (first.score, s2),
        top1_subject_id: gallery.record(first.index).subject_id.clone(),
    })
}

fn reranked_outcomes(
    gallery: &Gallery,
    reranker: &Reranker,
    has_mate: &[bool],
) -> Result<Vec<QueryOutcome>> {
    let k = reranker.spec().shortlist_k;
    (0..gallery.len())
        .into_par_iter()
        .map(|q| {
            let shortlist = top_k_member(gallery, q, k)?;
            let out = reranker.rerank(q, shortlist)?;
            outcome_from_shortlist(gallery, q, &out, has_mate[q])
        })
        .collect()
}

fn rank_bundle(outcomes: &[QueryOutcome], spec: &MetricSpec) -> Result<MetricBundle> {
    Ok(MetricBundle {
        rank_at: spec
            .ks
            .iter()
            .map(|&k| rank_at_k(outcomes, k).map(|r| (k, r)))
            .collect::<Result<_>>()?,
        tar_at_far: spec.fars.iter().map(|&f| (f, None)).collect(),
        n_queries: outcomes.iter().filter(|o| o.has_mate).count(),
        n_no_mate: outcomes.iter().filter(|o| !o.has_mate).count(),
        n_genuine_scores: 0,
        n_impostor_scores: 0,
    })
}

/// Every reranking configuration on one gallery, with mate flags taken from
/// a baseline run.
pub fn rerank_runs(
    gallery: &Gallery,
    specs: &[RerankSpec],
    ctx: &RerankContext,
    spec: &MetricSpec,
    baseline: &GcRun,
) -> Result<Vec<RerankRun>> {
    for s in specs {
        if s.shortlist_k < spec.max_k() {
            return Err(Error::Config(format!(
                "shortlist K={} of `{}` is smaller than the largest reported rank {}",
                s.shortlist_k,
                s.label(),
                spec.max_k()
            )));
        }
    }
    let has_mate: Vec<bool> = baseline.outcomes.iter().map(|o| o.has_mate).collect();
    let mut runs = Vec::with_capacity(specs.len());
    for s in specs {
        let reranker = Reranker::prepare(s, gallery, ctx)?;
        let outcomes = reranked_outcomes(gallery, &reranker, &has_mate)?;
        runs.push(RerankRun {
            method: s.method_name().to_string(),
            code: s.code(),
            metrics: rank_bundle(&outcomes, spec)?,
            outcomes,
        });
    }
    Ok(runs)
}

/// Baseline GC plus every reranking configuration on the same gallery.
pub fn run_rr_many(
    gallery: &Gallery,
    specs: &[RerankSpec],
    ctx: &RerankContext,
    spec: &MetricSpec,
) -> Result<(GcRun, Vec<RerankRun>)> {
    let baseline = run_gc(gallery, spec)?;
    let runs = rerank_runs(gallery, specs, ctx, spec, &baseline)?;
    Ok((baseline, runs))
}

pub fn run_rr(
    gallery: &Gallery,
    rerank: &RerankSpec,
    ctx: &RerankContext,
    spec: &MetricSpec,
) -> Result<RrRun> {
    let (baseline, mut runs) = run_rr_many(gallery, std::slice::from_ref(rerank), ctx, spec)?;
    Ok(RrRun {
        baseline,
        reranked: runs.pop().expect("one run per spec"),
    })
}
