use std::cmp::Ordering;

use rayon::prelude::*;

use super::{MetricSpec, QueryOutcome};
use crate::error::{Error, Result};
use crate::gallery::{EmbeddingRecord, Gallery};
use crate::metrics::{bundle, ImpostorTail, MetricBundle};

const CHUNK: usize = 32;

/// A query: a gallery member (left out of its own comparison) or a record
/// outside the gallery.
#[derive(Debug, Clone, Copy)]
pub enum Probe<'a> {
    Member(usize),
    External(&'a EmbeddingRecord),
}

/// Outcomes and score pools of one identification run.
#[derive(Debug, Clone)]
pub struct GcRun {
    pub outcomes: Vec<QueryOutcome>,
    /// Genuine scores, grouped by query in query order.
    pub genuine: Vec<f64>,
    pub impostors: ImpostorTail,
    pub metrics: MetricBundle,
}

/// Leave-one-out closed-set identification: every gallery exam is a query
/// against all remaining exams.
pub fn run_gc(gallery: &Gallery, spec: &MetricSpec) -> Result<GcRun> {
    let probes: Vec<Probe> = (0..gallery.len()).map(Probe::Member).collect();
    evaluate_queries(gallery, &probes, spec)
}

struct Partial {
    outcomes: Vec<QueryOutcome>,
    genuine: Vec<f64>,
    tail: ImpostorTail,
}

pub fn evaluate_queries(gallery: &Gallery, probes: &[Probe], spec: &MetricSpec) -> Result<GcRun> {
    spec.validate()?;
    if probes.is_empty() {
        return Err(Error::EmptyOutcomeSet);
    }
    let mut per_subject = vec![0u64; gallery.n_subjects()];
    for i in 0..gallery.len() {
        per_subject[gallery.subject_of(i) as usize] += 1;
    }
    let n = gallery.len() as u64;
    let n_impostors: u64 = probes
        .iter()
        .map(|p| match *p {
            Probe::Member(q) => n - per_subject[gallery.subject_of(q) as usize],
            Probe::External(r) => {
                n - gallery
                    .subject_key(&r.subject_id)
                    .map_or(0, |s| per_subject[s as usize])
            }
        })
        .sum();
    let capacity = ImpostorTail::capacity_for(n_impostors, &spec.fars);
    let parts: Vec<Partial> = probes
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut part = Partial {
                outcomes: Vec::with_capacity(chunk.len()),
                genuine: Vec::new(),
                tail: ImpostorTail::new(capacity),
            };
            for p in chunk {
                let o = scan(gallery, *p, &mut part.genuine, &mut part.tail)?;
                part.outcomes.push(o);
            }
            Ok(part)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut outcomes = Vec::with_capacity(probes.len());
    let mut genuine = Vec::new();
    let mut impostors = ImpostorTail::new(capacity);
    for p in parts {
        outcomes.extend(p.outcomes);
        genuine.extend(p.genuine);
        impostors = impostors.merge(p.tail);
    }
    let metrics = bundle(&outcomes, &spec.ks, &spec.fars, &genuine, &impostors)?;
    Ok(GcRun {
        outcomes,
        genuine,
        impostors,
        metrics,
    })
}

fn scan(
    gallery: &Gallery,
    probe: Probe,
    genuine: &mut Vec<f64>,
    tail: &mut ImpostorTail,
) -> Result<QueryOutcome> {
    let (record, vector, excluded, subject) = match probe {
        Probe::Member(q) => (
            gallery.record(q),
            gallery.vector(q),
            Some(q),
            Some(gallery.subject_of(q)),
        ),
        Probe::External(r) => {
            if r.dim() != gallery.dim() {
                return Err(Error::Dimension {
                    expected: gallery.dim(),
                    actual: r.dim(),
                });
            }
            (r, r.vector(), None, gallery.subject_key(&r.subject_id))
        }
    };
    let scores = gallery.scores(vector);
    let better = |a: (f64, usize), b: Option<(f64, usize)>| {
        b.is_none_or(|b| gallery.rank_cmp(a, b) == Ordering::Less)
    };
    let mut best_genuine: Option<(f64, usize)> = None;
    let mut top: [Option<(f64, usize)>; 2] = [None, None];
    let start = genuine.len();
    for (j, &s) in scores.iter().enumerate() {
        if Some(j) == excluded {
            continue;
        }
        let c = (s, j);
        if Some(gallery.subject_of(j)) == subject {
            genuine.push(s);
            if better(c, best_genuine) {
                best_genuine = Some(c);
            }
        } else {
            tail.push(s);
        }
        if better(c, top[0]) {
            top[1] = top[0];
            top[0] = Some(c);
        } else if better(c, top[1]) {
            top[1] = Some(c);
        }
    }
    let (s1, i1) = top[0].ok_or(Error::EmptyGallery)?;
    let s2 = top[1].map_or(s1, |t| t.0);
    let rank = best_genuine.map(|bg| {
        1 + scores
            .iter()
            .enumerate()
            .filter(|&(j, &s)| {
                Some(j) != excluded
                    && Some(gallery.subject_of(j)) != subject
                    && gallery.rank_cmp((s, j), bg) == Ordering::Less
            })
            .count()
    });
    Ok(QueryOutcome {
        query_exam_id: record.exam_id.clone(),
        query_subject_id: record.subject_id.clone(),
        rank,
        has_mate: genuine.len() > start,
        top_scores: (s1, s2),
        top1_subject_id: gallery.record(i1).subject_id.clone(),
    })
}
