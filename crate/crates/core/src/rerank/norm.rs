use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use super::Cohort;
use crate::error::{Error, Result};
use crate::gallery::{dot, EmbeddingRecord, Gallery, Shortlist};

/// Smallest standard deviation accepted for cohort statistics.
pub const SIGMA_FLOOR: f64 = 1e-9;

/// Which statistics a normalization uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NormKind {
    QuerySide,
    CandidateSide,
    Symmetric,
    /// One set of statistics over the union of both sides' cohort scores.
    Pooled,
}

/// Mean and sample standard deviation of impostor cohort scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mu: f64,
    pub sigma: f64,
    pub n_used: usize,
}

impl NormStats {
    #[inline]
    pub fn apply(&self, s: f64) -> f64 {
        (s - self.mu) / self.sigma
    }

    /// Statistics of the multiset union of two score sets.
    pub fn pool(&self, other: &NormStats) -> Result<NormStats> {
        let (n1, n2) = (self.n_used as f64, other.n_used as f64);
        let n = n1 + n2;
        let mu = (n1 * self.mu + n2 * other.mu) / n;
        let m2 = (n1 - 1.0) * self.sigma * self.sigma
            + (n2 - 1.0) * other.sigma * other.sigma
            + n1 * (self.mu - mu).powi(2)
            + n2 * (other.mu - mu).powi(2);
        checked(
            mu,
            (m2 / (n - 1.0)).max(0.0).sqrt(),
            self.n_used + other.n_used,
        )
    }

    /// Statistics after removing one score `x` from the set.
    pub(crate) fn without(&self, x: f64) -> Result<NormStats> {
        let n = self.n_used as f64;
        if self.n_used < 3 {
            return Err(Error::DegenerateCohort { sigma: 0.0 });
        }
        let mu = self.mu + (self.mu - x) / (n - 1.0);
        let m2 = (n - 1.0) * self.sigma * self.sigma - (x - self.mu) * (x - mu);
        checked(mu, (m2.max(0.0) / (n - 2.0)).sqrt(), self.n_used - 1)
    }
}

fn checked(mu: f64, sigma: f64, n_used: usize) -> Result<NormStats> {
    if n_used < 2 || !(sigma >= SIGMA_FLOOR) {
        return Err(Error::DegenerateCohort { sigma });
    }
    Ok(NormStats { mu, sigma, n_used })
}

pub(crate) fn mean_sd(scores: &[f64]) -> (f64, f64) {
    let n = scores.len() as f64;
    let mu = scores.iter().sum::<f64>() / n;
    let m2: f64 = scores.iter().map(|s| (s - mu) * (s - mu)).sum();
    (
        mu,
        if scores.len() > 1 {
            (m2 / (n - 1.0)).sqrt()
        } else {
            0.0
        },
    )
}

/// Two-pass mean and sample standard deviation.
pub fn stats_from_scores(scores: &[f64]) -> Result<NormStats> {
    if scores.len() < 2 {
        return Err(Error::DegenerateCohort { sigma: 0.0 });
    }
    let (mu, sigma) = mean_sd(scores);
    checked(mu, sigma, scores.len())
}

/// Query-side statistics over every cohort member.
pub fn query_side_stats(query: &EmbeddingRecord, cohort: &Cohort) -> Result<NormStats> {
    stats_from_scores(&cohort.scores(query.vector()))
}

/// Cohort statistics for `v`, skipping members of gallery subject
/// `exclude_subject` and members holding any gallery record in
/// `exclude_records`.
pub fn cohort_stats_excluding(
    v: &[f32],
    cohort: &Cohort,
    exclude_subject: Option<u32>,
    exclude_records: &[usize],
) -> Result<NormStats> {
    let scores: Vec<f64> = (0..cohort.len())
        .filter(|&m| {
            let subj = cohort.gallery_subject(m);
            (exclude_subject.is_none() || subj != exclude_subject)
                && cohort
                    .gallery_index(m)
                    .is_none_or(|i| !exclude_records.contains(&i))
        })
        .map(|m| dot(v, cohort.vector(m)))
        .collect();
    stats_from_scores(&scores)
}

/// Applies a normalization to a shortlist and re-sorts it. `candidate_stats`
/// is aligned with `shortlist.entries`; `raw_score` is the input.
pub fn normalize_scores(
    shortlist: &Shortlist,
    kind: NormKind,
    query_stats: Option<&NormStats>,
    candidate_stats: &[NormStats],
    gallery: &Gallery,
) -> Result<Shortlist> {
    let need_q = || {
        query_stats.ok_or_else(|| Error::InsufficientData("query-side statistics missing".into()))
    };
    let need_c = |i: usize| {
        candidate_stats
            .get(i)
            .ok_or_else(|| Error::InsufficientData("candidate-side statistics missing".into()))
    };
    let mut out = shortlist.clone();
    for (i, e) in out.entries.iter_mut().enumerate() {
        let s = e.raw_score;
        e.score = match kind {
            NormKind::QuerySide => need_q()?.apply(s),
            NormKind::CandidateSide => need_c(i)?.apply(s),
            NormKind::Symmetric => 0.5 * (need_q()?.apply(s) + need_c(i)?.apply(s)),
            NormKind::Pooled => need_q()?.pool(need_c(i)?)?.apply(s),
        };
    }
    out.sort(gallery);
    Ok(out)
}

/// Cohort normalization bound to a gallery. Candidate-side statistics are
/// computed on first use and cached per gallery record.
pub struct NormEngine {
    cohort: Cohort,
    kind: NormKind,
    candidate: Vec<OnceLock<std::result::Result<NormStats, f64>>>,
}

impl NormEngine {
    pub fn new(gallery: &Gallery, cohort: Cohort, kind: NormKind) -> Result<Self> {
        Ok(Self {
            cohort,
            kind,
            candidate: (0..gallery.len()).map(|_| OnceLock::new()).collect(),
        })
    }

    pub fn cohort(&self) -> &Cohort {
        &self.cohort
    }

    /// Query-side statistics; the query's own subject is left out.
    pub fn query_stats(&self, gallery: &Gallery, query: &EmbeddingRecord) -> Result<NormStats> {
        let subject = gallery.subject_key(&query.subject_id);
        let own: Vec<usize> = gallery.position(&query.exam_id).into_iter().collect();
        cohort_stats_excluding(query.vector(), &self.cohort, subject, &own)
    }

    /// Candidate-side statistics for gallery record `c`, leaving out the
    /// candidate's subject and the query exam.
    pub fn candidate_stats(
        &self,
        gallery: &Gallery,
        c: usize,
        query: &EmbeddingRecord,
    ) -> Result<NormStats> {
        let base = self.candidate[c]
            .get_or_init(|| {
                cohort_stats_excluding(
                    gallery.vector(c),
                    &self.cohort,
                    Some(gallery.subject_of(c)),
                    &[c],
                )
                .map_err(|e| match e {
                    Error::DegenerateCohort { sigma } => sigma,
                    _ => 0.0,
                })
            })
            .map_err(|sigma| Error::DegenerateCohort { sigma })?;
        let q = match gallery.position(&query.exam_id) {
            Some(q) => q,
            None => return Ok(base),
        };
        match self.cohort.member_of(q) {
            Some(_) if gallery.subject_of(q) != gallery.subject_of(c) => {
                base.without(dot(gallery.vector(c), query.vector()))
            }
            _ => Ok(base),
        }
    }

    pub fn apply(
        &self,
        gallery: &Gallery,
        shortlist: &Shortlist,
        query: &EmbeddingRecord,
    ) -> Result<Shortlist> {
        let q = match self.kind {
            NormKind::CandidateSide => None,
            _ => Some(self.query_stats(gallery, query)?),
        };
        let c = match self.kind {
            NormKind::QuerySide => Vec::new(),
            _ => shortlist
                .entries
                .iter()
                .map(|e| self.candidate_stats(gallery, e.index, query))
                .collect::<Result<Vec<_>>>()?,
        };
        normalize_scores(shortlist, self.kind, q.as_ref(), &c, gallery)
    }
}
