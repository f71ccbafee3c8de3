use std::sync::OnceLock;

use super::norm::{mean_sd, NormStats, SIGMA_FLOOR};
use super::{normalize_scores, Cohort, NormKind};
use crate::error::{Error, Result};
use crate::gallery::{EmbeddingRecord, Gallery, Shortlist};

/// The `scan` cohort members most similar to `v` (member `own` skipped),
/// highest first.
fn window(
    v: &[f32],
    cohort: &Cohort,
    own: Option<usize>,
    scan: Option<usize>,
) -> Vec<(f64, usize)> {
    let mut scored: Vec<(f64, usize)> = cohort
        .scores(v)
        .into_iter()
        .enumerate()
        .filter(|&(m, _)| Some(m) != own)
        .map(|(m, s)| (s, m))
        .collect();
    let cmp = |a: &(f64, usize), b: &(f64, usize)| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1));
    if let Some(scan) = scan {
        if scan < scored.len() {
            if scan == 0 {
                return Vec::new();
            }
            scored.select_nth_unstable_by(scan - 1, cmp);
            scored.truncate(scan);
        }
    }
    scored.sort_unstable_by(cmp);
    scored
}

/// Mean and sample sd of the adaptive impostor set; sigma is floored so a
/// single impostor (N = 1) still yields finite scores.
fn adaptive_stats(top: &[(f64, usize)], needed: usize) -> Result<NormStats> {
    if top.len() < needed || top.is_empty() {
        return Err(Error::AdaptiveCohortTooSmall {
            needed,
            found: top.len(),
        });
    }
    let scores: Vec<f64> = top[..needed].iter().map(|p| p.0).collect();
    let (mu, sd) = mean_sd(&scores);
    Ok(NormStats {
        mu,
        sigma: sd.max(SIGMA_FLOOR),
        n_used: needed,
    })
}

fn admissible(cohort: &Cohort, m: usize, subject: Option<u32>) -> bool {
    subject.is_none() || cohort.gallery_subject(m) != subject
}

/// Adaptive symmetric normalization.
pub struct AsNormEngine {
    cohort: Cohort,
    top_n: usize,
    scan: Option<usize>,
    candidate: Vec<OnceLock<Vec<(f64, usize)>>>,
}

impl AsNormEngine {
    pub fn new(
        gallery: &Gallery,
        cohort: Cohort,
        top_n: usize,
        scan: Option<usize>,
    ) -> Result<Self> {
        if top_n == 0 || scan.is_some_and(|s| s < top_n) {
            return Err(Error::Config(format!(
                "AS-norm needs 1 <= N <= scan (N = {top_n}, scan = {scan:?})"
            )));
        }
        Ok(Self {
            cohort,
            top_n,
            scan,
            candidate: (0..gallery.len()).map(|_| OnceLock::new()).collect(),
        })
    }

    pub fn query_stats(&self, gallery: &Gallery, query: &EmbeddingRecord) -> Result<NormStats> {
        let pos = gallery.position(&query.exam_id);
        let own = pos.and_then(|p| self.cohort.member_of(p));
        let subject = gallery.subject_key(&query.subject_id);
        let top: Vec<(f64, usize)> = window(query.vector(), &self.cohort, own, self.scan)
            .into_iter()
            .filter(|&(_, m)| admissible(&self.cohort, m, subject))
            .take(self.top_n)
            .collect();
        adaptive_stats(&top, self.top_n)
    }

    pub fn candidate_stats(
        &self,
        gallery: &Gallery,
        c: usize,
        query: &EmbeddingRecord,
    ) -> Result<NormStats> {
        let cached = self.candidate[c].get_or_init(|| {
            let own = self.cohort.member_of(c);
            let subject = Some(gallery.subject_of(c));
            window(gallery.vector(c), &self.cohort, own, self.scan)
                .into_iter()
                .filter(|&(_, m)| admissible(&self.cohort, m, subject))
                .take(self.top_n + 1)
                .collect()
        });
        let q = gallery
            .position(&query.exam_id)
            .and_then(|p| self.cohort.member_of(p));
        let top: Vec<(f64, usize)> = cached
            .iter()
            .copied()
            .filter(|&(_, m)| Some(m) != q)
            .take(self.top_n)
            .collect();
        adaptive_stats(&top, self.top_n)
    }

    pub fn apply(
        &self,
        gallery: &Gallery,
        shortlist: &Shortlist,
        query: &EmbeddingRecord,
    ) -> Result<Shortlist> {
        let q = self.query_stats(gallery, query)?;
        let c = shortlist
            .entries
            .iter()
            .map(|e| self.candidate_stats(gallery, e.index, query))
            .collect::<Result<Vec<_>>>()?;
        normalize_scores(shortlist, NormKind::Symmetric, Some(&q), &c, gallery)
    }
}

/// One-shot AS-norm of a shortlist without caching.
pub fn as_norm(
    shortlist: &Shortlist,
    query: &EmbeddingRecord,
    gallery: &Gallery,
    cohort: &Cohort,
    top_n: usize,
    scan: Option<usize>,
) -> Result<Shortlist> {
    AsNormEngine::new(gallery, cohort.clone(), top_n, scan)?.apply(gallery, shortlist, query)
}
