use std::collections::HashSet;

use crate::gallery::{Gallery, Shortlist};

/// Keeps the best entry per subject: each identity is scored by its maximum
/// entry and identities are ranked by that maximum.
pub fn best_of_k(shortlist: &Shortlist, gallery: &Gallery) -> Shortlist {
    let mut sorted = shortlist.clone();
    sorted.sort(gallery);
    let mut seen = HashSet::new();
    sorted
        .entries
        .retain(|e| seen.insert(gallery.subject_of(e.index)));
    sorted
}

/// Subject ids with their fused scores, best first.
pub fn identity_ranking(shortlist: &Shortlist, gallery: &Gallery) -> Vec<(String, f64)> {
    best_of_k(shortlist, gallery)
        .entries
        .iter()
        .map(|e| (gallery.record(e.index).subject_id.clone(), e.score))
        .collect()
}
