use crate::error::Result;
use crate::gallery::{top_k_vector, EmbeddingRecord, Gallery, Shortlist};

/// q′ = normalize(q + Σ max(sᵢ, 0)^α xᵢ) over the first `qe_k` shortlist
/// entries. Returns `q` unchanged when nothing is added.
pub fn expand_query(
    query: &[f32],
    shortlist: &Shortlist,
    gallery: &Gallery,
    qe_k: usize,
    alpha: f64,
) -> Vec<f32> {
    let mut acc: Vec<f64> = query.iter().map(|&x| x as f64).collect();
    let mut added = false;
    for e in shortlist.entries.iter().take(qe_k) {
        let w = e.raw_score.max(0.0).powf(alpha);
        if w > 0.0 {
            added = true;
            for (a, &x) in acc.iter_mut().zip(gallery.vector(e.index)) {
                *a += w * x as f64;
            }
        }
    }
    if !added {
        return query.to_vec();
    }
    let norm = acc.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return query.to_vec();
    }
    acc.iter().map(|x| (x / norm) as f32).collect()
}

/// Expands the query with its top `qe_k` neighbours and retrieves a new
/// top-`shortlist_k` shortlist. `raw_score` keeps the similarity to the
/// original query; `score` is the similarity to the expanded one.
pub fn alpha_qe(
    query: &EmbeddingRecord,
    shortlist: &Shortlist,
    gallery: &Gallery,
    qe_k: usize,
    alpha: f64,
    shortlist_k: usize,
    exclude_self: bool,
) -> Result<Shortlist> {
    let q2 = expand_query(query.vector(), shortlist, gallery, qe_k, alpha);
    let excluded = if exclude_self {
        gallery.position(&query.exam_id)
    } else {
        None
    };
    let mut entries = top_k_vector(gallery, &q2, shortlist_k, excluded)?;
    for e in &mut entries {
        e.raw_score = crate::gallery::dot(query.vector(), gallery.vector(e.index));
    }
    Ok(Shortlist {
        query_exam_id: query.exam_id.clone(),
        entries,
    })
}
