use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use super::{run_gc, MetricSpec, SeedSummary};
use crate::error::{Error, Result};
use crate::gallery::Gallery;
use crate::metrics::MetricBundle;
use crate::seed::rng_for;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleConfig {
    pub gallery_sizes: Vec<usize>,
    pub exams_per_subject: Vec<usize>,
    pub seeds: Vec<u64>,
}

/// One (G, E) cell of the scale grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleCell {
    pub gallery_size: usize,
    pub exams_per_subject: usize,
    pub n_exams: usize,
    pub per_seed: Vec<(u64, MetricBundle)>,
    pub summary: SeedSummary,
}

/// Gallery positions for cell (G, E) under `seed`: G subjects drawn from
/// those with at least E exams, each keeping its earliest E exams.
pub fn scale_cell_gallery(pool: &Gallery, g: usize, e: usize, seed: u64) -> Result<Vec<usize>> {
    let mut eligible: Vec<Vec<usize>> = pool
        .records_by_subject()
        .into_iter()
        .filter(|exams| exams.len() >= e)
        .collect();
    if g > eligible.len() || g == 0 || e == 0 {
        return Err(Error::InsufficientSubjects {
            needed: g,
            available: eligible.len(),
            context: format!("scale cell G={g}, E={e}"),
        });
    }
    eligible.sort_by(|a, b| {
        pool.record(a[0])
            .subject_id
            .cmp(&pool.record(b[0]).subject_id)
    });
    let mut rng = rng_for(seed, &[g as u64, e as u64]);
    let mut chosen = sample(&mut rng, eligible.len(), g).into_vec();
    chosen.sort_unstable();
    let mut positions = Vec::with_capacity(g * e);
    for c in chosen {
        let mut exams = eligible[c].clone();
        exams.sort_by(|&a, &b| {
            let (ra, rb) = (pool.record(a), pool.record(b));
            ra.timestamp
                .cmp(&rb.timestamp)
                .then_with(|| ra.exam_id.cmp(&rb.exam_id))
        });
        positions.extend_from_slice(&exams[..e]);
    }
    Ok(positions)
}

/// Runs GC on every (G, E, seed) cell. Cells are processed one after
/// another; each GC run is parallel over queries.
pub fn run_scale(
    pool: &Gallery,
    config: &ScaleConfig,
    spec: &MetricSpec,
) -> Result<Vec<ScaleCell>> {
    if config.seeds.is_empty() {
        return Err(Error::InsufficientSeeds(0));
    }
    let mut cells = Vec::new();
    for &g in &config.gallery_sizes {
        for &e in &config.exams_per_subject {
            let mut per_seed = Vec::with_capacity(config.seeds.len());
            for &seed in &config.seeds {
                let positions = scale_cell_gallery(pool, g, e, seed)?;
                let sub = pool.subset(&positions)?;
                per_seed.push((seed, run_gc(&sub, spec)?.metrics));
            }
            let bundles: Vec<MetricBundle> = per_seed.iter().map(|p| p.1.clone()).collect();
            cells.push(ScaleCell {
                gallery_size: g,
                exams_per_subject: e,
                n_exams: g * e,
                summary: SeedSummary::from_bundles(&bundles)?,
                per_seed,
            });
        }
    }
    Ok(cells)
}
