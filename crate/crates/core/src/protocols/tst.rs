use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{evaluate_queries, run_gc, GcRun, MetricSpec, Probe, SeedSummary};
use crate::error::{Error, Result};
use crate::gallery::Gallery;
use crate::metrics::MetricBundle;
use crate::pipeline::{fix_gallery_size, TemporalPair};

/// Which exams act as queries and candidates within one temporal target.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TstMode {
    /// Leave-one-out over all 2P paired exams: a query meets its mate and
    /// both exams of every other subject.
    #[default]
    Both,
    /// Earlier exams query a gallery made of the later exams only.
    Later,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TstTarget {
    pub target_years: u32,
    pub gallery_subjects: usize,
    pub per_seed: Vec<(u64, MetricBundle)>,
    pub summary: SeedSummary,
}

fn positions(gallery: &Gallery, exam: &str) -> Result<usize> {
    gallery
        .position(exam)
        .ok_or_else(|| Error::Config(format!("paired exam `{exam}` has no embedding")))
}

/// Evaluates every temporal target on its fixed set of pairs. All targets
/// must hold the same number of pairs.
pub fn run_tst(
    gallery: &Gallery,
    pairs_by_target: &BTreeMap<u32, Vec<TemporalPair>>,
    mode: TstMode,
    spec: &MetricSpec,
) -> Result<BTreeMap<u32, GcRun>> {
    let sizes: Vec<usize> = pairs_by_target.values().map(Vec::len).collect();
    if sizes.windows(2).any(|w| w[0] != w[1]) {
        return Err(Error::Config(format!(
            "temporal targets must share one gallery size, got {sizes:?}"
        )));
    }
    let mut out = BTreeMap::new();
    for (&target, pairs) in pairs_by_target {
        let mut a = Vec::with_capacity(pairs.len());
        let mut b = Vec::with_capacity(pairs.len());
        for p in pairs {
            a.push(positions(gallery, &p.exam_a)?);
            b.push(positions(gallery, &p.exam_b)?);
        }
        let run = match mode {
            TstMode::Both => {
                let all: Vec<usize> = a.iter().zip(&b).flat_map(|(&x, &y)| [x, y]).collect();
                run_gc(&gallery.subset(&all)?, spec)?
            }
            TstMode::Later => {
                let later = gallery.subset(&b)?;
                let probes: Vec<Probe> = a
                    .iter()
                    .map(|&i| Probe::External(gallery.record(i)))
                    .collect();
                evaluate_queries(&later, &probes, spec)?
            }
        };
        out.insert(target, run);
    }
    Ok(out)
}

/// Draws P pairs per target for each seed and summarizes over seeds.
pub fn run_tst_seeds(
    gallery: &Gallery,
    pairs_by_target: &BTreeMap<u32, Vec<TemporalPair>>,
    p: usize,
    seeds: &[u64],
    mode: TstMode,
    spec: &MetricSpec,
) -> Result<Vec<TstTarget>> {
    if seeds.is_empty() {
        return Err(Error::InsufficientSeeds(0));
    }
    let mut per_target: BTreeMap<u32, Vec<(u64, MetricBundle)>> = BTreeMap::new();
    for &seed in seeds {
        let fixed = fix_gallery_size(pairs_by_target, p, seed)?;
        for (target, run) in run_tst(gallery, &fixed, mode, spec)? {
            per_target
                .entry(target)
                .or_default()
                .push((seed, run.metrics));
        }
    }
    per_target
        .into_iter()
        .map(|(target, per_seed)| {
            let bundles: Vec<MetricBundle> = per_seed.iter().map(|s| s.1.clone()).collect();
            Ok(TstTarget {
                target_years: target,
                gallery_subjects: p,
                summary: SeedSummary::from_bundles(&bundles)?,
                per_seed,
            })
        })
        .collect()
}
