//! Experiment drivers: leave-one-out general comparability (GC), the scale
//! grid, the constant-gallery temporal stress test (TST) and fixed-gallery
//! reranking evaluation (RR).

mod gc;
mod rr;
mod scale;
mod tst;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{t_interval, IntervalEstimate, MetricBundle};

pub use gc::{evaluate_queries, run_gc, GcRun, Probe};
pub use rr::{outcome_from_shortlist, rerank_runs, run_rr, run_rr_many, RerankRun, RrRun};
pub use scale::{run_scale, scale_cell_gallery, ScaleCell, ScaleConfig};
pub use tst::{run_tst, run_tst_seeds, TstMode, TstTarget};

/// Result of one identification query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryOutcome {
    pub query_exam_id: String,
    pub query_subject_id: String,
    /// 1-based rank of the first same-subject candidate. `None` when the
    /// query has no mate, or when the mate fell outside a reranked shortlist.
    pub rank: Option<usize>,
    pub has_mate: bool,
    /// First two ranked scores (s₁ ≥ s₂); s₂ = s₁ with a single candidate.
    pub top_scores: (f64, f64),
    pub top1_subject_id: String,
}

impl QueryOutcome {
    pub fn top1_correct(&self) -> bool {
        self.rank == Some(1)
    }
}

/// Rank@K and TAR@FAR points to report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSpec {
    pub ks: Vec<usize>,
    pub fars: Vec<f64>,
}

impl Default for MetricSpec {
    fn default() -> Self {
        Self {
            ks: vec![1, 5, 10],
            fars: vec![1e-3, 1e-4],
        }
    }
}

impl MetricSpec {
    pub fn validate(&self) -> Result<()> {
        if self.ks.is_empty() || self.ks[0] < 1 || self.ks.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(
                "K values must be >= 1 and strictly ascending".into(),
            ));
        }
        if self.fars.iter().any(|&f| !(f > 0.0 && f < 1.0)) {
            return Err(Error::Config("FAR values must lie in (0, 1)".into()));
        }
        Ok(())
    }

    pub fn max_k(&self) -> usize {
        self.ks.last().copied().unwrap_or(1)
    }
}

/// Mean over seeds with a t-based interval when at least two seeds exist.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub interval: Option<IntervalEstimate>,
}

impl Estimate {
    pub fn from_values(values: &[f64]) -> Self {
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let interval = if values.len() >= 2 {
            t_interval(values).ok()
        } else {
            None
        };
        Self { mean, interval }
    }

    pub fn half_width(&self) -> Option<f64> {
        self.interval.map(|i| i.half_width)
    }
}

/// Seed-level summary of metric bundles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub n_seeds: usize,
    pub rank_at: Vec<(usize, Estimate)>,
    /// `None` when any seed could not resolve the FAR.
    pub tar_at_far: Vec<(f64, Option<Estimate>)>,
}

impl SeedSummary {
    pub fn from_bundles(bundles: &[MetricBundle]) -> Result<Self> {
        let first = bundles.first().ok_or(Error::InsufficientSeeds(0))?;
        let rank_at = first
            .rank_at
            .iter()
            .enumerate()
            .map(|(i, &(k, _))| {
                let v: Vec<f64> = bundles.iter().map(|b| b.rank_at[i].1).collect();
                (k, Estimate::from_values(&v))
            })
            .collect();
        let tar_at_far = first
            .tar_at_far
            .iter()
            .enumerate()
            .map(|(i, &(far, _))| {
                let v: Option<Vec<f64>> = bundles.iter().map(|b| b.tar_at_far[i].1).collect();
                (far, v.map(|v| Estimate::from_values(&v)))
            })
            .collect();
        Ok(Self {
            n_seeds: bundles.len(),
            rank_at,
            tar_at_far,
        })
    }

    pub fn rank(&self, k: usize) -> Option<Estimate> {
        self.rank_at.iter().find(|p| p.0 == k).map(|p| p.1)
    }

    pub fn tar(&self, far: f64) -> Option<Estimate> {
        self.tar_at_far
            .iter()
            .find(|p| p.0 == far)
            .and_then(|p| p.1)
    }
}
