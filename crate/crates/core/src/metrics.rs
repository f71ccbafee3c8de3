//! Identification and verification metrics: Rank@K, CMC, TAR@FAR and
//! seed-level t intervals.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::protocols::QueryOutcome;

/// Confidence level used for every interval estimate.
pub const CONFIDENCE_LEVEL: f64 = 0.95;

/// Fraction of mated queries whose first genuine candidate is within the top `k`.
/// Queries without a genuine mate are excluded from the denominator; a mated
/// query whose genuine candidate was not retrieved counts as a miss.
pub fn rank_at_k(outcomes: &[QueryOutcome], k: usize) -> Result<f64> {
    let mut n = 0usize;
    let mut hits = 0usize;
    for o in outcomes.iter().filter(|o| o.has_mate) {
        n += 1;
        if matches!(o.rank, Some(r) if r <= k) {
            hits += 1;
        }
    }
    if n == 0 {
        return Err(Error::EmptyOutcomeSet);
    }
    Ok(hits as f64 / n as f64)
}

/// Cumulative match characteristic for ranks 1..=max_rank.
pub fn cmc(outcomes: &[QueryOutcome], max_rank: usize) -> Result<Vec<f64>> {
    let mut counts = vec![0usize; max_rank + 1];
    let mut n = 0usize;
    for o in outcomes.iter().filter(|o| o.has_mate) {
        n += 1;
        if let Some(r) = o.rank {
            if r <= max_rank {
                counts[r] += 1;
            }
        }
    }
    if n == 0 {
        return Err(Error::EmptyOutcomeSet);
    }
    let mut acc = 0usize;
    Ok(counts[1..]
        .iter()
        .map(|c| {
            acc += c;
            acc as f64 / n as f64
        })
        .collect())
}

/// Number of impostor scores allowed at or above the threshold: `floor(far * n)`.
pub fn allowed_false_accepts(far: f64, n_impostors: u64) -> u64 {
    // The epsilon absorbs products such as 1e-3 * 1000 landing a hair below 1.
    (far * n_impostors as f64 + 1e-9).floor() as u64
}

fn check_far(far: f64, n_impostors: u64) -> Result<u64> {
    if !(far > 0.0 && far < 1.0) {
        return Err(Error::Config(format!("FAR must be in (0,1), got {far}")));
    }
    let m = allowed_false_accepts(far, n_impostors);
    if m == 0 {
        return Err(Error::InsufficientImpostors {
            far,
            impostors: n_impostors,
            needed: (1.0 / far).ceil() as u64,
        });
    }
    Ok(m)
}

/// Acceptance threshold from the highest impostor scores.
///
/// `top_desc` holds the largest impostor scores sorted descending, at least
/// `min(m + 1, n_total)` of them where `m = floor(far * n_total)`. The
/// threshold is the smallest impostor score `t` with `#{impostor >= t} <= m`;
/// if a tie at the top makes no impostor score admissible, it is the next
/// float above the maximum impostor score.
pub fn threshold_from_top(top_desc: &[f64], n_total: u64, far: f64) -> Result<f64> {
    let m = check_far(far, n_total)? as usize;
    if m as u64 >= n_total {
        return top_desc.last().copied().ok_or(Error::EmptyInput);
    }
    if top_desc.len() < m + 1 {
        return Err(Error::InsufficientData(format!(
            "threshold needs the top {} impostor scores, only {} kept",
            m + 1,
            top_desc.len()
        )));
    }
    let boundary = top_desc[m - 1];
    if top_desc[m] < boundary {
        return Ok(boundary);
    }
    // Tie group straddles position m; step up to the next distinct value.
    let first_tied = top_desc[..m]
        .iter()
        .position(|&s| s == boundary)
        .unwrap_or(m - 1);
    if first_tied == 0 {
        Ok(top_desc[0].next_up())
    } else {
        Ok(top_desc[first_tied - 1])
    }
}

/// Threshold for a complete impostor score set.
pub fn verification_threshold(impostor: &[f64], far: f64) -> Result<f64> {
    if impostor.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut sorted = impostor.to_vec();
    sorted.sort_unstable_by(|a, b| b.total_cmp(a));
    threshold_from_top(&sorted, impostor.len() as u64, far)
}

/// True-accept rate at the threshold selected for `far`; scores at or above
/// the threshold are accepted.
pub fn tar_at_far(genuine: &[f64], impostor: &[f64], far: f64) -> Result<f64> {
    if genuine.is_empty() {
        return Err(Error::EmptyInput);
    }
    let t = verification_threshold(impostor, far)?;
    Ok(accept_rate(genuine, t))
}

pub fn accept_rate(scores: &[f64], threshold: f64) -> f64 {
    scores.iter().filter(|&&s| s >= threshold).count() as f64 / scores.len() as f64
}

/// Streaming keeper of the largest impostor scores, sized so that every
/// requested FAR can be resolved exactly without storing all scores.
#[derive(Debug, Clone)]
pub struct ImpostorTail {
    capacity: usize,
    buf: Vec<f64>,
    floor: f64,
    total: u64,
}

impl ImpostorTail {
    /// `capacity` must be at least `floor(max_far * n_total) + 1`.
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            buf: Vec::new(),
            floor: f64::NEG_INFINITY,
            total: 0,
        }
    }

    /// Capacity needed for the given impostor count and FAR list.
    pub fn capacity_for(n_impostors: u64, fars: &[f64]) -> usize {
        let max_far = fars.iter().copied().fold(0.0, f64::max);
        allowed_false_accepts(max_far, n_impostors) as usize + 1
    }

    #[inline]
    pub fn push(&mut self, score: f64) {
        self.total += 1;
        if score < self.floor {
            return;
        }
        self.buf.push(score);
        if self.buf.len() >= 2 * self.capacity {
            self.compact();
        }
    }

    fn compact(&mut self) {
        if self.buf.len() > self.capacity {
            let k = self.capacity;
            self.buf
                .select_nth_unstable_by(k - 1, |a, b| b.total_cmp(a));
            self.buf.truncate(k);
            self.floor = self.buf.iter().copied().fold(f64::INFINITY, f64::min);
        }
    }

    pub fn merge(mut self, other: ImpostorTail) -> ImpostorTail {
        self.total += other.total;
        self.capacity = self.capacity.max(other.capacity);
        self.buf.extend(other.buf);
        self.compact();
        self
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    /// Retained scores, sorted descending.
    pub fn top_desc(&self) -> Vec<f64> {
        let mut v = self.buf.clone();
        v.sort_unstable_by(|a, b| b.total_cmp(a));
        v.truncate(self.capacity);
        v
    }

    pub fn threshold(&self, far: f64) -> Result<f64> {
        threshold_from_top(&self.top_desc(), self.total, far)
    }
}

/// Rank@K and TAR@FAR for one protocol run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricBundle {
    /// `(K, Rank@K)` pairs, K ascending.
    pub rank_at: Vec<(usize, f64)>,
    /// `(FAR, TAR)` pairs; `None` when the FAR is not resolvable.
    pub tar_at_far: Vec<(f64, Option<f64>)>,
    pub n_queries: usize,
    pub n_no_mate: usize,
    pub n_genuine_scores: u64,
    pub n_impostor_scores: u64,
}

impl MetricBundle {
    pub fn rank(&self, k: usize) -> Option<f64> {
        self.rank_at.iter().find(|(kk, _)| *kk == k).map(|p| p.1)
    }

    pub fn tar(&self, far: f64) -> Option<f64> {
        self.tar_at_far
            .iter()
            .find(|(f, _)| *f == far)
            .and_then(|p| p.1)
    }
}

/// Builds a bundle from outcomes and score pools. Unresolvable FAR values
/// become `None` rather than failing the whole bundle.
pub fn bundle(
    outcomes: &[QueryOutcome],
    ks: &[usize],
    fars: &[f64],
    genuine: &[f64],
    impostors: &ImpostorTail,
) -> Result<MetricBundle> {
    let rank_at = ks
        .iter()
        .map(|&k| rank_at_k(outcomes, k).map(|r| (k, r)))
        .collect::<Result<Vec<_>>>()?;
    let tar_at_far = fars
        .iter()
        .map(|&far| {
            let tar = if genuine.is_empty() {
                None
            } else {
                impostors
                    .threshold(far)
                    .ok()
                    .map(|t| accept_rate(genuine, t))
            };
            (far, tar)
        })
        .collect();
    Ok(MetricBundle {
        rank_at,
        tar_at_far,
        n_queries: outcomes.iter().filter(|o| o.has_mate).count(),
        n_no_mate: outcomes.iter().filter(|o| !o.has_mate).count(),
        n_genuine_scores: genuine.len() as u64,
        n_impostor_scores: impostors.total(),
    })
}

/// Seed-level mean with a two-sided t-based 95% half-width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntervalEstimate {
    pub mean: f64,
    pub half_width: f64,
    pub n_seeds: usize,
    pub level: f64,
}

impl IntervalEstimate {
    pub fn lower(&self) -> f64 {
        self.mean - self.half_width
    }

    pub fn upper(&self) -> f64 {
        self.mean + self.half_width
    }

    /// Lower bound for display on an intrinsically non-negative metric.
    pub fn display_lower(&self) -> f64 {
        self.lower().max(0.0)
    }
}

/// Two-sided quantile `t_{(1+level)/2, df}`.
pub fn t_quantile(level: f64, df: f64) -> f64 {
    let dist = StudentsT::new(0.0, 1.0, df).expect("df > 0");
    let p = 0.5 + level / 2.0;
    let mut x = dist.inverse_cdf(p);
    // Newton polish on the CDF; the library inverse is not always
    // accurate to the last few digits.
    use statrs::distribution::Continuous;
    for _ in 0..4 {
        let f = dist.cdf(x) - p;
        let d = dist.pdf(x);
        if d <= 0.0 || !f.is_finite() {
            break;
        }
        let step = f / d;
        x -= step;
        if step.abs() < 1e-15 * x.abs().max(1.0) {
            break;
        }
    }
    x
}

pub fn t_interval(values: &[f64]) -> Result<IntervalEstimate> {
    let n = values.len();
    if n < 2 {
        return Err(Error::InsufficientSeeds(n));
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let sd = var.sqrt();
    let half_width = if sd == 0.0 {
        0.0
    } else {
        t_quantile(CONFIDENCE_LEVEL, (n - 1) as f64) * sd / (n as f64).sqrt()
    };
    Ok(IntervalEstimate {
        mean,
        half_width,
        n_seeds: n,
        level: CONFIDENCE_LEVEL,
    })
}
