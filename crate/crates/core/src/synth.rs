//! Synthetic identity embeddings with controllable intra-subject noise and
//! temporal drift, used where real corpora are unavailable.

use chrono::{Days, NaiveDate};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gallery::EmbeddingRecord;
use crate::pipeline::{ExamMeta, DAYS_PER_YEAR, MIN_SPACING_DAYS};
use crate::seed::rng_for;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub n_subjects: usize,
    pub exams_min: usize,
    pub exams_max: usize,
    pub dim: usize,
    /// Expected norm of the per-exam Gaussian perturbation.
    pub intra_noise: f64,
    /// Rotation of the identity signal, in radians per year, along a fixed
    /// direction orthogonal to the prototype.
    pub drift_per_year: f64,
    pub start_date: NaiveDate,
    pub span_days: u32,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_subjects: 1000,
            exams_min: 2,
            exams_max: 7,
            dim: 512,
            intra_noise: 0.6,
            drift_per_year: 0.0,
            start_date: NaiveDate::from_ymd_opt(2005, 1, 1).expect("valid date"),
            span_days: 3650,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("synth: {m}")));
        if self.dim < 2 {
            return bad("dim must be at least 2");
        }
        if self.exams_min < 1 || self.exams_min > self.exams_max {
            return bad("need 1 <= exams_min <= exams_max");
        }
        if !(self.intra_noise >= 0.0) || !(self.drift_per_year >= 0.0) {
            return bad("noise and drift must be non-negative");
        }
        if (self.span_days as i64) < MIN_SPACING_DAYS * (self.exams_max as i64 - 1) {
            return bad("span_days too short for exams_max at 30-day spacing");
        }
        Ok(())
    }
}

fn gaussian(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= n);
}

fn subject(cfg: &SynthConfig, idx: usize) -> Result<Vec<(EmbeddingRecord, ExamMeta)>> {
    let mut rng = rng_for(cfg.seed, &[idx as u64]);
    let d = cfg.dim;
    let mut proto = gaussian(&mut rng, d);
    normalize(&mut proto);
    // Unit drift direction orthogonal to the prototype.
    let mut dir = gaussian(&mut rng, d);
    let along: f64 = dir.iter().zip(&proto).map(|(a, b)| a * b).sum();
    dir.iter_mut()
        .zip(&proto)
        .for_each(|(a, b)| *a -= along * b);
    normalize(&mut dir);

    let n = rng.random_range(cfg.exams_min..=cfg.exams_max);
    let slack = cfg.span_days as i64 - MIN_SPACING_DAYS * (n as i64 - 1);
    let mut offsets: Vec<i64> = (0..n).map(|_| rng.random_range(0..=slack)).collect();
    offsets.sort_unstable();
    let offsets: Vec<i64> = offsets
        .iter()
        .enumerate()
        .map(|(k, o)| o + MIN_SPACING_DAYS * k as i64)
        .collect();

    let sid = format!("S{idx:06}");
    let noise_scale = cfg.intra_noise / (d as f64).sqrt();
    let mut out = Vec::with_capacity(n);
    for (k, &off) in offsets.iter().enumerate() {
        let years = (off - offsets[0]) as f64 / DAYS_PER_YEAR;
        let (sin, cos) = (cfg.drift_per_year * years).sin_cos();
        let v: Vec<f64> = (0..d)
            .map(|i| {
                let z: f64 = StandardNormal.sample(&mut rng);
                cos * proto[i] + sin * dir[i] + noise_scale * z
            })
            .collect();
        let date = cfg.start_date + Days::new(off as u64);
        let eid = format!("{sid}_E{k:02}");
        let rec = EmbeddingRecord::new(sid.clone(), eid.clone(), date, &v)?;
        let mut meta = ExamMeta::new(sid.clone(), eid, date);
        meta.device = Some("synthetic".into());
        out.push((rec, meta));
    }
    Ok(out)
}

/// Generates embeddings and matching metadata. Subjects are generated
/// independently from seeds derived from (seed, subject index), so output
/// does not depend on thread count.
pub fn generate(cfg: &SynthConfig) -> Result<(Vec<EmbeddingRecord>, Vec<ExamMeta>)> {
    cfg.validate()?;
    let per: Vec<Vec<(EmbeddingRecord, ExamMeta)>> = (0..cfg.n_subjects)
        .into_par_iter()
        .map(|i| subject(cfg, i))
        .collect::<Result<_>>()?;
    Ok(per.into_iter().flatten().unzip())
}

/// Exam metadata only, with per-subject counts 2 + Geometric(1 − `p_more`)
/// capped at 10; a stand-in for a clinical exams-per-patient distribution.
pub fn count_population(n_subjects: usize, p_more: f64, seed: u64) -> Vec<ExamMeta> {
    let start = NaiveDate::from_ymd_opt(2000, 1, 1).expect("valid date");
    let mut rng = rng_for(seed, &[]);
    let mut out = Vec::new();
    for s in 0..n_subjects {
        let mut n = 2;
        while n < 10 && rng.random_bool(p_more) {
            n += 1;
        }
        for k in 0..n {
            out.push(ExamMeta::new(
                format!("P{s:06}"),
                format!("P{s:06}_E{k:02}"),
                start + Days::new(40 * k as u64),
            ));
        }
    }
    out
}
