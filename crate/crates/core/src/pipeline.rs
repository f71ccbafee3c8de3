//! Dataset construction: eligibility filters, fiducial range filters, exam
//! caps, temporal pair building, stratified sampling and attrition accounting.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use chrono::NaiveDate;
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::rng_for;

pub const MIN_SPACING_DAYS: i64 = 30;
pub const MIN_EXAMS_PER_SUBJECT: usize = 2;
pub const MAX_EXAMS_PER_SUBJECT: usize = 10;
pub const DAYS_PER_YEAR: f64 = 365.25;
/// Three months, in days.
pub const DEFAULT_TOLERANCE_DAYS: f64 = 91.0;

/// Metadata of one exam, as ingested before embeddings are attached.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExamMeta {
    pub subject_id: String,
    pub exam_id: String,
    pub timestamp: NaiveDate,
    /// Named fiducial measurements (ms, bpm, degrees).
    pub fiducials: BTreeMap<String, f64>,
    pub device: Option<String>,
    pub sample_rate: Option<f64>,
}

impl ExamMeta {
    pub fn new(
        subject_id: impl Into<String>,
        exam_id: impl Into<String>,
        timestamp: NaiveDate,
    ) -> Self {
        Self {
            subject_id: subject_id.into(),
            exam_id: exam_id.into(),
            timestamp,
            fiducials: BTreeMap::new(),
            device: None,
            sample_rate: None,
        }
    }
}

/// Inclusive per-feature bounds for outlier removal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiducialRanges {
    bounds: BTreeMap<String, (f64, f64)>,
}

impl FiducialRanges {
    pub fn new(bounds: BTreeMap<String, (f64, f64)>) -> Result<Self> {
        for (name, (lo, hi)) in &bounds {
            if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::Config(format!(
                    "fiducial range for {name} must satisfy min < max, got [{lo}, {hi}]"
                )));
            }
        }
        Ok(Self { bounds })
    }

    /// Extended physiological ranges, broad enough to keep cardiac patients
    /// while removing clearly erroneous fiducial extractions.
    pub fn extended_physiological() -> Self {
        let rows: [(&str, f64, f64); 13] = [
            ("VentricularRate", 40.0, 120.0),
            ("PRInterval", 100.0, 240.0),
            ("QRSDuration", 60.0, 150.0),
            ("QTInterval", 300.0, 500.0),
            ("QTCorrected", 300.0, 500.0),
            ("PAxis", -30.0, 90.0),
            ("RAxis", -90.0, 120.0),
            ("TAxis", -30.0, 120.0),
            ("POnset", 50.0, 500.0),
            ("POffset", 150.0, 550.0),
            ("QOnset", 200.0, 650.0),
            ("QOffset", 300.0, 750.0),
            ("TOffset", 500.0, 1200.0),
        ];
        Self {
            bounds: rows
                .iter()
                .map(|&(n, lo, hi)| (n.to_string(), (lo, hi)))
                .collect(),
        }
    }

    /// Reads `Feature = [min, max]` lines from a TOML document.
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let bounds: BTreeMap<String, (f64, f64)> =
            toml::from_str(s).map_err(|e| Error::Config(format!("fiducial ranges: {e}")))?;
        Self::new(bounds)
    }

    pub fn bounds(&self) -> &BTreeMap<String, (f64, f64)> {
        &self.bounds
    }

    pub fn admits(&self, exam: &ExamMeta) -> bool {
        exam.fiducials
            .iter()
            .all(|(name, v)| match self.bounds.get(name) {
                Some(&(lo, hi)) => *v >= lo && *v <= hi,
                None => true,
            })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttritionStep {
    pub name: String,
    pub ecgs: usize,
    pub patients: usize,
}

/// Surviving exam and patient counts after each construction step.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttritionReport {
    pub steps: Vec<AttritionStep>,
}

impl AttritionReport {
    pub fn record(&mut self, name: impl Into<String>, exams: &[ExamMeta]) {
        self.steps.push(AttritionStep {
            name: name.into(),
            ecgs: exams.len(),
            patients: count_subjects(exams),
        });
    }
}

impl fmt::Display for AttritionReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:>4}  {:<48} {:>10} {:>10}",
            "step", "description", "ECGs", "patients"
        )?;
        for (i, s) in self.steps.iter().enumerate() {
            writeln!(
                f,
                "{:>4}  {:<48} {:>10} {:>10}",
                i + 1,
                s.name,
                s.ecgs,
                s.patients
            )?;
        }
        Ok(())
    }
}

fn count_subjects(exams: &[ExamMeta]) -> usize {
    let mut seen: Vec<&str> = exams.iter().map(|e| e.subject_id.as_str()).collect();
    seen.sort_unstable();
    seen.dedup();
    seen.len()
}

/// Exam positions grouped per subject (first-appearance order of subjects),
/// each group sorted chronologically with exam id as tie-break.
fn chronological_groups(exams: &[ExamMeta]) -> Vec<Vec<usize>> {
    let mut order: HashMap<&str, usize> = HashMap::new();
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for (i, e) in exams.iter().enumerate() {
        let g = *order.entry(e.subject_id.as_str()).or_insert_with(|| {
            groups.push(Vec::new());
            groups.len() - 1
        });
        groups[g].push(i);
    }
    for g in &mut groups {
        g.sort_by(|&a, &b| {
            exams[a]
                .timestamp
                .cmp(&exams[b].timestamp)
                .then_with(|| exams[a].exam_id.cmp(&exams[b].exam_id))
        });
    }
    groups
}

fn keep_positions(exams: &[ExamMeta], mut keep: Vec<usize>) -> Vec<ExamMeta> {
    keep.sort_unstable();
    keep.into_iter().map(|i| exams[i].clone()).collect()
}

/// Common construction pipeline: valid subject id, greedy 30-day spacing with
/// at least two surviving exams, then a cap at the ten earliest exams.
/// Retained exams keep their input order.
pub fn apply_common_pipeline(exams: &[ExamMeta]) -> (Vec<ExamMeta>, AttritionReport) {
    let mut report = AttritionReport::default();
    let valid: Vec<ExamMeta> = exams
        .iter()
        .filter(|e| !e.subject_id.trim().is_empty())
        .cloned()
        .collect();
    report.record("Initial base with valid subject id", &valid);

    let mut spaced = Vec::new();
    for group in chronological_groups(&valid) {
        let mut kept: Vec<usize> = Vec::with_capacity(group.len());
        for i in group {
            match kept.last() {
                Some(&last)
                    if (valid[i].timestamp - valid[last].timestamp).num_days()
                        < MIN_SPACING_DAYS => {}
                _ => kept.push(i),
            }
        }
        if kept.len() >= MIN_EXAMS_PER_SUBJECT {
            spaced.extend(kept);
        }
    }
    let spaced = keep_positions(&valid, spaced);
    report.record("Multi-exam filter + 30-day spacing", &spaced);

    let capped = cap_exams(&spaced, MAX_EXAMS_PER_SUBJECT);
    report.record("Maximum 10 exams per subject", &capped);
    (capped, report)
}

/// Keeps the `cap` earliest exams of every subject.
pub fn cap_exams(exams: &[ExamMeta], cap: usize) -> Vec<ExamMeta> {
    let keep = chronological_groups(exams)
        .into_iter()
        .flat_map(|g| g.into_iter().take(cap))
        .collect();
    keep_positions(exams, keep)
}

/// Drops subjects with fewer than `min` exams.
pub fn require_min_exams(exams: &[ExamMeta], min: usize) -> Vec<ExamMeta> {
    let keep = chronological_groups(exams)
        .into_iter()
        .filter(|g| g.len() >= min)
        .flatten()
        .collect();
    keep_positions(exams, keep)
}

/// Keeps an exam iff every fiducial it reports lies within its bound.
pub fn apply_fiducial_filter(exams: &[ExamMeta], ranges: &FiducialRanges) -> Vec<ExamMeta> {
    exams.iter().filter(|e| ranges.admits(e)).cloned().collect()
}

/// Keeps exams recorded on the given device label.
pub fn apply_device_filter(exams: &[ExamMeta], device: &str) -> Vec<ExamMeta> {
    exams
        .iter()
        .filter(|e| e.device.as_deref() == Some(device))
        .cloned()
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemporalPair {
    pub subject_id: String,
    pub exam_a: String,
    pub exam_b: String,
    pub gap_days: i64,
    pub target_years: u32,
}

/// At most one pair per subject whose gap is within `tolerance_days` of
/// `target_years` (365.25-day years). The pair closest to the target wins;
/// ties go to the earlier first exam, then the earlier second exam.
pub fn build_temporal_pairs(
    exams: &[ExamMeta],
    target_years: u32,
    tolerance_days: f64,
) -> Vec<TemporalPair> {
    let target = DAYS_PER_YEAR * target_years as f64;
    let mut pairs = Vec::new();
    for group in chronological_groups(exams) {
        let mut best: Option<(f64, usize, usize)> = None;
        for (ai, &a) in group.iter().enumerate() {
            for &b in &group[ai + 1..] {
                let gap = (exams[b].timestamp - exams[a].timestamp).num_days();
                if gap <= 0 {
                    continue;
                }
                let off = (gap as f64 - target).abs();
                if off > tolerance_days {
                    continue;
                }
                // Groups are chronological, so the first strictly better
                // candidate found keeps the earlier-exam tie rule.
                if best.is_none_or(|(o, _, _)| off < o) {
                    best = Some((off, a, b));
                }
            }
        }
        if let Some((_, a, b)) = best {
            pairs.push(TemporalPair {
                subject_id: exams[a].subject_id.clone(),
                exam_a: exams[a].exam_id.clone(),
                exam_b: exams[b].exam_id.clone(),
                gap_days: (exams[b].timestamp - exams[a].timestamp).num_days(),
                target_years,
            });
        }
    }
    pairs
}

/// Pairs for several targets at once.
pub fn build_pairs_by_target(
    exams: &[ExamMeta],
    targets: &[u32],
    tolerance_days: f64,
) -> BTreeMap<u32, Vec<TemporalPair>> {
    targets
        .iter()
        .map(|&t| (t, build_temporal_pairs(exams, t, tolerance_days)))
        .collect()
}

/// Cuts every target down to exactly `p` subjects by seeded uniform sampling
/// without replacement. Selected pairs keep their original order.
pub fn fix_gallery_size(
    pairs_by_target: &BTreeMap<u32, Vec<TemporalPair>>,
    p: usize,
    seed: u64,
) -> Result<BTreeMap<u32, Vec<TemporalPair>>> {
    let mut out = BTreeMap::new();
    for (&target, pairs) in pairs_by_target {
        if pairs.len() < p {
            return Err(Error::InsufficientSubjects {
                needed: p,
                available: pairs.len(),
                context: format!("temporal target {target}y"),
            });
        }
        let mut rng = rng_for(seed, &[target as u64]);
        let mut chosen = index::sample(&mut rng, pairs.len(), p).into_vec();
        chosen.sort_unstable();
        out.insert(
            target,
            chosen.into_iter().map(|i| pairs[i].clone()).collect(),
        );
    }
    Ok(out)
}

/// Number of exams per subject, in first-appearance order.
pub fn exam_counts_per_subject(exams: &[ExamMeta]) -> Vec<u32> {
    chronological_groups(exams)
        .iter()
        .map(|g| g.len() as u32)
        .collect()
}

/// Largest-remainder apportionment of `total` across strata sizes. Ties in
/// the remainder go to the earlier stratum.
pub fn largest_remainder(sizes: &[usize], total: usize) -> Vec<usize> {
    let n: usize = sizes.iter().sum();
    if n == 0 {
        return vec![0; sizes.len()];
    }
    let mut alloc: Vec<usize> = sizes
        .iter()
        .map(|&s| (total as u128 * s as u128 / n as u128) as usize)
        .collect();
    let mut rema: Vec<(u128, usize)> = sizes
        .iter()
        .enumerate()
        .map(|(i, &s)| ((total as u128 * s as u128) % n as u128, i))
        .collect();
    rema.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let short = total - alloc.iter().sum::<usize>();
    for &(_, i) in rema.iter().take(short) {
        alloc[i] += 1;
    }
    alloc
}

/// Proportional stratified sampling of `p` subjects over the exams-per-subject
/// distribution; all exams of the selected subjects are kept in input order.
pub fn stratified_sample(exams: &[ExamMeta], p: usize, seed: u64) -> Result<Vec<ExamMeta>> {
    let groups = chronological_groups(exams);
    if p > groups.len() {
        return Err(Error::InsufficientSubjects {
            needed: p,
            available: groups.len(),
            context: "stratified sample".into(),
        });
    }
    let mut strata: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (gi, g) in groups.iter().enumerate() {
        strata.entry(g.len()).or_default().push(gi);
    }
    let sizes: Vec<usize> = strata.values().map(|v| v.len()).collect();
    let quotas = largest_remainder(&sizes, p);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = Vec::new();
    for (members, &q) in strata.values().zip(&quotas) {
        for i in index::sample(&mut rng, members.len(), q) {
            keep.extend_from_slice(&groups[members[i]]);
        }
    }
    Ok(keep_positions(exams, keep))
}

/// Population moments of a count distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mean: f64,
    /// Biased (population) variance.
    pub variance: f64,
    pub skewness: f64,
    pub kurtosis: f64,
    pub excess_kurtosis: f64,
}

pub fn distribution_moments(values: &[f64]) -> Result<Moments> {
    if values.len() < 2 {
        return Err(Error::InsufficientData(
            "moments need at least 2 patients".into(),
        ));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for v in values {
        let d = v - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    if m2 == 0.0 {
        return Err(Error::DegenerateDistribution);
    }
    let kurtosis = m4 / (m2 * m2);
    Ok(Moments {
        mean,
        variance: m2,
        skewness: m3 / m2.powf(1.5),
        kurtosis,
        excess_kurtosis: kurtosis - 3.0,
    })
}

const DATE_FMT: &str = "%Y-%m-%d";

/// Reads `subject_id<TAB>exam_id<TAB>YYYY-MM-DD<TAB>key=value;...`. The
/// reserved keys `device` and `sample_rate` fill the matching fields; other
/// keys are numeric fiducials. The fourth column may be empty or absent.
pub fn read_exam_meta(path: &Path) -> Result<Vec<ExamMeta>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let lineno = n + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() < 3 || cols.len() > 4 {
            return Err(Error::parse(
                path,
                lineno,
                "expected 3 or 4 tab-separated columns",
            ));
        }
        let timestamp = NaiveDate::parse_from_str(cols[2], DATE_FMT)
            .map_err(|e| Error::parse(path, lineno, format!("bad date `{}`: {e}", cols[2])))?;
        let mut exam = ExamMeta::new(cols[0], cols[1], timestamp);
        if let Some(kv) = cols.get(3) {
            for item in kv.split(';').map(str::trim).filter(|s| !s.is_empty()) {
                let (k, v) = item
                    .split_once('=')
                    .ok_or_else(|| Error::parse(path, lineno, format!("bad item `{item}`")))?;
                let num = || -> Result<f64> {
                    let x: f64 = v
                        .parse()
                        .map_err(|_| Error::parse(path, lineno, format!("`{k}` is not numeric")))?;
                    if !x.is_finite() {
                        return Err(Error::parse(path, lineno, format!("`{k}` is not finite")));
                    }
                    Ok(x)
                };
                match k {
                    "device" => exam.device = Some(v.to_string()),
                    "sample_rate" => exam.sample_rate = Some(num()?),
                    _ => {
                        exam.fiducials.insert(k.to_string(), num()?);
                    }
                }
            }
        }
        out.push(exam);
    }
    Ok(out)
}

pub fn write_exam_meta(path: &Path, exams: &[ExamMeta]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for e in exams {
        let mut items: Vec<String> = Vec::new();
        if let Some(d) = &e.device {
            items.push(format!("device={d}"));
        }
        if let Some(r) = e.sample_rate {
            items.push(format!("sample_rate={r}"));
        }
        items.extend(e.fiducials.iter().map(|(k, v)| format!("{k}={v}")));
        writeln!(
            w,
            "{}\t{}\t{}\t{}",
            e.subject_id,
            e.exam_id,
            e.timestamp.format(DATE_FMT),
            items.join(";")
        )
        .map_err(|err| Error::io(path, err))?;
    }
    w.flush().map_err(|err| Error::io(path, err))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn base() -> NaiveDate {
        NaiveDate::from_ymd_opt(2015, 1, 1).unwrap()
    }

    fn at(subject: &str, id: &str, day: i64) -> ExamMeta {
        ExamMeta::new(subject, id, base() + chrono::Duration::days(day))
    }

    fn ids(exams: &[ExamMeta]) -> Vec<&str> {
        exams.iter().map(|e| e.exam_id.as_str()).collect()
    }

    #[test]
    fn spacing_drops_close_subject() {
        let (out, report) = apply_common_pipeline(&[at("a", "a0", 0), at("a", "a1", 10)]);
        assert!(out.is_empty());
        assert_eq!(report.steps[1].patients, 0);
    }

    #[test]
    fn greedy_spacing_scan() {
        let exams = [
            at("a", "d0", 0),
            at("a", "d40", 40),
            at("a", "d45", 45),
            at("a", "d100", 100),
        ];
        let (out, _) = apply_common_pipeline(&exams);
        assert_eq!(ids(&out), vec!["d0", "d40", "d100"]);
    }

    #[test]
    fn cap_keeps_ten_earliest() {
        let exams: Vec<_> = (0..14)
            .rev()
            .map(|i| at("a", &format!("e{i:02}"), i * 31))
            .collect();
        let (out, report) = apply_common_pipeline(&exams);
        let mut got = ids(&out);
        got.sort();
        let want: Vec<String> = (0..10).map(|i| format!("e{i:02}")).collect();
        assert_eq!(got, want.iter().map(String::as_str).collect::<Vec<_>>());
        assert_eq!(
            report.steps.iter().map(|s| s.ecgs).collect::<Vec<_>>(),
            vec![14, 14, 10]
        );
    }

    #[test]
    fn empty_subject_ids_are_dropped() {
        let (_, report) = apply_common_pipeline(&[at("", "x", 0), at("a", "y", 0)]);
        assert_eq!(report.steps[0].ecgs, 1);
    }

    #[test]
    fn fiducial_examples() {
        let ranges = FiducialRanges::extended_physiological();
        let mut ok = at("a", "ok", 0);
        ok.fiducials.insert("VentricularRate".into(), 75.0);
        let mut bad = at("a", "bad", 0);
        bad.fiducials.insert("QTInterval".into(), 600.0);
        let bare = at("a", "bare", 0);
        assert_eq!(
            ids(&apply_fiducial_filter(&[ok, bad, bare], &ranges)),
            vec!["ok", "bare"]
        );
        assert_eq!(ranges.bounds()["VentricularRate"], (40.0, 120.0));
        assert_eq!(ranges.bounds()["QTInterval"], (300.0, 500.0));
    }

    #[test]
    fn ranges_validate_and_parse() {
        assert!(FiducialRanges::from_toml_str("VentricularRate = [120, 40]").is_err());
        let r =
            FiducialRanges::from_toml_str("PAxis = [-30, 90]\nTOffset = [500.0, 1200.0]").unwrap();
        assert_eq!(r.bounds()["PAxis"], (-30.0, 90.0));
    }

    #[test]
    fn pair_examples() {
        let d = |y, m, dd| NaiveDate::from_ymd_opt(y, m, dd).unwrap();
        let e = |id: &str, date| ExamMeta::new("s", id, date);
        let p = build_temporal_pairs(&[e("a", d(2015, 1, 1)), e("b", d(2016, 1, 5))], 1, 91.0);
        assert_eq!(p.len(), 1);
        assert_eq!(p[0].gap_days, 369);
        let p = build_temporal_pairs(&[e("a", d(2015, 1, 1)), e("b", d(2016, 7, 1))], 1, 91.0);
        assert!(p.is_empty());
    }

    #[test]
    fn closest_gap_matches_exhaustive_enumeration() {
        // Days 0, 60, 760: admissible 2y gaps are 760 (|29.5|) and 700 (|30.5|).
        let exams = [at("s", "x", 0), at("s", "y", 60), at("s", "z", 760)];
        let mut best = None;
        for i in 0..3 {
            for j in i + 1..3 {
                let gap = (exams[j].timestamp - exams[i].timestamp).num_days() as f64;
                let off = (gap - 730.5).abs();
                if off <= 91.0 && best.is_none_or(|(o, _, _)| off < o) {
                    best = Some((off, i, j));
                }
            }
        }
        let (_, i, j) = best.unwrap();
        let p = build_temporal_pairs(&exams, 2, 91.0);
        assert_eq!(
            (p[0].exam_a.as_str(), p[0].exam_b.as_str()),
            (exams[i].exam_id.as_str(), exams[j].exam_id.as_str())
        );
        assert_eq!(p[0].gap_days, 760);
    }

    #[test]
    fn equal_offsets_prefer_earlier_first_exam() {
        // Gaps 365 (0->365) and 365 (30->395) tie.
        let exams = [
            at("s", "a", 0),
            at("s", "b", 30),
            at("s", "c", 365),
            at("s", "d", 395),
        ];
        let p = build_temporal_pairs(&exams, 1, 91.0);
        assert_eq!((p[0].exam_a.as_str(), p[0].exam_b.as_str()), ("a", "c"));
    }

    fn pairs(n: usize, target: u32) -> Vec<TemporalPair> {
        (0..n)
            .map(|i| TemporalPair {
                subject_id: format!("s{i}"),
                exam_a: format!("a{i}"),
                exam_b: format!("b{i}"),
                gap_days: 365,
                target_years: target,
            })
            .collect()
    }

    #[test]
    fn fix_gallery_size_examples() {
        let mut m = BTreeMap::new();
        m.insert(1, pairs(5, 1));
        m.insert(5, pairs(5, 5));
        assert_eq!(fix_gallery_size(&m, 5, 1).unwrap(), m);
        m.insert(1, pairs(40, 1));
        let a = fix_gallery_size(&m, 5, 9).unwrap();
        assert_eq!(a, fix_gallery_size(&m, 5, 9).unwrap());
        assert!(a.values().all(|v| v.len() == 5));
        assert!(matches!(
            fix_gallery_size(&m, 6, 9),
            Err(Error::InsufficientSubjects { .. })
        ));
    }

    #[test]
    fn largest_remainder_examples() {
        assert_eq!(largest_remainder(&[90, 10], 10), vec![9, 1]);
        assert_eq!(largest_remainder(&[1, 1, 1], 2), vec![1, 1, 0]);
        assert_eq!(largest_remainder(&[3, 3, 4], 10), vec![3, 3, 4]);
    }

    #[test]
    fn stratified_full_population_and_strata() {
        let mut exams = Vec::new();
        for s in 0..100 {
            let n = if s < 90 { 2 } else { 3 };
            for k in 0..n {
                exams.push(at(&format!("s{s}"), &format!("s{s}e{k}"), k * 40));
            }
        }
        assert_eq!(stratified_sample(&exams, 100, 4).unwrap(), exams);
        let sample = stratified_sample(&exams, 10, 4).unwrap();
        let counts = exam_counts_per_subject(&sample);
        assert_eq!(counts.iter().filter(|&&c| c == 2).count(), 9);
        assert_eq!(counts.iter().filter(|&&c| c == 3).count(), 1);
        assert_eq!(sample, stratified_sample(&exams, 10, 4).unwrap());
    }

    #[test]
    fn moment_examples() {
        assert!(matches!(
            distribution_moments(&[3.0, 3.0, 3.0]),
            Err(Error::DegenerateDistribution)
        ));
        let m = distribution_moments(&[2.0, 2.0, 10.0]).unwrap();
        assert!((m.mean - 4.666_666_666_666_667).abs() < 1e-12);
        // Hand computation: deviations -8/3, -8/3, 16/3.
        let d = [-8.0 / 3.0, -8.0 / 3.0, 16.0 / 3.0];
        let m2: f64 = d.iter().map(|x| x * x).sum::<f64>() / 3.0;
        let m3: f64 = d.iter().map(|x| x * x * x).sum::<f64>() / 3.0;
        assert!((m.variance - m2).abs() < 1e-12);
        assert!((m.skewness - m3 / m2.powf(1.5)).abs() < 1e-12);
        assert!((m.excess_kurtosis - (m.kurtosis - 3.0)).abs() < 1e-15);
    }

    #[test]
    fn normal_sample_has_small_excess() {
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let v: Vec<f64> = (0..200_000)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let m = distribution_moments(&v).unwrap();
        assert!(m.excess_kurtosis.abs() < 0.1);
    }

    #[test]
    fn meta_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.tsv");
        let mut e = at("s1", "e1", 3);
        e.device = Some("ELI250".into());
        e.sample_rate = Some(500.0);
        e.fiducials.insert("PAxis".into(), -12.5);
        let plain = at("s2", "e2", 4);
        write_exam_meta(&p, &[e.clone(), plain.clone()]).unwrap();
        assert_eq!(read_exam_meta(&p).unwrap(), vec![e, plain]);
        std::fs::write(&p, "s\te\t2020-01-01\tQTInterval=abc\n").unwrap();
        assert!(read_exam_meta(&p).is_err());
    }

    fn arb_exams() -> impl Strategy<Value = Vec<ExamMeta>> {
        proptest::collection::vec((0u8..12, 0i64..2000, 30.0f64..160.0), 0..80).prop_map(|v| {
            v.into_iter()
                .enumerate()
                .map(|(i, (s, d, rate))| {
                    let mut e = at(&format!("s{s}"), &format!("e{i}"), d);
                    e.fiducials.insert("VentricularRate".into(), rate);
                    e
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn filters_commute_with_subject_partition(exams in arb_exams()) {
            let (left, right): (Vec<ExamMeta>, Vec<ExamMeta>) =
                exams.iter().cloned().partition(|e| e.subject_id.len() % 2 == 0 || e.subject_id.ends_with('1'));
            let ranges = FiducialRanges::extended_physiological();
            let sort = |mut v: Vec<ExamMeta>| { v.sort_by(|a, b| a.exam_id.cmp(&b.exam_id)); v };
            let whole = sort(apply_common_pipeline(&exams).0);
            let mut parts = apply_common_pipeline(&left).0;
            parts.extend(apply_common_pipeline(&right).0);
            prop_assert_eq!(whole, sort(parts));
            let whole = sort(apply_fiducial_filter(&exams, &ranges));
            let mut parts = apply_fiducial_filter(&left, &ranges);
            parts.extend(apply_fiducial_filter(&right, &ranges));
            prop_assert_eq!(whole, sort(parts));
        }

        #[test]
        fn pipeline_output_respects_spacing(exams in arb_exams()) {
            let (out, report) = apply_common_pipeline(&exams);
            for g in chronological_groups(&out) {
                prop_assert!(g.len() >= 2 && g.len() <= 10);
                for w in g.windows(2) {
                    prop_assert!((out[w[1]].timestamp - out[w[0]].timestamp).num_days() >= 30);
                }
            }
            for w in report.steps.windows(2) {
                prop_assert!(w[1].ecgs <= w[0].ecgs && w[1].patients <= w[0].patients);
            }
        }

        #[test]
        fn pair_gaps_within_tolerance(exams in arb_exams(), target in 1u32..=5) {
            for p in build_temporal_pairs(&exams, target, 91.0) {
                let t = target as f64 * 365.25;
                prop_assert!((p.gap_days as f64) >= t - 91.0 && (p.gap_days as f64) <= t + 91.0);
            }
        }

        #[test]
        fn stratified_sums_to_p(exams in arb_exams(), seed in any::<u64>(), frac in 0.0f64..1.0) {
            let n = exam_counts_per_subject(&exams).len();
            let p = (n as f64 * frac) as usize;
            let s = stratified_sample(&exams, p, seed).unwrap();
            prop_assert_eq!(exam_counts_per_subject(&s).len(), p);
            prop_assert_eq!(s, stratified_sample(&exams, p, seed).unwrap());
        }
    }
}
