//! Run orchestration: data preparation, protocol execution, report output
//! and static validation.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::confidence::run_confidence;
use crate::config::{Config, FiducialSetting};
use crate::error::{Error, Result};
use crate::gallery::{load_embeddings, EmbeddingRecord, Gallery};
use crate::metrics::allowed_false_accepts;
use crate::pipeline::{
    apply_common_pipeline, apply_device_filter, apply_fiducial_filter, build_pairs_by_target,
    distribution_moments, exam_counts_per_subject, read_exam_meta, stratified_sample,
    AttritionReport, ExamMeta, FiducialRanges, TemporalPair,
};
use crate::protocols::{rerank_runs, run_gc, run_scale, run_tst_seeds, GcRun, TstMode};
use crate::report::{
    ConfidenceSection, ConfidenceSummary, GcSummary, OutcomeDump, Report, RerankRow, RerankSection,
    RunManifest, SamplingSection,
};
use crate::rerank::{Cohort, CohortSpec, RerankContext};
use crate::synth;

pub const ENGINE_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Also write per-query outcomes, genuine scores and the impostor tail.
    pub dump_outcomes: bool,
}

/// Evaluation data after the construction pipeline.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub gallery: Gallery,
    pub exams: Vec<ExamMeta>,
    pub attrition: AttritionReport,
    pub sampling: Option<SamplingSection>,
    pub external_pools: BTreeMap<String, Vec<EmbeddingRecord>>,
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// sha256 of every input file named by the config.
pub fn input_digests(cfg: &Config) -> Result<BTreeMap<String, String>> {
    let mut files: Vec<&Path> = Vec::new();
    files.extend(cfg.input.embeddings.as_deref());
    files.extend(cfg.input.metadata.as_deref());
    if let FiducialSetting::File(p) = &cfg.pipeline.fiducial_ranges {
        files.push(p);
    }
    if let Some(rr) = &cfg.rr {
        files.extend(rr.external_pools.values().map(PathBuf::as_path));
    }
    files
        .into_iter()
        .map(|p| Ok((p.display().to_string(), sha256_file(&cfg.resolve(p))?)))
        .collect()
}

fn count_moments(exams: &[ExamMeta]) -> Result<crate::pipeline::Moments> {
    let counts: Vec<f64> = exam_counts_per_subject(exams)
        .into_iter()
        .map(f64::from)
        .collect();
    distribution_moments(&counts)
}

fn n_subjects(exams: &[ExamMeta]) -> usize {
    exams
        .iter()
        .map(|e| e.subject_id.as_str())
        .collect::<HashSet<_>>()
        .len()
}

/// Loads inputs and applies the configured construction steps.
pub fn prepare(cfg: &Config) -> Result<Prepared> {
    let (records, metas) = match (&cfg.input.embeddings, &cfg.synth) {
        (Some(path), _) => {
            let records = load_embeddings(&cfg.resolve(path))?;
            let metas = match &cfg.input.metadata {
                Some(m) => read_exam_meta(&cfg.resolve(m))?,
                None => records
                    .iter()
                    .map(|r| ExamMeta::new(r.subject_id.clone(), r.exam_id.clone(), r.timestamp))
                    .collect(),
            };
            (records, metas)
        }
        (None, Some(s)) => synth::generate(s)?,
        (None, None) => {
            return Err(Error::Config(
                "either input.embeddings or [synth] is required".into(),
            ))
        }
    };

    let with_vectors: HashSet<&str> = records.iter().map(|r| r.exam_id.as_str()).collect();
    let metas: Vec<ExamMeta> = metas
        .into_iter()
        .filter(|m| with_vectors.contains(m.exam_id.as_str()))
        .collect();

    let p = &cfg.pipeline;
    let (mut exams, mut attrition) = if p.common {
        apply_common_pipeline(&metas)
    } else {
        let mut a = AttritionReport::default();
        a.record("Exams with embeddings", &metas);
        (metas, a)
    };
    let ranges = match &p.fiducial_ranges {
        FiducialSetting::None => None,
        FiducialSetting::Extended => Some(FiducialRanges::extended_physiological()),
        FiducialSetting::File(path) => {
            let path = cfg.resolve(path);
            let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            Some(FiducialRanges::from_toml_str(&text)?)
        }
    };
    if let Some(r) = ranges {
        exams = apply_fiducial_filter(&exams, &r);
        attrition.record("Fiducial range filter", &exams);
    }
    if let Some(device) = &p.device {
        exams = apply_device_filter(&exams, device);
        attrition.record(format!("Device = {device}"), &exams);
    }
    let mut sampling = None;
    if let Some(target) = p.stratified_patients {
        let before = count_moments(&exams)?;
        let patients_before = n_subjects(&exams);
        exams = stratified_sample(&exams, target, cfg.run.seeds[0])?;
        attrition.record("Stratified sample", &exams);
        sampling = Some(SamplingSection {
            patients_before,
            patients_after: n_subjects(&exams),
            before,
            after: count_moments(&exams)?,
        });
    }

    let keep: HashSet<&str> = exams.iter().map(|e| e.exam_id.as_str()).collect();
    let records: Vec<EmbeddingRecord> = records
        .into_iter()
        .filter(|r| keep.contains(r.exam_id.as_str()))
        .collect();
    let gallery = Gallery::new(records)?;

    let mut external_pools = BTreeMap::new();
    if let Some(rr) = &cfg.rr {
        for (label, path) in &rr.external_pools {
            external_pools.insert(label.clone(), load_embeddings(&cfg.resolve(path))?);
        }
    }
    Ok(Prepared {
        gallery,
        exams,
        attrition,
        sampling,
        external_pools,
    })
}

fn tst_pairs(cfg: &Config, exams: &[ExamMeta]) -> Option<BTreeMap<u32, Vec<TemporalPair>>> {
    cfg.tst
        .as_ref()
        .map(|t| build_pairs_by_target(exams, &t.targets, t.tolerance_days))
}

/// Runs every configured protocol. The manifest's wall-clock fields are
/// filled in here; nothing else depends on time.
pub fn execute(cfg: &Config, opts: RunOptions) -> Result<(Report, OutcomeDump)> {
    cfg.check()?;
    let started = Instant::now();
    let started_unix_s = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let input_digests = input_digests(cfg)?;
    let data = prepare(cfg)?;
    let g = &data.gallery;
    let spec = &cfg.metrics;
    let seeds = &cfg.run.seeds;
    let mut dump = OutcomeDump::default();

    let need_gc = cfg.gc_enabled() || cfg.rr.is_some() || cfg.confidence.is_some();
    let gc_run: Option<GcRun> = if need_gc {
        Some(run_gc(g, spec)?)
    } else {
        None
    };

    let gc = match (&gc_run, cfg.gc_enabled()) {
        (Some(run), true) => Some(GcSummary {
            n_exams: g.len(),
            n_subjects: g.n_subjects(),
            metrics: run.metrics.clone(),
        }),
        _ => None,
    };

    let scale = match cfg.scale_config() {
        Some(sc) => Some(run_scale(g, &sc, spec)?),
        None => None,
    };

    let tst = match (&cfg.tst, tst_pairs(cfg, &data.exams)) {
        (Some(t), Some(pairs)) => Some(run_tst_seeds(
            g,
            &pairs,
            t.gallery_subjects,
            seeds,
            t.mode,
            spec,
        )?),
        _ => None,
    };

    let rerank = match (&cfg.rr, &gc_run) {
        (Some(rr), Some(base)) => {
            let specs = cfg.rerank_specs()?;
            let ctx = RerankContext {
                convention: rr.convention,
                external_pools: data.external_pools.clone(),
            };
            let runs = rerank_runs(g, &specs, &ctx, spec, base)?;
            let mut rows = Vec::with_capacity(runs.len());
            for run in runs {
                rows.push(RerankRow {
                    method: run.method.clone(),
                    code: run.code.clone(),
                    metrics: run.metrics,
                });
                if opts.dump_outcomes {
                    dump.rerank
                        .push((format!("{}:{}", run.method, run.code), run.outcomes));
                }
            }
            Some(RerankSection {
                shortlist_k: rr.shortlist_k,
                baseline: base.metrics.clone(),
                runs: rows,
            })
        }
        _ => None,
    };

    let confidence = match (&cfg.confidence, &gc_run) {
        (Some(c), Some(base)) => {
            let per_seed = seeds
                .iter()
                .map(|&seed| {
                    run_confidence(
                        &base.outcomes,
                        c.calibration_fraction,
                        seed,
                        c.l2_lambda,
                        c.bins,
                        &c.taus,
                    )
                    .map(|r| (seed, r))
                })
                .collect::<Result<Vec<_>>>()?;
            let reports: Vec<_> = per_seed.iter().map(|(_, r)| &r.report).collect();
            let summary = ConfidenceSummary::from_reports(&reports);
            Some(ConfidenceSection { per_seed, summary })
        }
        _ => None,
    };

    if opts.dump_outcomes {
        if let Some(run) = gc_run {
            dump.gc = Some((run.outcomes, run.genuine, run.impostors));
        }
    }

    let manifest = RunManifest {
        run_id: cfg.run.id.clone(),
        engine_version: ENGINE_VERSION.to_string(),
        config: serde_json::to_value(cfg)?,
        input_digests,
        seeds: seeds.clone(),
        started_unix_s,
        elapsed_ms: started.elapsed().as_millis() as u64,
    };
    let report = Report {
        manifest,
        attrition: Some(data.attrition),
        sampling: data.sampling,
        gc,
        scale,
        tst,
        rerank,
        confidence,
    };
    Ok((report, dump))
}

/// Executes `cfg` and writes the report into `<output_dir>/<run id>`.
///
/// Files are written to a staging directory first and moved into place only
/// once complete, so a failed run leaves any earlier report untouched.
pub fn run(cfg: &Config, opts: RunOptions) -> Result<PathBuf> {
    let (report, dump) = execute(cfg, opts)?;
    let root = cfg.output_dir();
    std::fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
    let target = root.join(&cfg.run.id);
    let staging = root.join(format!(".{}.staging-{}", cfg.run.id, std::process::id()));
    if staging.exists() {
        std::fs::remove_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;
    }
    std::fs::create_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;
    if let Err(e) = report.write(&staging, opts.dump_outcomes.then_some(&dump)) {
        let _ = std::fs::remove_dir_all(&staging);
        return Err(e);
    }
    let old = root.join(format!(".{}.previous-{}", cfg.run.id, std::process::id()));
    if target.exists() {
        std::fs::rename(&target, &old).map_err(|e| Error::io(&target, e))?;
    }
    if let Err(e) = std::fs::rename(&staging, &target) {
        if old.exists() {
            let _ = std::fs::rename(&old, &target);
        }
        return Err(Error::io(&target, e));
    }
    if old.exists() {
        std::fs::remove_dir_all(&old).map_err(|e| Error::io(&old, e))?;
    }
    Ok(target)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Fatal,
    Warning,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub severity: Severity,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = match self.severity {
            Severity::Fatal => "fatal",
            Severity::Warning => "warning",
        };
        write!(f, "{tag}: {}", self.message)
    }
}

pub fn has_fatal(diags: &[Diagnostic]) -> bool {
    diags.iter().any(|d| d.severity == Severity::Fatal)
}

/// Impostor comparisons of leave-one-out search over a gallery with these
/// per-subject exam counts.
pub fn loo_impostor_count(counts: &[u64]) -> u64 {
    let n: u64 = counts.iter().sum();
    n.saturating_mul(n.saturating_sub(1))
        - counts.iter().map(|&c| c * c.saturating_sub(1)).sum::<u64>()
}

fn far_diagnostics(out: &mut Vec<Diagnostic>, fars: &[f64], impostors: u64, context: &str) {
    for &far in fars {
        if allowed_false_accepts(far, impostors) == 0 {
            let e = Error::InsufficientImpostors {
                far,
                impostors,
                needed: (1.0 / far).ceil() as u64,
            };
            out.push(Diagnostic {
                severity: Severity::Fatal,
                message: format!("{context}: {e}"),
            });
        }
    }
}

/// Static feasibility checks that load the inputs but run no protocol.
pub fn validate(cfg: &Config) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let fatal = |m: String| Diagnostic {
        severity: Severity::Fatal,
        message: m,
    };
    let warn = |m: String| Diagnostic {
        severity: Severity::Warning,
        message: m,
    };
    if let Err(e) = cfg.check() {
        out.push(fatal(e.to_string()));
        return out;
    }
    let data = match prepare(cfg) {
        Ok(d) => d,
        Err(e) => {
            out.push(fatal(e.to_string()));
            return out;
        }
    };
    let g = &data.gallery;
    let fars = &cfg.metrics.fars;
    let seeds = cfg.run.seeds.len();
    let counts: Vec<u64> = g
        .records_by_subject()
        .iter()
        .map(|v| v.len() as u64)
        .collect();

    if cfg.gc_enabled() {
        far_diagnostics(&mut out, fars, loo_impostor_count(&counts), "gc");
    }

    if let Some(s) = &cfg.scale {
        if seeds < 2 {
            out.push(warn(
                "scale: fewer than 2 seeds, no intervals will be reported".into(),
            ));
        }
        for &gs in &s.gallery_sizes {
            for &e in &s.exams_per_subject {
                let eligible = counts.iter().filter(|&&c| c >= e as u64).count();
                let ctx = format!("scale cell G={gs}, E={e}");
                if eligible < gs {
                    out.push(fatal(format!(
                        "{ctx}: needs {gs} subjects with >= {e} exams, pool has {eligible}"
                    )));
                }
                far_diagnostics(
                    &mut out,
                    fars,
                    loo_impostor_count(&vec![e as u64; gs]),
                    &ctx,
                );
            }
        }
    }

    if let (Some(t), Some(pairs)) = (&cfg.tst, tst_pairs(cfg, &data.exams)) {
        if seeds < 2 {
            out.push(warn(
                "tst: fewer than 2 seeds, no intervals will be reported".into(),
            ));
        }
        for (target, p) in &pairs {
            if p.len() < t.gallery_subjects {
                out.push(fatal(format!(
                    "tst target {target}y: {} subjects have a pair, {} required",
                    p.len(),
                    t.gallery_subjects
                )));
            }
        }
        let p = t.gallery_subjects as u64;
        let impostors = match t.mode {
            TstMode::Both => loo_impostor_count(&vec![2; t.gallery_subjects]),
            TstMode::Later => p * p.saturating_sub(1),
        };
        far_diagnostics(&mut out, fars, impostors, "tst");
    }

    if cfg.rr.is_some() {
        for (label, pool) in &data.external_pools {
            let shared: Vec<&str> = pool
                .iter()
                .filter(|r| g.subject_key(&r.subject_id).is_some())
                .map(|r| r.subject_id.as_str())
                .collect::<std::collections::BTreeSet<_>>()
                .into_iter()
                .collect();
            if !shared.is_empty() {
                out.push(fatal(format!(
                    "external cohort `{label}` is not subject-disjoint from the gallery: {} shared subject(s), first `{}`",
                    shared.len(),
                    shared[0]
                )));
            }
        }
        let specs = match cfg.rerank_specs() {
            Ok(s) => s,
            Err(e) => {
                out.push(fatal(e.to_string()));
                return out;
            }
        };
        for s in &specs {
            if s.shortlist_k > g.len().saturating_sub(1) {
                out.push(warn(format!(
                    "rerank `{}`: shortlist K={} exceeds the {} candidates per query",
                    s.label(),
                    s.shortlist_k,
                    g.len().saturating_sub(1)
                )));
            }
            let res = match &s.cohort {
                CohortSpec::Internal { size, seed } => {
                    Cohort::sample_internal(g, *size, *seed).map(|_| ())
                }
                CohortSpec::External { pool, size, seed } => match data.external_pools.get(pool) {
                    Some(records) => {
                        let disjoint = records
                            .iter()
                            .all(|r| g.subject_key(&r.subject_id).is_none());
                        if disjoint {
                            Cohort::sample_external(pool, records, g, *size, *seed).map(|_| ())
                        } else {
                            Ok(())
                        }
                    }
                    None => Err(Error::Config(format!(
                        "external cohort pool `{pool}` is not configured"
                    ))),
                },
                _ => Ok(()),
            };
            if let Err(e) = res {
                out.push(fatal(format!("rerank `{}`: {e}", s.label())));
            }
        }
    }

    if cfg.confidence.is_some() && g.n_subjects() < 4 {
        out.push(fatal(
            "confidence: the stratified split needs at least 4 subjects".into(),
        ));
    }
    out
}
