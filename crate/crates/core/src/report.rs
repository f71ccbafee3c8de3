//! Report document and flat CSV tables.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::confidence::{ConfidenceReport, ConfidenceRun};
use crate::error::{Error, Result};
use crate::metrics::{ImpostorTail, MetricBundle};
use crate::pipeline::{AttritionReport, Moments};
use crate::protocols::{Estimate, QueryOutcome, ScaleCell, TstTarget};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub engine_version: String,
    pub config: serde_json::Value,
    /// sha256 of every input file, keyed by path as written in the config.
    pub input_digests: BTreeMap<String, String>,
    pub seeds: Vec<u64>,
    pub started_unix_s: u64,
    pub elapsed_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingSection {
    pub patients_before: usize,
    pub patients_after: usize,
    pub before: Moments,
    pub after: Moments,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GcSummary {
    pub n_exams: usize,
    pub n_subjects: usize,
    pub metrics: MetricBundle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RerankRow {
    pub method: String,
    pub code: String,
    pub metrics: MetricBundle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RerankSection {
    pub shortlist_k: usize,
    pub baseline: MetricBundle,
    pub runs: Vec<RerankRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceSummary {
    pub acc_at_half: Estimate,
    pub brier: Estimate,
    pub ece: Estimate,
    pub conf_mean_y1: Estimate,
    pub conf_mean_y0: Estimate,
    pub delta: Estimate,
    /// (τ, coverage, error).
    pub selective: Vec<(f64, Estimate, Estimate)>,
}

impl ConfidenceSummary {
    pub fn from_reports(reports: &[&ConfidenceReport]) -> Self {
        let est = |f: &dyn Fn(&ConfidenceReport) -> f64| {
            Estimate::from_values(&reports.iter().map(|r| f(r)).collect::<Vec<_>>())
        };
        let taus: Vec<f64> = reports
            .first()
            .map(|r| r.selective.iter().map(|s| s.tau).collect())
            .unwrap_or_default();
        Self {
            acc_at_half: est(&|r| r.acc_at_half),
            brier: est(&|r| r.brier),
            ece: est(&|r| r.ece),
            conf_mean_y1: est(&|r| r.conf_mean_y1),
            conf_mean_y0: est(&|r| r.conf_mean_y0),
            delta: est(&|r| r.delta),
            selective: taus
                .iter()
                .enumerate()
                .map(|(i, &tau)| {
                    (
                        tau,
                        est(&|r| r.selective[i].coverage),
                        est(&|r| r.selective[i].error),
                    )
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceSection {
    pub per_seed: Vec<(u64, ConfidenceRun)>,
    pub summary: ConfidenceSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub manifest: RunManifest,
    pub attrition: Option<AttritionReport>,
    pub sampling: Option<SamplingSection>,
    pub gc: Option<GcSummary>,
    pub scale: Option<Vec<ScaleCell>>,
    pub tst: Option<Vec<TstTarget>>,
    pub rerank: Option<RerankSection>,
    pub confidence: Option<ConfidenceSection>,
}

/// Per-query data that lets every reported metric be recomputed.
#[derive(Debug, Clone, Default)]
pub struct OutcomeDump {
    pub gc: Option<(Vec<QueryOutcome>, Vec<f64>, ImpostorTail)>,
    pub rerank: Vec<(String, Vec<QueryOutcome>)>,
}

fn num(x: f64) -> String {
    x.to_string()
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

fn hw(e: &Estimate) -> String {
    opt(e.half_width())
}

struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn new(header: Vec<String>) -> Self {
        Self {
            header,
            rows: Vec::new(),
        }
    }

    fn write(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

fn metric_header(b: &MetricBundle) -> Vec<String> {
    let mut h: Vec<String> = b.rank_at.iter().map(|(k, _)| format!("rank@{k}")).collect();
    h.extend(b.tar_at_far.iter().map(|(f, _)| format!("tar@far={f}")));
    h
}

fn metric_values(b: &MetricBundle) -> Vec<String> {
    let mut v: Vec<String> = b.rank_at.iter().map(|(_, r)| num(*r)).collect();
    v.extend(b.tar_at_far.iter().map(|(_, t)| opt(*t)));
    v
}

fn summary_header(b: &MetricBundle) -> Vec<String> {
    metric_header(b)
        .into_iter()
        .flat_map(|m| [format!("{m}_mean"), format!("{m}_ci95")])
        .collect()
}

fn summary_values(s: &crate::protocols::SeedSummary) -> Vec<String> {
    let mut v = Vec::new();
    for (_, e) in &s.rank_at {
        v.push(num(e.mean));
        v.push(hw(e));
    }
    for (_, e) in &s.tar_at_far {
        v.push(e.map(|e| num(e.mean)).unwrap_or_default());
        v.push(e.as_ref().map(hw).unwrap_or_default());
    }
    v
}

fn outcome_table(outcomes: &[QueryOutcome]) -> Table {
    let mut t = Table::new(
        [
            "query_exam_id",
            "query_subject_id",
            "rank",
            "has_mate",
            "s1",
            "s2",
            "top1_subject_id",
        ]
        .map(String::from)
        .to_vec(),
    );
    for o in outcomes {
        t.rows.push(vec![
            o.query_exam_id.clone(),
            o.query_subject_id.clone(),
            o.rank.map(|r| r.to_string()).unwrap_or_default(),
            o.has_mate.to_string(),
            num(o.top_scores.0),
            num(o.top_scores.1),
            o.top1_subject_id.clone(),
        ]);
    }
    t
}

fn file_safe(s: &str) -> String {
    s.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '.' || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

impl Report {
    /// Writes `report.json` and the CSV tables into `dir`.
    pub fn write(&self, dir: &Path, dump: Option<&OutcomeDump>) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        let p = dir.join("report.json");
        std::fs::write(&p, json + "\n").map_err(|e| Error::io(&p, e))?;
        let p = dir.join("manifest.json");
        std::fs::write(&p, serde_json::to_string_pretty(&self.manifest)? + "\n")
            .map_err(|e| Error::io(&p, e))?;

        if let Some(a) = &self.attrition {
            let mut t = Table::new(
                ["step", "description", "ecgs", "patients"]
                    .map(String::from)
                    .to_vec(),
            );
            for (i, s) in a.steps.iter().enumerate() {
                t.rows.push(vec![
                    (i + 1).to_string(),
                    s.name.clone(),
                    s.ecgs.to_string(),
                    s.patients.to_string(),
                ]);
            }
            t.write(&dir.join("attrition.csv"))?;
        }
        if let Some(s) = &self.sampling {
            let mut t = Table::new(
                [
                    "population",
                    "patients",
                    "mean",
                    "variance",
                    "skewness",
                    "kurtosis",
                ]
                .map(String::from)
                .to_vec(),
            );
            for (name, n, m) in [
                ("full", s.patients_before, &s.before),
                ("sample", s.patients_after, &s.after),
            ] {
                t.rows.push(vec![
                    name.into(),
                    n.to_string(),
                    num(m.mean),
                    num(m.variance),
                    num(m.skewness),
                    num(m.kurtosis),
                ]);
            }
            t.write(&dir.join("sampling.csv"))?;
        }
        if let Some(gc) = &self.gc {
            let mut h: Vec<String> = ["n_exams", "n_subjects", "n_queries", "n_no_mate"]
                .map(String::from)
                .to_vec();
            h.extend(metric_header(&gc.metrics));
            let mut t = Table::new(h);
            let mut row = vec![
                gc.n_exams.to_string(),
                gc.n_subjects.to_string(),
                gc.metrics.n_queries.to_string(),
                gc.metrics.n_no_mate.to_string(),
            ];
            row.extend(metric_values(&gc.metrics));
            t.rows.push(row);
            t.write(&dir.join("gc.csv"))?;
        }
        if let Some(cells) = self.scale.as_ref().filter(|c| !c.is_empty()) {
            let first = &cells[0].per_seed[0].1;
            let mut h: Vec<String> = ["gallery_size", "exams_per_subject", "n_exams", "n_seeds"]
                .map(String::from)
                .to_vec();
            h.extend(summary_header(first));
            let mut t = Table::new(h);
            let mut hs: Vec<String> = ["gallery_size", "exams_per_subject", "seed"]
                .map(String::from)
                .to_vec();
            hs.extend(metric_header(first));
            let mut ts = Table::new(hs);
            for c in cells {
                let mut row = vec![
                    c.gallery_size.to_string(),
                    c.exams_per_subject.to_string(),
                    c.n_exams.to_string(),
                    c.summary.n_seeds.to_string(),
                ];
                row.extend(summary_values(&c.summary));
                t.rows.push(row);
                for (seed, b) in &c.per_seed {
                    let mut row = vec![
                        c.gallery_size.to_string(),
                        c.exams_per_subject.to_string(),
                        seed.to_string(),
                    ];
                    row.extend(metric_values(b));
                    ts.rows.push(row);
                }
            }
            t.write(&dir.join("scale.csv"))?;
            ts.write(&dir.join("scale_seeds.csv"))?;
        }
        if let Some(targets) = self.tst.as_ref().filter(|c| !c.is_empty()) {
            let first = &targets[0].per_seed[0].1;
            let mut h: Vec<String> = ["target_years", "gallery_subjects", "n_seeds"]
                .map(String::from)
                .to_vec();
            h.extend(summary_header(first));
            let mut t = Table::new(h);
            let mut hs: Vec<String> = ["target_years", "seed"].map(String::from).to_vec();
            hs.extend(metric_header(first));
            let mut ts = Table::new(hs);
            for tg in targets {
                let mut row = vec![
                    tg.target_years.to_string(),
                    tg.gallery_subjects.to_string(),
                    tg.summary.n_seeds.to_string(),
                ];
                row.extend(summary_values(&tg.summary));
                t.rows.push(row);
                for (seed, b) in &tg.per_seed {
                    let mut row = vec![tg.target_years.to_string(), seed.to_string()];
                    row.extend(metric_values(b));
                    ts.rows.push(row);
                }
            }
            t.write(&dir.join("tst.csv"))?;
            ts.write(&dir.join("tst_seeds.csv"))?;
        }
        if let Some(rr) = &self.rerank {
            let mut h: Vec<String> = ["method", "code", "label", "shortlist_k"]
                .map(String::from)
                .to_vec();
            h.extend(rr.baseline.rank_at.iter().map(|(k, _)| format!("rank@{k}")));
            let mut t = Table::new(h);
            let mut base = vec![
                "baseline".into(),
                "baseline".into(),
                "baseline".into(),
                String::new(),
            ];
            base.extend(rr.baseline.rank_at.iter().map(|(_, r)| num(*r)));
            t.rows.push(base);
            for run in &rr.runs {
                let mut row = vec![
                    run.method.clone(),
                    run.code.clone(),
                    format!("{}:{}", run.method, run.code),
                    rr.shortlist_k.to_string(),
                ];
                row.extend(run.metrics.rank_at.iter().map(|(_, r)| num(*r)));
                t.rows.push(row);
            }
            t.write(&dir.join("rerank.csv"))?;
        }
        if let Some(c) = &self.confidence {
            let mut h: Vec<String> = [
                "seed",
                "n_calibration",
                "n_evaluation",
                "acc@0.5",
                "brier",
                "ece",
                "conf_mean",
                "conf_mean_y1",
                "conf_mean_y0",
                "delta",
            ]
            .map(String::from)
            .to_vec();
            let taus: Vec<f64> = c.summary.selective.iter().map(|s| s.0).collect();
            for tau in &taus {
                h.push(format!("cov@{tau}"));
                h.push(format!("err@{tau}"));
            }
            let mut t = Table::new(h);
            for (seed, run) in &c.per_seed {
                let r = &run.report;
                let mut row = vec![
                    seed.to_string(),
                    run.n_calibration.to_string(),
                    run.n_evaluation.to_string(),
                    num(r.acc_at_half),
                    num(r.brier),
                    num(r.ece),
                    num(r.conf_mean),
                    num(r.conf_mean_y1),
                    num(r.conf_mean_y0),
                    num(r.delta),
                ];
                for s in &r.selective {
                    row.push(num(s.coverage));
                    row.push(num(s.error));
                }
                t.rows.push(row);
            }
            let s = &c.summary;
            for (label, pick) in [("mean", 0), ("ci95", 1)] {
                let f = |e: &Estimate| if pick == 0 { num(e.mean) } else { hw(e) };
                let mut row = vec![label.to_string(), String::new(), String::new()];
                row.extend([f(&s.acc_at_half), f(&s.brier), f(&s.ece), String::new()]);
                row.extend([f(&s.conf_mean_y1), f(&s.conf_mean_y0), f(&s.delta)]);
                for (_, cov, err) in &s.selective {
                    row.push(f(cov));
                    row.push(f(err));
                }
                t.rows.push(row);
            }
            t.write(&dir.join("confidence.csv"))?;
        }
        if let Some(d) = dump {
            let out = dir.join("outcomes");
            std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            if let Some((outcomes, genuine, tail)) = &d.gc {
                outcome_table(outcomes).write(&out.join("gc_outcomes.csv"))?;
                let mut g = Table::new(vec!["genuine_score".into()]);
                g.rows = genuine.iter().map(|&s| vec![num(s)]).collect();
                g.write(&out.join("gc_genuine_scores.csv"))?;
                let mut i = Table::new(vec!["impostor_score".into(), "impostor_total".into()]);
                i.rows = tail
                    .top_desc()
                    .iter()
                    .map(|&s| vec![num(s), tail.total().to_string()])
                    .collect();
                i.write(&out.join("gc_impostor_tail.csv"))?;
            }
            for (label, outcomes) in &d.rerank {
                outcome_table(outcomes)
                    .write(&out.join(format!("rerank_{}.csv", file_safe(label))))?;
            }
        }
        Ok(())
    }
}
