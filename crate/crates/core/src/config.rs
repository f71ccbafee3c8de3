//! TOML run configuration.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::confidence::{DEFAULT_BINS, DEFAULT_LAMBDA, DEFAULT_TAUS};
use crate::error::{Error, Result};
use crate::pipeline::DEFAULT_TOLERANCE_DAYS;
use crate::protocols::{MetricSpec, ScaleConfig, TstMode};
use crate::rerank::{RerankSpec, SideConvention};
use crate::synth::SynthConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub run: RunSection,
    #[serde(default)]
    pub input: InputSection,
    pub synth: Option<SynthConfig>,
    #[serde(default)]
    pub pipeline: PipelineSection,
    #[serde(default)]
    pub metrics: MetricSpec,
    pub gc: Option<GcSection>,
    pub scale: Option<ScaleSection>,
    pub tst: Option<TstSection>,
    pub rr: Option<RrSection>,
    pub confidence: Option<ConfidenceSection>,
    /// Directory relative paths are resolved against; set by [`Config::load`].
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub id: String,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputSection {
    /// Text or binary embedding file.
    pub embeddings: Option<PathBuf>,
    /// Optional exam metadata; derived from the embeddings when absent.
    pub metadata: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FiducialSetting {
    #[default]
    None,
    /// Built-in extended physiological ranges.
    Extended,
    /// TOML file of `feature = [min, max]` bounds.
    File(PathBuf),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineSection {
    /// Valid id, 30-day spacing with >= 2 exams, cap at 10.
    #[serde(default)]
    pub common: bool,
    #[serde(default)]
    pub fiducial_ranges: FiducialSetting,
    pub device: Option<String>,
    /// Moment-preserving subject sample of this size (seeded by the first
    /// run seed).
    pub stratified_patients: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GcSection {
    #[serde(default = "yes")]
    pub enabled: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScaleSection {
    pub gallery_sizes: Vec<usize>,
    pub exams_per_subject: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TstSection {
    #[serde(default = "default_targets")]
    pub targets: Vec<u32>,
    #[serde(default = "default_tolerance")]
    pub tolerance_days: f64,
    pub gallery_subjects: usize,
    #[serde(default)]
    pub mode: TstMode,
}

fn default_targets() -> Vec<u32> {
    vec![1, 2, 3, 4, 5]
}

fn default_tolerance() -> f64 {
    DEFAULT_TOLERANCE_DAYS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodEntry {
    pub method: String,
    pub code: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RrSection {
    #[serde(default = "default_shortlist")]
    pub shortlist_k: usize,
    #[serde(default)]
    pub convention: SideConvention,
    #[serde(default)]
    pub methods: Vec<MethodEntry>,
    /// External cohort pools: label -> embedding file.
    #[serde(default)]
    pub external_pools: BTreeMap<String, PathBuf>,
}

fn default_shortlist() -> usize {
    400
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfidenceSection {
    #[serde(default = "default_fraction")]
    pub calibration_fraction: f64,
    #[serde(default = "default_lambda")]
    pub l2_lambda: f64,
    #[serde(default = "default_bins")]
    pub bins: usize,
    #[serde(default = "default_taus")]
    pub taus: Vec<f64>,
}

fn default_fraction() -> f64 {
    0.5
}
fn default_lambda() -> f64 {
    DEFAULT_LAMBDA
}
fn default_bins() -> usize {
    DEFAULT_BINS
}
fn default_taus() -> Vec<f64> {
    DEFAULT_TAUS.to_vec()
}

impl Config {
    pub fn from_toml_str(s: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: Config = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.base_dir = base_dir.to_path_buf();
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml_str(&text, &base)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.run.output_dir)
    }

    pub fn rerank_specs(&self) -> Result<Vec<RerankSpec>> {
        let Some(rr) = &self.rr else {
            return Ok(Vec::new());
        };
        rr.methods
            .iter()
            .map(|m| RerankSpec::parse(&m.method, &m.code, rr.shortlist_k))
            .collect()
    }

    pub fn scale_config(&self) -> Option<ScaleConfig> {
        self.scale.as_ref().map(|s| ScaleConfig {
            gallery_sizes: s.gallery_sizes.clone(),
            exams_per_subject: s.exams_per_subject.clone(),
            seeds: self.run.seeds.clone(),
        })
    }

    pub fn gc_enabled(&self) -> bool {
        self.gc.as_ref().is_some_and(|g| g.enabled)
    }

    /// Static invariants that need no input data.
    pub fn check(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.run.id.trim().is_empty() {
            return bad("run.id must not be empty".into());
        }
        if self.run.seeds.is_empty() {
            return bad("run.seeds must list at least one seed".into());
        }
        match (&self.input.embeddings, &self.synth) {
            (None, None) => return bad("either input.embeddings or [synth] is required".into()),
            (Some(_), Some(_)) => {
                return bad("input.embeddings and [synth] are mutually exclusive".into())
            }
            _ => {}
        }
        if let Some(s) = &self.synth {
            s.validate()?;
        }
        self.metrics.validate()?;
        if let Some(s) = &self.scale {
            if s.gallery_sizes.is_empty() || s.exams_per_subject.is_empty() {
                return bad("scale grid must not be empty".into());
            }
            if s.gallery_sizes.contains(&0) || s.exams_per_subject.contains(&0) {
                return bad("scale grid values must be positive".into());
            }
        }
        if let Some(t) = &self.tst {
            if t.targets.is_empty() || t.gallery_subjects == 0 {
                return bad("tst needs targets and gallery_subjects >= 1".into());
            }
        }
        if let Some(c) = &self.confidence {
            if !(c.calibration_fraction > 0.0 && c.calibration_fraction < 1.0) {
                return bad("confidence.calibration_fraction must lie in (0, 1)".into());
            }
            if c.bins == 0 || !(c.l2_lambda >= 0.0) {
                return bad("confidence needs bins >= 1 and l2_lambda >= 0".into());
            }
            if c.taus.iter().any(|&t| !(t > 0.0 && t < 1.0)) {
                return bad("confidence taus must lie in (0, 1)".into());
            }
        }
        for spec in self.rerank_specs()? {
            if spec.shortlist_k < self.metrics.max_k() {
                return bad(format!(
                    "rerank `{}` shortlist K={} is below the largest reported rank {}",
                    spec.label(),
                    spec.shortlist_k,
                    self.metrics.max_k()
                ));
            }
            if let crate::rerank::CohortSpec::External { pool, .. } = &spec.cohort {
                let known = self
                    .rr
                    .as_ref()
                    .is_some_and(|r| r.external_pools.contains_key(pool));
                if !known {
                    return bad(format!(
                        "rerank `{}` uses undeclared external pool `{pool}`",
                        spec.label()
                    ));
                }
            }
        }
        Ok(())
    }
}
