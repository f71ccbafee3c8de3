//! Post-hoc shortlist rescoring: best-of-K fusion, cohort score
//! normalization (Z/T/S/AS/C), k-NN graph diffusion and alpha query expansion.
//!
//! No reranker mutates the gallery; all shared state (cohort score caches,
//! the k-NN graph) is built once and read concurrently.

mod asnorm;
mod bestofk;
pub mod code;
mod cohort;
mod diffusion;
mod norm;
mod qe;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gallery::{EmbeddingRecord, Gallery, Shortlist};

pub use asnorm::{as_norm, AsNormEngine};
pub use bestofk::{best_of_k, identity_ranking};
pub use code::CodeStyle;
pub use cohort::Cohort;
pub use diffusion::{diffuse, diffuse_one, KnnGraph};
pub use norm::{
    cohort_stats_excluding, normalize_scores, query_side_stats, stats_from_scores, NormEngine,
    NormKind, NormStats, SIGMA_FLOOR,
};
pub use qe::{alpha_qe, expand_query};

/// Score-normalization method names.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NormMethod {
    Z,
    T,
    S,
    C,
}

/// Which side's statistics the names `znorm` and `tnorm` refer to.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SideConvention {
    /// `znorm` uses query-side statistics (one affine map per query, so it
    /// never reorders a shortlist); `tnorm` uses candidate-side statistics.
    #[default]
    ZQuery,
    /// `znorm` uses candidate (gallery) side statistics; `tnorm` query side.
    ZGallery,
}

impl NormMethod {
    pub fn kind(self, convention: SideConvention) -> NormKind {
        match (self, convention) {
            (NormMethod::Z, SideConvention::ZQuery) | (NormMethod::T, SideConvention::ZGallery) => {
                NormKind::QuerySide
            }
            (NormMethod::T, SideConvention::ZQuery) | (NormMethod::Z, SideConvention::ZGallery) => {
                NormKind::CandidateSide
            }
            (NormMethod::S, _) => NormKind::Symmetric,
            (NormMethod::C, _) => NormKind::Pooled,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum RerankMethod {
    Baseline,
    BestOfK,
    Norm(NormMethod),
    /// Adaptive normalization over the `top_n` strongest impostors among the
    /// `scan` most similar cohort members (`None`: the whole cohort).
    AsNorm {
        top_n: usize,
        scan: Option<usize>,
    },
    Diffusion {
        local_k: usize,
        alpha: f64,
        iterations: usize,
    },
    AlphaQe {
        qe_k: usize,
        alpha: f64,
    },
}

/// Where normalization statistics come from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum CohortSpec {
    None,
    /// Every gallery record.
    Gallery,
    /// `size` subjects sampled from the gallery with `seed`.
    Internal {
        size: usize,
        seed: u64,
    },
    /// `size` subjects sampled from a named external pool with `seed`.
    External {
        pool: String,
        size: usize,
        seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RerankSpec {
    pub method: RerankMethod,
    pub shortlist_k: usize,
    pub cohort: CohortSpec,
    pub style: CodeStyle,
}

impl RerankSpec {
    pub fn baseline(shortlist_k: usize) -> Self {
        Self {
            method: RerankMethod::Baseline,
            shortlist_k,
            cohort: CohortSpec::None,
            style: CodeStyle::default(),
        }
    }

    pub fn new(method: RerankMethod, shortlist_k: usize, cohort: CohortSpec) -> Self {
        Self {
            method,
            shortlist_k,
            cohort,
            style: CodeStyle::default(),
        }
    }

    /// Parses a method name and configuration code such as
    /// (`asnorm`, `K400_N200_scan2000`).
    pub fn parse(method: &str, code: &str, default_shortlist_k: usize) -> Result<Self> {
        code::parse(method, code, default_shortlist_k)
    }

    /// Canonical configuration code.
    pub fn code(&self) -> String {
        code::emit(self)
    }

    pub fn method_name(&self) -> &'static str {
        code::method_name(&self.method)
    }

    /// Report label, `<method>:<code>`.
    pub fn label(&self) -> String {
        format!("{}:{}", self.method_name(), self.code())
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| {
            Err(Error::ConfigCode {
                code: self.code(),
                reason: m,
            })
        };
        if self.shortlist_k == 0 {
            return fail("shortlist size K must be at least 1".into());
        }
        match (&self.method, &self.cohort) {
            (RerankMethod::Norm(_), CohortSpec::Internal { .. } | CohortSpec::External { .. }) => {}
            (RerankMethod::Norm(_), _) => return fail("normalization needs a cohort".into()),
            (RerankMethod::AsNorm { top_n, scan }, _) => {
                if *top_n == 0 {
                    return fail("AS-norm N must be at least 1".into());
                }
                if let Some(scan) = scan {
                    if scan < top_n {
                        return fail("AS-norm scan must be at least N".into());
                    }
                }
            }
            (RerankMethod::Diffusion { local_k, alpha, .. }, _) => {
                if *local_k == 0 {
                    return fail("diffusion local_k must be at least 1".into());
                }
                if !(0.0..1.0).contains(alpha) {
                    return fail("diffusion alpha must lie in [0, 1)".into());
                }
            }
            (RerankMethod::AlphaQe { alpha, .. }, _) if !(*alpha >= 0.0) => {
                return fail("query-expansion alpha must be non-negative".into());
            }
            _ => {}
        }
        Ok(())
    }
}

/// Shared inputs for preparing rerankers against one gallery.
#[derive(Debug, Clone, Default)]
pub struct RerankContext {
    pub convention: SideConvention,
    /// External cohort pools by label.
    pub external_pools: BTreeMap<String, Vec<EmbeddingRecord>>,
}

enum Engine {
    Identity,
    BestOfK,
    Norm(NormEngine),
    AsNorm(AsNormEngine),
    Diffusion {
        graph: KnnGraph,
        alpha: f64,
        iterations: usize,
    },
    AlphaQe {
        qe_k: usize,
        alpha: f64,
    },
}

/// A reranker bound to a gallery, with its caches.
pub struct Reranker<'g> {
    spec: RerankSpec,
    gallery: &'g Gallery,
    engine: Engine,
}

impl<'g> Reranker<'g> {
    pub fn prepare(spec: &RerankSpec, gallery: &'g Gallery, ctx: &RerankContext) -> Result<Self> {
        spec.validate()?;
        let cohort = match &spec.cohort {
            CohortSpec::None => None,
            CohortSpec::Gallery => Some(Cohort::from_gallery(gallery)),
            CohortSpec::Internal { size, seed } => {
                Some(Cohort::sample_internal(gallery, *size, *seed)?)
            }
            CohortSpec::External { pool, size, seed } => {
                let records = ctx.external_pools.get(pool).ok_or_else(|| {
                    Error::Config(format!("external cohort pool `{pool}` is not configured"))
                })?;
                Some(Cohort::sample_external(
                    pool, records, gallery, *size, *seed,
                )?)
            }
        };
        let engine = match &spec.method {
            RerankMethod::Baseline => Engine::Identity,
            RerankMethod::BestOfK => Engine::BestOfK,
            RerankMethod::Norm(m) => Engine::Norm(NormEngine::new(
                gallery,
                cohort.expect("validated"),
                m.kind(ctx.convention),
            )?),
            RerankMethod::AsNorm { top_n, scan } => {
                let cohort = cohort.unwrap_or_else(|| Cohort::from_gallery(gallery));
                Engine::AsNorm(AsNormEngine::new(gallery, cohort, *top_n, *scan)?)
            }
            RerankMethod::Diffusion {
                local_k,
                alpha,
                iterations,
            } => Engine::Diffusion {
                graph: KnnGraph::build(gallery, *local_k)?,
                alpha: *alpha,
                iterations: *iterations,
            },
            RerankMethod::AlphaQe { qe_k, alpha } => Engine::AlphaQe {
                qe_k: *qe_k,
                alpha: *alpha,
            },
        };
        Ok(Self {
            spec: spec.clone(),
            gallery,
            engine,
        })
    }

    pub fn spec(&self) -> &RerankSpec {
        &self.spec
    }

    /// Reranks the leave-one-out shortlist of gallery member `query`.
    pub fn rerank(&self, query: usize, shortlist: Shortlist) -> Result<Shortlist> {
        let g = self.gallery;
        match &self.engine {
            Engine::Identity => Ok(shortlist),
            Engine::BestOfK => Ok(best_of_k(&shortlist, g)),
            Engine::Norm(e) => e.apply(g, &shortlist, g.record(query)),
            Engine::AsNorm(e) => e.apply(g, &shortlist, g.record(query)),
            Engine::Diffusion {
                graph,
                alpha,
                iterations,
            } => Ok(diffuse_one(&shortlist, g, graph, *alpha, *iterations)),
            Engine::AlphaQe { qe_k, alpha } => alpha_qe(
                g.record(query),
                &shortlist,
                g,
                *qe_k,
                *alpha,
                self.spec.shortlist_k,
                true,
            ),
        }
    }
}
