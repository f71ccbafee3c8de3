//! Deterministic evaluation engine for embedding-based 1:N identification.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod confidence;
pub mod config;
pub mod error;
pub mod gallery;
pub mod metrics;
pub mod pipeline;
pub mod protocols;
pub mod report;
pub mod rerank;
pub mod resample;
pub mod runner;
pub mod seed;
pub mod synth;

pub use error::{Error, Result};
pub use gallery::{
    cosine, l2_normalize, top_k, EmbeddingRecord, Gallery, Shortlist, ShortlistEntry,
};
pub use metrics::{IntervalEstimate, MetricBundle};
pub use protocols::{MetricSpec, QueryOutcome};
pub use rerank::{RerankSpec, Reranker};
