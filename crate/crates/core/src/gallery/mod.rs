//! Embedding storage and exact cosine retrieval.
//!
//! Every protocol and reranker runs on a [`Gallery`]: an immutable, indexed
//! collection of unit-norm embeddings. Retrieval is exhaustive; there is no
//! approximate index. Ranking order is total: score descending, then
//! `exam_id` ascending, so results never depend on scheduling.

mod io;

use std::cmp::Ordering;
use std::collections::HashMap;

use chrono::NaiveDate;
use rayon::prelude::*;

use crate::error::{Error, Result};

pub use io::{
    load_embeddings, read_binary, read_text, write_binary, write_text, BINARY_MAGIC, ID_FIELD_BYTES,
};

/// Records whose stored norm deviates from 1 by more than this are renormalized
/// on ingestion.
pub const NORM_TOLERANCE: f64 = 1e-6;

/// One exam: identity label, unique exam label, acquisition date and a
/// unit-norm embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRecord {
    pub subject_id: String,
    pub exam_id: String,
    pub timestamp: NaiveDate,
    vector: Vec<f32>,
}

impl EmbeddingRecord {
    /// Builds a record from an arbitrary non-zero vector, normalizing it in f64.
    pub fn new(
        subject_id: impl Into<String>,
        exam_id: impl Into<String>,
        timestamp: NaiveDate,
        vector: &[f64],
    ) -> Result<Self> {
        let unit = l2_normalize(vector)?;
        Ok(Self {
            subject_id: subject_id.into(),
            exam_id: exam_id.into(),
            timestamp,
            vector: unit.into_iter().map(|x| x as f32).collect(),
        })
    }

    /// Builds a record from stored f32 values. Vectors already within
    /// [`NORM_TOLERANCE`] of unit norm are kept bit-for-bit.
    pub fn from_f32(
        subject_id: impl Into<String>,
        exam_id: impl Into<String>,
        timestamp: NaiveDate,
        vector: Vec<f32>,
    ) -> Result<Self> {
        let norm = norm_f32(&vector);
        let vector = if (norm - 1.0).abs() <= NORM_TOLERANCE {
            vector
        } else {
            if norm == 0.0 || !norm.is_finite() {
                return Err(Error::Normalization);
            }
            vector.iter().map(|&x| (x as f64 / norm) as f32).collect()
        };
        Ok(Self {
            subject_id: subject_id.into(),
            exam_id: exam_id.into(),
            timestamp,
            vector,
        })
    }

    pub fn vector(&self) -> &[f32] {
        &self.vector
    }

    pub fn dim(&self) -> usize {
        self.vector.len()
    }
}

fn norm_f32(v: &[f32]) -> f64 {
    v.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt()
}

/// Scales `v` to unit Euclidean norm.
pub fn l2_normalize(v: &[f64]) -> Result<Vec<f64>> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::Normalization);
    }
    Ok(v.iter().map(|x| x / norm).collect())
}

/// Cosine similarity of two unit vectors (their dot product, accumulated in f64).
pub fn cosine(u: &[f32], v: &[f32]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::Dimension {
            expected: u.len(),
            actual: v.len(),
        });
    }
    Ok(dot(u, v))
}

#[inline]
pub(crate) fn dot(u: &[f32], v: &[f32]) -> f64 {
    // Four independent accumulators; the summation order is fixed so results
    // are reproducible bit-for-bit.
    let mut acc = [0.0f64; 4];
    let chunks = u.len() / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += u[i] as f64 * v[i] as f64;
        acc[1] += u[i + 1] as f64 * v[i + 1] as f64;
        acc[2] += u[i + 2] as f64 * v[i + 2] as f64;
        acc[3] += u[i + 3] as f64 * v[i + 3] as f64;
    }
    let mut tail = 0.0;
    for i in chunks * 4..u.len() {
        tail += u[i] as f64 * v[i] as f64;
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3]) + tail).clamp(-1.0, 1.0)
}

/// Immutable, indexed collection of embeddings sharing one dimension.
#[derive(Debug, Clone)]
pub struct Gallery {
    records: Vec<EmbeddingRecord>,
    dim: usize,
    matrix: Vec<f32>,
    index: HashMap<String, usize>,
    exam_order: Vec<u32>,
    subject_of: Vec<u32>,
    subjects: Vec<String>,
    subject_index: HashMap<String, u32>,
}

impl Gallery {
    pub fn new(records: Vec<EmbeddingRecord>) -> Result<Self> {
        let dim = records
            .first()
            .map(|r| r.dim())
            .ok_or(Error::EmptyGallery)?;
        let mut index = HashMap::with_capacity(records.len());
        let mut matrix = Vec::with_capacity(records.len() * dim);
        let mut subjects = Vec::new();
        let mut subject_index: HashMap<String, u32> = HashMap::new();
        let mut subject_of = Vec::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            if r.dim() != dim {
                return Err(Error::Dimension {
                    expected: dim,
                    actual: r.dim(),
                });
            }
            if index.insert(r.exam_id.clone(), i).is_some() {
                return Err(Error::DuplicateExam(r.exam_id.clone()));
            }
            matrix.extend_from_slice(r.vector());
            let s = *subject_index
                .entry(r.subject_id.clone())
                .or_insert_with(|| {
                    subjects.push(r.subject_id.clone());
                    (subjects.len() - 1) as u32
                });
            subject_of.push(s);
        }
        let mut by_exam: Vec<usize> = (0..records.len()).collect();
        by_exam.sort_by(|&a, &b| records[a].exam_id.cmp(&records[b].exam_id));
        let mut exam_order = vec![0u32; records.len()];
        for (rank, &i) in by_exam.iter().enumerate() {
            exam_order[i] = rank as u32;
        }
        Ok(Self {
            records,
            dim,
            matrix,
            index,
            exam_order,
            subject_of,
            subjects,
            subject_index,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn records(&self) -> &[EmbeddingRecord] {
        &self.records
    }

    pub fn record(&self, i: usize) -> &EmbeddingRecord {
        &self.records[i]
    }

    pub fn position(&self, exam_id: &str) -> Option<usize> {
        self.index.get(exam_id).copied()
    }

    #[inline]
    pub fn vector(&self, i: usize) -> &[f32] {
        &self.matrix[i * self.dim..(i + 1) * self.dim]
    }

    /// Dense subject number of record `i` (0-based, order of first appearance).
    #[inline]
    pub fn subject_of(&self, i: usize) -> u32 {
        self.subject_of[i]
    }

    pub fn subject_key(&self, subject_id: &str) -> Option<u32> {
        self.subject_index.get(subject_id).copied()
    }

    pub fn subject_name(&self, key: u32) -> &str {
        &self.subjects[key as usize]
    }

    pub fn n_subjects(&self) -> usize {
        self.subjects.len()
    }

    /// Position of record `i` when all exam ids are sorted ascending.
    #[inline]
    pub fn exam_rank(&self, i: usize) -> u32 {
        self.exam_order[i]
    }

    /// Records grouped by subject, in first-appearance order.
    pub fn records_by_subject(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.subjects.len()];
        for i in 0..self.len() {
            groups[self.subject_of[i] as usize].push(i);
        }
        groups
    }

    /// Total order used everywhere for ranking: higher score first, then
    /// ascending exam id.
    #[inline]
    pub fn rank_cmp(&self, a: (f64, usize), b: (f64, usize)) -> Ordering {
        b.0.total_cmp(&a.0)
            .then_with(|| self.exam_order[a.1].cmp(&self.exam_order[b.1]))
    }

    /// Builds a new gallery from the records at `positions` (in that order).
    pub fn subset(&self, positions: &[usize]) -> Result<Gallery> {
        Gallery::new(positions.iter().map(|&i| self.records[i].clone()).collect())
    }

    /// Cosine of `query` against every record.
    pub fn scores(&self, query: &[f32]) -> Vec<f64> {
        self.matrix
            .chunks_exact(self.dim)
            .map(|row| dot(query, row))
            .collect()
    }
}

/// One ranked candidate of a shortlist. `index` points into the gallery.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShortlistEntry {
    pub index: usize,
    pub raw_score: f64,
    pub score: f64,
}

/// Ranked candidates for one query, sorted by `score` descending with ties on
/// ascending exam id. Never contains the query exam itself.
#[derive(Debug, Clone, PartialEq)]
pub struct Shortlist {
    pub query_exam_id: String,
    pub entries: Vec<ShortlistEntry>,
}

impl Shortlist {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn sort(&mut self, gallery: &Gallery) {
        self.entries
            .sort_by(|a, b| gallery.rank_cmp((a.score, a.index), (b.score, b.index)));
    }

    pub fn exam_ids<'g>(&self, gallery: &'g Gallery) -> Vec<&'g str> {
        self.entries
            .iter()
            .map(|e| gallery.record(e.index).exam_id.as_str())
            .collect()
    }

    pub fn subject_ids<'g>(&self, gallery: &'g Gallery) -> Vec<&'g str> {
        self.entries
            .iter()
            .map(|e| gallery.record(e.index).subject_id.as_str())
            .collect()
    }

    pub fn order(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.index).collect()
    }
}

/// Exact top-`k` retrieval for a record that may or may not belong to the
/// gallery. With `exclude_self`, a gallery record with the same exam id is
/// skipped (leave-one-out by exam id, not by vector equality).
pub fn top_k(
    gallery: &Gallery,
    query: &EmbeddingRecord,
    k: usize,
    exclude_self: bool,
) -> Result<Shortlist> {
    if query.dim() != gallery.dim() {
        return Err(Error::Dimension {
            expected: gallery.dim(),
            actual: query.dim(),
        });
    }
    let excluded = if exclude_self {
        gallery.position(&query.exam_id)
    } else {
        None
    };
    let entries = top_k_vector(gallery, query.vector(), k, excluded)?;
    Ok(Shortlist {
        query_exam_id: query.exam_id.clone(),
        entries,
    })
}

/// Shortlist for gallery member `position`, excluding itself.
pub fn top_k_member(gallery: &Gallery, position: usize, k: usize) -> Result<Shortlist> {
    let entries = top_k_vector(gallery, gallery.vector(position), k, Some(position))?;
    Ok(Shortlist {
        query_exam_id: gallery.record(position).exam_id.clone(),
        entries,
    })
}

/// Leave-one-out shortlists for many gallery members, computed in parallel.
/// Output order follows `positions`.
pub fn top_k_members(gallery: &Gallery, positions: &[usize], k: usize) -> Result<Vec<Shortlist>> {
    positions
        .par_iter()
        .map(|&p| top_k_member(gallery, p, k))
        .collect()
}

pub(crate) fn top_k_vector(
    gallery: &Gallery,
    query: &[f32],
    k: usize,
    excluded: Option<usize>,
) -> Result<Vec<ShortlistEntry>> {
    if k == 0 {
        return Err(Error::Config("shortlist size K must be at least 1".into()));
    }
    let mut scored: Vec<(f64, usize)> = gallery
        .scores(query)
        .into_iter()
        .enumerate()
        .filter(|&(i, _)| Some(i) != excluded)
        .map(|(i, s)| (s, i))
        .collect();
    if scored.is_empty() {
        return Err(Error::EmptyGallery);
    }
    let cmp = |a: &(f64, usize), b: &(f64, usize)| gallery.rank_cmp(*a, *b);
    if k < scored.len() {
        scored.select_nth_unstable_by(k - 1, cmp);
        scored.truncate(k);
    }
    scored.sort_unstable_by(cmp);
    Ok(scored
        .into_iter()
        .map(|(s, i)| ShortlistEntry {
            index: i,
            raw_score: s,
            score: s,
        })
        .collect())
}
