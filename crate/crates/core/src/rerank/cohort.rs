use std::collections::{BTreeMap, HashSet};

use rand::seq::index::sample;

use crate::error::{Error, Result};
use crate::gallery::{dot, EmbeddingRecord, Gallery};
use crate::seed::rng_for;

/// Impostor cohort used for score normalization.
///
/// Members drawn from the evaluation gallery remember their gallery position
/// and subject so they can be excluded when they would act as genuine
/// comparisons.
#[derive(Debug, Clone)]
pub struct Cohort {
    source: String,
    dim: usize,
    matrix: Vec<f32>,
    subject_ids: Vec<String>,
    gallery_subject: Vec<Option<u32>>,
    gallery_index: Vec<Option<usize>>,
    member_of: Vec<Option<usize>>,
}

fn earliest<'a>(records: impl Iterator<Item = &'a EmbeddingRecord>) -> Option<&'a EmbeddingRecord> {
    records.min_by(|a, b| {
        a.timestamp
            .cmp(&b.timestamp)
            .then_with(|| a.exam_id.cmp(&b.exam_id))
    })
}

impl Cohort {
    fn empty(source: &str, gallery: &Gallery) -> Self {
        Self {
            source: source.to_string(),
            dim: gallery.dim(),
            matrix: Vec::new(),
            subject_ids: Vec::new(),
            gallery_subject: Vec::new(),
            gallery_index: Vec::new(),
            member_of: vec![None; gallery.len()],
        }
    }

    fn push_gallery(&mut self, gallery: &Gallery, i: usize) {
        self.member_of[i] = Some(self.len());
        self.matrix.extend_from_slice(gallery.vector(i));
        self.subject_ids.push(gallery.record(i).subject_id.clone());
        self.gallery_subject.push(Some(gallery.subject_of(i)));
        self.gallery_index.push(Some(i));
    }

    /// Every gallery record is a cohort member.
    pub fn from_gallery(gallery: &Gallery) -> Self {
        let mut c = Self::empty("gallery", gallery);
        for i in 0..gallery.len() {
            c.push_gallery(gallery, i);
        }
        c
    }

    /// `size` gallery subjects drawn with `seed`, each represented by its
    /// earliest exam.
    pub fn sample_internal(gallery: &Gallery, size: usize, seed: u64) -> Result<Self> {
        let groups = gallery.records_by_subject();
        if size > groups.len() || size < 2 {
            return Err(Error::InsufficientSubjects {
                needed: size.max(2),
                available: groups.len(),
                context: "internal cohort".into(),
            });
        }
        let mut rng = rng_for(seed, &[size as u64]);
        let mut picked = sample(&mut rng, groups.len(), size).into_vec();
        picked.sort_unstable();
        let mut c = Self::empty("internal", gallery);
        for s in picked {
            let first = *groups[s]
                .iter()
                .min_by(|&&a, &&b| {
                    let (ra, rb) = (gallery.record(a), gallery.record(b));
                    ra.timestamp
                        .cmp(&rb.timestamp)
                        .then_with(|| ra.exam_id.cmp(&rb.exam_id))
                })
                .expect("non-empty subject group");
            c.push_gallery(gallery, first);
        }
        Ok(c)
    }

    /// `size` subjects drawn with `seed` from an external pool, each
    /// represented by its earliest exam. The pool must not share any subject
    /// with the gallery.
    pub fn sample_external(
        label: &str,
        pool: &[EmbeddingRecord],
        gallery: &Gallery,
        size: usize,
        seed: u64,
    ) -> Result<Self> {
        let mut by_subject: BTreeMap<&str, Vec<&EmbeddingRecord>> = BTreeMap::new();
        for r in pool {
            if r.dim() != gallery.dim() {
                return Err(Error::Dimension {
                    expected: gallery.dim(),
                    actual: r.dim(),
                });
            }
            if gallery.subject_key(&r.subject_id).is_some() {
                return Err(Error::Config(format!(
                    "external cohort `{label}` shares subject `{}` with the gallery",
                    r.subject_id
                )));
            }
            by_subject.entry(&r.subject_id).or_default().push(r);
        }
        if size > by_subject.len() || size < 2 {
            return Err(Error::InsufficientSubjects {
                needed: size.max(2),
                available: by_subject.len(),
                context: format!("external cohort `{label}`"),
            });
        }
        let groups: Vec<&Vec<&EmbeddingRecord>> = by_subject.values().collect();
        let mut rng = rng_for(seed, &[size as u64]);
        let mut picked = sample(&mut rng, groups.len(), size).into_vec();
        picked.sort_unstable();
        let mut c = Self::empty(label, gallery);
        for s in picked {
            let r = earliest(groups[s].iter().copied()).expect("non-empty subject group");
            c.matrix.extend_from_slice(r.vector());
            c.subject_ids.push(r.subject_id.clone());
            c.gallery_subject.push(None);
            c.gallery_index.push(None);
        }
        Ok(c)
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn len(&self) -> usize {
        self.subject_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subject_ids.is_empty()
    }

    pub fn subject_id(&self, m: usize) -> &str {
        &self.subject_ids[m]
    }

    pub fn vector(&self, m: usize) -> &[f32] {
        &self.matrix[m * self.dim..(m + 1) * self.dim]
    }

    /// Gallery subject key of member `m`, if it comes from the gallery.
    #[inline]
    pub fn gallery_subject(&self, m: usize) -> Option<u32> {
        self.gallery_subject[m]
    }

    #[inline]
    pub fn gallery_index(&self, m: usize) -> Option<usize> {
        self.gallery_index[m]
    }

    /// Cohort member holding gallery record `i`, if any.
    #[inline]
    pub fn member_of(&self, i: usize) -> Option<usize> {
        self.member_of.get(i).copied().flatten()
    }

    /// Cosine of `v` against every member.
    pub fn scores(&self, v: &[f32]) -> Vec<f64> {
        self.matrix
            .chunks_exact(self.dim)
            .map(|row| dot(v, row))
            .collect()
    }

    /// Subjects of the members, for disjointness checks.
    pub fn subjects(&self) -> HashSet<&str> {
        self.subject_ids.iter().map(String::as_str).collect()
    }
}
