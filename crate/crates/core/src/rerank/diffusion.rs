use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gallery::{dot, Gallery, Shortlist};

/// Symmetric k-NN affinity graph over the gallery, stored as adjacency lists
/// with row-normalized weights.
#[derive(Debug, Clone)]
pub struct KnnGraph {
    /// `adj[i]` holds `(j, W_ij / d_i)`.
    adj: Vec<Vec<(usize, f64)>>,
}

impl KnnGraph {
    /// Each record links to its `local_k` most similar other records with
    /// affinity max(cos, 0); the graph is symmetrized with max(W, Wᵀ).
    pub fn build(gallery: &Gallery, local_k: usize) -> Result<Self> {
        if local_k == 0 {
            return Err(Error::Config("diffusion local_k must be at least 1".into()));
        }
        let n = gallery.len();
        let neighbors: Vec<Vec<(usize, f64)>> = (0..n)
            .into_par_iter()
            .map(|i| {
                let v = gallery.vector(i);
                let mut s: Vec<(f64, usize)> = (0..n)
                    .filter(|&j| j != i)
                    .map(|j| (dot(v, gallery.vector(j)), j))
                    .collect();
                let cmp = |a: &(f64, usize), b: &(f64, usize)| gallery.rank_cmp(*a, *b);
                if local_k < s.len() {
                    s.select_nth_unstable_by(local_k - 1, cmp);
                    s.truncate(local_k);
                }
                s.into_iter().map(|(w, j)| (j, w.max(0.0))).collect()
            })
            .collect();
        let mut dense: Vec<std::collections::BTreeMap<usize, f64>> = vec![Default::default(); n];
        for (i, row) in neighbors.iter().enumerate() {
            for &(j, w) in row {
                for (a, b) in [(i, j), (j, i)] {
                    let e = dense[a].entry(b).or_insert(0.0);
                    *e = e.max(w);
                }
            }
        }
        Ok(Self::normalize(
            dense.into_iter().map(|m| m.into_iter().collect()).collect(),
        ))
    }

    /// Graph from an explicit symmetric affinity matrix.
    pub fn from_affinity(w: &[Vec<f64>]) -> Self {
        Self::normalize(
            w.iter()
                .map(|row| {
                    row.iter()
                        .enumerate()
                        .filter(|(_, &x)| x > 0.0)
                        .map(|(j, &x)| (j, x))
                        .collect()
                })
                .collect(),
        )
    }

    fn normalize(mut adj: Vec<Vec<(usize, f64)>>) -> Self {
        for row in &mut adj {
            row.retain(|&(_, w)| w > 0.0);
            let d: f64 = row.iter().map(|p| p.1).sum();
            for p in row.iter_mut() {
                p.1 /= d;
            }
        }
        Self { adj }
    }

    pub fn len(&self) -> usize {
        self.adj.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adj.is_empty()
    }

    pub fn neighbors(&self, i: usize) -> &[(usize, f64)] {
        &self.adj[i]
    }

    /// `iterations` steps of f ← alpha·S·f + (1 − alpha)·f0 from f = f0.
    /// Only nodes reachable from the support of `f0` are touched.
    pub fn propagate(&self, f0: &[(usize, f64)], alpha: f64, iterations: usize) -> Vec<f64> {
        let n = self.adj.len();
        let mut base = vec![0.0; n];
        let mut f = vec![0.0; n];
        let mut active = vec![false; n];
        let mut support: Vec<usize> = Vec::new();
        for &(i, s) in f0 {
            base[i] = s;
            f[i] = s;
            if !active[i] {
                active[i] = true;
                support.push(i);
            }
        }
        let mut next = vec![0.0; n];
        for _ in 0..iterations {
            // Rows that can be non-zero next: the support and its neighbours
            // (the adjacency structure is symmetric).
            let len = support.len();
            for k in 0..len {
                for &(j, _) in &self.adj[support[k]] {
                    if !active[j] {
                        active[j] = true;
                        support.push(j);
                    }
                }
            }
            for &i in &support {
                let sf: f64 = self.adj[i].iter().map(|&(j, w)| w * f[j]).sum();
                next[i] = alpha * sf + (1.0 - alpha) * base[i];
            }
            for &i in &support {
                f[i] = next[i];
            }
        }
        f
    }
}

/// Diffuses one shortlist's raw scores over the graph and re-sorts it by the
/// diffused value.
pub fn diffuse_one(
    shortlist: &Shortlist,
    gallery: &Gallery,
    graph: &KnnGraph,
    alpha: f64,
    iterations: usize,
) -> Shortlist {
    let f0: Vec<(usize, f64)> = shortlist
        .entries
        .iter()
        .map(|e| (e.index, e.raw_score))
        .collect();
    let f = graph.propagate(&f0, alpha, iterations);
    let mut out = shortlist.clone();
    for e in &mut out.entries {
        e.score = f[e.index];
    }
    out.sort(gallery);
    out
}

pub fn diffuse(
    shortlists: &[Shortlist],
    gallery: &Gallery,
    graph: &KnnGraph,
    alpha: f64,
    iterations: usize,
) -> Vec<Shortlist> {
    shortlists
        .par_iter()
        .map(|s| diffuse_one(s, gallery, graph, alpha, iterations))
        .collect()
}
