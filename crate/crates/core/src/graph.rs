//! Learned joint embeddings and the directed top-k cosine adjacency.

use std::cmp::Ordering;

use ndarray::{Array2, ArrayD, ArrayView2, IxDyn};

use crate::error::{Error, Result};
use crate::numerics::{Real, RngStream};

/// Cosine similarity of two non-zero vectors.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::contract(format!(
            "cosine similarity of lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::contract("cosine similarity of a zero-norm vector"));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Random `(k, d)` embedding matrix with entries `N(0, 1/d)`. A row that
/// comes out exactly zero is redrawn.
pub fn init_embeddings(k: usize, d: usize, rng: &mut RngStream) -> Array2<f64> {
    let std = 1.0 / (d as f64).sqrt();
    let mut v = Array2::zeros((k, d));
    for mut row in v.rows_mut() {
        loop {
            row.iter_mut().for_each(|x| *x = rng.normal() * std);
            if row.iter().any(|&x| x != 0.0) {
                break;
            }
        }
    }
    v
}

/// Directed 0/1 adjacency with fixed out-degree and the similarity matrix it
/// was selected from.
#[derive(Debug, Clone, PartialEq)]
pub struct Adjacency {
    /// `edges[[k, n]] == 1` iff `n` is among the `delta` most similar
    /// candidates of `k`.
    pub edges: Array2<u8>,
    pub delta: usize,
    /// Pairwise cosine similarities; the diagonal is 1.
    pub sim: Array2<f64>,
}

impl Adjacency {
    pub fn nodes(&self) -> usize {
        self.edges.nrows()
    }

    pub fn has(&self, k: usize, n: usize) -> bool {
        self.edges[[k, n]] != 0
    }

    /// Out-neighbors of `k` in increasing index order.
    pub fn neighbors(&self, k: usize) -> Vec<usize> {
        (0..self.nodes()).filter(|&n| self.has(k, n)).collect()
    }

    /// The edges as a real 0/1 matrix.
    pub fn to_real<F: Real>(&self) -> Array2<F> {
        self.edges.mapv(|e| F::cast(e as f64))
    }

    /// Attention support mask `A + I`, shaped `(K, K)`.
    pub fn attention_mask<F: Real>(&self) -> ArrayD<F> {
        let k = self.nodes();
        let mut m = self.to_real::<F>();
        for i in 0..k {
            m[[i, i]] = F::one();
        }
        m.into_shape_with_order(IxDyn(&[k, k])).unwrap()
    }
}

/// Selects, for every node, the `delta` other nodes of highest cosine
/// similarity; equal similarities prefer the lower index.
pub fn build_adjacency<F: Real>(v: ArrayView2<'_, F>, delta: usize) -> Result<Adjacency> {
    let k = v.nrows();
    if k < 2 || delta == 0 || delta > k - 1 {
        return Err(Error::Config(format!(
            "out-degree {delta} must lie in [1, {}]",
            k.saturating_sub(1)
        )));
    }
    let rows: Vec<Vec<f64>> = v
        .rows()
        .into_iter()
        .map(|r| r.iter().map(|x| x.as_f64()).collect())
        .collect();
    let mut sim = Array2::zeros((k, k));
    for i in 0..k {
        for j in 0..k {
            sim[[i, j]] = if i == j {
                1.0
            } else {
                cosine_similarity(&rows[i], &rows[j])?
            };
        }
    }
    let mut edges = Array2::zeros((k, k));
    for i in 0..k {
        let mut candidates: Vec<usize> = (0..k).filter(|&j| j != i).collect();
        candidates.sort_by(|&a, &b| match sim[[i, b]].total_cmp(&sim[[i, a]]) {
            Ordering::Equal => a.cmp(&b),
            o => o,
        });
        for &j in &candidates[..delta] {
            edges[[i, j]] = 1;
        }
    }
    Ok(Adjacency { edges, delta, sim })
}
