//! Cluster histogram used to rank a query's cells by how many of its likely
//! neighbors they hold.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::CellAssignment;
use crate::model::{squared_euclidean, Dataset};
use crate::util::rng_for;

const KMEANS_STREAM: u64 = 0x21;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HistogramParams {
    /// `K_c`, clamped to the dataset size.
    pub num_clusters: usize,
    /// Nearest centroids summed per cardinality estimate.
    pub top_m: usize,
    pub iterations: usize,
    /// Lloyd iterations run on at most this many sampled records.
    pub max_training_points: usize,
    pub seed: u64,
}

impl Default for HistogramParams {
    fn default() -> Self {
        Self {
            num_clusters: 256,
            top_m: 8,
            iterations: 25,
            max_training_points: 50_000,
            seed: 0x5eed,
        }
    }
}

/// Nearest centroid index (ties to the lower index).
fn nearest(centroids: &[f32], dim: usize, v: &[f32]) -> usize {
    let mut best = (f32::INFINITY, 0);
    for (c, cen) in centroids.chunks_exact(dim).enumerate() {
        let d = squared_euclidean(v, cen);
        if d < best.0 {
            best = (d, c);
        }
    }
    best.1
}

/// k-means++ seeding followed by Lloyd iterations over `points` (row-major).
/// Empty clusters keep their previous centroid.
pub fn kmeans(points: &[f32], dim: usize, k: usize, iterations: usize, rng: &mut impl Rng) -> Vec<f32> {
    let n = points.len() / dim.max(1);
    let k = k.min(n);
    if k == 0 {
        return Vec::new();
    }
    let row = |i: usize| &points[i * dim..(i + 1) * dim];
    let mut centroids = Vec::with_capacity(k * dim);
    centroids.extend_from_slice(row(rng.random_range(0..n)));
    let mut d2: Vec<f64> = (0..n).map(|i| squared_euclidean(row(i), &centroids[..dim]) as f64).collect();
    for _ in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            let mut idx = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if r < w {
                    idx = i;
                    break;
                }
                r -= w;
            }
            idx
        } else {
            rng.random_range(0..n)
        };
        let start = centroids.len();
        centroids.extend_from_slice(row(pick));
        let new_c = centroids[start..].to_vec();
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(squared_euclidean(row(i), &new_c) as f64);
        }
    }
    for _ in 0..iterations {
        let labels: Vec<usize> = (0..n)
            .into_par_iter()
            .map(|i| nearest(&centroids, dim, row(i)))
            .collect();
        let mut sums = vec![0.0f64; k * dim];
        let mut counts = vec![0usize; k];
        for (i, &c) in labels.iter().enumerate() {
            counts[c] += 1;
            for (s, &v) in sums[c * dim..(c + 1) * dim].iter_mut().zip(row(i)) {
                *s += v as f64;
            }
        }
        let mut moved = false;
        for c in 0..k {
            if counts[c] == 0 {
                continue;
            }
            for j in 0..dim {
                let v = (sums[c * dim + j] / counts[c] as f64) as f32;
                moved |= v != centroids[c * dim + j];
                centroids[c * dim + j] = v;
            }
        }
        if !moved {
            break;
        }
    }
    centroids
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterHistogram {
    dim: usize,
    num_cells: usize,
    top_m: usize,
    centroids: Vec<f32>,
    /// `num_cells x num_clusters`, row-major.
    counts: Vec<u32>,
}

impl ClusterHistogram {
    pub fn from_parts(
        dim: usize,
        num_cells: usize,
        top_m: usize,
        centroids: Vec<f32>,
        counts: Vec<u32>,
    ) -> Result<Self> {
        if dim == 0 || centroids.len() % dim != 0 {
            return Err(Error::Corrupt("centroid array length mismatch".into()));
        }
        if counts.len() != num_cells * (centroids.len() / dim) {
            return Err(Error::Corrupt("histogram size mismatch".into()));
        }
        Ok(Self {
            dim,
            num_cells,
            top_m,
            centroids,
            counts,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_cells(&self) -> usize {
        self.num_cells
    }

    pub fn num_clusters(&self) -> usize {
        self.centroids.len() / self.dim
    }

    pub fn top_m(&self) -> usize {
        self.top_m
    }

    pub fn centroids(&self) -> &[f32] {
        &self.centroids
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn count(&self, cell: usize, cluster: usize) -> u32 {
        self.counts[cell * self.num_clusters() + cluster]
    }

    /// Indices of the `top_m` centroids nearest to `q` (ties to the lower index).
    pub fn nearest_clusters(&self, q: &[f32]) -> Vec<usize> {
        let mut d: Vec<(f32, usize)> = self
            .centroids
            .chunks_exact(self.dim)
            .enumerate()
            .map(|(c, cen)| (squared_euclidean(q, cen), c))
            .collect();
        d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        d.truncate(self.top_m.min(d.len()));
        d.into_iter().map(|e| e.1).collect()
    }

    /// Estimated neighbor mass of each listed cell for `q`.
    pub fn estimate_cardinalities(&self, q: &[f32], cells: &[usize]) -> Vec<u64> {
        let near = self.nearest_clusters(q);
        cells
            .iter()
            .map(|&s| near.iter().map(|&c| self.count(s, c) as u64).sum())
            .collect()
    }

    /// `cells` sorted by descending estimate, ties by ascending id.
    pub fn order_cells(&self, cells: &[usize], q: &[f32]) -> Vec<usize> {
        let est = self.estimate_cardinalities(q, cells);
        let mut order: Vec<(u64, usize)> = est.into_iter().zip(cells.iter().copied()).collect();
        order.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
        order.into_iter().map(|e| e.1).collect()
    }
}

pub fn build_histogram(
    dataset: &Dataset,
    assignment: &CellAssignment,
    params: &HistogramParams,
) -> Result<ClusterHistogram> {
    if params.num_clusters == 0 || params.top_m == 0 {
        return Err(Error::invalid("num_clusters and top_m must be >= 1"));
    }
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let dim = dataset.dim();
    let n = dataset.len();
    let mut rng = rng_for(params.seed, &[KMEANS_STREAM]);
    let centroids = if n > params.max_training_points.max(params.num_clusters) {
        let idx = rand::seq::index::sample(&mut rng, n, params.max_training_points.max(params.num_clusters));
        let mut ids: Vec<usize> = idx.into_iter().collect();
        ids.sort_unstable();
        let train: Vec<f32> = ids.iter().flat_map(|&i| dataset.vector(i).iter().copied()).collect();
        kmeans(&train, dim, params.num_clusters, params.iterations, &mut rng)
    } else {
        kmeans(dataset.raw_vectors(), dim, params.num_clusters, params.iterations, &mut rng)
    };
    let kc = centroids.len() / dim;
    let labels: Vec<usize> = (0..n)
        .into_par_iter()
        .map(|i| nearest(&centroids, dim, dataset.vector(i)))
        .collect();
    let s = assignment.num_cells();
    let mut counts = vec![0u32; s * kc];
    for (i, &c) in labels.iter().enumerate() {
        counts[assignment.cell_of(i as u32) * kc + c] += 1;
    }
    ClusterHistogram::from_parts(dim, s, params.top_m, centroids, counts)
}
