//! Approximate k-NN graphs (NN-descent), exact k-NN for small point sets, and
//! rank-based neighbor diversification.
//!
//! All functions work on local indices `0..points.len()`.

use rand::seq::index::sample;
use rand::Rng;

use crate::model::Metric;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NnDescentParams {
    pub iterations: usize,
    /// Fraction of each list sampled per round.
    pub sample_rate: f64,
    /// Early stop when fewer than `delta * n * k` list updates happen in a round.
    pub delta: f64,
}

impl Default for NnDescentParams {
    fn default() -> Self {
        Self {
            iterations: 12,
            sample_rate: 0.5,
            delta: 0.001,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Entry {
    dist: f32,
    id: u32,
    new: bool,
}

#[inline]
fn lt(a: f32, ai: u32, b: f32, bi: u32) -> bool {
    a.total_cmp(&b).then(ai.cmp(&bi)).is_lt()
}

/// Inserts into a sorted bounded list; returns whether the list changed.
fn push_bounded(list: &mut Vec<Entry>, k: usize, dist: f32, id: u32) -> bool {
    if list.len() >= k {
        let w = list.last().expect("k >= 1");
        if !lt(dist, id, w.dist, w.id) {
            return false;
        }
    }
    if list.iter().any(|e| e.id == id) {
        return false;
    }
    let pos = list.partition_point(|e| lt(e.dist, e.id, dist, id));
    list.insert(pos, Entry { dist, id, new: true });
    list.truncate(k);
    true
}

fn finish(lists: Vec<Vec<Entry>>) -> Vec<Vec<(f32, u32)>> {
    lists
        .into_iter()
        .map(|l| l.into_iter().map(|e| (e.dist, e.id)).collect())
        .collect()
}

/// Exact `k` nearest neighbors of each point (self excluded), nearest first.
pub fn exact_knn(points: &[&[f32]], k: usize, metric: Metric) -> Vec<Vec<(f32, u32)>> {
    let n = points.len();
    let k = k.min(n.saturating_sub(1));
    let mut rows = vec![Vec::with_capacity(n); n];
    for i in 0..n {
        for j in i + 1..n {
            let d = metric.distance(points[i], points[j]);
            rows[i].push((d, j as u32));
            rows[j].push((d, i as u32));
        }
    }
    rows.into_iter()
        .map(|mut r| {
            r.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            r.truncate(k);
            r
        })
        .collect()
}

fn sample_into(rng: &mut impl Rng, src: &[u32], take: usize, out: &mut Vec<u32>) {
    if src.len() <= take {
        out.extend_from_slice(src);
    } else {
        out.extend(sample(rng, src.len(), take).into_iter().map(|i| src[i]));
    }
}

/// NN-descent: refines random initial lists by joining neighbors of neighbors.
/// Deterministic for a given RNG state.
pub fn nn_descent(
    points: &[&[f32]],
    k: usize,
    metric: Metric,
    params: &NnDescentParams,
    rng: &mut impl Rng,
) -> Vec<Vec<(f32, u32)>> {
    let n = points.len();
    let k = k.min(n.saturating_sub(1));
    if k == 0 {
        return vec![Vec::new(); n];
    }
    let dist = |a: u32, b: u32| metric.distance(points[a as usize], points[b as usize]);
    let mut lists: Vec<Vec<Entry>> = (0..n)
        .map(|i| {
            let mut l = Vec::with_capacity(k + 1);
            for j in sample(rng, n - 1, k) {
                let j = if j >= i { j + 1 } else { j } as u32;
                push_bounded(&mut l, k, dist(i as u32, j), j);
            }
            l
        })
        .collect();

    let take = ((params.sample_rate * k as f64).ceil() as usize).max(1);
    let mut new_f: Vec<Vec<u32>> = vec![Vec::new(); n];
    let mut old_f: Vec<Vec<u32>> = vec![Vec::new(); n];
    for _ in 0..params.iterations {
        for i in 0..n {
            new_f[i].clear();
            old_f[i].clear();
            let fresh: Vec<usize> = (0..lists[i].len()).filter(|&p| lists[i][p].new).collect();
            let chosen: Vec<usize> = if fresh.len() <= take {
                fresh
            } else {
                sample(rng, fresh.len(), take).into_iter().map(|p| fresh[p]).collect()
            };
            for p in chosen {
                lists[i][p].new = false;
                new_f[i].push(lists[i][p].id);
            }
            for e in &lists[i] {
                if !e.new && !new_f[i].contains(&e.id) {
                    old_f[i].push(e.id);
                }
            }
        }
        let mut rev_new: Vec<Vec<u32>> = vec![Vec::new(); n];
        let mut rev_old: Vec<Vec<u32>> = vec![Vec::new(); n];
        for i in 0..n {
            for &j in &new_f[i] {
                rev_new[j as usize].push(i as u32);
            }
            for &j in &old_f[i] {
                rev_old[j as usize].push(i as u32);
            }
        }
        for i in 0..n {
            let rn = std::mem::take(&mut rev_new[i]);
            sample_into(rng, &rn, take, &mut new_f[i]);
            let ro = std::mem::take(&mut rev_old[i]);
            sample_into(rng, &ro, take, &mut old_f[i]);
            new_f[i].sort_unstable();
            new_f[i].dedup();
            old_f[i].sort_unstable();
            old_f[i].dedup();
        }

        let mut updates = 0usize;
        for i in 0..n {
            let (nw, od) = (&new_f[i], &old_f[i]);
            for a in 0..nw.len() {
                let u = nw[a];
                for &v in nw[a + 1..].iter().chain(od.iter()) {
                    if u == v {
                        continue;
                    }
                    let d = dist(u, v);
                    updates += usize::from(push_bounded(&mut lists[u as usize], k, d, v));
                    updates += usize::from(push_bounded(&mut lists[v as usize], k, d, u));
                }
            }
        }
        if (updates as f64) <= params.delta * (n * k) as f64 {
            break;
        }
    }
    finish(lists)
}

/// Rank-based pruning of a nearest-first list: `y` is dropped when some kept
/// `z` has `dist(z, y) < dist(x, y)`. Dropped entries refill the list, nearest
/// first, until it has `degree` entries (or the list runs out).
pub fn diversify(
    list: &[(f32, u32)],
    degree: usize,
    pair_distance: impl Fn(u32, u32) -> f32,
) -> Vec<(f32, u32)> {
    let mut kept: Vec<(f32, u32)> = Vec::with_capacity(degree);
    let mut dropped = Vec::new();
    for &(dxy, y) in list {
        if kept.len() == degree {
            break;
        }
        if kept.iter().any(|&(_, z)| pair_distance(z, y) < dxy) {
            dropped.push((dxy, y));
        } else {
            kept.push((dxy, y));
        }
    }
    for d in dropped {
        if kept.len() == degree {
            break;
        }
        kept.push(d);
    }
    kept.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    kept
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn random_points(n: usize, dim: usize, seed: u64) -> Vec<Vec<f32>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| (0..dim).map(|_| rng.random_range(0.0f32..1.0)).collect())
            .collect()
    }

    #[test]
    fn exact_knn_on_a_line() {
        let pts: Vec<Vec<f32>> = [0.0, 1.0, 3.0, 7.0].iter().map(|&x| vec![x]).collect();
        let refs: Vec<&[f32]> = pts.iter().map(Vec::as_slice).collect();
        let g = exact_knn(&refs, 2, Metric::SquaredEuclidean);
        assert_eq!(g[0], vec![(1.0, 1), (9.0, 2)]);
        assert_eq!(g[3], vec![(16.0, 2), (36.0, 1)]);
    }

    #[test]
    fn nn_descent_recall_is_high() {
        let pts = random_points(600, 8, 4);
        let refs: Vec<&[f32]> = pts.iter().map(Vec::as_slice).collect();
        let exact = exact_knn(&refs, 10, Metric::SquaredEuclidean);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let approx = nn_descent(
            &refs,
            10,
            Metric::SquaredEuclidean,
            &NnDescentParams::default(),
            &mut rng,
        );
        let mut hit = 0;
        for (a, e) in approx.iter().zip(&exact) {
            assert_eq!(a.len(), 10);
            hit += a.iter().filter(|x| e.iter().any(|y| y.1 == x.1)).count();
        }
        let recall = hit as f64 / (600.0 * 10.0);
        assert!(recall > 0.9, "recall {recall}");
    }

    #[test]
    fn nn_descent_is_deterministic() {
        let pts = random_points(200, 4, 1);
        let refs: Vec<&[f32]> = pts.iter().map(Vec::as_slice).collect();
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            nn_descent(&refs, 6, Metric::SquaredEuclidean, &NnDescentParams::default(), &mut rng)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn diversify_prunes_then_refills() {
        // x at 0; candidates at 1, 1.1, -1. The point at 1.1 is closer to 1 than to x.
        let pos = [0.0f32, 1.0, 1.1, -1.0];
        let pd = |a: u32, b: u32| (pos[a as usize] - pos[b as usize]).powi(2);
        let list = vec![(pd(0, 1), 1), (pd(0, 3), 3), (pd(0, 2), 2)];
        let mut list = list;
        list.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let two = diversify(&list, 2, pd);
        assert_eq!(two.iter().map(|e| e.1).collect::<Vec<_>>(), vec![1, 3]);
        let three = diversify(&list, 3, pd);
        assert_eq!(three.iter().map(|e| e.1).collect::<Vec<_>>(), vec![1, 3, 2]);
    }
}
