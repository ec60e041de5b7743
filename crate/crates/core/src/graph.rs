//! Per-cell proximity graphs and the sparse inter-cell edge table.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::CellAssignment;
use crate::knn::{diversify, exact_knn, nn_descent, NnDescentParams};
use crate::model::{Dataset, Metric, Neighbor};
use crate::search::{ExactDistance, GraphView, SearchState};
use crate::util::rng_for;

const INTRA_STREAM: u64 = 0x11;
const INTER_STREAM: u64 = 0x12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BuildParams {
    /// `d`: out-degree of every intra-cell graph node.
    pub intra_degree: usize,
    /// `l`: inter-cell neighbors kept per node and foreign cell.
    pub inter_degree: usize,
    /// Search budget for inter-cell neighbor discovery.
    pub ef_construction: usize,
    pub knn_iterations: usize,
    pub knn_sample_rate: f64,
    /// Cells smaller than this use exact k-NN instead of NN-descent.
    pub exact_knn_below: usize,
    pub metric: Metric,
    pub seed: u64,
}

impl Default for BuildParams {
    fn default() -> Self {
        Self {
            intra_degree: 16,
            inter_degree: 2,
            ef_construction: 100,
            knn_iterations: 12,
            knn_sample_rate: 0.5,
            exact_knn_below: 2048,
            metric: Metric::SquaredEuclidean,
            seed: 0x5eed,
        }
    }
}

impl BuildParams {
    pub fn validate(&self) -> Result<()> {
        if self.intra_degree == 0 {
            return Err(Error::invalid("intra_degree must be >= 1"));
        }
        if self.inter_degree == 0 {
            return Err(Error::invalid("inter_degree must be >= 1"));
        }
        if self.ef_construction == 0 {
            return Err(Error::invalid("ef_construction must be >= 1"));
        }
        if !(self.knn_sample_rate > 0.0 && self.knn_sample_rate <= 1.0) {
            return Err(Error::invalid("knn_sample_rate must be in (0, 1]"));
        }
        Ok(())
    }
}

/// Fixed-degree adjacency of one cell, rows in member order, global ids.
#[derive(Debug, Clone, PartialEq)]
pub struct IntraCellGraph {
    degree: usize,
    adjacency: Vec<u32>,
}

impl IntraCellGraph {
    pub fn from_parts(degree: usize, adjacency: Vec<u32>) -> Result<Self> {
        if degree == 0 && !adjacency.is_empty() || degree > 0 && adjacency.len() % degree != 0 {
            return Err(Error::Corrupt("intra adjacency length is not a multiple of degree".into()));
        }
        Ok(Self { degree, adjacency })
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn adjacency(&self) -> &[u32] {
        &self.adjacency
    }

    pub fn num_nodes(&self) -> usize {
        if self.degree == 0 {
            0
        } else {
            self.adjacency.len() / self.degree
        }
    }

    /// Neighbors of the node at `position` in its cell's member list.
    #[inline]
    pub fn neighbors(&self, position: usize) -> &[u32] {
        &self.adjacency[position * self.degree..(position + 1) * self.degree]
    }
}

/// Builds the graph of one cell: complete when small, otherwise a
/// diversified `2d`-NN graph refilled to exactly `min(d, c - 1)` neighbors.
pub fn build_intra_graph(
    dataset: &Dataset,
    members: &[u32],
    cell: usize,
    params: &BuildParams,
) -> IntraCellGraph {
    let c = members.len();
    let degree = params.intra_degree.min(c.saturating_sub(1));
    if degree == 0 {
        return IntraCellGraph {
            degree: 0,
            adjacency: Vec::new(),
        };
    }
    let mut adjacency = Vec::with_capacity(c * degree);
    if c <= params.intra_degree + 1 {
        for (p, &u) in members.iter().enumerate() {
            let mut row: Vec<(f32, u32)> = members
                .iter()
                .enumerate()
                .filter(|&(q, _)| q != p)
                .map(|(_, &v)| {
                    (
                        params
                            .metric
                            .distance(dataset.vector(u as usize), dataset.vector(v as usize)),
                        v,
                    )
                })
                .collect();
            row.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            adjacency.extend(row.iter().map(|e| e.1));
        }
        return IntraCellGraph { degree, adjacency };
    }
    let points: Vec<&[f32]> = members.iter().map(|&i| dataset.vector(i as usize)).collect();
    let k = (2 * params.intra_degree).min(c - 1);
    let lists = if c < params.exact_knn_below {
        exact_knn(&points, k, params.metric)
    } else {
        let mut rng = rng_for(params.seed, &[INTRA_STREAM, cell as u64]);
        let nd = NnDescentParams {
            iterations: params.knn_iterations,
            sample_rate: params.knn_sample_rate,
            ..NnDescentParams::default()
        };
        nn_descent(&points, k, params.metric, &nd, &mut rng)
    };
    let pd = |a: u32, b: u32| params.metric.distance(points[a as usize], points[b as usize]);
    let mut rows = Vec::with_capacity(c);
    for (p, list) in lists.iter().enumerate() {
        let mut row = diversify(list, degree, pd);
        if row.len() < degree {
            // Short approximate list: top up with the nearest unseen members.
            let mut extra: Vec<(f32, u32)> = (0..c as u32)
                .filter(|&q| q as usize != p && !row.iter().any(|e| e.1 == q))
                .map(|q| (pd(p as u32, q), q))
                .collect();
            extra.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            row.extend(extra.into_iter().take(degree - row.len()));
        }
        rows.push(row);
    }
    repair_reachability(&mut rows, &pd);
    for row in &rows {
        adjacency.extend(row.iter().map(|&(_, q)| members[q as usize]));
    }
    IntraCellGraph { degree, adjacency }
}

/// Strongly connected components (Kosaraju), labelled in discovery order.
fn components(rows: &[Vec<(f32, u32)>]) -> (Vec<u32>, usize) {
    let c = rows.len();
    let mut order = Vec::with_capacity(c);
    let mut seen = vec![false; c];
    for s in 0..c {
        if seen[s] {
            continue;
        }
        seen[s] = true;
        let mut stack = vec![(s, 0usize)];
        while let Some(top) = stack.last_mut() {
            let (u, i) = *top;
            if let Some(&(_, v)) = rows[u].get(i) {
                top.1 += 1;
                if !seen[v as usize] {
                    seen[v as usize] = true;
                    stack.push((v as usize, 0));
                }
            } else {
                order.push(u);
                stack.pop();
            }
        }
    }
    let mut radj: Vec<Vec<u32>> = vec![Vec::new(); c];
    for (u, row) in rows.iter().enumerate() {
        for &(_, v) in row {
            radj[v as usize].push(u as u32);
        }
    }
    let mut label = vec![u32::MAX; c];
    let mut count = 0;
    for &s in order.iter().rev() {
        if label[s] != u32::MAX {
            continue;
        }
        label[s] = count as u32;
        let mut stack = vec![s];
        while let Some(u) = stack.pop() {
            for &v in &radj[u] {
                if label[v as usize] == u32::MAX {
                    label[v as usize] = count as u32;
                    stack.push(v as usize);
                }
            }
        }
        count += 1;
    }
    (label, count)
}

/// Makes the graph strongly connected without changing its degree by
/// chaining components into a cycle of nearest-pair bridges.
fn repair_reachability(rows: &mut [Vec<(f32, u32)>], pd: &impl Fn(u32, u32) -> f32) {
    let c = rows.len();
    for _ in 0..8 {
        let (label, count) = components(rows);
        if count <= 1 {
            return;
        }
        let mut groups: Vec<Vec<u32>> = vec![Vec::new(); count];
        for (u, &l) in label.iter().enumerate() {
            groups[l as usize].push(u as u32);
        }
        let mut indeg = vec![0usize; c];
        for row in rows.iter() {
            for &(_, v) in row {
                indeg[v as usize] += 1;
            }
        }
        let nearest = |from: u32, pool: &[u32]| {
            pool.iter()
                .map(|&v| (pd(from, v), v))
                .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
                .unwrap()
        };
        for i in 0..count {
            let (src, dst) = (&groups[i], &groups[(i + 1) % count]);
            let x = nearest(dst[0], src).1;
            let (d, y) = nearest(x, dst);
            let row = &rows[x as usize];
            if row.iter().any(|e| e.1 == y) {
                continue;
            }
            // Cross-component slots go first; they are redundant once the cycle closes.
            let slot = row
                .iter()
                .enumerate()
                .max_by_key(|&(j, &(_, t))| (label[t as usize] != label[x as usize], indeg[t as usize], j))
                .map(|(j, _)| j);
            let Some(slot) = slot else { continue };
            indeg[rows[x as usize][slot].1 as usize] -= 1;
            indeg[y as usize] += 1;
            rows[x as usize][slot] = (d, y);
            rows[x as usize].sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        }
    }
}

pub fn build_intra_graphs(
    dataset: &Dataset,
    assignment: &CellAssignment,
    params: &BuildParams,
) -> Vec<IntraCellGraph> {
    (0..assignment.num_cells())
        .into_par_iter()
        .map(|cell| build_intra_graph(dataset, assignment.members(cell), cell, params))
        .collect()
}

/// Inter-cell edges of one source cell. Every node stores `counts[j]`
/// neighbors into cell `j`, laid out at `node_pos * stride + prefix[j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct InterBlock {
    counts: Vec<u32>,
    prefix: Vec<u32>,
    edges: Vec<u32>,
}

impl InterBlock {
    pub fn from_parts(counts: Vec<u32>, edges: Vec<u32>) -> Result<Self> {
        let mut prefix = Vec::with_capacity(counts.len() + 1);
        let mut acc = 0u32;
        prefix.push(0);
        for &c in &counts {
            acc += c;
            prefix.push(acc);
        }
        if acc == 0 && !edges.is_empty() || acc > 0 && edges.len() % acc as usize != 0 {
            return Err(Error::Corrupt("inter edge block length mismatch".into()));
        }
        Ok(Self {
            counts,
            prefix,
            edges,
        })
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn edges(&self) -> &[u32] {
        &self.edges
    }

    pub fn stride(&self) -> usize {
        *self.prefix.last().unwrap_or(&0) as usize
    }

    #[inline]
    pub fn neighbors(&self, position: usize, cell: usize) -> &[u32] {
        let base = position * self.stride();
        &self.edges[base + self.prefix[cell] as usize..base + self.prefix[cell + 1] as usize]
    }

    /// All inter edges of the node at `position`, grouped by target cell.
    pub fn row(&self, position: usize) -> &[u32] {
        let s = self.stride();
        &self.edges[position * s..(position + 1) * s]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InterCellEdges {
    blocks: Vec<InterBlock>,
}

impl InterCellEdges {
    pub fn from_blocks(blocks: Vec<InterBlock>) -> Self {
        Self { blocks }
    }

    pub fn blocks(&self) -> &[InterBlock] {
        &self.blocks
    }

    pub fn block(&self, cell: usize) -> &InterBlock {
        &self.blocks[cell]
    }

    pub fn total_edges(&self) -> usize {
        self.blocks.iter().map(|b| b.edges.len()).sum()
    }
}

/// Intra-only view used while inter edges are being computed.
pub(crate) struct IntraView<'a> {
    pub assignment: &'a CellAssignment,
    pub intra: &'a [IntraCellGraph],
}

impl GraphView for IntraView<'_> {
    fn num_nodes(&self) -> usize {
        self.assignment.len()
    }
    fn num_cells(&self) -> usize {
        self.assignment.num_cells()
    }
    fn cell_of(&self, node: u32) -> usize {
        self.assignment.cell_of(node)
    }
    fn members(&self, cell: usize) -> &[u32] {
        self.assignment.members(cell)
    }
    fn intra(&self, node: u32) -> impl Iterator<Item = u32> + '_ {
        let g = &self.intra[self.assignment.cell_of(node)];
        let row: &[u32] = if g.degree == 0 {
            &[]
        } else {
            g.neighbors(self.assignment.position(node))
        };
        row.iter().copied()
    }
    fn inter(&self, _node: u32, _cell: usize) -> impl Iterator<Item = u32> + '_ {
        std::iter::empty()
    }
}

/// For every node and every other non-empty cell, the `l` nearest members
/// found by a budgeted traversal of that cell (all members when `l >= |C_j|`).
pub fn build_inter_edges(
    dataset: &Dataset,
    assignment: &CellAssignment,
    intra: &[IntraCellGraph],
    params: &BuildParams,
) -> InterCellEdges {
    let s = assignment.num_cells();
    let n = assignment.len();
    let l = params.inter_degree;
    let view = IntraView { assignment, intra };
    let none = |_: u32| false;
    let blocks = (0..s)
        .into_par_iter()
        .map_init(
            || SearchState::new(params.ef_construction.max(l), n),
            |state, o| {
                let counts: Vec<u32> = (0..s)
                    .map(|j| if j == o { 0 } else { assignment.cell_size(j).min(l) as u32 })
                    .collect();
                let stride: usize = counts.iter().map(|&c| c as usize).sum();
                let members = assignment.members(o);
                let mut edges = Vec::with_capacity(members.len() * stride);
                for &u in members {
                    let dist = ExactDistance {
                        dataset,
                        query: dataset.vector(u as usize),
                        metric: params.metric,
                    };
                    for j in 0..s {
                        if counts[j] == 0 {
                            continue;
                        }
                        let cj = assignment.members(j);
                        if l >= cj.len() {
                            let mut all: Vec<Neighbor> = cj
                                .iter()
                                .map(|&v| Neighbor {
                                    id: v,
                                    distance: crate::search::NodeDistance::distance(&dist, v),
                                })
                                .collect();
                            all.sort_by(Neighbor::cmp_by_distance);
                            edges.extend(all.iter().map(|e| e.id));
                            continue;
                        }
                        let mut rng = rng_for(params.seed, &[INTER_STREAM, u as u64, j as u64]);
                        let picks = rand::seq::index::sample(
                            &mut rng,
                            cj.len(),
                            params.intra_degree.min(cj.len()),
                        );
                        let mut entries: Vec<Neighbor> = picks
                            .into_iter()
                            .map(|i| Neighbor {
                                id: cj[i],
                                distance: crate::search::NodeDistance::distance(&dist, cj[i]),
                            })
                            .collect();
                        entries.sort_by(Neighbor::cmp_by_distance);
                        state.reset(params.ef_construction.max(l), n);
                        crate::search::traverse_cell(state, &view, &entries, &dist, &none);
                        edges.extend(state.pool().iter().take(l).map(|c| c.id));
                    }
                }
                InterBlock::from_parts(counts, edges).expect("consistent by construction")
            },
        )
        .collect();
    InterCellEdges { blocks }
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::grid::{partition, GridParams};

    fn clustered(n: usize, dim: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut v = Vec::with_capacity(n * dim);
        let mut a = Vec::with_capacity(n * 2);
        for _ in 0..n {
            for _ in 0..dim {
                v.push(rng.random_range(0.0f32..1.0));
            }
            a.push(rng.random_range(0..100) as f64);
            a.push(rng.random_range(0..100) as f64);
        }
        Dataset::new(dim, 2, v, a).unwrap()
    }

    #[test]
    fn intra_degrees_are_exact_and_within_cell() {
        let ds = clustered(700, 8, 2);
        let (_, asg) = partition(&ds, &GridParams::with_cells(4)).unwrap();
        for params in [
            BuildParams {
                intra_degree: 8,
                ..BuildParams::default()
            },
            BuildParams {
                intra_degree: 8,
                exact_knn_below: 0,
                ..BuildParams::default()
            },
        ] {
            let graphs = build_intra_graphs(&ds, &asg, &params);
            for (cell, g) in graphs.iter().enumerate() {
                let m = asg.members(cell);
                assert_eq!(g.degree(), 8.min(m.len() - 1));
                for p in 0..m.len() {
                    let row = g.neighbors(p);
                    let mut uniq = row.to_vec();
                    uniq.sort();
                    uniq.dedup();
                    assert_eq!(uniq.len(), row.len());
                    assert!(row.iter().all(|&v| v != m[p] && asg.cell_of(v) == cell));
                }
            }
        }
    }

    #[test]
    fn separated_blobs_stay_strongly_connected() {
        // Ten far-apart blobs: a plain diversified k-NN graph splits into islands.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (n, dim) = (600, 4);
        let mut v = Vec::with_capacity(n * dim);
        for i in 0..n {
            for j in 0..dim {
                v.push(((i % 10) * 10 + j) as f32 + rng.random_range(0.0f32..0.1));
            }
        }
        let ds = Dataset::new(dim, 1, v, vec![0.0; n]).unwrap();
        let members: Vec<u32> = (0..n as u32).collect();
        let params = BuildParams {
            intra_degree: 6,
            ..BuildParams::default()
        };
        let g = build_intra_graph(&ds, &members, 0, &params);
        let rows: Vec<Vec<(f32, u32)>> = (0..n)
            .map(|p| g.neighbors(p).iter().map(|&q| (0.0, q)).collect())
            .collect();
        assert_eq!(components(&rows).1, 1);
        for p in 0..n {
            let row = g.neighbors(p);
            let d: Vec<f32> = row
                .iter()
                .map(|&q| Metric::SquaredEuclidean.distance(ds.vector(p), ds.vector(q as usize)))
                .collect();
            assert!(d.windows(2).all(|w| w[0] <= w[1]));
        }
    }

    #[test]
    fn tiny_cells_are_complete() {
        let ds = clustered(3, 2, 1);
        let members = [0u32, 1, 2];
        let g = build_intra_graph(&ds, &members, 0, &BuildParams::default());
        assert_eq!(g.degree(), 2);
        for p in 0..3 {
            let mut row = g.neighbors(p).to_vec();
            row.sort();
            let expect: Vec<u32> = (0..3).filter(|&q| q != p as u32).collect();
            assert_eq!(row, expect);
        }
        let single = build_intra_graph(&ds, &[1], 0, &BuildParams::default());
        assert_eq!(single.degree(), 0);
    }

    #[test]
    fn inter_edges_point_to_nearest_foreign_members() {
        let ds = clustered(400, 4, 7);
        let (_, asg) = partition(&ds, &GridParams::with_cells(4)).unwrap();
        let params = BuildParams {
            intra_degree: 8,
            inter_degree: 2,
            ef_construction: 200,
            ..BuildParams::default()
        };
        let intra = build_intra_graphs(&ds, &asg, &params);
        let inter = build_inter_edges(&ds, &asg, &intra, &params);
        let mut hits = 0;
        let mut total = 0;
        for u in 0..ds.len() as u32 {
            let o = asg.cell_of(u);
            let b = inter.block(o);
            assert!(b.neighbors(asg.position(u), o).is_empty());
            for j in (0..4).filter(|&j| j != o) {
                let got = b.neighbors(asg.position(u), j);
                assert_eq!(got.len(), 2);
                assert!(got.iter().all(|&v| asg.cell_of(v) == j));
                let mut exact: Vec<(f32, u32)> = asg
                    .members(j)
                    .iter()
                    .map(|&v| (params.metric.distance(ds.vector(u as usize), ds.vector(v as usize)), v))
                    .collect();
                exact.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                hits += got.iter().filter(|&&v| exact[..2].iter().any(|e| e.1 == v)).count();
                total += 2;
            }
        }
        assert!(hits as f64 / total as f64 > 0.95, "{hits}/{total}");
    }
}
