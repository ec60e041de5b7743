//! Query execution: cell selection, cluster-guided cell ordering, sequential
//! per-cell traversal with inter-cell entry seeding, and the whole-graph
//! fallback for near-unfiltered queries.
//!
//! One bounded, distance-sorted pool plays both the candidate role (entries
//! carry an `expanded` flag) and the working result role. Its capacity is
//! the search `beam`; with `beam == k` it behaves exactly like a top-k result
//! heap gating every insertion. Anything pushed out of the pool that passes
//! the filter is kept in the recycle pool, so a filtered answer is never lost
//! once it has been admitted.

use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{cells_intersecting, GridSpec};
use crate::histogram::ClusterHistogram;
use crate::index::GmgIndex;
use crate::model::{Dataset, Metric, Neighbor, RangeQuery};
use crate::util::{rng_for, VisitedSet};

/// Stream tag for the per-query entry-point RNG.
const QUERY_STREAM: u64 = 0x51;

/// Read access to an index's adjacency, implemented by the in-memory index and
/// by the partial index streamed per batch.
pub trait GraphView {
    fn num_nodes(&self) -> usize;
    fn num_cells(&self) -> usize;
    fn cell_of(&self, node: u32) -> usize;
    fn members(&self, cell: usize) -> &[u32];
    fn intra(&self, node: u32) -> impl Iterator<Item = u32> + '_;
    fn inter(&self, node: u32, cell: usize) -> impl Iterator<Item = u32> + '_;
}

/// Distance from the current query to a stored node.
pub trait NodeDistance {
    fn distance(&self, node: u32) -> f32;
}

impl NodeDistance for crate::quantize::CodeDistance<'_> {
    #[inline]
    fn distance(&self, node: u32) -> f32 {
        crate::quantize::CodeDistance::distance(self, node)
    }
}

/// Full-precision distance over a dataset.
pub struct ExactDistance<'a> {
    pub dataset: &'a Dataset,
    pub query: &'a [f32],
    pub metric: Metric,
}

impl NodeDistance for ExactDistance<'_> {
    #[inline]
    fn distance(&self, node: u32) -> f32 {
        self.metric
            .distance(self.query, self.dataset.vector(node as usize))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchParams {
    /// Overrides the query's own `k` when set.
    pub k: Option<usize>,
    /// Capacity of the candidate pool; the recall/speed knob.
    pub beam: usize,
    /// Fall back to a whole-graph search when more than this many cells
    /// intersect. `None` means `S - 1`, i.e. only when every cell intersects.
    pub s_thre: Option<usize>,
    /// Leading pool entries whose inter-cell edges seed the next cell. `None` means `k`.
    pub inter_seeds: Option<usize>,
    /// Random members added to each cell's entry set. `None` means the intra degree.
    pub entry_random: Option<usize>,
    /// Candidates handed to exact reranking. `None` means `k`.
    pub rerank: Option<usize>,
    pub cell_order: bool,
    pub inter_seeding: bool,
    pub rng_seed: u64,
}

impl Default for SearchParams {
    fn default() -> Self {
        Self {
            k: None,
            beam: 64,
            s_thre: None,
            inter_seeds: None,
            entry_random: None,
            rerank: None,
            cell_order: true,
            inter_seeding: true,
            rng_seed: 0x5eed,
        }
    }
}

impl SearchParams {
    pub fn with_beam(beam: usize) -> Self {
        Self {
            beam,
            ..Self::default()
        }
    }
}

/// Parameters after defaults are resolved against one index and query.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Resolved {
    pub k: usize,
    pub beam: usize,
    pub s_thre: usize,
    pub inter_seeds: usize,
    pub entry_random: usize,
    pub entry_count: usize,
    pub rerank: usize,
    pub cell_order: bool,
    pub inter_seeding: bool,
    pub rng_seed: u64,
}

impl SearchParams {
    pub(crate) fn resolve(&self, query_k: usize, num_cells: usize, degree: usize) -> Result<Resolved> {
        let k = self.k.unwrap_or(query_k);
        if k == 0 {
            return Err(Error::invalid("k must be positive"));
        }
        if self.beam < k {
            return Err(Error::invalid(format!("beam {} must be >= k = {k}", self.beam)));
        }
        let inter_seeds = self.inter_seeds.unwrap_or(k);
        if inter_seeds == 0 {
            return Err(Error::invalid("inter_seeds (L) must be >= 1"));
        }
        if self.s_thre == Some(0) {
            return Err(Error::invalid("s_thre must be >= 1"));
        }
        let degree = degree.max(1);
        Ok(Resolved {
            k,
            beam: self.beam,
            s_thre: self.s_thre.unwrap_or(num_cells.saturating_sub(1).max(1)),
            inter_seeds,
            entry_random: self.entry_random.unwrap_or(degree),
            entry_count: degree,
            rerank: self.rerank.unwrap_or(k).max(k),
            cell_order: self.cell_order,
            inter_seeding: self.inter_seeding,
            rng_seed: self.rng_seed,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub distance: f32,
    pub id: u32,
    pub expanded: bool,
}

impl Candidate {
    #[inline]
    fn before(&self, distance: f32, id: u32) -> bool {
        lt(self.distance, self.id, distance, id)
    }
}

#[inline]
fn lt(a: f32, a_id: u32, b: f32, b_id: u32) -> bool {
    a.total_cmp(&b).then(a_id.cmp(&b_id)).is_lt()
}

/// Per-query traversal state. Reusable across queries via [`SearchState::reset`].
#[derive(Debug, Clone)]
pub struct SearchState {
    pool: Vec<Candidate>,
    capacity: usize,
    cursor: usize,
    recycled: Vec<Neighbor>,
    visited: VisitedSet,
    distance_evals: u64,
}

impl SearchState {
    pub fn new(capacity: usize, num_nodes: usize) -> Self {
        Self {
            pool: Vec::with_capacity(capacity + 1),
            capacity: capacity.max(1),
            cursor: 0,
            recycled: Vec::new(),
            visited: VisitedSet::new(num_nodes),
            distance_evals: 0,
        }
    }

    pub fn reset(&mut self, capacity: usize, num_nodes: usize) {
        self.pool.clear();
        self.capacity = capacity.max(1);
        self.cursor = 0;
        self.recycled.clear();
        self.visited.ensure_len(num_nodes);
        self.visited.clear();
        self.distance_evals = 0;
    }

    /// Sorted pool contents (candidates with expansion flags).
    pub fn pool(&self) -> &[Candidate] {
        &self.pool
    }

    pub fn recycled(&self) -> &[Neighbor] {
        &self.recycled
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn distance_evals(&self) -> u64 {
        self.distance_evals
    }

    pub fn is_visited(&self, id: u32) -> bool {
        self.visited.contains(id)
    }

    /// Admits `(distance, id)` if the pool has room or it beats the current
    /// worst; a displaced entry goes to the recycle pool when `accept` holds.
    pub fn offer(&mut self, distance: f32, id: u32, accept: &impl Fn(u32) -> bool) -> bool {
        if self.pool.len() >= self.capacity {
            let worst = self.pool.last().expect("capacity >= 1");
            if !lt(distance, id, worst.distance, worst.id) {
                return false;
            }
        }
        let pos = self.pool.partition_point(|c| c.before(distance, id));
        self.pool.insert(
            pos,
            Candidate {
                distance,
                id,
                expanded: false,
            },
        );
        if pos < self.cursor {
            self.cursor = pos;
        }
        if self.pool.len() > self.capacity {
            let w = self.pool.pop().expect("non-empty");
            if accept(w.id) {
                self.recycled.push(Neighbor {
                    id: w.id,
                    distance: w.distance,
                });
            }
        }
        true
    }

    fn next_unexpanded(&mut self) -> Option<u32> {
        while self.cursor < self.pool.len() {
            let c = &mut self.pool[self.cursor];
            self.cursor += 1;
            if !c.expanded {
                c.expanded = true;
                return Some(c.id);
            }
        }
        None
    }

    fn expand<I: Iterator<Item = u32>>(
        &mut self,
        neighbors: I,
        dist: &impl NodeDistance,
        accept: &impl Fn(u32) -> bool,
    ) {
        for v in neighbors {
            if self.visited.insert(v) {
                let d = dist.distance(v);
                self.distance_evals += 1;
                self.offer(d, v, accept);
            }
        }
    }

    /// Best-first expansion from `entries` until no unexpanded pool entry is
    /// left. Entries the pool rejects are still expanded once so a far cell
    /// can be entered.
    pub fn run<I, N>(
        &mut self,
        entries: &[Neighbor],
        neighbors: N,
        dist: &impl NodeDistance,
        accept: &impl Fn(u32) -> bool,
    ) where
        I: Iterator<Item = u32>,
        N: Fn(u32) -> I,
    {
        let mut forced = Vec::new();
        for e in entries {
            if self.visited.insert(e.id) && !self.offer(e.distance, e.id, accept) {
                forced.push(e.id);
            }
        }
        for u in forced {
            self.expand(neighbors(u), dist, accept);
        }
        while let Some(u) = self.next_unexpanded() {
            self.expand(neighbors(u), dist, accept);
        }
    }

    /// Filter-passing pool entries plus the recycle pool, nearest first.
    pub fn filtered_candidates(&self, accept: &impl Fn(u32) -> bool) -> Vec<Neighbor> {
        let mut out: Vec<Neighbor> = self
            .pool
            .iter()
            .filter(|c| accept(c.id))
            .map(|c| Neighbor {
                id: c.id,
                distance: c.distance,
            })
            .chain(self.recycled.iter().copied())
            .collect();
        out.sort_by(Neighbor::cmp_by_distance);
        out.dedup_by_key(|n| n.id);
        out
    }

    pub(crate) fn add_evals(&mut self, n: u64) {
        self.distance_evals += n;
    }
}

/// Greedy traversal of one cell over its intra-cell edges.
pub fn traverse_cell<G: GraphView>(
    state: &mut SearchState,
    graph: &G,
    entries: &[Neighbor],
    dist: &impl NodeDistance,
    accept: &impl Fn(u32) -> bool,
) {
    state.run(entries, |u| graph.intra(u), dist, accept);
}

/// Entry candidates for one cell and the subset chosen as entry points.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Transition {
    /// Every evaluated entry candidate, nearest first.
    pub candidates: Vec<Neighbor>,
    /// The `entry_count` nearest candidates.
    pub entries: Vec<Neighbor>,
}

/// Builds the entry set for `next_cell`: `entry_random` random members plus
/// the inter-cell neighbors (into `next_cell`) of the first `inter_seeds`
/// pool entries, keeping the `entry_count` nearest.
#[allow(clippy::too_many_arguments)]
pub fn transition_entries<G: GraphView>(
    state: &mut SearchState,
    graph: &G,
    next_cell: usize,
    dist: &impl NodeDistance,
    inter_seeds: usize,
    entry_random: usize,
    entry_count: usize,
    use_inter: bool,
    rng: &mut impl Rng,
) -> Transition {
    let members = graph.members(next_cell);
    if members.is_empty() {
        return Transition::default();
    }
    let r = entry_random.min(members.len());
    let mut ids: Vec<u32> = sample(rng, members.len(), r)
        .into_iter()
        .map(|i| members[i])
        .collect();
    if use_inter {
        for c in state.pool.iter().take(inter_seeds) {
            ids.extend(graph.inter(c.id, next_cell));
        }
    }
    ids.sort_unstable();
    ids.dedup();
    let mut candidates: Vec<Neighbor> = ids
        .into_iter()
        .map(|id| Neighbor {
            id,
            distance: dist.distance(id),
        })
        .collect();
    state.add_evals(candidates.len() as u64);
    candidates.sort_by(Neighbor::cmp_by_distance);
    let entries = candidates.iter().take(entry_count).copied().collect();
    Transition {
        candidates,
        entries,
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SearchStats {
    pub distance_evals: u64,
    pub cells_selected: usize,
    pub cells_visited: usize,
    pub fallback: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SearchOutput {
    pub neighbors: Vec<Neighbor>,
    pub stats: SearchStats,
}

/// Exact rerank of `candidates` (nearest-first in code space): the first
/// `keep` are rescored on the original vectors and the best `k` returned.
pub fn rerank_exact(
    dataset: &Dataset,
    metric: Metric,
    query: &[f32],
    candidates: &[Neighbor],
    keep: usize,
    k: usize,
) -> Vec<Neighbor> {
    let mut out: Vec<Neighbor> = candidates
        .iter()
        .take(keep)
        .map(|c| Neighbor {
            id: c.id,
            distance: metric.distance(query, dataset.vector(c.id as usize)),
        })
        .collect();
    out.sort_by(Neighbor::cmp_by_distance);
    out.truncate(k);
    out
}

/// Plan for one query: its selected cells in visit order, or the fallback path.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryPlan {
    pub cells: Vec<usize>,
    pub fallback: bool,
    pub selected: usize,
}

pub(crate) fn plan_query(
    grid: &GridSpec,
    histogram: &ClusterHistogram,
    query: &RangeQuery,
    p: &Resolved,
) -> QueryPlan {
    let selected = cells_intersecting(grid, query);
    let count = selected.len();
    if count > p.s_thre {
        return QueryPlan {
            cells: (0..grid.num_cells()).collect(),
            fallback: true,
            selected: count,
        };
    }
    let cells = if p.cell_order && count > 1 {
        histogram.order_cells(&selected, &query.vector)
    } else {
        selected
    };
    QueryPlan {
        cells,
        fallback: false,
        selected: count,
    }
}

/// Visits `cells` in order with search-jump-search seeding.
pub(crate) fn traverse_sequence<G: GraphView>(
    state: &mut SearchState,
    graph: &G,
    cells: &[usize],
    dist: &impl NodeDistance,
    accept: &impl Fn(u32) -> bool,
    p: &Resolved,
    rng: &mut ChaCha8Rng,
) -> usize {
    let mut visited = 0;
    for &cell in cells {
        let t = transition_entries(
            state,
            graph,
            cell,
            dist,
            p.inter_seeds,
            p.entry_random,
            p.entry_count,
            p.inter_seeding,
            rng,
        );
        if t.entries.is_empty() {
            continue;
        }
        traverse_cell(state, graph, &t.entries, dist, accept);
        visited += 1;
    }
    visited
}

/// Whole-graph best-first search over intra plus inter edges, unfiltered.
pub(crate) fn traverse_global<G: GraphView>(
    state: &mut SearchState,
    graph: &G,
    dist: &impl NodeDistance,
    p: &Resolved,
    rng: &mut ChaCha8Rng,
) {
    let n = graph.num_nodes();
    let s = graph.num_cells();
    let mut entries: Vec<Neighbor> = sample(rng, n, p.entry_count.min(n))
        .into_iter()
        .map(|i| Neighbor {
            id: i as u32,
            distance: dist.distance(i as u32),
        })
        .collect();
    state.add_evals(entries.len() as u64);
    entries.sort_by(Neighbor::cmp_by_distance);
    let none = |_: u32| false;
    state.run(
        &entries,
        |u| {
            graph
                .intra(u)
                .chain((0..s).flat_map(move |c| graph.inter(u, c)))
        },
        dist,
        &none,
    );
}

pub(crate) fn query_rng(p: &Resolved) -> ChaCha8Rng {
    rng_for(p.rng_seed, &[QUERY_STREAM])
}

/// Runs one range-filtered query against an in-memory index.
pub fn search(index: &GmgIndex, query: &RangeQuery, params: &SearchParams) -> Result<SearchOutput> {
    let mut state = SearchState::new(params.beam, index.len());
    search_with_state(index, query, params, &mut state)
}

/// [`search`] with caller-provided scratch state.
pub fn search_with_state(
    index: &GmgIndex,
    query: &RangeQuery,
    params: &SearchParams,
    state: &mut SearchState,
) -> Result<SearchOutput> {
    let dataset = index.dataset();
    query.validate(dataset.dim(), dataset.num_attributes())?;
    let p = params.resolve(query.k, index.num_cells(), index.params().intra_degree)?;
    let plan = plan_query(index.grid(), index.histogram(), query, &p);
    state.reset(p.beam, index.len());
    let mut stats = SearchStats {
        cells_selected: plan.selected,
        fallback: plan.fallback,
        ..SearchStats::default()
    };
    if plan.selected == 0 {
        return Ok(SearchOutput {
            neighbors: Vec::new(),
            stats,
        });
    }
    let dist = index.codes().query(&query.vector, index.metric());
    let accept = |id: u32| query.matches(dataset.attributes(id as usize));
    let mut rng = query_rng(&p);
    let candidates = if plan.fallback {
        traverse_global(state, index, &dist, &p, &mut rng);
        stats.cells_visited = index.num_cells();
        let mut c: Vec<Neighbor> = state
            .pool()
            .iter()
            .filter(|c| accept(c.id))
            .map(|c| Neighbor {
                id: c.id,
                distance: c.distance,
            })
            .collect();
        c.sort_by(Neighbor::cmp_by_distance);
        c
    } else {
        stats.cells_visited = traverse_sequence(state, index, &plan.cells, &dist, &accept, &p, &mut rng);
        state.filtered_candidates(&accept)
    };
    stats.distance_evals = state.distance_evals();
    let neighbors = rerank_exact(
        dataset,
        index.metric(),
        &query.vector,
        &candidates,
        p.rerank,
        p.k,
    );
    Ok(SearchOutput { neighbors, stats })
}

/// Runs queries in parallel; each worker reuses one scratch state.
pub fn search_batch(
    index: &GmgIndex,
    queries: &[RangeQuery],
    params: &SearchParams,
) -> Result<Vec<SearchOutput>> {
    queries
        .par_iter()
        .map_init(
            || SearchState::new(params.beam, index.len()),
            |state, q| search_with_state(index, q, params, state),
        )
        .collect()
}
