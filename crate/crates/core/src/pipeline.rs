//! Out-of-core execution. The host tier keeps the inter-cell edge table,
//! codes, vectors and attributes; the compute tier only ever holds the
//! partial index of the batch it is working on (plus up to `stage_depth - 1`
//! staged successors).
//!
//! Three stages run per batch: load (assemble the partial index from lazy
//! section reads and move it across the modeled link), compute (advance every
//! active query through the batch's cells with its persistent state), and
//! rerank (exact rescoring of queries that finished in the batch).

use std::fmt;
use std::io::Write;
use std::time::{Duration, Instant};

use crossbeam_channel::{bounded, unbounded};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format::{Cursor, IndexFile};
use crate::graph::{BuildParams, InterCellEdges};
use crate::grid::{CellAssignment, GridSpec};
use crate::histogram::ClusterHistogram;
use crate::model::{Dataset, Neighbor, RangeQuery};
use crate::quantize::{QuantizedVectors, ScalarQuantizer};
use crate::schedule::{schedule_greedy, schedule_identity, BatchPlan, IncidenceMatrix};
use crate::search::{
    plan_query, query_rng, rerank_exact, traverse_global, traverse_sequence, GraphView,
    NodeDistance, QueryPlan, Resolved, SearchOutput, SearchParams, SearchState, SearchStats,
};

const NO_LOCAL: u32 = u32::MAX;

/// Everything resident on the host tier: the index minus intra-cell graphs.
#[derive(Debug, Clone)]
pub struct HostIndex {
    pub build: BuildParams,
    pub grid: GridSpec,
    pub assignment: CellAssignment,
    pub inter: InterCellEdges,
    pub histogram: ClusterHistogram,
    pub codes: QuantizedVectors,
    pub dataset: Dataset,
}

impl HostIndex {
    pub fn load(file: &IndexFile) -> Result<Self> {
        let grid = file.read_grid()?;
        let assignment = file.read_assignment(&grid)?;
        Ok(Self {
            build: file.read_params()?,
            inter: file.read_inter_edges()?,
            histogram: file.read_histogram()?,
            codes: file.read_codes()?,
            dataset: file.read_dataset()?,
            grid,
            assignment,
        })
    }

    pub fn num_cells(&self) -> usize {
        self.grid.num_cells()
    }

    fn degree_of(&self, cell: usize) -> usize {
        self.build
            .intra_degree
            .min(self.assignment.cell_size(cell).saturating_sub(1))
    }

    /// Exact serialized size of the partial index for `cells`.
    pub fn partial_size(&self, cells: &[usize]) -> u64 {
        let dim = self.dataset.dim() as u64;
        let nb = cells.len() as u64;
        let mut size = 4 + 4 * nb + 4 + 8 * dim;
        for &c in cells {
            let cnt = self.assignment.cell_size(c) as u64;
            let deg = self.degree_of(c) as u64;
            let block = self.inter.block(c);
            let per_node: u64 = cells
                .iter()
                .filter(|&&j| j != c)
                .map(|&j| block.counts()[j] as u64)
                .sum();
            size += 8 + 4 * cnt + 4 + 4 * cnt * deg + cnt * dim + 4 * nb + 4 * cnt * per_node;
        }
        size
    }
}

/// Compute-tier index for one batch of cells, using batch-local node ids.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialIndex {
    cells: Vec<u32>,
    /// Start of each cell's members in the local id space.
    offsets: Vec<u32>,
    globals: Vec<u32>,
    degrees: Vec<u32>,
    intra: Vec<Vec<u32>>,
    /// Per batch cell: counts toward each batch cell, then local edges.
    inter_counts: Vec<Vec<u32>>,
    inter: Vec<Vec<u32>>,
    codes: QuantizedVectors,
}

impl PartialIndex {
    pub fn cells(&self) -> &[u32] {
        &self.cells
    }

    pub fn num_nodes(&self) -> usize {
        self.globals.len()
    }

    pub fn global_ids(&self) -> &[u32] {
        &self.globals
    }

    pub fn intra_edge_count(&self) -> usize {
        self.intra.iter().map(Vec::len).sum()
    }

    pub fn inter_edge_count(&self) -> usize {
        self.inter.iter().map(Vec::len).sum()
    }

    fn slot(&self, cell: usize) -> Option<usize> {
        self.cells.iter().position(|&c| c as usize == cell)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut b = Vec::new();
        let put32 = |b: &mut Vec<u8>, v: u32| b.extend_from_slice(&v.to_le_bytes());
        put32(&mut b, self.cells.len() as u32);
        self.cells.iter().for_each(|&c| put32(&mut b, c));
        let q = self.codes.quantizer();
        put32(&mut b, q.dim() as u32);
        q.mins().iter().chain(q.scales()).for_each(|x| b.extend_from_slice(&x.to_le_bytes()));
        let dim = self.codes.dim();
        for i in 0..self.cells.len() {
            let (lo, hi) = (self.offsets[i] as usize, self.offsets[i + 1] as usize);
            b.extend_from_slice(&((hi - lo) as u64).to_le_bytes());
            self.globals[lo..hi].iter().for_each(|&g| put32(&mut b, g));
            put32(&mut b, self.degrees[i]);
            self.intra[i].iter().for_each(|&v| put32(&mut b, v));
            b.extend_from_slice(&self.codes.codes()[lo * dim..hi * dim]);
            self.inter_counts[i].iter().for_each(|&c| put32(&mut b, c));
            self.inter[i].iter().for_each(|&v| put32(&mut b, v));
        }
        b
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut c = Cursor::new(bytes, "partial index");
        let nb = c.u32()? as usize;
        let cells = c.u32s(nb)?;
        let dim = c.u32()? as usize;
        let mins = c.f32s(dim)?;
        let scales = c.f32s(dim)?;
        let mut offsets = vec![0u32];
        let (mut globals, mut degrees, mut intra, mut inter_counts, mut inter, mut codes) =
            (vec![], vec![], vec![], vec![], vec![], vec![]);
        for _ in 0..nb {
            let cnt = c.len(4)?;
            globals.extend(c.u32s(cnt)?);
            offsets.push(globals.len() as u32);
            let deg = c.u32()? as usize;
            degrees.push(deg as u32);
            intra.push(c.u32s(cnt * deg)?);
            codes.extend(c.bytes(cnt * dim)?);
            let counts = c.u32s(nb)?;
            let per: usize = counts.iter().map(|&x| x as usize).sum();
            inter.push(c.u32s(cnt * per)?);
            inter_counts.push(counts);
        }
        c.finish()?;
        let n = globals.len() as u32;
        if intra.iter().chain(&inter).flatten().any(|&v| v >= n) {
            return Err(Error::Corrupt("partial index edge out of range".into()));
        }
        Ok(Self {
            cells,
            offsets,
            globals,
            degrees,
            intra,
            inter_counts,
            inter,
            codes: QuantizedVectors::from_parts(ScalarQuantizer::from_parts(mins, scales), codes),
        })
    }
}

/// Reads the batch's intra sections lazily and extracts the inter edges
/// whose endpoints both lie in the batch.
pub fn assemble_partial_index(file: &IndexFile, host: &HostIndex, cells: &[usize]) -> Result<PartialIndex> {
    let s = host.num_cells();
    if let Some(&c) = cells.iter().find(|&&c| c >= s) {
        return Err(Error::invalid(format!("cell {c} does not exist")));
    }
    let dim = host.dataset.dim();
    let mut offsets = vec![0u32];
    let mut globals = Vec::new();
    for &c in cells {
        globals.extend_from_slice(host.assignment.members(c));
        offsets.push(globals.len() as u32);
    }
    let local = |g: u32| -> u32 {
        let c = host.assignment.cell_of(g);
        let i = cells.iter().position(|&x| x == c).expect("edge target in batch");
        offsets[i] + host.assignment.position(g) as u32
    };
    let mut degrees = Vec::with_capacity(cells.len());
    let mut intra = Vec::with_capacity(cells.len());
    let mut inter_counts = Vec::with_capacity(cells.len());
    let mut inter = Vec::with_capacity(cells.len());
    let mut codes = Vec::with_capacity(globals.len() * dim);
    for &c in cells {
        let g = file.read_intra(c)?;
        degrees.push(g.degree() as u32);
        intra.push(g.adjacency().iter().map(|&v| local(v)).collect::<Vec<_>>());
        for &m in host.assignment.members(c) {
            codes.extend_from_slice(host.codes.code(m));
        }
        let block = host.inter.block(c);
        let counts: Vec<u32> = cells
            .iter()
            .map(|&j| if j == c { 0 } else { block.counts()[j] })
            .collect();
        let mut edges = Vec::new();
        for p in 0..host.assignment.cell_size(c) {
            for &j in cells {
                if j != c {
                    edges.extend(block.neighbors(p, j).iter().map(|&v| local(v)));
                }
            }
        }
        inter_counts.push(counts);
        inter.push(edges);
    }
    Ok(PartialIndex {
        cells: cells.iter().map(|&c| c as u32).collect(),
        offsets,
        globals,
        degrees,
        intra,
        inter_counts,
        inter,
        codes: QuantizedVectors::from_parts(host.codes.quantizer().clone(), codes),
    })
}

/// Graph view over one resident batch. Nodes outside the batch resolve their
/// inter-cell edges from the host table.
pub struct BatchView<'a> {
    host: &'a HostIndex,
    part: &'a PartialIndex,
    local_of: &'a [u32],
}

impl<'a> BatchView<'a> {
    pub fn new(host: &'a HostIndex, part: &'a PartialIndex, local_of: &'a mut Vec<u32>) -> Self {
        local_of.clear();
        local_of.resize(host.dataset.len(), NO_LOCAL);
        for (l, &g) in part.globals.iter().enumerate() {
            local_of[g as usize] = l as u32;
        }
        Self {
            host,
            part,
            local_of,
        }
    }

    #[inline]
    fn locate(&self, node: u32) -> Option<(usize, usize)> {
        let l = self.local_of[node as usize];
        if l == NO_LOCAL {
            return None;
        }
        let slot = self.part.offsets.partition_point(|&o| o <= l) - 1;
        Some((slot, (l - self.part.offsets[slot]) as usize))
    }
}

impl GraphView for BatchView<'_> {
    fn num_nodes(&self) -> usize {
        self.host.dataset.len()
    }
    fn num_cells(&self) -> usize {
        self.host.num_cells()
    }
    fn cell_of(&self, node: u32) -> usize {
        self.host.assignment.cell_of(node)
    }
    fn members(&self, cell: usize) -> &[u32] {
        match self.part.slot(cell) {
            Some(i) => {
                &self.part.globals[self.part.offsets[i] as usize..self.part.offsets[i + 1] as usize]
            }
            None => &[],
        }
    }
    fn intra(&self, node: u32) -> impl Iterator<Item = u32> + '_ {
        let row: &[u32] = match self.locate(node) {
            Some((slot, pos)) => {
                let d = self.part.degrees[slot] as usize;
                &self.part.intra[slot][pos * d..(pos + 1) * d]
            }
            None => &[],
        };
        row.iter().map(|&l| self.part.globals[l as usize])
    }
    fn inter(&self, node: u32, cell: usize) -> impl Iterator<Item = u32> + '_ {
        let (row, resident): (&[u32], bool) = match (self.locate(node), self.part.slot(cell)) {
            (Some((slot, pos)), Some(j)) => {
                let counts = &self.part.inter_counts[slot];
                let stride: usize = counts.iter().map(|&c| c as usize).sum();
                let start: usize = counts[..j].iter().map(|&c| c as usize).sum();
                let base = pos * stride + start;
                (&self.part.inter[slot][base..base + counts[j] as usize], true)
            }
            (Some(_), None) => (&[], true),
            (None, _) => {
                let h = self.host;
                let b = h.inter.block(h.assignment.cell_of(node));
                (b.neighbors(h.assignment.position(node), cell), false)
            }
        };
        row.iter()
            .map(move |&v| if resident { self.part.globals[v as usize] } else { v })
    }
}

/// Query-to-code distance over the batch-local codes.
struct BatchDistance<'a> {
    codes: crate::quantize::CodeDistance<'a>,
    local_of: &'a [u32],
}

impl NodeDistance for BatchDistance<'_> {
    #[inline]
    fn distance(&self, node: u32) -> f32 {
        self.codes.distance(self.local_of[node as usize])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulatedCosts {
    pub activation_ns: f64,
    pub distance_ns: f64,
    pub rerank_ns: f64,
}

impl Default for SimulatedCosts {
    fn default() -> Self {
        Self {
            activation_ns: 20_000.0,
            distance_ns: 20.0,
            rerank_ns: 50.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StreamBudget {
    /// Bytes allowed for one resident partial index.
    pub memory_cap: u64,
    /// Link bandwidth in bytes/sec. Real mode sleeps for the transfer time;
    /// simulated mode charges it to the load stage.
    pub bandwidth: Option<f64>,
    /// In-flight batches; 1 disables overlap.
    pub stage_depth: usize,
}

impl Default for StreamBudget {
    fn default() -> Self {
        Self {
            memory_cap: u64::MAX,
            bandwidth: None,
            stage_depth: 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Clock {
    Real,
    Simulated(SimulatedCosts),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OutOfCoreParams {
    /// Cells per batch.
    pub batch_size: usize,
    /// Greedy scheduling when set, consecutive packing otherwise.
    pub schedule: bool,
    pub budget: StreamBudget,
    pub clock: Clock,
}

impl Default for OutOfCoreParams {
    fn default() -> Self {
        Self {
            batch_size: 2,
            schedule: true,
            budget: StreamBudget::default(),
            clock: Clock::Real,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Load,
    Compute,
    Rerank,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Load => "load",
            Self::Compute => "compute",
            Self::Rerank => "rerank",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub stage: Stage,
    pub batch: usize,
    pub start_ns: u64,
    pub end_ns: u64,
}

impl Span {
    pub fn overlaps(&self, other: &Span) -> bool {
        self.start_ns < other.end_ns && other.start_ns < self.end_ns
    }
}

pub fn write_timeline_csv<W: Write>(mut w: W, spans: &[Span]) -> Result<()> {
    writeln!(w, "stage,batch,start_ns,end_ns")?;
    for s in spans {
        writeln!(w, "{},{},{},{}", s.stage, s.batch, s.start_ns, s.end_ns)?;
    }
    Ok(())
}

/// True when some load span overlaps some compute span.
pub fn has_load_compute_overlap(spans: &[Span]) -> bool {
    spans.iter().filter(|s| s.stage == Stage::Load).any(|l| {
        spans
            .iter()
            .filter(|s| s.stage == Stage::Compute)
            .any(|c| l.overlaps(c))
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutOfCoreOutput {
    pub results: Vec<SearchOutput>,
    pub plan: BatchPlan,
    pub timeline: Vec<Span>,
    /// Per query, time from pipeline start to its rerank completing.
    pub latencies_ns: Vec<u64>,
    pub wall_ns: u64,
    pub batch_bytes: Vec<u64>,
    /// Largest total of partial-index bytes resident at once.
    pub peak_resident_bytes: u64,
}

struct QueryRun {
    state: SearchState,
    rng: ChaCha8Rng,
    resolved: Resolved,
    plan: QueryPlan,
    global: bool,
    last_batch: Option<usize>,
    stats: SearchStats,
}

struct Finished {
    query: usize,
    candidates: Vec<Neighbor>,
    keep: usize,
    k: usize,
}

struct Prepared {
    runs: Vec<QueryRun>,
    plan: BatchPlan,
}

fn prepare(host: &HostIndex, queries: &[RangeQuery], params: &SearchParams, ooc: &OutOfCoreParams) -> Result<Prepared> {
    if ooc.budget.stage_depth == 0 {
        return Err(Error::invalid("stage_depth must be >= 1"));
    }
    let s = host.num_cells();
    let mut rows = Vec::with_capacity(queries.len());
    let mut pending = Vec::with_capacity(queries.len());
    for q in queries {
        q.validate(host.dataset.dim(), host.dataset.num_attributes())?;
        let p = params.resolve(q.k, s, host.build.intra_degree)?;
        let plan = plan_query(&host.grid, &host.histogram, q, &p);
        let cells: Vec<u32> = if plan.selected == 0 {
            Vec::new()
        } else {
            plan.cells.iter().map(|&c| c as u32).collect()
        };
        rows.push(cells);
        pending.push((p, plan));
    }
    let a = IncidenceMatrix::from_rows(s, rows)?;
    let cells = a.referenced_cells();
    let plan = if ooc.schedule {
        schedule_greedy(&a, &cells, ooc.batch_size)?
    } else {
        schedule_identity(&a, &cells, ooc.batch_size)?
    };
    for &c in &cells {
        let need = host.partial_size(&[c]);
        if need > ooc.budget.memory_cap {
            return Err(Error::invalid(format!(
                "budget infeasible: cell {c} needs {need} bytes, memory cap is {}",
                ooc.budget.memory_cap
            )));
        }
    }
    for (k, b) in plan.batches.iter().enumerate() {
        let bytes = host.partial_size(b);
        if bytes > ooc.budget.memory_cap {
            return Err(Error::OverBudget {
                batch: k,
                bytes,
                cap: ooc.budget.memory_cap,
            });
        }
    }
    let n = host.dataset.len();
    let single = plan.num_batches() == 1;
    let runs = pending
        .into_iter()
        .map(|(p, qp)| {
            let last_batch = if qp.selected == 0 {
                None
            } else {
                qp.cells
                    .iter()
                    .filter_map(|&c| plan.batch_of(c))
                    .max()
                    .or(Some(0))
            };
            QueryRun {
                state: SearchState::new(p.beam, n),
                rng: query_rng(&p),
                global: qp.fallback && single,
                stats: SearchStats {
                    cells_selected: qp.selected,
                    fallback: qp.fallback,
                    ..SearchStats::default()
                },
                resolved: p,
                plan: qp,
                last_batch,
            }
        })
        .collect();
    Ok(Prepared { runs, plan })
}

/// Advances every active query through `batch`; returns queries finishing here
/// and the distance evaluations spent.
fn compute_batch(
    host: &HostIndex,
    queries: &[RangeQuery],
    runs: &mut [QueryRun],
    plan: &BatchPlan,
    batch: usize,
    part: &PartialIndex,
    local_of: &mut Vec<u32>,
) -> (Vec<Finished>, u64) {
    let view = BatchView::new(host, part, local_of);
    let cells = &plan.batches[batch];
    let metric = host.build.metric;
    let dataset = &host.dataset;
    let mut active: Vec<(usize, &mut QueryRun)> = runs
        .iter_mut()
        .enumerate()
        .filter(|(_, r)| r.last_batch.is_some() && r.plan.cells.iter().any(|c| cells.contains(c)))
        .collect();
    let out: Vec<(Option<Finished>, u64)> = active
        .par_iter_mut()
        .map(|(qi, run)| {
            let q = &queries[*qi];
            let dist = BatchDistance {
                codes: part.codes.query(&q.vector, metric),
                local_of: view.local_of,
            };
            let accept = |id: u32| q.matches(dataset.attributes(id as usize));
            let before = run.state.distance_evals();
            let p = run.resolved;
            if run.global {
                traverse_global(&mut run.state, &view, &dist, &p, &mut run.rng);
                run.stats.cells_visited = host.num_cells();
            } else {
                let mine: Vec<usize> = run
                    .plan
                    .cells
                    .iter()
                    .copied()
                    .filter(|c| cells.contains(c))
                    .collect();
                run.stats.cells_visited +=
                    traverse_sequence(&mut run.state, &view, &mine, &dist, &accept, &p, &mut run.rng);
            }
            let spent = run.state.distance_evals() - before;
            run.stats.distance_evals = run.state.distance_evals();
            let done = (run.last_batch == Some(batch)).then(|| {
                let candidates = if run.plan.fallback {
                    let mut c: Vec<Neighbor> = run
                        .state
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
                    run.state.filtered_candidates(&accept)
                };
                Finished {
                    query: *qi,
                    candidates,
                    keep: p.rerank,
                    k: p.k,
                }
            });
            (done, spent)
        })
        .collect();
    let evals = out.iter().map(|o| o.1).sum();
    (out.into_iter().filter_map(|o| o.0).collect(), evals)
}

fn rerank_finished(host: &HostIndex, queries: &[RangeQuery], done: &[Finished]) -> Vec<(usize, Vec<Neighbor>)> {
    done.par_iter()
        .map(|f| {
            let r = rerank_exact(
                &host.dataset,
                host.build.metric,
                &queries[f.query].vector,
                &f.candidates,
                f.keep,
                f.k,
            );
            (f.query, r)
        })
        .collect()
}

fn reranked_count(done: &[Finished]) -> usize {
    done.iter().map(|f| f.candidates.len().min(f.keep)).sum()
}

/// Streams the index from `file` batch by batch and answers `queries`.
pub fn run_out_of_core(
    file: &IndexFile,
    queries: &[RangeQuery],
    params: &SearchParams,
    ooc: &OutOfCoreParams,
) -> Result<OutOfCoreOutput> {
    let host = HostIndex::load(file)?;
    run_with_host(file, &host, queries, params, ooc)
}

/// [`run_out_of_core`] with an already loaded host tier.
pub fn run_with_host(
    file: &IndexFile,
    host: &HostIndex,
    queries: &[RangeQuery],
    params: &SearchParams,
    ooc: &OutOfCoreParams,
) -> Result<OutOfCoreOutput> {
    let Prepared { mut runs, plan } = prepare(host, queries, params, ooc)?;
    let batch_bytes: Vec<u64> = plan.batches.iter().map(|b| host.partial_size(b)).collect();
    let mut results: Vec<SearchOutput> = runs
        .iter()
        .map(|r| SearchOutput {
            neighbors: Vec::new(),
            stats: r.stats.clone(),
        })
        .collect();
    let mut latencies = vec![0u64; queries.len()];
    let depth = ooc.budget.stage_depth;
    let (timeline, wall_ns) = match ooc.clock {
        Clock::Simulated(costs) => {
            let bw = ooc.budget.bandwidth.unwrap_or(1e9);
            let nb = plan.num_batches();
            let mut timeline = Vec::with_capacity(3 * nb);
            let (mut load_end, mut comp_end, mut rr_end) =
                (vec![0f64; nb], vec![0f64; nb], vec![0f64; nb]);
            let mut local_of = Vec::new();
            for t in 0..nb {
                let part = assemble_partial_index(file, host, &plan.batches[t])?;
                let blob = part.to_bytes();
                debug_assert_eq!(blob.len() as u64, batch_bytes[t]);
                let part = PartialIndex::from_bytes(&blob)?;
                let load_start = f64::max(
                    if t > 0 { load_end[t - 1] } else { 0.0 },
                    if t >= depth { comp_end[t - depth] } else { 0.0 },
                );
                load_end[t] = load_start + blob.len() as f64 / bw * 1e9;
                let (done, evals) = compute_batch(host, queries, &mut runs, &plan, t, &part, &mut local_of);
                let comp_start = f64::max(load_end[t], if t > 0 { comp_end[t - 1] } else { 0.0 });
                comp_end[t] = comp_start
                    + plan.active[t].len() as f64 * costs.activation_ns
                    + evals as f64 * costs.distance_ns;
                let rr_start = f64::max(comp_end[t], if t > 0 { rr_end[t - 1] } else { 0.0 });
                rr_end[t] = rr_start + reranked_count(&done) as f64 * costs.rerank_ns;
                for (q, nbrs) in rerank_finished(host, queries, &done) {
                    results[q].neighbors = nbrs;
                    latencies[q] = rr_end[t] as u64;
                }
                timeline.push(Span {
                    stage: Stage::Load,
                    batch: t,
                    start_ns: load_start as u64,
                    end_ns: load_end[t] as u64,
                });
                timeline.push(Span {
                    stage: Stage::Compute,
                    batch: t,
                    start_ns: comp_start as u64,
                    end_ns: comp_end[t] as u64,
                });
                timeline.push(Span {
                    stage: Stage::Rerank,
                    batch: t,
                    start_ns: rr_start as u64,
                    end_ns: rr_end[t] as u64,
                });
            }
            let wall = rr_end.last().copied().unwrap_or(0.0) as u64;
            (timeline, wall)
        }
        Clock::Real => run_real(file, host, queries, &mut runs, &plan, &ooc.budget, &mut results, &mut latencies)?,
    };
    for (r, run) in results.iter_mut().zip(&runs) {
        r.stats = run.stats.clone();
    }
    let peak_resident_bytes = peak_resident(&timeline, &batch_bytes);
    Ok(OutOfCoreOutput {
        results,
        plan,
        timeline,
        latencies_ns: latencies,
        wall_ns,
        batch_bytes,
        peak_resident_bytes,
    })
}

/// A batch's partial index is resident from its load start to its compute end.
fn peak_resident(timeline: &[Span], bytes: &[u64]) -> u64 {
    let mut events: Vec<(u64, i64)> = Vec::new();
    for t in 0..bytes.len() {
        let load = timeline.iter().find(|s| s.stage == Stage::Load && s.batch == t);
        let comp = timeline.iter().find(|s| s.stage == Stage::Compute && s.batch == t);
        if let (Some(l), Some(c)) = (load, comp) {
            events.push((l.start_ns, bytes[t] as i64));
            events.push((c.end_ns, -(bytes[t] as i64)));
        }
    }
    events.sort_by_key(|&(t, d)| (t, d));
    let (mut cur, mut peak) = (0i64, 0i64);
    for (_, d) in events {
        cur += d;
        peak = peak.max(cur);
    }
    peak as u64
}

#[allow(clippy::too_many_arguments)]
fn run_real(
    file: &IndexFile,
    host: &HostIndex,
    queries: &[RangeQuery],
    runs: &mut [QueryRun],
    plan: &BatchPlan,
    budget: &StreamBudget,
    results: &mut [SearchOutput],
    latencies: &mut [u64],
) -> Result<(Vec<Span>, u64)> {
    let depth = budget.stage_depth;
    let nb = plan.num_batches();
    let origin = Instant::now();
    let now = || origin.elapsed().as_nanos() as u64;
    let (token_tx, token_rx) = bounded::<()>(depth);
    for _ in 0..depth {
        token_tx.send(()).expect("fresh channel");
    }
    let (load_tx, load_rx) = bounded::<Result<(usize, Vec<u8>, Span)>>(depth);
    let (rr_tx, rr_rx) = unbounded::<(usize, Vec<Finished>)>();
    let runs_ref: &mut [QueryRun] = runs;

    let (spans, rr_out) = std::thread::scope(|scope| -> Result<(Vec<Span>, Vec<(Span, Vec<(usize, Vec<Neighbor>)>)>)> {
        let loader = scope.spawn(|| {
            for t in 0..nb {
                if token_rx.recv().is_err() {
                    return;
                }
                let start = now();
                let blob = assemble_partial_index(file, host, &plan.batches[t]).map(|p| p.to_bytes());
                let msg = blob.and_then(|b| {
                    if b.len() as u64 > budget.memory_cap {
                        return Err(Error::OverBudget {
                            batch: t,
                            bytes: b.len() as u64,
                            cap: budget.memory_cap,
                        });
                    }
                    if let Some(bw) = budget.bandwidth {
                        std::thread::sleep(Duration::from_secs_f64(b.len() as f64 / bw));
                    }
                    let span = Span {
                        stage: Stage::Load,
                        batch: t,
                        start_ns: start,
                        end_ns: now(),
                    };
                    Ok((t, b, span))
                });
                let failed = msg.is_err();
                if load_tx.send(msg).is_err() || failed {
                    return;
                }
            }
        });
        let reranker = scope.spawn(|| {
            let mut out = Vec::new();
            while let Ok((t, done)) = rr_rx.recv() {
                let start = now();
                let ranked = rerank_finished(host, queries, &done);
                out.push((
                    Span {
                        stage: Stage::Rerank,
                        batch: t,
                        start_ns: start,
                        end_ns: now(),
                    },
                    ranked,
                ));
            }
            out
        });

        let mut spans = Vec::with_capacity(3 * nb);
        let mut local_of = Vec::new();
        let mut err = None;
        for _ in 0..nb {
            let (t, blob, load_span) = match load_rx.recv() {
                Ok(Ok(m)) => m,
                Ok(Err(e)) => {
                    err = Some(e);
                    break;
                }
                Err(_) => break,
            };
            spans.push(load_span);
            let start = now();
            let part = match PartialIndex::from_bytes(&blob) {
                Ok(p) => p,
                Err(e) => {
                    err = Some(e);
                    break;
                }
            };
            drop(blob);
            let (done, _) = compute_batch(host, queries, runs_ref, plan, t, &part, &mut local_of);
            drop(part);
            spans.push(Span {
                stage: Stage::Compute,
                batch: t,
                start_ns: start,
                end_ns: now(),
            });
            let _ = token_tx.send(());
            let _ = rr_tx.send((t, done));
        }
        drop(token_tx);
        drop(rr_tx);
        drop(load_rx);
        loader.join().expect("loader thread");
        let rr = reranker.join().expect("rerank thread");
        match err {
            Some(e) => Err(e),
            None => Ok((spans, rr)),
        }
    })?;
    let mut spans = spans;
    for (span, ranked) in rr_out {
        spans.push(span);
        for (q, nbrs) in ranked {
            results[q].neighbors = nbrs;
            latencies[q] = span.end_ns;
        }
    }
    spans.sort_by_key(|s| (s.start_ns, s.stage as u8, s.batch));
    Ok((spans, now()))
}
