//! Ground truth, synthetic workloads, recall/throughput measurement and the
//! cell-count advisor.

use std::io::Write;
use std::time::Instant;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format::IndexFile;
use crate::index::GmgIndex;
use crate::model::{Dataset, Metric, Neighbor, Predicate, RangeQuery};
use crate::pipeline::{run_with_host, Clock, HostIndex, OutOfCoreParams, SimulatedCosts, Span};
use crate::search::{search_with_state, SearchOutput, SearchParams, SearchState};
use crate::util::rng_for;

/// Exact filtered top-k: filter, exact distance, full sort with id tiebreak.
pub fn brute_force_rfnns(dataset: &Dataset, query: &RangeQuery, metric: Metric) -> Vec<Neighbor> {
    let mut all: Vec<Neighbor> = (0..dataset.len())
        .filter(|&i| query.matches(dataset.attributes(i)))
        .map(|i| Neighbor {
            id: i as u32,
            distance: metric.distance(&query.vector, dataset.vector(i)),
        })
        .collect();
    all.sort_by(Neighbor::cmp_by_distance);
    all.truncate(query.k);
    all
}

pub fn brute_force_batch(dataset: &Dataset, queries: &[RangeQuery], metric: Metric) -> Vec<Vec<Neighbor>> {
    queries
        .par_iter()
        .map(|q| brute_force_rfnns(dataset, q, metric))
        .collect()
}

/// `|result ∩ oracle| / min(k, |oracle|)` over the first `k` of each; an
/// empty oracle scores 1.
pub fn recall_at_k(result: &[u32], oracle: &[u32], k: usize) -> f64 {
    let oracle = &oracle[..oracle.len().min(k)];
    if oracle.is_empty() {
        return 1.0;
    }
    let hits = result[..result.len().min(k)]
        .iter()
        .filter(|id| oracle.contains(id))
        .count();
    hits as f64 / oracle.len() as f64
}

pub fn ids(neighbors: &[Neighbor]) -> Vec<u32> {
    neighbors.iter().map(|n| n.id).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "law")]
pub enum AttributeLaw {
    /// Independent integers uniform in `[0, range)`.
    Uniform { range: u32 },
    /// Integers drawn around a per-cluster center (needs clustered vectors),
    /// so attribute ranges carry information about vector neighborhoods.
    ClusterCorrelated { range: u32, spread: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub n: usize,
    pub dim: usize,
    pub num_attributes: usize,
    /// Gaussian blobs when set, uniform `[0,1)` vectors otherwise.
    pub clusters: Option<usize>,
    pub cluster_std: f32,
    pub attributes: AttributeLaw,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n: 10_000,
            dim: 16,
            num_attributes: 2,
            clusters: None,
            cluster_std: 0.05,
            attributes: AttributeLaw::Uniform { range: 10_000 },
            seed: 42,
        }
    }
}

pub fn generate_dataset(cfg: &SyntheticConfig) -> Result<Dataset> {
    if cfg.n == 0 || cfg.dim == 0 {
        return Err(Error::invalid("n and dim must be positive"));
    }
    let mut rng = rng_for(cfg.seed, &[0xda7a]);
    let (n, dim, m) = (cfg.n, cfg.dim, cfg.num_attributes);
    let mut vectors = Vec::with_capacity(n * dim);
    let mut labels = vec![0usize; n];
    match cfg.clusters {
        None => vectors.extend((0..n * dim).map(|_| rng.random::<f32>())),
        Some(c) => {
            let c = c.max(1);
            let centers: Vec<f32> = (0..c * dim).map(|_| rng.random::<f32>()).collect();
            let noise = Normal::new(0.0f32, cfg.cluster_std)
                .map_err(|e| Error::invalid(format!("cluster_std: {e}")))?;
            for label in labels.iter_mut() {
                *label = rng.random_range(0..c);
                let center = &centers[*label * dim..(*label + 1) * dim];
                vectors.extend(center.iter().map(|&x| x + noise.sample(&mut rng)));
            }
        }
    }
    let mut attributes = Vec::with_capacity(n * m);
    match cfg.attributes {
        AttributeLaw::Uniform { range } => {
            let range = range.max(1);
            attributes.extend((0..n * m).map(|_| rng.random_range(0..range) as f64));
        }
        AttributeLaw::ClusterCorrelated { range, spread } => {
            let range = range.max(1) as f64;
            let k = cfg.clusters.unwrap_or(1).max(1);
            let centers: Vec<f64> = (0..k * m).map(|_| rng.random::<f64>() * range).collect();
            let noise = Normal::new(0.0, spread.max(0.0) * range)
                .map_err(|e| Error::invalid(format!("spread: {e}")))?;
            for &label in &labels {
                for a in 0..m {
                    let v = centers[label * m + a] + noise.sample(&mut rng);
                    attributes.push(v.round().clamp(0.0, range - 1.0));
                }
            }
        }
    }
    Dataset::new(dim, m, vectors, attributes)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "law")]
pub enum SelectivityLaw {
    /// Per-attribute width fraction uniform in `[min, max]`.
    Uniform { min: f64, max: f64 },
    /// Same width fraction on every filtered attribute.
    Fixed { width: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QueryConfig {
    pub count: usize,
    pub k: usize,
    pub selectivity: SelectivityLaw,
    /// Filtered attributes; all when unset.
    pub attributes: Option<Vec<usize>>,
    /// Std of the Gaussian jitter added to a random dataset vector.
    pub vector_noise: f32,
    pub seed: u64,
}

impl Default for QueryConfig {
    fn default() -> Self {
        Self {
            count: 100,
            k: 10,
            selectivity: SelectivityLaw::Uniform { min: 0.01, max: 1.0 },
            attributes: None,
            vector_noise: 0.01,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedQueries {
    pub queries: Vec<RangeQuery>,
    /// Measured fraction of records passing each query's filter.
    pub selectivities: Vec<f64>,
    /// Width fraction drawn per query and filtered attribute.
    pub widths: Vec<Vec<f64>>,
}

pub fn measured_selectivity(dataset: &Dataset, query: &RangeQuery) -> f64 {
    let hits = (0..dataset.len())
        .filter(|&i| query.matches(dataset.attributes(i)))
        .count();
    hits as f64 / dataset.len().max(1) as f64
}

/// Intervals of the attribute's empirical range with the drawn width
/// fraction, placed uniformly at random.
pub fn generate_queries(dataset: &Dataset, cfg: &QueryConfig) -> Result<GeneratedQueries> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if cfg.k == 0 {
        return Err(Error::invalid("k must be positive"));
    }
    let (lo_w, hi_w) = match cfg.selectivity {
        SelectivityLaw::Uniform { min, max } => (min, max),
        SelectivityLaw::Fixed { width } => (width, width),
    };
    if !(lo_w > 0.0 && lo_w <= hi_w && hi_w <= 1.0) {
        return Err(Error::invalid("selectivity widths must satisfy 0 < min <= max <= 1"));
    }
    let m = dataset.num_attributes();
    let attrs = cfg.attributes.clone().unwrap_or_else(|| (0..m).collect());
    if let Some(&a) = attrs.iter().find(|&&a| a >= m) {
        return Err(Error::invalid(format!("attribute {a} out of range")));
    }
    let ranges: Vec<(f64, f64)> = attrs
        .iter()
        .map(|&a| {
            (0..dataset.len()).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), i| {
                let v = dataset.attribute(i, a);
                (lo.min(v), hi.max(v))
            })
        })
        .collect();
    let mut rng = rng_for(cfg.seed, &[0x9e7]);
    let noise = Normal::new(0.0f32, cfg.vector_noise.max(0.0))
        .map_err(|e| Error::invalid(format!("vector_noise: {e}")))?;
    let mut queries = Vec::with_capacity(cfg.count);
    let mut widths = Vec::with_capacity(cfg.count);
    for _ in 0..cfg.count {
        let base = rng.random_range(0..dataset.len());
        let vector: Vec<f32> = dataset
            .vector(base)
            .iter()
            .map(|&x| x + noise.sample(&mut rng))
            .collect();
        let mut preds = Vec::with_capacity(attrs.len());
        let mut ws = Vec::with_capacity(attrs.len());
        for (&a, &(lo, hi)) in attrs.iter().zip(&ranges) {
            let w = if hi_w > lo_w { rng.random_range(lo_w..=hi_w) } else { lo_w };
            let len = w * (hi - lo);
            let start = if hi - lo - len > 0.0 {
                lo + rng.random::<f64>() * (hi - lo - len)
            } else {
                lo
            };
            let end = if w >= 1.0 { hi } else { start + len };
            preds.push(Predicate::new(a, start, end));
            ws.push(w);
        }
        queries.push(RangeQuery::new(vector, preds, cfg.k));
        widths.push(ws);
    }
    let selectivities = queries
        .par_iter()
        .map(|q| measured_selectivity(dataset, q))
        .collect();
    Ok(GeneratedQueries {
        queries,
        selectivities,
        widths,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub n: f64,
    pub alpha: f64,
    pub sigma: f64,
}

impl CostModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::invalid("alpha must be in (0, 1)"));
        }
        if !(self.sigma >= 0.0 && self.sigma <= 1.0) {
            return Err(Error::invalid("sigma must be in [0, 1]"));
        }
        if !(self.n >= 4.0) {
            return Err(Error::invalid("n must be >= 4"));
        }
        Ok(())
    }

    /// `T(S) = (1 + sigma S alpha) ln(n / S)`.
    pub fn cost(&self, s: f64) -> f64 {
        (1.0 + self.sigma * s * self.alpha) * (self.n / s).ln()
    }

    /// `dT/dS = sigma alpha (ln(n/S) - 1) - 1/S`.
    pub fn derivative(&self, s: f64) -> f64 {
        self.sigma * self.alpha * ((self.n / s).ln() - 1.0) - 1.0 / s
    }

    pub fn max_cells(&self) -> u64 {
        ((self.n / 4.0).floor() as u64).max(1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Advice {
    /// Integer argmin of `T(S)` over `[1, n/4]`.
    pub argmin: u64,
    pub min_cost: f64,
    /// Continuous minimizer `S0` that `theta` is evaluated at.
    pub root: f64,
    pub theta: f64,
    /// `theta / sigma`; infinite when `sigma = 0`.
    pub closed_form: f64,
    /// Sampled `(S, T(S))` points.
    pub curve: Vec<(u64, f64)>,
}

/// Root of `dT/dS` by bisection on the convex stretch `[1, 1/(sigma alpha)]`,
/// or `None` when the derivative does not change sign there.
pub fn derivative_root(model: &CostModel) -> Option<f64> {
    if model.sigma <= 0.0 {
        return None;
    }
    let mut a = 1.0f64;
    let mut b = (1.0 / (model.sigma * model.alpha)).min(model.max_cells() as f64);
    if !(model.derivative(a) < 0.0 && model.derivative(b) > 0.0) {
        return None;
    }
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if model.derivative(mid) < 0.0 {
            a = mid;
        } else {
            b = mid;
        }
    }
    Some(0.5 * (a + b))
}

/// Numeric argmin: the integers around [`derivative_root`] and both ends.
pub fn argmin_cells(model: &CostModel) -> Result<u64> {
    model.validate()?;
    let hi = model.max_cells();
    let mut cands = vec![1u64, hi];
    if let Some(r) = derivative_root(model) {
        cands.push((r.floor() as u64).clamp(1, hi));
        cands.push((r.ceil() as u64).clamp(1, hi));
    }
    Ok(cands
        .into_iter()
        .map(|s| (model.cost(s as f64), s))
        .min_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)))
        .map(|x| x.1)
        .expect("non-empty"))
}

/// Exhaustive integer scan; the reference for [`argmin_cells`].
pub fn argmin_cells_scan(model: &CostModel) -> Result<u64> {
    model.validate()?;
    Ok((1..=model.max_cells())
        .map(|s| (model.cost(s as f64), s))
        .min_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)))
        .map(|x| x.1)
        .expect("non-empty"))
}

/// Recommended cell count plus a log-spaced sample of the cost curve.
pub fn advise_cell_count(model: &CostModel, curve_points: usize) -> Result<Advice> {
    let argmin = argmin_cells(model)?;
    // Continuous minimizer, clamped to the valid window; the integer argmin
    // would add rounding jitter to theta when S is small.
    let s0 = derivative_root(model).map_or(argmin as f64, |r| r.clamp(1.0, model.max_cells() as f64));
    let l = (model.n / s0).ln() - 1.0;
    let theta = if l > 0.0 { 1.0 / (model.alpha * l) } else { f64::INFINITY };
    let closed_form = if model.sigma > 0.0 { theta / model.sigma } else { f64::INFINITY };
    let hi = model.max_cells();
    let mut pts: Vec<u64> = if (hi as usize) <= curve_points.max(2) {
        (1..=hi).collect()
    } else {
        let steps = curve_points.max(2) - 1;
        (0..=steps)
            .map(|i| ((hi as f64).ln() * i as f64 / steps as f64).exp().round() as u64)
            .collect()
    };
    pts.push(argmin);
    pts.sort_unstable();
    pts.dedup();
    Ok(Advice {
        argmin,
        min_cost: model.cost(argmin as f64),
        root: s0,
        theta,
        closed_form,
        curve: pts.into_iter().map(|s| (s, model.cost(s as f64))).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    pub beams: Vec<usize>,
    pub search: SearchParams,
    /// Deterministic cost model instead of wall clock.
    pub simulated: Option<SimulatedCosts>,
    pub out_of_core: Option<OutOfCoreParams>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            beams: vec![10, 16, 32, 64, 128, 256],
            search: SearchParams::default(),
            simulated: None,
            out_of_core: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub beam: usize,
    pub recall: f64,
    pub qps: f64,
    pub p50_ms: f64,
    pub p99_ms: f64,
}

pub fn write_bench_csv<W: Write>(mut w: W, rows: &[BenchRow]) -> Result<()> {
    writeln!(w, "beam,recall,qps,p50_ms,p99_ms")?;
    for r in rows {
        writeln!(w, "{},{:.6},{:.3},{:.6},{:.6}", r.beam, r.recall, r.qps, r.p50_ms, r.p99_ms)?;
    }
    Ok(())
}

/// Nearest-rank percentile of `v` (sorted in place).
pub fn percentile(v: &mut [f64], p: f64) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let rank = ((p / 100.0) * v.len() as f64).ceil() as usize;
    v[rank.clamp(1, v.len()) - 1]
}

pub fn mean_recall(outputs: &[SearchOutput], oracle: &[Vec<Neighbor>], k: usize) -> f64 {
    if outputs.is_empty() {
        return 1.0;
    }
    outputs
        .iter()
        .zip(oracle)
        .map(|(o, t)| recall_at_k(&ids(&o.neighbors), &ids(t), k))
        .sum::<f64>()
        / outputs.len() as f64
}

fn row(beam: usize, recall: f64, mut lat_ns: Vec<f64>, total_ns: f64, count: usize) -> BenchRow {
    BenchRow {
        beam,
        recall,
        qps: if total_ns > 0.0 { count as f64 / (total_ns * 1e-9) } else { 0.0 },
        p50_ms: percentile(&mut lat_ns, 50.0) * 1e-6,
        p99_ms: percentile(&mut lat_ns, 99.0) * 1e-6,
    }
}

fn eval_k(q: &RangeQuery, params: &SearchParams) -> usize {
    params.k.unwrap_or(q.k)
}

/// Recall/throughput sweep over `cfg.beams` on an in-memory index.
pub fn bench_run(
    index: &GmgIndex,
    queries: &[RangeQuery],
    oracle: &[Vec<Neighbor>],
    cfg: &BenchConfig,
) -> Result<Vec<BenchRow>> {
    let k = queries.first().map_or(1, |q| eval_k(q, &cfg.search));
    let mut rows = Vec::with_capacity(cfg.beams.len());
    for &beam in &cfg.beams {
        let params = SearchParams {
            beam,
            ..cfg.search.clone()
        };
        let start = Instant::now();
        let timed: Vec<(Result<SearchOutput>, u64)> = queries
            .par_iter()
            .map_init(
                || SearchState::new(beam, index.len()),
                |st, q| {
                    let t = Instant::now();
                    let r = search_with_state(index, q, &params, st);
                    (r, t.elapsed().as_nanos() as u64)
                },
            )
            .collect();
        let wall = start.elapsed().as_nanos() as f64;
        let mut outs = Vec::with_capacity(timed.len());
        let mut lat = Vec::with_capacity(timed.len());
        for (r, ns) in timed {
            outs.push(r?);
            lat.push(ns as f64);
        }
        let recall = mean_recall(&outs, oracle, k);
        rows.push(match &cfg.simulated {
            Some(c) => {
                let lat: Vec<f64> = outs
                    .iter()
                    .zip(queries)
                    .map(|(o, q)| {
                        let keep = params.rerank.unwrap_or(eval_k(q, &params)).max(eval_k(q, &params));
                        c.activation_ns
                            + o.stats.distance_evals as f64 * c.distance_ns
                            + keep as f64 * c.rerank_ns
                    })
                    .collect();
                let total = lat.iter().sum();
                row(beam, recall, lat, total, queries.len())
            }
            None => row(beam, recall, lat, wall, queries.len()),
        });
    }
    Ok(rows)
}

/// Sweep through the out-of-core pipeline; latency is time to a query's rerank.
/// Also returns each beam's stage timeline.
pub fn bench_out_of_core(
    file: &IndexFile,
    host: &HostIndex,
    queries: &[RangeQuery],
    oracle: &[Vec<Neighbor>],
    cfg: &BenchConfig,
) -> Result<(Vec<BenchRow>, Vec<Vec<Span>>)> {
    let mut ooc = cfg.out_of_core.clone().unwrap_or_default();
    if let Some(c) = cfg.simulated {
        ooc.clock = Clock::Simulated(c);
    }
    let k = queries.first().map_or(1, |q| eval_k(q, &cfg.search));
    let mut rows = Vec::with_capacity(cfg.beams.len());
    let mut timelines = Vec::with_capacity(cfg.beams.len());
    for &beam in &cfg.beams {
        let params = SearchParams {
            beam,
            ..cfg.search.clone()
        };
        let start = Instant::now();
        let out = run_with_host(file, host, queries, &params, &ooc)?;
        let wall = match ooc.clock {
            Clock::Real => start.elapsed().as_nanos() as f64,
            Clock::Simulated(_) => out.wall_ns as f64,
        };
        let recall = mean_recall(&out.results, oracle, k);
        let lat = out.latencies_ns.iter().map(|&x| x as f64).collect();
        rows.push(row(beam, recall, lat, wall, queries.len()));
        timelines.push(out.timeline);
    }
    Ok((rows, timelines))
}
