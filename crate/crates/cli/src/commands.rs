use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use rfann_core::eval::{
    advise_cell_count, bench_out_of_core, bench_run, brute_force_batch, generate_dataset, generate_queries,
    measured_selectivity, write_bench_csv, AttributeLaw, BenchConfig, CostModel, QueryConfig, SelectivityLaw,
    SyntheticConfig,
};
use rfann_core::io::{load_dataset, read_queries, write_attributes, write_fvecs, write_queries};
use rfann_core::pipeline::{write_timeline_csv, HostIndex, OutOfCoreParams, SimulatedCosts, StreamBudget};
use rfann_core::schedule::schedule_identity;
use rfann_core::search::{search_batch, SearchStats};
use rfann_core::{
    build_index, save_index, schedule_exact, schedule_greedy, BatchPlan, BuildParams, GridParams, HistogramParams,
    IncidenceMatrix, IndexFile, IndexParams, Metric, Neighbor, SearchParams,
};
use serde::{Deserialize, Serialize};

use crate::{
    AdviseArgs, BenchArgs, BuildArgs, GenDataArgs, GenQueriesArgs, MetricArg, OracleArgs, QueryArgs, ScheduleArgs,
    SearchArgs,
};

/// One JSON line per query in `query` and `oracle` output.
#[derive(Debug, Serialize, Deserialize)]
pub struct ResultLine {
    pub query: usize,
    pub ids: Vec<u32>,
    pub distances: Vec<f32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stats: Option<SearchStats>,
}

impl ResultLine {
    fn new(query: usize, hits: &[Neighbor], stats: Option<SearchStats>) -> Self {
        Self {
            query,
            ids: hits.iter().map(|n| n.id).collect(),
            distances: hits.iter().map(|n| n.distance).collect(),
            stats,
        }
    }

    fn neighbors(&self) -> Vec<Neighbor> {
        self.ids
            .iter()
            .zip(&self.distances)
            .map(|(&id, &distance)| Neighbor { id, distance })
            .collect()
    }
}

fn metric(m: MetricArg) -> Metric {
    match m {
        MetricArg::L2 => Metric::SquaredEuclidean,
        MetricArg::Ip => Metric::InnerProductNegated,
    }
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn search_params(a: &SearchArgs) -> SearchParams {
    SearchParams {
        k: a.k,
        beam: a.beam,
        s_thre: a.s_thre,
        inter_seeds: a.inter_seeds,
        entry_random: a.entry_random,
        rerank: a.rerank,
        cell_order: !a.no_order,
        inter_seeding: !a.no_inter_seed,
        rng_seed: a.search_seed,
    }
}

fn write_lines(mut w: impl Write, lines: &[ResultLine]) -> Result<()> {
    for l in lines {
        serde_json::to_writer(&mut w, l)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn build(a: BuildArgs) -> Result<()> {
    let dataset = load_dataset(&a.vectors, &a.attributes)?;
    let params = IndexParams {
        grid: GridParams {
            attributes: a.partition_attributes,
            partition_attributes: a.p,
            num_cells: a.cells,
            segments: a.segments,
        },
        build: BuildParams {
            intra_degree: a.degree,
            inter_degree: a.inter_degree,
            ef_construction: a.ef,
            knn_iterations: a.knn_iterations,
            exact_knn_below: a.exact_knn_below,
            metric: metric(a.metric),
            seed: a.seed,
            ..BuildParams::default()
        },
        histogram: HistogramParams {
            num_clusters: a.histogram_clusters,
            top_m: a.top_m,
            seed: a.seed,
            ..HistogramParams::default()
        },
    };
    let index = build_index(dataset, &params)?;
    save_index(&index, &a.out)?;
    eprintln!(
        "built {} records into {} cells, {} edges -> {}",
        index.len(),
        index.num_cells(),
        index.edge_count(),
        a.out.display()
    );
    Ok(())
}

pub fn query(a: QueryArgs) -> Result<()> {
    let index = IndexFile::open(&a.index)?.load()?;
    let queries = read_queries(&a.queries)?;
    let out = search_batch(&index, &queries, &search_params(&a.search))?;
    let lines: Vec<ResultLine> = out
        .iter()
        .enumerate()
        .map(|(i, o)| ResultLine::new(i, &o.neighbors, Some(o.stats.clone())))
        .collect();
    write_lines(output(a.out.as_deref())?, &lines)
}

pub fn oracle(a: OracleArgs) -> Result<()> {
    let (dataset, metric) = match (&a.index, &a.vectors, &a.attributes) {
        (Some(i), _, _) => {
            let f = IndexFile::open(i)?;
            (f.read_dataset()?, f.header().metric)
        }
        (None, Some(v), Some(at)) => (load_dataset(v, at)?, metric(a.metric)),
        _ => bail!("oracle needs --index or both --vectors and --attributes"),
    };
    let queries = read_queries(&a.queries)?;
    let truth = brute_force_batch(&dataset, &queries, metric);
    let lines: Vec<ResultLine> = truth
        .iter()
        .enumerate()
        .map(|(i, t)| ResultLine::new(i, t, None))
        .collect();
    write_lines(output(a.out.as_deref())?, &lines)
}

fn read_oracle(path: &Path, count: usize) -> Result<Vec<Vec<Neighbor>>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut truth = vec![None; count];
    for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let l: ResultLine = serde_json::from_str(line).with_context(|| format!("oracle line {}", n + 1))?;
        if l.query >= count {
            bail!("oracle line {} names query {} of {count}", n + 1, l.query);
        }
        truth[l.query] = Some(l.neighbors());
    }
    truth
        .into_iter()
        .enumerate()
        .map(|(i, t)| t.with_context(|| format!("oracle has no line for query {i}")))
        .collect()
}

pub fn bench(a: BenchArgs) -> Result<()> {
    if a.timeline.is_some() && !a.out_of_core {
        bail!("--timeline needs --out-of-core");
    }
    let file = IndexFile::open(&a.index)?;
    let queries = read_queries(&a.queries)?;
    let simulated = a.simulated.then_some(SimulatedCosts {
        activation_ns: a.activation_ns,
        distance_ns: a.distance_ns,
        rerank_ns: a.rerank_ns,
    });
    let mut cfg = BenchConfig {
        beams: a.beams.clone(),
        search: search_params(&a.search),
        simulated,
        out_of_core: None,
    };
    let (rows, timeline) = if a.out_of_core {
        let host = HostIndex::load(&file)?;
        let truth = match &a.oracle {
            Some(p) => read_oracle(p, queries.len())?,
            None => brute_force_batch(&host.dataset, &queries, host.build.metric),
        };
        cfg.out_of_core = Some(OutOfCoreParams {
            batch_size: a.batch_size,
            schedule: !a.no_schedule,
            budget: StreamBudget {
                memory_cap: a.memory_cap.unwrap_or(u64::MAX),
                bandwidth: a.bandwidth,
                stage_depth: a.stage_depth,
            },
            ..OutOfCoreParams::default()
        });
        let (rows, mut timelines) = bench_out_of_core(&file, &host, &queries, &truth, &cfg)?;
        (rows, timelines.pop())
    } else {
        let index = file.load()?;
        let truth = match &a.oracle {
            Some(p) => read_oracle(p, queries.len())?,
            None => brute_force_batch(index.dataset(), &queries, index.metric()),
        };
        (bench_run(&index, &queries, &truth, &cfg)?, None)
    };
    let mut w = output(a.out.as_deref())?;
    write_bench_csv(&mut w, &rows)?;
    w.flush()?;
    if let (Some(path), Some(spans)) = (&a.timeline, timeline) {
        let mut w = output(Some(path))?;
        write_timeline_csv(&mut w, &spans)?;
        w.flush()?;
    }
    Ok(())
}

fn read_incidence(path: &Path) -> Result<IncidenceMatrix> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let dense: Vec<Vec<u8>> = if text.trim_start().starts_with('[') {
        serde_json::from_str(&text).context("incidence JSON must be an array of 0/1 rows")?
    } else {
        text.lines()
            .filter(|l| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
            .map(|l| {
                l.split(|c: char| c == ',' || c.is_whitespace())
                    .filter(|t| !t.is_empty())
                    .map(|t| t.parse::<u8>().with_context(|| format!("bad incidence entry `{t}`")))
                    .collect()
            })
            .collect::<Result<_>>()?
    };
    if dense.iter().flatten().any(|&v| v > 1) {
        bail!("incidence entries must be 0 or 1");
    }
    Ok(IncidenceMatrix::from_dense(&dense)?)
}

#[derive(Serialize)]
struct PlanReport<'a> {
    method: &'a str,
    batch_size: usize,
    batches: &'a [Vec<usize>],
    active: &'a [Vec<u32>],
    costs: Vec<usize>,
    total_cost: usize,
    identity_total_cost: usize,
}

pub fn schedule(a: ScheduleArgs) -> Result<()> {
    let m = read_incidence(&a.incidence)?;
    let cells: Vec<usize> = (0..m.num_cells()).collect();
    let identity = schedule_identity(&m, &cells, a.batch_size)?;
    let (method, plan): (&str, BatchPlan) = if a.exact {
        ("exact", schedule_exact(&m, &cells, a.batch_size)?)
    } else if a.naive {
        ("identity", identity.clone())
    } else {
        ("greedy", schedule_greedy(&m, &cells, a.batch_size)?)
    };
    let report = PlanReport {
        method,
        batch_size: a.batch_size,
        batches: &plan.batches,
        active: &plan.active,
        costs: plan.costs(),
        total_cost: plan.total_cost,
        identity_total_cost: identity.total_cost,
    };
    println!("{}", serde_json::to_string(&report)?);
    Ok(())
}

#[derive(Serialize)]
struct AdviceReport {
    n: f64,
    alpha: f64,
    sigma: f64,
    current_cells: Option<usize>,
    argmin: u64,
    min_cost: f64,
    root: f64,
    theta: f64,
    closed_form: f64,
    curve: Vec<(u64, f64)>,
}

pub fn advise(a: AdviseArgs) -> Result<()> {
    let file = a.index.as_ref().map(IndexFile::open).transpose()?;
    let current_cells = file.as_ref().map(|f| f.header().num_cells as usize);
    let n = match (a.n, &file) {
        (Some(n), _) => n,
        (None, Some(f)) => f.header().n as f64,
        (None, None) => bail!("advise-cells needs --n or --index"),
    };
    let sigma = match (a.sigma, &a.queries, &file) {
        (Some(s), _, _) => s,
        (None, Some(q), Some(f)) => {
            let ds = f.read_dataset()?;
            let qs = read_queries(q)?;
            if qs.is_empty() {
                bail!("query file is empty");
            }
            qs.par_iter().map(|q| measured_selectivity(&ds, q)).sum::<f64>() / qs.len() as f64
        }
        _ => bail!("advise-cells needs --sigma or --index with --queries"),
    };
    let model = CostModel {
        n,
        alpha: a.alpha,
        sigma,
    };
    let adv = advise_cell_count(&model, a.points)?;
    let report = AdviceReport {
        n,
        alpha: a.alpha,
        sigma,
        current_cells,
        argmin: adv.argmin,
        min_cost: adv.min_cost,
        root: adv.root,
        theta: adv.theta,
        closed_form: adv.closed_form,
        curve: adv.curve,
    };
    println!("{}", serde_json::to_string(&report)?);
    Ok(())
}

pub fn gen_data(a: GenDataArgs) -> Result<()> {
    let attributes = match a.correlated_spread {
        Some(spread) => AttributeLaw::ClusterCorrelated {
            range: a.attr_range,
            spread,
        },
        None => AttributeLaw::Uniform { range: a.attr_range },
    };
    let ds = generate_dataset(&SyntheticConfig {
        n: a.n,
        dim: a.dim,
        num_attributes: a.attributes,
        clusters: a.clusters,
        cluster_std: a.cluster_std,
        attributes,
        seed: a.seed,
    })?;
    write_fvecs(&a.out_vectors, ds.dim(), ds.raw_vectors())?;
    write_attributes(&a.out_attributes, ds.num_attributes(), ds.raw_attributes())?;
    Ok(())
}

pub fn gen_queries(a: GenQueriesArgs) -> Result<()> {
    let ds = load_dataset(&a.vectors, &a.attributes)?;
    let selectivity = match a.width {
        Some(width) => SelectivityLaw::Fixed { width },
        None => SelectivityLaw::Uniform {
            min: a.min_width,
            max: a.max_width,
        },
    };
    let gen = generate_queries(
        &ds,
        &QueryConfig {
            count: a.count,
            k: a.k,
            selectivity,
            attributes: a.filter_attributes,
            vector_noise: a.noise,
            seed: a.seed,
        },
    )?;
    write_queries(&a.out, &gen.queries, Some(&gen.selectivities))?;
    Ok(())
}
