mod commands;
mod config;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(
    name = "rfann",
    version,
    about = "Range-filtered approximate nearest neighbor search over a grid of per-cell graphs"
)]
struct Cli {
    /// TOML or JSON file with one table of flags per subcommand.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build an index from vectors plus an attribute CSV.
    Build(BuildArgs),
    /// Answer a JSON-lines query file.
    Query(QueryArgs),
    /// Recall/QPS sweep over beam widths, in memory or streamed from disk.
    Bench(BenchArgs),
    /// Pack cells into batches for an incidence matrix.
    Schedule(ScheduleArgs),
    /// Exact filtered top-k by brute force.
    Oracle(OracleArgs),
    /// Recommend a cell count from the query cost model.
    AdviseCells(AdviseArgs),
    /// Generate a synthetic dataset.
    GenData(GenDataArgs),
    /// Generate range queries with controlled selectivity.
    GenQueries(GenQueriesArgs),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum MetricArg {
    L2,
    Ip,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
pub struct BuildArgs {
    /// `.fvecs` or `.bvecs` file.
    #[arg(long)]
    pub vectors: PathBuf,
    /// CSV with header `id,a_1,...,a_m`.
    #[arg(long)]
    pub attributes: PathBuf,
    #[arg(long, short)]
    pub out: PathBuf,
    /// Total cell count S.
    #[arg(long, default_value_t = 16)]
    pub cells: usize,
    /// Explicit per-attribute segment counts (overrides --cells factoring).
    #[arg(long, value_delimiter = ',')]
    pub segments: Option<Vec<usize>>,
    /// Attributes to partition on, most selective first.
    #[arg(long, value_delimiter = ',')]
    pub partition_attributes: Option<Vec<usize>>,
    /// Number of partition attributes when they are picked automatically.
    #[arg(long)]
    pub p: Option<usize>,
    /// Intra-cell out-degree d.
    #[arg(long, default_value_t = 16)]
    pub degree: usize,
    /// Inter-cell neighbors l per foreign cell.
    #[arg(long, default_value_t = 2)]
    pub inter_degree: usize,
    #[arg(long, default_value_t = 100)]
    pub ef: usize,
    #[arg(long, default_value_t = 12)]
    pub knn_iterations: usize,
    #[arg(long, default_value_t = 2048)]
    pub exact_knn_below: usize,
    #[arg(long, value_enum, default_value = "l2")]
    pub metric: MetricArg,
    /// Histogram clusters K_c.
    #[arg(long, default_value_t = 256)]
    pub histogram_clusters: usize,
    #[arg(long, default_value_t = 8)]
    pub top_m: usize,
    #[arg(long, default_value_t = 0x5eed)]
    pub seed: u64,
}

#[derive(Args, Debug, Clone)]
pub struct SearchArgs {
    /// Override each query's k.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long, default_value_t = 64)]
    pub beam: usize,
    /// Whole-graph fallback above this many intersecting cells.
    #[arg(long)]
    pub s_thre: Option<usize>,
    /// Leading candidates whose inter-cell edges seed the next cell.
    #[arg(long)]
    pub inter_seeds: Option<usize>,
    #[arg(long)]
    pub entry_random: Option<usize>,
    /// Candidates reranked with exact distances.
    #[arg(long)]
    pub rerank: Option<usize>,
    /// Visit cells in id order instead of by estimated cardinality.
    #[arg(long)]
    pub no_order: bool,
    /// Seed transitions with random entries only.
    #[arg(long)]
    pub no_inter_seed: bool,
    #[arg(long, default_value_t = 0x5eed)]
    pub search_seed: u64,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
pub struct QueryArgs {
    #[arg(long)]
    pub index: PathBuf,
    #[arg(long)]
    pub queries: PathBuf,
    /// JSON-lines output; stdout when omitted.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub search: SearchArgs,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
pub struct BenchArgs {
    #[arg(long)]
    pub index: PathBuf,
    #[arg(long)]
    pub queries: PathBuf,
    /// Ground truth from `rfann oracle`; computed from the index when omitted.
    #[arg(long)]
    pub oracle: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "16,32,64,128,256")]
    pub beams: Vec<usize>,
    /// CSV output; stdout when omitted.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub search: SearchArgs,
    /// Deterministic cost-model clock instead of wall time.
    #[arg(long)]
    pub simulated: bool,
    #[arg(long, default_value_t = 20_000.0)]
    pub activation_ns: f64,
    #[arg(long, default_value_t = 20.0)]
    pub distance_ns: f64,
    #[arg(long, default_value_t = 50.0)]
    pub rerank_ns: f64,
    /// Stream the index from disk batch by batch.
    #[arg(long)]
    pub out_of_core: bool,
    /// Cells per batch.
    #[arg(long, default_value_t = 2)]
    pub batch_size: usize,
    /// Bytes allowed for one resident batch.
    #[arg(long)]
    pub memory_cap: Option<u64>,
    #[arg(long, default_value_t = 2)]
    pub stage_depth: usize,
    /// Modeled link bandwidth in bytes per second.
    #[arg(long)]
    pub bandwidth: Option<f64>,
    /// Pack cells in id order instead of greedy scheduling.
    #[arg(long)]
    pub no_schedule: bool,
    /// Stage timeline CSV of the last beam (out-of-core only).
    #[arg(long)]
    pub timeline: Option<PathBuf>,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
pub struct ScheduleArgs {
    /// Dense 0/1 rows (one query per line, comma or space separated) or a JSON array of rows.
    #[arg(long)]
    pub incidence: PathBuf,
    #[arg(long)]
    pub batch_size: usize,
    /// Exhaustive optimum (at most 10 cells).
    #[arg(long, conflicts_with = "naive")]
    pub exact: bool,
    /// Consecutive packing in cell order.
    #[arg(long)]
    pub naive: bool,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
pub struct OracleArgs {
    /// Take the dataset and metric from an index file.
    #[arg(long, conflicts_with_all = ["vectors", "attributes"])]
    pub index: Option<PathBuf>,
    #[arg(long, requires = "attributes")]
    pub vectors: Option<PathBuf>,
    #[arg(long, requires = "vectors")]
    pub attributes: Option<PathBuf>,
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long, value_enum, default_value = "l2")]
    pub metric: MetricArg,
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
pub struct AdviseArgs {
    /// Dataset size; read from --index when omitted.
    #[arg(long)]
    pub n: Option<f64>,
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
    /// Query selectivity; measured from --queries when omitted.
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub index: Option<PathBuf>,
    #[arg(long, requires = "index")]
    pub queries: Option<PathBuf>,
    /// Points sampled from the T(S) curve.
    #[arg(long, default_value_t = 32)]
    pub points: usize,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
pub struct GenDataArgs {
    #[arg(long)]
    pub out_vectors: PathBuf,
    #[arg(long)]
    pub out_attributes: PathBuf,
    #[arg(long, default_value_t = 10_000)]
    pub n: usize,
    #[arg(long, default_value_t = 16)]
    pub dim: usize,
    /// Attribute count m.
    #[arg(long, default_value_t = 2)]
    pub attributes: usize,
    /// Gaussian clusters; uniform vectors when omitted.
    #[arg(long)]
    pub clusters: Option<usize>,
    #[arg(long, default_value_t = 0.05)]
    pub cluster_std: f32,
    /// Attributes take integer values in `[0, range)`.
    #[arg(long, default_value_t = 10_000)]
    pub attr_range: u32,
    /// Draw attributes around per-cluster centers with this relative spread.
    #[arg(long, requires = "clusters")]
    pub correlated_spread: Option<f64>,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
pub struct GenQueriesArgs {
    #[arg(long)]
    pub vectors: PathBuf,
    #[arg(long)]
    pub attributes: PathBuf,
    #[arg(long, short)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub count: usize,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    /// Per-attribute width fraction range.
    #[arg(long, default_value_t = 0.01)]
    pub min_width: f64,
    #[arg(long, default_value_t = 1.0)]
    pub max_width: f64,
    /// Fixed width fraction on every filtered attribute.
    #[arg(long, conflicts_with_all = ["min_width", "max_width"])]
    pub width: Option<f64>,
    /// Attributes to filter on; all when omitted.
    #[arg(long, value_delimiter = ',')]
    pub filter_attributes: Option<Vec<usize>>,
    #[arg(long, default_value_t = 0.01)]
    pub noise: f32,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
}

fn main() -> Result<()> {
    let argv = config::expand(std::env::args_os().collect())?;
    let cli = Cli::parse_from(argv);
    if let Some(t) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(t).build_global()?;
    }
    match cli.command {
        Command::Build(a) => commands::build(a),
        Command::Query(a) => commands::query(a),
        Command::Bench(a) => commands::bench(a),
        Command::Schedule(a) => commands::schedule(a),
        Command::Oracle(a) => commands::oracle(a),
        Command::AdviseCells(a) => commands::advise(a),
        Command::GenData(a) => commands::gen_data(a),
        Command::GenQueries(a) => commands::gen_queries(a),
    }
}
