//! Shared fixtures for the criterion benches.

use rfann_core::eval::{generate_dataset, generate_queries, AttributeLaw, QueryConfig, SyntheticConfig};
use rfann_core::{build_index, BuildParams, Dataset, GmgIndex, GridParams, HistogramParams, IndexParams, RangeQuery};

pub fn dataset(n: usize, dim: usize) -> Dataset {
    generate_dataset(&SyntheticConfig {
        n,
        dim,
        num_attributes: 2,
        clusters: Some(32),
        cluster_std: 0.1,
        attributes: AttributeLaw::Uniform { range: 100_000 },
        seed: 1,
    })
    .expect("synthetic dataset")
}

pub fn index(n: usize, dim: usize, cells: usize) -> GmgIndex {
    let params = IndexParams {
        grid: GridParams::with_cells(cells),
        build: BuildParams {
            intra_degree: 16,
            ef_construction: 48,
            ..BuildParams::default()
        },
        histogram: HistogramParams {
            num_clusters: 64,
            ..HistogramParams::default()
        },
    };
    build_index(dataset(n, dim), &params).expect("index build")
}

pub fn queries(dataset: &Dataset, count: usize) -> Vec<RangeQuery> {
    generate_queries(
        dataset,
        &QueryConfig {
            count,
            seed: 2,
            ..QueryConfig::default()
        },
    )
    .expect("queries")
    .queries
}
