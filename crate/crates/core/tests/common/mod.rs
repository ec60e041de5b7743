#![allow(dead_code)]

use rfann_core::eval::{generate_dataset, generate_queries, AttributeLaw, QueryConfig, SyntheticConfig};
use rfann_core::{build_index, BuildParams, Dataset, GmgIndex, GridParams, HistogramParams, IndexParams, RangeQuery};

pub fn dataset(n: usize, dim: usize, m: usize, seed: u64) -> Dataset {
    generate_dataset(&SyntheticConfig {
        n,
        dim,
        num_attributes: m,
        clusters: Some(32),
        cluster_std: 0.15,
        attributes: AttributeLaw::Uniform { range: 1000 },
        seed,
    })
    .unwrap()
}

pub fn params(cells: usize, degree: usize) -> IndexParams {
    IndexParams {
        grid: GridParams::with_cells(cells),
        build: BuildParams {
            intra_degree: degree,
            inter_degree: 2,
            ef_construction: 48,
            ..BuildParams::default()
        },
        histogram: HistogramParams {
            num_clusters: 32,
            ..HistogramParams::default()
        },
    }
}

pub fn index(n: usize, cells: usize, seed: u64) -> GmgIndex {
    build_index(dataset(n, 8, 2, seed), &params(cells, 8)).unwrap()
}

pub fn queries(ds: &Dataset, count: usize, k: usize, seed: u64) -> Vec<RangeQuery> {
    generate_queries(
        ds,
        &QueryConfig {
            count,
            k,
            seed,
            ..QueryConfig::default()
        },
    )
    .unwrap()
    .queries
}
