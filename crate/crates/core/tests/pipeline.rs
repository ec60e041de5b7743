mod common;

use std::path::Path;

use rfann_core::pipeline::{
    assemble_partial_index, has_load_compute_overlap, run_out_of_core, run_with_host, write_timeline_csv, Clock,
    HostIndex, OutOfCoreParams, PartialIndex, SimulatedCosts, Stage, StreamBudget,
};
use rfann_core::search::{search_batch, SearchParams};
use rfann_core::{cells_intersecting, save_index, Error, GmgIndex, IndexFile, Predicate, RangeQuery};

fn stored(idx: &GmgIndex, dir: &Path) -> IndexFile {
    let path = dir.join("idx.gmg");
    save_index(idx, &path).unwrap();
    IndexFile::open(&path).unwrap()
}

fn simulated(batch_size: usize, depth: usize) -> OutOfCoreParams {
    OutOfCoreParams {
        batch_size,
        schedule: true,
        budget: StreamBudget {
            stage_depth: depth,
            bandwidth: Some(2e8),
            ..StreamBudget::default()
        },
        clock: Clock::Simulated(SimulatedCosts::default()),
    }
}

#[test]
fn partial_index_edge_sets() {
    let idx = common::index(2000, 4, 21);
    let dir = tempfile::tempdir().unwrap();
    let file = stored(&idx, dir.path());
    let host = HostIndex::load(&file).unwrap();
    let asg = idx.assignment();

    for c in 0..4 {
        let part = assemble_partial_index(&file, &host, &[c]).unwrap();
        assert_eq!(part.inter_edge_count(), 0);
        assert_eq!(part.intra_edge_count(), asg.cell_size(c) * idx.intra_graphs()[c].degree());
        assert_eq!(part.global_ids(), asg.members(c));
    }

    let recount = |i: usize, j: usize| -> usize {
        asg.members(i)
            .iter()
            .map(|&u| idx.inter_neighbors(u, j).len())
            .sum()
    };
    for (i, j) in [(0, 1), (1, 3), (2, 0)] {
        let part = assemble_partial_index(&file, &host, &[i, j]).unwrap();
        assert_eq!(part.inter_edge_count(), recount(i, j) + recount(j, i));
        let blob = part.to_bytes();
        assert_eq!(blob.len() as u64, host.partial_size(&[i, j]));
        assert_eq!(PartialIndex::from_bytes(&blob).unwrap(), part);
    }

    let all = assemble_partial_index(&file, &host, &[0, 1, 2, 3]).unwrap();
    assert_eq!(all.inter_edge_count(), idx.inter_edges().total_edges());
    let intra: usize = idx.intra_graphs().iter().map(|g| g.adjacency().len()).sum();
    assert_eq!(all.intra_edge_count(), intra);
    assert_eq!(all.num_nodes(), idx.len());

    assert!(assemble_partial_index(&file, &host, &[4]).is_err());
}

#[test]
fn single_batch_matches_in_memory() {
    let idx = common::index(2500, 4, 22);
    let dir = tempfile::tempdir().unwrap();
    let file = stored(&idx, dir.path());
    let qs = common::queries(idx.dataset(), 120, 10, 23);
    let params = SearchParams::with_beam(48);
    let mem = search_batch(&idx, &qs, &params).unwrap();
    for clock in [Clock::Real, Clock::Simulated(SimulatedCosts::default())] {
        let ooc = OutOfCoreParams {
            batch_size: 4,
            clock,
            ..OutOfCoreParams::default()
        };
        let out = run_out_of_core(&file, &qs, &params, &ooc).unwrap();
        assert_eq!(out.plan.num_batches(), 1);
        for (a, b) in out.results.iter().zip(&mem) {
            assert_eq!(a.neighbors, b.neighbors);
            assert_eq!(a.stats.distance_evals, b.stats.distance_evals);
        }
    }
}

/// Queries spanning the hull of two cells' attribute bounds.
fn hull_query(idx: &GmgIndex, a: usize, b: usize, vector: Vec<f32>) -> RangeQuery {
    let (ba, bb) = (idx.assignment().cell_bounds(a), idx.assignment().cell_bounds(b));
    let preds = idx
        .grid()
        .attributes()
        .iter()
        .enumerate()
        .map(|(i, &attr)| Predicate::new(attr, ba[i].0.min(bb[i].0), ba[i].1.max(bb[i].1)))
        .collect();
    RangeQuery::new(vector, preds, 5)
}

#[test]
fn worked_example_streams_two_batches() {
    let idx = common::index(1600, 4, 24);
    assert_eq!(idx.grid().segments(), &[2, 2]);
    let dir = tempfile::tempdir().unwrap();
    let file = stored(&idx, dir.path());
    let v = |i: usize| idx.dataset().vector(i).to_vec();
    let qs = vec![
        hull_query(&idx, 0, 2, v(1)),
        hull_query(&idx, 0, 2, v(2)),
        hull_query(&idx, 1, 3, v(3)),
        hull_query(&idx, 1, 3, v(4)),
    ];
    assert_eq!(cells_intersecting(idx.grid(), &qs[0]), vec![0, 2]);
    assert_eq!(cells_intersecting(idx.grid(), &qs[2]), vec![1, 3]);

    let out = run_out_of_core(&file, &qs, &SearchParams::with_beam(32), &simulated(2, 2)).unwrap();
    assert_eq!(out.plan.batches, vec![vec![0, 2], vec![1, 3]]);
    assert_eq!(out.plan.active, vec![vec![0, 1], vec![2, 3]]);
    assert_eq!(out.plan.total_cost, 4);
    for (q, r) in qs.iter().zip(&out.results) {
        assert_eq!(r.neighbors.len(), 5);
        assert!(r.neighbors.iter().all(|n| q.matches(idx.dataset().attributes(n.id as usize))));
    }

    let naive = OutOfCoreParams {
        schedule: false,
        ..simulated(2, 2)
    };
    let out = run_out_of_core(&file, &qs, &SearchParams::with_beam(32), &naive).unwrap();
    assert_eq!(out.plan.batches, vec![vec![0, 1], vec![2, 3]]);
    assert_eq!(out.plan.total_cost, 8);
}

#[test]
fn stage_depth_changes_timing_not_results() {
    let idx = common::index(3000, 8, 25);
    let dir = tempfile::tempdir().unwrap();
    let file = stored(&idx, dir.path());
    let host = HostIndex::load(&file).unwrap();
    let qs = common::queries(idx.dataset(), 80, 10, 26);
    let params = SearchParams::with_beam(32);

    let one = run_with_host(&file, &host, &qs, &params, &simulated(2, 1)).unwrap();
    let two = run_with_host(&file, &host, &qs, &params, &simulated(2, 2)).unwrap();
    assert!(one.plan.num_batches() >= 4);
    assert_eq!(one.results, two.results);
    assert!(!has_load_compute_overlap(&one.timeline));
    assert!(has_load_compute_overlap(&two.timeline));
    assert!(two.wall_ns <= one.wall_ns);
    let biggest = *two.batch_bytes.iter().max().unwrap();
    assert!(one.peak_resident_bytes <= biggest);
    assert!(two.peak_resident_bytes <= 2 * biggest);

    let again = run_with_host(&file, &host, &qs, &params, &simulated(2, 2)).unwrap();
    let csv = |spans: &[_]| {
        let mut b = Vec::new();
        write_timeline_csv(&mut b, spans).unwrap();
        b
    };
    assert_eq!(csv(&two.timeline), csv(&again.timeline));
    assert_eq!(two.latencies_ns, again.latencies_ns);
    let text = String::from_utf8(csv(&two.timeline)).unwrap();
    assert!(text.starts_with("stage,batch,start_ns,end_ns\nload,0,0,"));

    let real = |depth| {
        let ooc = OutOfCoreParams {
            batch_size: 2,
            budget: StreamBudget {
                stage_depth: depth,
                ..StreamBudget::default()
            },
            ..OutOfCoreParams::default()
        };
        run_with_host(&file, &host, &qs, &params, &ooc).unwrap()
    };
    let (r1, r2) = (real(1), real(2));
    assert_eq!(r1.results, one.results);
    assert_eq!(r2.results, one.results);
    for t in 0..r2.plan.num_batches() {
        for stage in [Stage::Load, Stage::Compute, Stage::Rerank] {
            assert_eq!(r2.timeline.iter().filter(|s| s.stage == stage && s.batch == t).count(), 1);
        }
    }
}

#[test]
fn budget_errors() {
    let idx = common::index(1200, 4, 27);
    let dir = tempfile::tempdir().unwrap();
    let file = stored(&idx, dir.path());
    let host = HostIndex::load(&file).unwrap();
    let qs: Vec<RangeQuery> = (0..8)
        .map(|i| RangeQuery::unfiltered(idx.dataset().vector(i).to_vec(), 5))
        .collect();
    let params = SearchParams {
        s_thre: Some(4),
        ..SearchParams::with_beam(16)
    };
    let single = (0..4).map(|c| host.partial_size(&[c])).max().unwrap();
    let with_cap = |cap| OutOfCoreParams {
        batch_size: 2,
        budget: StreamBudget {
            memory_cap: cap,
            ..StreamBudget::default()
        },
        ..OutOfCoreParams::default()
    };
    match run_with_host(&file, &host, &qs, &params, &with_cap(single)) {
        Err(Error::OverBudget { batch, bytes, cap }) => {
            assert_eq!(batch, 0);
            assert!(bytes > cap);
        }
        other => panic!("expected OverBudget, got {other:?}"),
    }
    let err = run_with_host(&file, &host, &qs, &params, &with_cap(single - 1)).unwrap_err();
    assert!(err.to_string().contains("infeasible"), "{err}");
    let zero = OutOfCoreParams {
        budget: StreamBudget {
            stage_depth: 0,
            ..StreamBudget::default()
        },
        ..OutOfCoreParams::default()
    };
    assert!(run_with_host(&file, &host, &qs, &params, &zero).is_err());
    let fits = with_cap(host.partial_size(&[0, 1, 2, 3]));
    let out = run_with_host(&file, &host, &qs, &params, &fits).unwrap();
    assert!(out.batch_bytes.iter().all(|&b| b <= fits.budget.memory_cap));
}
