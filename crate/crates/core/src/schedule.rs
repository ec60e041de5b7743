//! Cell-to-batch scheduling for out-of-core execution. The objective is the
//! total number of active queries summed over batches, where a query is
//! active in a batch when it touches at least one of the batch's cells.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{cells_intersecting, GridSpec};
use crate::model::RangeQuery;

/// Query-by-cell incidence, stored as sorted cell lists per query plus the
/// transposed query lists per cell.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IncidenceMatrix {
    num_cells: usize,
    rows: Vec<Vec<u32>>,
    cols: Vec<Vec<u32>>,
}

impl IncidenceMatrix {
    pub fn from_rows(num_cells: usize, rows: Vec<Vec<u32>>) -> Result<Self> {
        let mut cols = vec![Vec::new(); num_cells];
        let mut clean = Vec::with_capacity(rows.len());
        for (q, mut r) in rows.into_iter().enumerate() {
            r.sort_unstable();
            r.dedup();
            if let Some(&c) = r.iter().find(|&&c| c as usize >= num_cells) {
                return Err(Error::invalid(format!("query {q} references cell {c} >= {num_cells}")));
            }
            for &c in &r {
                cols[c as usize].push(q as u32);
            }
            clean.push(r);
        }
        Ok(Self {
            num_cells,
            rows: clean,
            cols,
        })
    }

    /// From a dense 0/1 matrix, one row per query.
    pub fn from_dense(dense: &[Vec<u8>]) -> Result<Self> {
        let n = dense.first().map_or(0, Vec::len);
        let mut rows = Vec::with_capacity(dense.len());
        for (q, r) in dense.iter().enumerate() {
            if r.len() != n {
                return Err(Error::invalid(format!("row {q} has {} columns, expected {n}", r.len())));
            }
            if r.iter().any(|&v| v > 1) {
                return Err(Error::invalid(format!("row {q} has a non 0/1 entry")));
            }
            rows.push((0..n as u32).filter(|&c| r[c as usize] == 1).collect());
        }
        Self::from_rows(n, rows)
    }

    pub fn to_dense(&self) -> Vec<Vec<u8>> {
        self.rows
            .iter()
            .map(|r| {
                let mut d = vec![0u8; self.num_cells];
                r.iter().for_each(|&c| d[c as usize] = 1);
                d
            })
            .collect()
    }

    pub fn num_queries(&self) -> usize {
        self.rows.len()
    }

    pub fn num_cells(&self) -> usize {
        self.num_cells
    }

    pub fn cells_of(&self, query: usize) -> &[u32] {
        &self.rows[query]
    }

    pub fn queries_of(&self, cell: usize) -> &[u32] {
        &self.cols[cell]
    }

    pub fn get(&self, query: usize, cell: usize) -> bool {
        self.rows[query].binary_search(&(cell as u32)).is_ok()
    }

    /// Cells touched by at least one query, ascending.
    pub fn referenced_cells(&self) -> Vec<usize> {
        (0..self.num_cells).filter(|&c| !self.cols[c].is_empty()).collect()
    }
}

/// Rows follow `cells_intersecting`; queries that would take the whole-graph
/// path (more than `s_thre` cells) get an all-ones row.
pub fn build_incidence(queries: &[RangeQuery], grid: &GridSpec, s_thre: Option<usize>) -> IncidenceMatrix {
    let s = grid.num_cells();
    let thre = s_thre.unwrap_or(s.saturating_sub(1).max(1));
    let rows = queries
        .iter()
        .map(|q| {
            let cells = cells_intersecting(grid, q);
            if cells.len() > thre {
                (0..s as u32).collect()
            } else {
                cells.into_iter().map(|c| c as u32).collect()
            }
        })
        .collect();
    IncidenceMatrix::from_rows(s, rows).expect("cells come from the grid")
}

/// Queries active in a batch: those touching at least one of its cells.
pub fn active_queries(a: &IncidenceMatrix, batch: &[usize]) -> Vec<u32> {
    let mut q: Vec<u32> = batch.iter().flat_map(|&c| a.queries_of(c).iter().copied()).collect();
    q.sort_unstable();
    q.dedup();
    q
}

pub fn active_count(a: &IncidenceMatrix, batch: &[usize]) -> usize {
    active_queries(a, batch).len()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchPlan {
    pub batch_size: usize,
    pub batches: Vec<Vec<usize>>,
    pub active: Vec<Vec<u32>>,
    pub total_cost: usize,
}

impl BatchPlan {
    pub fn from_batches(a: &IncidenceMatrix, batch_size: usize, batches: Vec<Vec<usize>>) -> Self {
        let batches: Vec<Vec<usize>> = batches.into_iter().filter(|b| !b.is_empty()).collect();
        let active: Vec<Vec<u32>> = batches.iter().map(|b| active_queries(a, b)).collect();
        let total_cost = active.iter().map(Vec::len).sum();
        Self {
            batch_size,
            batches,
            active,
            total_cost,
        }
    }

    pub fn costs(&self) -> Vec<usize> {
        self.active.iter().map(Vec::len).collect()
    }

    pub fn num_batches(&self) -> usize {
        self.batches.len()
    }

    /// Index of the batch holding `cell`, if scheduled.
    pub fn batch_of(&self, cell: usize) -> Option<usize> {
        self.batches.iter().position(|b| b.contains(&cell))
    }
}

fn check(a: &IncidenceMatrix, cells: &[usize], b: usize) -> Result<()> {
    if b == 0 {
        return Err(Error::invalid("batch size must be >= 1"));
    }
    let mut seen = vec![false; a.num_cells()];
    for &c in cells {
        if c >= a.num_cells() {
            return Err(Error::invalid(format!("cell {c} out of range")));
        }
        if std::mem::replace(&mut seen[c], true) {
            return Err(Error::invalid(format!("cell {c} listed twice")));
        }
    }
    Ok(())
}

/// Greedy assignment: each cell, in the given order, joins the non-full batch
/// with the smallest increase in active queries; ties go to the batch with
/// fewer active queries, then the lower index.
pub fn schedule_greedy(a: &IncidenceMatrix, cells: &[usize], b: usize) -> Result<BatchPlan> {
    check(a, cells, b)?;
    let nb = cells.len().div_ceil(b);
    let mut batches: Vec<Vec<usize>> = vec![Vec::with_capacity(b); nb];
    let mut active = vec![vec![false; a.num_queries()]; nb];
    let mut counts = vec![0usize; nb];
    for &c in cells {
        let mut best: Option<(usize, usize)> = None;
        for k in 0..nb {
            if batches[k].len() >= b {
                continue;
            }
            let inc = a.queries_of(c).iter().filter(|&&q| !active[k][q as usize]).count();
            let better = match best {
                None => true,
                Some((bk, binc)) => inc < binc || (inc == binc && counts[k] < counts[bk]),
            };
            if better {
                best = Some((k, inc));
            }
        }
        let (k, inc) = best.expect("ceil(n/b) batches always have room");
        batches[k].push(c);
        for &q in a.queries_of(c) {
            active[k][q as usize] = true;
        }
        counts[k] += inc;
    }
    Ok(BatchPlan::from_batches(a, b, batches))
}

/// Consecutive chunks of `cells` in the given order.
pub fn schedule_identity(a: &IncidenceMatrix, cells: &[usize], b: usize) -> Result<BatchPlan> {
    check(a, cells, b)?;
    Ok(BatchPlan::from_batches(a, b, cells.chunks(b).map(<[usize]>::to_vec).collect()))
}

pub const EXACT_LIMIT: usize = 10;

/// Exhaustive search over all set partitions of `cells` into blocks of at
/// most `b` cells. Small inputs only.
pub fn schedule_exact(a: &IncidenceMatrix, cells: &[usize], b: usize) -> Result<BatchPlan> {
    check(a, cells, b)?;
    if cells.len() > EXACT_LIMIT {
        return Err(Error::invalid(format!(
            "exact scheduling supports at most {EXACT_LIMIT} cells, got {}",
            cells.len()
        )));
    }
    struct Search<'a> {
        a: &'a IncidenceMatrix,
        cells: &'a [usize],
        b: usize,
        blocks: Vec<Vec<usize>>,
        best: Option<(usize, Vec<Vec<usize>>)>,
    }
    impl Search<'_> {
        fn go(&mut self, i: usize) {
            if i == self.cells.len() {
                let cost: usize = self.blocks.iter().map(|blk| active_count(self.a, blk)).sum();
                if self.best.as_ref().is_none_or(|(c, _)| cost < *c) {
                    self.best = Some((cost, self.blocks.clone()));
                }
                return;
            }
            let c = self.cells[i];
            for k in 0..self.blocks.len() {
                if self.blocks[k].len() < self.b {
                    self.blocks[k].push(c);
                    self.go(i + 1);
                    self.blocks[k].pop();
                }
            }
            self.blocks.push(vec![c]);
            self.go(i + 1);
            self.blocks.pop();
        }
    }
    let mut s = Search {
        a,
        cells,
        b,
        blocks: Vec::new(),
        best: None,
    };
    s.go(0);
    let batches = s.best.map(|(_, bl)| bl).unwrap_or_default();
    Ok(BatchPlan::from_batches(a, b, batches))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fig5() -> IncidenceMatrix {
        IncidenceMatrix::from_dense(&[
            vec![1, 0, 1, 0],
            vec![1, 0, 1, 0],
            vec![0, 1, 0, 1],
            vec![0, 1, 0, 1],
        ])
        .unwrap()
    }

    #[test]
    fn active_counts() {
        let a = fig5();
        assert_eq!(active_count(&a, &[0, 1]), 4);
        assert_eq!(active_count(&a, &[0, 2]), 2);
        assert_eq!(active_count(&a, &[]), 0);
    }

    #[test]
    fn worked_example() {
        let a = fig5();
        let g = schedule_greedy(&a, &[0, 1, 2, 3], 2).unwrap();
        assert_eq!(g.batches, vec![vec![0, 2], vec![1, 3]]);
        assert_eq!(g.costs(), vec![2, 2]);
        assert_eq!(g.active, vec![vec![0, 1], vec![2, 3]]);
        let id = schedule_identity(&a, &[0, 1, 2, 3], 2).unwrap();
        assert_eq!(id.total_cost, 8);
        assert_eq!(schedule_exact(&a, &[0, 1, 2, 3], 2).unwrap().total_cost, 4);
    }

    /// The tie rule sends the query-free C1 to the empty batch, and C2 then
    /// follows it there; identity packing does better.
    #[test]
    fn greedy_can_lose_to_identity() {
        let a = IncidenceMatrix::from_dense(&[vec![1, 0, 0, 0], vec![0, 0, 1, 1]]).unwrap();
        let cells = [0, 1, 2, 3];
        let g = schedule_greedy(&a, &cells, 2).unwrap();
        assert_eq!(g.batches, vec![vec![0, 3], vec![1, 2]]);
        assert_eq!(g.total_cost, 3);
        assert_eq!(schedule_identity(&a, &cells, 2).unwrap().total_cost, 2);
        assert_eq!(schedule_exact(&a, &cells, 2).unwrap().total_cost, 2);
    }

    #[test]
    fn single_query_everywhere() {
        let a = IncidenceMatrix::from_rows(5, vec![vec![0, 1, 2, 3, 4]]).unwrap();
        let cells: Vec<usize> = (0..5).collect();
        assert_eq!(schedule_greedy(&a, &cells, 2).unwrap().total_cost, 3);
        assert_eq!(schedule_exact(&a, &cells, 2).unwrap().total_cost, 3);
    }

    #[test]
    fn one_big_batch_costs_nonzero_rows() {
        let a = IncidenceMatrix::from_rows(3, vec![vec![0], vec![], vec![1, 2], vec![2]]).unwrap();
        assert_eq!(schedule_exact(&a, &[0, 1, 2], 3).unwrap().total_cost, 3);
    }

    #[test]
    fn guards() {
        let a = fig5();
        assert!(schedule_greedy(&a, &[0], 0).is_err());
        assert!(schedule_greedy(&a, &[0, 0], 2).is_err());
        let big = IncidenceMatrix::from_rows(11, vec![(0..11).collect()]).unwrap();
        let cells: Vec<usize> = (0..11).collect();
        assert!(schedule_exact(&big, &cells, 2).is_err());
        assert!(IncidenceMatrix::from_dense(&[vec![1, 0], vec![1]]).is_err());
    }

    #[test]
    fn incidence_from_queries() {
        use crate::grid::tests::toy_ten;
        use crate::grid::{partition, GridParams};
        use crate::model::Predicate;
        let ds = toy_ten();
        let (grid, _) = partition(&ds, &GridParams::with_cells(4)).unwrap();
        let qs = vec![
            RangeQuery::new(vec![0.0], vec![Predicate::new(0, 1.0, 2.0), Predicate::new(1, 1.0, 2.0)], 1),
            RangeQuery::new(vec![0.0], vec![Predicate::new(0, 9.0, 9.0)], 1),
            RangeQuery::unfiltered(vec![0.0], 1),
        ];
        let a = build_incidence(&qs, &grid, None);
        assert_eq!(a.to_dense(), vec![vec![1, 0, 0, 0], vec![0, 0, 0, 0], vec![1, 1, 1, 1]]);
    }
}
