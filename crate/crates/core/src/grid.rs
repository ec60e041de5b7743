//! Grid partitioning of the dataset over a few attributes.
//!
//! Each partitioned attribute is cut into equal-cardinality segments by sorted
//! position, so ties never unbalance a segment. A record's cell is the
//! row-major linearization of its per-attribute segment coordinates, with the
//! first partitioned attribute most significant.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Dataset, RangeQuery};

/// An empty segment's value range. It intersects nothing.
pub const EMPTY_RANGE: (f64, f64) = (f64::INFINITY, f64::NEG_INFINITY);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridParams {
    /// Explicit partition attributes, most selective first. Overrides `partition_attributes`.
    pub attributes: Option<Vec<usize>>,
    /// `p`, defaults to `min(m, 4)`.
    pub partition_attributes: Option<usize>,
    /// Total cell count `S`, factored over the attributes when `segments` is unset.
    pub num_cells: usize,
    /// Explicit per-attribute segment counts.
    pub segments: Option<Vec<usize>>,
}

impl Default for GridParams {
    fn default() -> Self {
        Self {
            attributes: None,
            partition_attributes: None,
            num_cells: 16,
            segments: None,
        }
    }
}

impl GridParams {
    pub fn with_cells(num_cells: usize) -> Self {
        Self {
            num_cells,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    n: usize,
    attributes: Vec<usize>,
    segments: Vec<usize>,
    /// Per attribute, the last sorted value of each segment but the final one.
    boundaries: Vec<Vec<f64>>,
    /// Per attribute and segment, the `[min, max]` of values actually in the segment.
    segment_ranges: Vec<Vec<(f64, f64)>>,
}

impl GridSpec {
    pub(crate) fn from_parts(
        n: usize,
        attributes: Vec<usize>,
        segments: Vec<usize>,
        boundaries: Vec<Vec<f64>>,
        segment_ranges: Vec<Vec<(f64, f64)>>,
    ) -> Result<Self> {
        let p = attributes.len();
        if segments.len() != p || boundaries.len() != p || segment_ranges.len() != p {
            return Err(Error::Corrupt("grid arrays disagree on attribute count".into()));
        }
        for i in 0..p {
            if segments[i] == 0
                || boundaries[i].len() + 1 != segments[i]
                || segment_ranges[i].len() != segments[i]
            {
                return Err(Error::Corrupt(format!("grid attribute {i} is inconsistent")));
            }
        }
        Ok(Self {
            n,
            attributes,
            segments,
            boundaries,
            segment_ranges,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn attributes(&self) -> &[usize] {
        &self.attributes
    }

    pub fn segments(&self) -> &[usize] {
        &self.segments
    }

    pub fn boundaries(&self) -> &[Vec<f64>] {
        &self.boundaries
    }

    pub fn segment_ranges(&self) -> &[Vec<(f64, f64)>] {
        &self.segment_ranges
    }

    pub fn num_cells(&self) -> usize {
        self.segments.iter().product()
    }

    pub fn cell_id(&self, coords: &[usize]) -> usize {
        coords
            .iter()
            .zip(&self.segments)
            .fold(0, |acc, (&c, &s)| acc * s + c)
    }

    pub fn cell_coordinates(&self, mut cell: usize) -> Vec<usize> {
        let mut coords = vec![0; self.segments.len()];
        for (slot, &s) in coords.iter_mut().zip(&self.segments).rev() {
            *slot = cell % s;
            cell /= s;
        }
        coords
    }

    /// Value interval covered by `cell` on each partitioned attribute.
    pub fn cell_bounds(&self, cell: usize) -> Vec<(f64, f64)> {
        self.cell_coordinates(cell)
            .iter()
            .enumerate()
            .map(|(axis, &s)| self.segment_ranges[axis][s])
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellAssignment {
    cell_of: Vec<u32>,
    members: Vec<Vec<u32>>,
    position: Vec<u32>,
    cell_bounds: Vec<Vec<(f64, f64)>>,
}

impl CellAssignment {
    /// Rebuilds the member lists from a `record -> cell` map.
    pub fn from_cell_of(grid: &GridSpec, cell_of: Vec<u32>) -> Result<Self> {
        let s = grid.num_cells();
        let mut members = vec![Vec::new(); s];
        let mut position = vec![0u32; cell_of.len()];
        for (id, &c) in cell_of.iter().enumerate() {
            let c = c as usize;
            if c >= s {
                return Err(Error::Corrupt(format!("record {id} maps to cell {c} >= {s}")));
            }
            position[id] = members[c].len() as u32;
            members[c].push(id as u32);
        }
        let cell_bounds = (0..s).map(|c| grid.cell_bounds(c)).collect();
        Ok(Self {
            cell_of,
            members,
            position,
            cell_bounds,
        })
    }

    pub fn len(&self) -> usize {
        self.cell_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cell_of.is_empty()
    }

    pub fn num_cells(&self) -> usize {
        self.members.len()
    }

    #[inline]
    pub fn cell_of(&self, id: u32) -> usize {
        self.cell_of[id as usize] as usize
    }

    pub fn cell_map(&self) -> &[u32] {
        &self.cell_of
    }

    /// Sorted record ids in `cell`.
    #[inline]
    pub fn members(&self, cell: usize) -> &[u32] {
        &self.members[cell]
    }

    /// Index of `id` within its cell's member list.
    #[inline]
    pub fn position(&self, id: u32) -> usize {
        self.position[id as usize] as usize
    }

    pub fn cell_size(&self, cell: usize) -> usize {
        self.members[cell].len()
    }

    pub fn cell_sizes(&self) -> Vec<usize> {
        self.members.iter().map(Vec::len).collect()
    }

    pub fn cell_bounds(&self, cell: usize) -> &[(f64, f64)] {
        &self.cell_bounds[cell]
    }
}

/// Ranks attributes by distinct-value ratio (descending, ties to the lower
/// index) and returns the top `p`.
pub fn select_partition_attributes(dataset: &Dataset, p: usize) -> Result<Vec<usize>> {
    let m = dataset.num_attributes();
    if p == 0 || p > m {
        return Err(Error::invalid(format!(
            "partition attribute count {p} must be in [1, {m}]"
        )));
    }
    let n = dataset.len().max(1) as f64;
    let mut scored: Vec<(f64, usize)> = (0..m)
        .map(|a| {
            let mut col = dataset.attribute_column(a);
            col.sort_by(f64::total_cmp);
            col.dedup();
            (col.len() as f64 / n, a)
        })
        .collect();
    scored.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)));
    Ok(scored.into_iter().take(p).map(|(_, a)| a).collect())
}

/// Splits `num_cells` into `p` per-attribute segment counts as evenly as the
/// prime factorization allows, largest first.
pub fn factor_cells(num_cells: usize, p: usize) -> Result<Vec<usize>> {
    if num_cells == 0 {
        return Err(Error::invalid("cell count must be positive"));
    }
    if p == 0 {
        return if num_cells == 1 {
            Ok(Vec::new())
        } else {
            Err(Error::invalid("cannot split cells without partition attributes"))
        };
    }
    let mut factors = Vec::new();
    let mut rest = num_cells;
    let mut f = 2;
    while f * f <= rest {
        while rest % f == 0 {
            factors.push(f);
            rest /= f;
        }
        f += 1;
    }
    if rest > 1 {
        factors.push(rest);
    }
    factors.sort_unstable_by(|a, b| b.cmp(a));
    let mut buckets = vec![1usize; p];
    for f in factors {
        let (slot, _) = buckets
            .iter()
            .enumerate()
            .min_by_key(|&(i, &b)| (b, i))
            .expect("p > 0");
        buckets[slot] *= f;
    }
    buckets.sort_unstable_by(|a, b| b.cmp(a));
    Ok(buckets)
}

/// Cut positions `ceil(j * n / s)` for `j = 0..=s`.
fn cut_positions(n: usize, s: usize) -> Vec<usize> {
    (0..=s).map(|j| (j * n).div_ceil(s)).collect()
}

/// Record ids sorted by `(value, id)` on one attribute.
fn sorted_order(dataset: &Dataset, attribute: usize) -> Vec<u32> {
    let mut order: Vec<u32> = (0..dataset.len() as u32).collect();
    order.sort_by(|&a, &b| {
        dataset
            .attribute(a as usize, attribute)
            .total_cmp(&dataset.attribute(b as usize, attribute))
            .then(a.cmp(&b))
    });
    order
}

pub fn build_grid(dataset: &Dataset, attributes: &[usize], segments: &[usize]) -> Result<GridSpec> {
    let n = dataset.len();
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    if attributes.len() != segments.len() {
        return Err(Error::invalid("one segment count per partition attribute"));
    }
    if segments.iter().any(|&s| s == 0) {
        return Err(Error::invalid("segment counts must be >= 1"));
    }
    for (i, &a) in attributes.iter().enumerate() {
        if a >= dataset.num_attributes() {
            return Err(Error::invalid(format!("attribute {a} out of range")));
        }
        if attributes[..i].contains(&a) {
            return Err(Error::invalid(format!("attribute {a} listed twice")));
        }
    }
    let mut boundaries = Vec::with_capacity(attributes.len());
    let mut ranges = Vec::with_capacity(attributes.len());
    for (&attr, &s) in attributes.iter().zip(segments) {
        let order = sorted_order(dataset, attr);
        let value_at = |pos: usize| dataset.attribute(order[pos] as usize, attr);
        let cuts = cut_positions(n, s);
        let seg_ranges = (0..s)
            .map(|j| {
                if cuts[j] == cuts[j + 1] {
                    EMPTY_RANGE
                } else {
                    (value_at(cuts[j]), value_at(cuts[j + 1] - 1))
                }
            })
            .collect();
        let bounds = (1..s).map(|j| value_at(cuts[j].max(1) - 1)).collect();
        boundaries.push(bounds);
        ranges.push(seg_ranges);
    }
    GridSpec::from_parts(
        n,
        attributes.to_vec(),
        segments.to_vec(),
        boundaries,
        ranges,
    )
}

pub fn assign_cells(dataset: &Dataset, grid: &GridSpec) -> Result<CellAssignment> {
    let n = dataset.len();
    if n != grid.n() {
        return Err(Error::invalid(format!(
            "grid built over {} records, dataset has {n}",
            grid.n()
        )));
    }
    let mut cell_of = vec![0u32; n];
    for (&attr, &s) in grid.attributes().iter().zip(grid.segments()) {
        let order = sorted_order(dataset, attr);
        let cuts = cut_positions(n, s);
        let mut seg = 0;
        for (pos, &id) in order.iter().enumerate() {
            while pos >= cuts[seg + 1] {
                seg += 1;
            }
            let c = &mut cell_of[id as usize];
            *c = *c * s as u32 + seg as u32;
        }
    }
    CellAssignment::from_cell_of(grid, cell_of)
}

/// Chooses the partition attributes and segment counts, then assigns cells.
pub fn partition(dataset: &Dataset, params: &GridParams) -> Result<(GridSpec, CellAssignment)> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let m = dataset.num_attributes();
    let attributes = match &params.attributes {
        Some(a) => a.clone(),
        None if m == 0 => Vec::new(),
        None => {
            let p = params.partition_attributes.unwrap_or(m.min(4));
            select_partition_attributes(dataset, p)?
        }
    };
    let segments = match &params.segments {
        Some(s) => s.clone(),
        None => factor_cells(params.num_cells, attributes.len())?,
    };
    let grid = build_grid(dataset, &attributes, &segments)?;
    let assignment = assign_cells(dataset, &grid)?;
    Ok((grid, assignment))
}

/// Cells whose bounds intersect every predicate on a partitioned attribute,
/// in ascending id order. Predicates on other attributes never prune.
pub fn cells_intersecting(grid: &GridSpec, query: &RangeQuery) -> Vec<usize> {
    let allowed: Vec<Vec<bool>> = grid
        .attributes()
        .iter()
        .enumerate()
        .map(|(axis, &attr)| {
            grid.segment_ranges()[axis]
                .iter()
                .map(|&(lo, hi)| {
                    query
                        .predicates
                        .iter()
                        .filter(|p| p.attribute == attr)
                        .all(|p| lo <= p.high && p.low <= hi)
                })
                .collect()
        })
        .collect();
    (0..grid.num_cells())
        .filter(|&cell| {
            grid.cell_coordinates(cell)
                .iter()
                .enumerate()
                .all(|(axis, &s)| allowed[axis][s])
        })
        .collect()
}

#[cfg(test)]
pub(crate) mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::model::Predicate;

    fn dataset_with_attrs(attrs: &[Vec<f64>]) -> Dataset {
        let rows: Vec<_> = attrs.iter().map(|a| (vec![0.0f32], a.clone())).collect();
        Dataset::from_rows(&rows).unwrap()
    }

    /// Ten objects whose two attributes each sort into `[1,2]` and `[3,5]`.
    pub(crate) fn toy_ten() -> Dataset {
        let attrs = [
            (1.0, 1.0),
            (1.0, 4.0),
            (2.0, 2.0),
            (2.0, 4.0),
            (2.0, 5.0),
            (3.0, 1.0),
            (3.0, 2.0),
            (4.0, 3.0),
            (5.0, 2.0),
            (5.0, 5.0),
        ];
        let rows: Vec<_> = attrs
            .iter()
            .enumerate()
            .map(|(i, &(a, b))| (vec![i as f32, (i * i % 7) as f32], vec![a, b]))
            .collect();
        Dataset::from_rows(&rows).unwrap()
    }

    #[test]
    fn selectivity_ranking() {
        let rows: Vec<_> = (0..1000)
            .map(|i| (vec![0.0f32], vec![(i % 3) as f64, i as f64, 7.0]))
            .collect();
        let ds = Dataset::from_rows(&rows).unwrap();
        assert_eq!(select_partition_attributes(&ds, 2).unwrap(), vec![1, 0]);
        assert_eq!(select_partition_attributes(&ds, 3).unwrap(), vec![1, 0, 2]);
        assert!(select_partition_attributes(&ds, 4).is_err());
        assert!(select_partition_attributes(&ds, 0).is_err());
    }

    #[test]
    fn factor_examples() {
        assert_eq!(factor_cells(16, 2).unwrap(), vec![4, 4]);
        assert_eq!(factor_cells(16, 3).unwrap(), vec![4, 2, 2]);
        assert_eq!(factor_cells(12, 2).unwrap(), vec![4, 3]);
        assert_eq!(factor_cells(7, 2).unwrap(), vec![7, 1]);
        assert_eq!(factor_cells(16, 1).unwrap(), vec![16]);
        assert_eq!(factor_cells(1, 0).unwrap(), Vec::<usize>::new());
        assert!(factor_cells(4, 0).is_err());
    }

    #[test]
    fn quantile_cut_with_duplicates() {
        let ds = dataset_with_attrs(&[vec![1.0], vec![1.0], vec![2.0], vec![3.0], vec![5.0]]);
        let grid = build_grid(&ds, &[0], &[2]).unwrap();
        assert_eq!(grid.segment_ranges()[0], vec![(1.0, 2.0), (3.0, 5.0)]);
        assert_eq!(grid.boundaries()[0], vec![2.0]);
        let asg = assign_cells(&ds, &grid).unwrap();
        assert_eq!(asg.members(0), &[0, 1, 2]);
        assert_eq!(asg.members(1), &[3, 4]);
    }

    #[test]
    fn single_segment_has_no_boundaries() {
        let ds = dataset_with_attrs(&[vec![4.0], vec![1.0], vec![9.0]]);
        let grid = build_grid(&ds, &[0], &[1]).unwrap();
        assert!(grid.boundaries()[0].is_empty());
        let asg = assign_cells(&ds, &grid).unwrap();
        assert_eq!(asg.members(0), &[0, 1, 2]);
    }

    #[test]
    fn empty_dataset_rejected() {
        let ds = Dataset::new(1, 1, vec![], vec![]).unwrap();
        assert!(matches!(build_grid(&ds, &[0], &[2]), Err(Error::EmptyDataset)));
    }

    #[test]
    fn one_attribute_two_cells() {
        let ds = dataset_with_attrs(&[vec![3.0], vec![1.0], vec![4.0], vec![2.0]]);
        let grid = build_grid(&ds, &[0], &[2]).unwrap();
        let asg = assign_cells(&ds, &grid).unwrap();
        assert_eq!(asg.members(0), &[1, 3]);
        assert_eq!(asg.members(1), &[0, 2]);
    }

    #[test]
    fn toy_ten_object_grid() {
        let ds = toy_ten();
        let (grid, asg) = partition(
            &ds,
            &GridParams {
                attributes: Some(vec![0, 1]),
                segments: Some(vec![2, 2]),
                ..GridParams::default()
            },
        )
        .unwrap();
        assert_eq!(grid.num_cells(), 4);
        assert_eq!(grid.segment_ranges()[0], vec![(1.0, 2.0), (3.0, 5.0)]);
        assert_eq!(grid.segment_ranges()[1], vec![(1.0, 2.0), (3.0, 5.0)]);
        // Object 3 has attributes (2, 4): low segment on a_1, high on a_2.
        assert_eq!(grid.cell_coordinates(asg.cell_of(3)), vec![0, 1]);
        assert_eq!(asg.cell_sizes().iter().sum::<usize>(), 10);
    }

    #[test]
    fn identical_attributes_share_one_cell() {
        let ds = dataset_with_attrs(&vec![vec![5.0, 5.0]; 8]);
        let grid = build_grid(&ds, &[0, 1], &[2, 2]).unwrap();
        let asg = assign_cells(&ds, &grid).unwrap();
        // Position-based cuts split ties, but every cell spans the single value.
        assert_eq!(asg.cell_sizes().iter().sum::<usize>(), 8);
        for c in 0..4 {
            for &(lo, hi) in asg.cell_bounds(c) {
                assert_eq!((lo, hi), (5.0, 5.0));
            }
        }
    }

    #[test]
    fn intersecting_cells_examples() {
        let ds = toy_ten();
        let grid = build_grid(&ds, &[0, 1], &[2, 2]).unwrap();
        let full = RangeQuery::new(
            vec![0.0; 2],
            vec![Predicate::new(0, 0.0, 10.0), Predicate::new(1, 0.0, 10.0)],
            1,
        );
        assert_eq!(cells_intersecting(&grid, &full), vec![0, 1, 2, 3]);
        let point = RangeQuery::new(
            vec![0.0; 2],
            vec![Predicate::new(0, 2.0, 2.0), Predicate::new(1, 4.0, 4.0)],
            1,
        );
        assert_eq!(cells_intersecting(&grid, &point), vec![grid.cell_id(&[0, 1])]);
        let none = RangeQuery::unfiltered(vec![0.0; 2], 1);
        assert_eq!(cells_intersecting(&grid, &none).len(), 4);

        let rows: Vec<_> = (0..20)
            .map(|i| (vec![0.0f32], vec![i as f64, (i * 7 % 5) as f64]))
            .collect();
        let ds = Dataset::from_rows(&rows).unwrap();
        let grid = build_grid(&ds, &[0], &[4]).unwrap();
        let other_only = RangeQuery::new(vec![0.0], vec![Predicate::new(1, 0.0, 0.0)], 1);
        assert_eq!(cells_intersecting(&grid, &other_only), vec![0, 1, 2, 3]);
    }

    fn arb_dataset() -> impl Strategy<Value = Dataset> {
        (1usize..120, 1usize..4, 1u32..30).prop_flat_map(|(n, m, distinct)| {
            prop::collection::vec(prop::collection::vec(0..distinct, m), n).prop_map(move |rows| {
                let rows: Vec<_> = rows
                    .into_iter()
                    .map(|r| (vec![0.0f32], r.into_iter().map(f64::from).collect()))
                    .collect();
                Dataset::from_rows(&rows).unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn partition_invariants(ds in arb_dataset(), s in 1usize..7, lo in 0u32..30, w in 0u32..30) {
            let m = ds.num_attributes();
            let attrs: Vec<usize> = (0..m.min(2)).collect();
            let segs = vec![s; attrs.len()];
            let grid = build_grid(&ds, &attrs, &segs).unwrap();
            let asg = assign_cells(&ds, &grid).unwrap();
            let n = ds.len();

            // Disjoint cover.
            prop_assert_eq!(asg.cell_sizes().iter().sum::<usize>(), n);
            for c in 0..grid.num_cells() {
                for (pos, &id) in asg.members(c).iter().enumerate() {
                    prop_assert_eq!(asg.cell_of(id), c);
                    prop_assert_eq!(asg.position(id), pos);
                }
            }

            // Marginal quantile balance and non-decreasing boundaries.
            for (axis, &segments) in segs.iter().enumerate() {
                let mut sizes = vec![0usize; segments];
                for id in 0..n as u32 {
                    sizes[grid.cell_coordinates(asg.cell_of(id))[axis]] += 1;
                }
                for &sz in &sizes {
                    prop_assert!(sz == n / segments || sz == n.div_ceil(segments));
                }
                prop_assert!(grid.boundaries()[axis].windows(2).all(|w| w[0] <= w[1]));
            }

            // Pruning never drops a cell holding a matching record.
            let q = RangeQuery::new(
                vec![0.0],
                vec![Predicate::new(0, lo as f64, (lo + w) as f64)],
                1,
            );
            let selected = cells_intersecting(&grid, &q);
            for r in ds.records() {
                if q.matches(r.attributes) {
                    prop_assert!(selected.contains(&asg.cell_of(r.id)));
                }
            }

            // Determinism.
            let again = assign_cells(&ds, &build_grid(&ds, &attrs, &segs).unwrap()).unwrap();
            prop_assert_eq!(again, asg);
        }
    }
}
