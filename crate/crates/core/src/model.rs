//! Records, range predicates and the distance kernel shared by every other module.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lane width of the blocked distance kernels. Summation order is fixed per
/// lane and the lanes are reduced pairwise, so a given pair of inputs always
/// produces the same bits regardless of call site.
pub const LANES: usize = 8;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    #[default]
    SquaredEuclidean,
    /// Negated inner product, so smaller is still closer.
    InnerProductNegated,
}

impl Metric {
    #[inline]
    pub fn distance(self, x: &[f32], y: &[f32]) -> f32 {
        match self {
            Metric::SquaredEuclidean => squared_euclidean(x, y),
            Metric::InnerProductNegated => -inner_product(x, y),
        }
    }

    pub(crate) fn code(self) -> u32 {
        match self {
            Metric::SquaredEuclidean => 0,
            Metric::InnerProductNegated => 1,
        }
    }

    pub(crate) fn from_code(code: u32) -> Result<Self> {
        match code {
            0 => Ok(Metric::SquaredEuclidean),
            1 => Ok(Metric::InnerProductNegated),
            other => Err(Error::Corrupt(format!("unknown metric code {other}"))),
        }
    }
}

#[inline]
fn reduce_lanes(acc: [f32; LANES]) -> f32 {
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]))
}

#[inline]
pub fn squared_euclidean(x: &[f32], y: &[f32]) -> f32 {
    debug_assert_eq!(x.len(), y.len());
    let mut acc = [0.0f32; LANES];
    let xs = x.chunks_exact(LANES);
    let ys = y.chunks_exact(LANES);
    let (xr, yr) = (xs.remainder(), ys.remainder());
    for (a, b) in xs.zip(ys) {
        for lane in 0..LANES {
            let d = a[lane] - b[lane];
            acc[lane] += d * d;
        }
    }
    let mut tail = 0.0f32;
    for (a, b) in xr.iter().zip(yr) {
        let d = a - b;
        tail += d * d;
    }
    reduce_lanes(acc) + tail
}

#[inline]
pub fn inner_product(x: &[f32], y: &[f32]) -> f32 {
    debug_assert_eq!(x.len(), y.len());
    let mut acc = [0.0f32; LANES];
    let xs = x.chunks_exact(LANES);
    let ys = y.chunks_exact(LANES);
    let (xr, yr) = (xs.remainder(), ys.remainder());
    for (a, b) in xs.zip(ys) {
        for lane in 0..LANES {
            acc[lane] += a[lane] * b[lane];
        }
    }
    let mut tail = 0.0f32;
    for (a, b) in xr.iter().zip(yr) {
        tail += a * b;
    }
    reduce_lanes(acc) + tail
}

/// Checked distance between two vectors.
pub fn distance(x: &[f32], y: &[f32], metric: Metric) -> Result<f32> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            actual: y.len(),
        });
    }
    Ok(metric.distance(x, y))
}

/// Borrowed view of one row of a [`Dataset`].
#[derive(Debug, Clone, Copy)]
pub struct VectorRecord<'a> {
    pub id: u32,
    pub vector: &'a [f32],
    pub attributes: &'a [f64],
}

/// Dense row-major storage of `n` vectors and their numeric attributes.
///
/// Record ids are the row indexes `0..n`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    dim: usize,
    num_attributes: usize,
    vectors: Vec<f32>,
    attributes: Vec<f64>,
}

impl Dataset {
    pub fn new(
        dim: usize,
        num_attributes: usize,
        vectors: Vec<f32>,
        attributes: Vec<f64>,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("vector dimension must be positive"));
        }
        if vectors.len() % dim != 0 {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: vectors.len() % dim,
            });
        }
        let n = vectors.len() / dim;
        if attributes.len() != n * num_attributes {
            return Err(Error::invalid(format!(
                "expected {} attribute values for {n} records, got {}",
                n * num_attributes,
                attributes.len()
            )));
        }
        if vectors.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("vectors must be finite"));
        }
        if attributes.iter().any(|a| !a.is_finite()) {
            return Err(Error::invalid("attributes must be finite"));
        }
        if n > u32::MAX as usize {
            return Err(Error::invalid("too many records for 32-bit ids"));
        }
        Ok(Self {
            dim,
            num_attributes,
            vectors,
            attributes,
        })
    }

    pub fn from_rows(rows: &[(Vec<f32>, Vec<f64>)]) -> Result<Self> {
        let Some((v0, a0)) = rows.first() else {
            return Err(Error::EmptyDataset);
        };
        let (dim, m) = (v0.len(), a0.len());
        let mut vectors = Vec::with_capacity(rows.len() * dim);
        let mut attributes = Vec::with_capacity(rows.len() * m);
        for (v, a) in rows {
            if v.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: v.len(),
                });
            }
            if a.len() != m {
                return Err(Error::invalid("inconsistent attribute count"));
            }
            vectors.extend_from_slice(v);
            attributes.extend_from_slice(a);
        }
        Self::new(dim, m, vectors, attributes)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.vectors.len() / self.dim
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn num_attributes(&self) -> usize {
        self.num_attributes
    }

    #[inline]
    pub fn vector(&self, id: usize) -> &[f32] {
        &self.vectors[id * self.dim..(id + 1) * self.dim]
    }

    #[inline]
    pub fn attributes(&self, id: usize) -> &[f64] {
        let m = self.num_attributes;
        &self.attributes[id * m..(id + 1) * m]
    }

    #[inline]
    pub fn attribute(&self, id: usize, attribute: usize) -> f64 {
        self.attributes[id * self.num_attributes + attribute]
    }

    pub fn record(&self, id: usize) -> VectorRecord<'_> {
        VectorRecord {
            id: id as u32,
            vector: self.vector(id),
            attributes: self.attributes(id),
        }
    }

    pub fn records(&self) -> impl Iterator<Item = VectorRecord<'_>> + '_ {
        (0..self.len()).map(|i| self.record(i))
    }

    pub fn attribute_column(&self, attribute: usize) -> Vec<f64> {
        (0..self.len())
            .map(|i| self.attribute(i, attribute))
            .collect()
    }

    pub fn raw_vectors(&self) -> &[f32] {
        &self.vectors
    }

    pub fn raw_attributes(&self) -> &[f64] {
        &self.attributes
    }
}

/// Closed interval `low <= a[attribute] <= high`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Predicate {
    #[serde(rename = "attr")]
    pub attribute: usize,
    pub low: f64,
    pub high: f64,
}

impl Predicate {
    pub fn new(attribute: usize, low: f64, high: f64) -> Self {
        Self {
            attribute,
            low,
            high,
        }
    }

    #[inline]
    pub fn contains(&self, value: f64) -> bool {
        self.low <= value && value <= self.high
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RangeQuery {
    #[serde(rename = "q")]
    pub vector: Vec<f32>,
    #[serde(rename = "filters", default)]
    pub predicates: Vec<Predicate>,
    pub k: usize,
}

impl RangeQuery {
    pub fn new(vector: Vec<f32>, predicates: Vec<Predicate>, k: usize) -> Self {
        Self {
            vector,
            predicates,
            k,
        }
    }

    pub fn unfiltered(vector: Vec<f32>, k: usize) -> Self {
        Self::new(vector, Vec::new(), k)
    }

    /// True when every predicate holds; vacuously true with no predicates.
    #[inline]
    pub fn matches(&self, attributes: &[f64]) -> bool {
        self.predicates
            .iter()
            .all(|p| p.contains(attributes[p.attribute]))
    }

    pub fn validate(&self, dim: usize, num_attributes: usize) -> Result<()> {
        if self.vector.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: self.vector.len(),
            });
        }
        if self.k == 0 {
            return Err(Error::InvalidQuery("k must be positive".into()));
        }
        if self.vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidQuery("query vector must be finite".into()));
        }
        let mut seen = vec![false; num_attributes];
        for p in &self.predicates {
            if p.attribute >= num_attributes {
                return Err(Error::InvalidQuery(format!(
                    "attribute {} out of range (m = {num_attributes})",
                    p.attribute
                )));
            }
            if std::mem::replace(&mut seen[p.attribute], true) {
                return Err(Error::InvalidQuery(format!(
                    "duplicate predicate on attribute {}",
                    p.attribute
                )));
            }
            if p.low.is_nan() || p.high.is_nan() || p.low > p.high {
                return Err(Error::InvalidQuery(format!(
                    "empty interval [{}, {}] on attribute {}",
                    p.low, p.high, p.attribute
                )));
            }
        }
        Ok(())
    }
}

pub fn satisfies(record: &VectorRecord<'_>, query: &RangeQuery) -> bool {
    query.matches(record.attributes)
}

/// A search hit: record id plus its distance to the query.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub id: u32,
    pub distance: f32,
}

impl Neighbor {
    /// Ascending by distance, then by id.
    #[inline]
    pub fn cmp_by_distance(&self, other: &Self) -> std::cmp::Ordering {
        self.distance
            .total_cmp(&other.distance)
            .then(self.id.cmp(&other.id))
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn distance_trivial_cases() {
        let m = Metric::SquaredEuclidean;
        assert_eq!(distance(&[0.0, 0.0], &[0.0, 0.0], m).unwrap(), 0.0);
        assert_eq!(distance(&[1.0, 2.0], &[4.0, 6.0], m).unwrap(), 25.0);
    }

    #[test]
    fn distance_dimension_mismatch_is_an_error() {
        let err = distance(&[1.0], &[1.0, 2.0], Metric::SquaredEuclidean).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { .. }));
    }

    #[test]
    fn distance_matches_naive_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let x: Vec<f32> = (0..16).map(|_| rng.random_range(-10.0..10.0)).collect();
            let y: Vec<f32> = (0..16).map(|_| rng.random_range(-10.0..10.0)).collect();
            let naive: f64 = x
                .iter()
                .zip(&y)
                .map(|(a, b)| (*a as f64 - *b as f64).powi(2))
                .sum();
            let got = squared_euclidean(&x, &y) as f64;
            assert!((got - naive).abs() <= 1e-5 * naive.max(1e-12), "{got} vs {naive}");

            let ip_naive: f64 = x.iter().zip(&y).map(|(a, b)| *a as f64 * *b as f64).sum();
            let ip = Metric::InnerProductNegated.distance(&x, &y) as f64;
            assert!((ip + ip_naive).abs() <= 1e-4 * ip_naive.abs().max(1.0));
        }
    }

    #[test]
    fn satisfies_examples() {
        let attrs = [3.0, 5.0];
        let rec = VectorRecord {
            id: 0,
            vector: &[0.0],
            attributes: &attrs,
        };
        let q = |preds: Vec<Predicate>| RangeQuery::new(vec![0.0], preds, 1);
        assert!(satisfies(&rec, &q(vec![Predicate::new(0, 1.0, 4.0)])));
        assert!(!satisfies(
            &rec,
            &q(vec![Predicate::new(0, 1.0, 4.0), Predicate::new(1, 6.0, 9.0)])
        ));
        let two = [2.0, 2.0];
        let rec2 = VectorRecord {
            attributes: &two,
            ..rec
        };
        assert!(satisfies(&rec2, &q(vec![Predicate::new(0, 2.0, 2.0)])));
        assert!(satisfies(&rec2, &q(vec![])));
    }

    #[test]
    fn query_validation() {
        let ok = RangeQuery::new(vec![0.0; 2], vec![Predicate::new(1, 0.0, 1.0)], 3);
        ok.validate(2, 2).unwrap();
        assert!(ok.validate(3, 2).is_err());
        assert!(ok.validate(2, 1).is_err());
        let inverted = RangeQuery::new(vec![0.0; 2], vec![Predicate::new(0, 2.0, 1.0)], 1);
        assert!(inverted.validate(2, 2).is_err());
        let dup = RangeQuery::new(
            vec![0.0; 2],
            vec![Predicate::new(0, 0.0, 1.0), Predicate::new(0, 0.0, 2.0)],
            1,
        );
        assert!(dup.validate(2, 2).is_err());
    }

    #[test]
    fn query_json_shape() {
        let q: RangeQuery =
            serde_json::from_str(r#"{"q":[1.0,2.0],"filters":[{"attr":0,"low":1,"high":4}],"k":5}"#)
                .unwrap();
        assert_eq!(q.predicates[0], Predicate::new(0, 1.0, 4.0));
        assert_eq!(q.k, 5);
    }

    #[test]
    fn dataset_rejects_ragged_input() {
        assert!(Dataset::new(3, 1, vec![0.0; 7], vec![0.0; 2]).is_err());
        assert!(Dataset::new(2, 1, vec![0.0; 4], vec![0.0; 3]).is_err());
        assert!(Dataset::new(1, 0, vec![f32::NAN], vec![]).is_err());
    }

    proptest! {
        #[test]
        fn distance_is_symmetric_and_non_negative(
            x in prop::collection::vec(-1e3f32..1e3, 1..40),
            seed in any::<u64>(),
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let y: Vec<f32> = x.iter().map(|_| rng.random_range(-1e3f32..1e3)).collect();
            let a = squared_euclidean(&x, &y);
            let b = squared_euclidean(&y, &x);
            prop_assert_eq!(a.to_bits(), b.to_bits());
            prop_assert!(a >= 0.0);
            prop_assert_eq!(squared_euclidean(&x, &x), 0.0);
        }

        #[test]
        fn widening_a_predicate_never_rejects(
            value in -100.0f64..100.0,
            low in -100.0f64..100.0,
            width in 0.0f64..50.0,
            grow_low in 0.0f64..20.0,
            grow_high in 0.0f64..20.0,
        ) {
            let attrs = [value];
            let rec = VectorRecord { id: 0, vector: &[], attributes: &attrs };
            let narrow = RangeQuery::new(vec![], vec![Predicate::new(0, low, low + width)], 1);
            let wide = RangeQuery::new(
                vec![],
                vec![Predicate::new(0, low - grow_low, low + width + grow_high)],
                1,
            );
            prop_assert!(!satisfies(&rec, &narrow) || satisfies(&rec, &wide));
        }
    }
}
