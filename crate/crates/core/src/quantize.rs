//! Per-dimension affine 8-bit scalar quantization.

use crate::model::{Dataset, Metric, LANES};

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarQuantizer {
    mins: Vec<f32>,
    /// Step per code unit; zero for constant dimensions.
    scales: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedVectors {
    quantizer: ScalarQuantizer,
    dim: usize,
    codes: Vec<u8>,
}

impl ScalarQuantizer {
    pub fn fit(dataset: &Dataset) -> Self {
        let dim = dataset.dim();
        let mut mins = vec![f32::INFINITY; dim];
        let mut maxs = vec![f32::NEG_INFINITY; dim];
        for i in 0..dataset.len() {
            for (j, &v) in dataset.vector(i).iter().enumerate() {
                mins[j] = mins[j].min(v);
                maxs[j] = maxs[j].max(v);
            }
        }
        if dataset.is_empty() {
            mins.fill(0.0);
            maxs.fill(0.0);
        }
        let scales = mins
            .iter()
            .zip(&maxs)
            .map(|(lo, hi)| if hi > lo { (hi - lo) / 255.0 } else { 0.0 })
            .collect();
        Self { mins, scales }
    }

    pub fn from_parts(mins: Vec<f32>, scales: Vec<f32>) -> Self {
        Self { mins, scales }
    }

    pub fn dim(&self) -> usize {
        self.mins.len()
    }

    pub fn mins(&self) -> &[f32] {
        &self.mins
    }

    pub fn scales(&self) -> &[f32] {
        &self.scales
    }

    pub fn encode_into(&self, v: &[f32], out: &mut [u8]) {
        for (j, (&x, o)) in v.iter().zip(out.iter_mut()).enumerate() {
            let s = self.scales[j];
            *o = if s == 0.0 {
                0
            } else {
                ((x - self.mins[j]) / s).round().clamp(0.0, 255.0) as u8
            };
        }
    }

    pub fn decode(&self, code: &[u8]) -> Vec<f32> {
        code.iter()
            .enumerate()
            .map(|(j, &c)| self.mins[j] + c as f32 * self.scales[j])
            .collect()
    }
}

impl QuantizedVectors {
    pub fn encode(dataset: &Dataset) -> Self {
        let quantizer = ScalarQuantizer::fit(dataset);
        let dim = dataset.dim();
        let mut codes = vec![0u8; dataset.len() * dim];
        for (i, out) in codes.chunks_exact_mut(dim).enumerate() {
            quantizer.encode_into(dataset.vector(i), out);
        }
        Self {
            quantizer,
            dim,
            codes,
        }
    }

    pub fn from_parts(quantizer: ScalarQuantizer, codes: Vec<u8>) -> Self {
        let dim = quantizer.dim();
        Self {
            quantizer,
            dim,
            codes,
        }
    }

    pub fn quantizer(&self) -> &ScalarQuantizer {
        &self.quantizer
    }

    pub fn len(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.codes.len() / self.dim
        }
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn code(&self, id: u32) -> &[u8] {
        let i = id as usize;
        &self.codes[i * self.dim..(i + 1) * self.dim]
    }

    pub fn codes(&self) -> &[u8] {
        &self.codes
    }

    /// Squared euclidean distance between two stored codes.
    pub fn code_distance(&self, a: u32, b: u32) -> f32 {
        let (ca, cb) = (self.code(a), self.code(b));
        let mut acc = [0.0f32; LANES];
        let mut tail = 0.0f32;
        let full = self.dim / LANES * LANES;
        for base in (0..full).step_by(LANES) {
            for lane in 0..LANES {
                let j = base + lane;
                let d = (ca[j] as f32 - cb[j] as f32) * self.quantizer.scales[j];
                acc[lane] += d * d;
            }
        }
        for j in full..self.dim {
            let d = (ca[j] as f32 - cb[j] as f32) * self.quantizer.scales[j];
            tail += d * d;
        }
        ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
    }

    /// Precomputes per-query state for query-to-code distances.
    pub fn query<'a>(&'a self, q: &'a [f32], metric: Metric) -> CodeDistance<'a> {
        CodeDistance {
            codes: self,
            query: q,
            metric,
        }
    }
}

/// Distance from one full-precision query to stored codes, decoding on the fly.
#[derive(Clone, Copy)]
pub struct CodeDistance<'a> {
    codes: &'a QuantizedVectors,
    query: &'a [f32],
    metric: Metric,
}

impl CodeDistance<'_> {
    #[inline]
    pub fn distance(&self, id: u32) -> f32 {
        let code = self.codes.code(id);
        let q = self.query;
        let mins = &self.codes.quantizer.mins;
        let scales = &self.codes.quantizer.scales;
        let dim = q.len();
        let full = dim / LANES * LANES;
        let mut acc = [0.0f32; LANES];
        let mut tail = 0.0f32;
        match self.metric {
            Metric::SquaredEuclidean => {
                for base in (0..full).step_by(LANES) {
                    for lane in 0..LANES {
                        let j = base + lane;
                        let d = q[j] - (mins[j] + code[j] as f32 * scales[j]);
                        acc[lane] += d * d;
                    }
                }
                for j in full..dim {
                    let d = q[j] - (mins[j] + code[j] as f32 * scales[j]);
                    tail += d * d;
                }
            }
            Metric::InnerProductNegated => {
                for base in (0..full).step_by(LANES) {
                    for lane in 0..LANES {
                        let j = base + lane;
                        acc[lane] -= q[j] * (mins[j] + code[j] as f32 * scales[j]);
                    }
                }
                for j in full..dim {
                    tail -= q[j] * (mins[j] + code[j] as f32 * scales[j]);
                }
            }
        }
        ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
    }
}
