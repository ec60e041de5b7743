//! Binary index file: a fixed header, a section table, then little-endian
//! sections. Sections can be read independently with positioned reads, which
//! is what the out-of-core loader does per cell.
//!
//! ```text
//! magic "GMG1" | version u32 | n u64 | dim u32 | m u32 | p u32 | S u32
//! | d u32 | l u32 | seed u64 | metric u32 | section_count u32
//! section table: (kind u32, index u32, offset u64, len u64) * section_count
//! ```

use std::fs::File;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::graph::{BuildParams, InterBlock, InterCellEdges, IntraCellGraph};
use crate::grid::{CellAssignment, GridSpec};
use crate::histogram::ClusterHistogram;
use crate::index::GmgIndex;
use crate::model::{Dataset, Metric};
use crate::quantize::{QuantizedVectors, ScalarQuantizer};

pub const MAGIC: [u8; 4] = *b"GMG1";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 8 + 4 * 6 + 8 + 4 + 4;
const ENTRY_LEN: usize = 4 + 4 + 8 + 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u32)]
pub enum SectionKind {
    Params = 1,
    Grid = 2,
    Assignment = 3,
    Intra = 4,
    Inter = 5,
    Histogram = 6,
    Codes = 7,
    Attributes = 8,
    Vectors = 9,
}

impl SectionKind {
    fn from_u32(v: u32) -> Result<Self> {
        Ok(match v {
            1 => Self::Params,
            2 => Self::Grid,
            3 => Self::Assignment,
            4 => Self::Intra,
            5 => Self::Inter,
            6 => Self::Histogram,
            7 => Self::Codes,
            8 => Self::Attributes,
            9 => Self::Vectors,
            _ => return Err(Error::Corrupt(format!("unknown section kind {v}"))),
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Params => "params",
            Self::Grid => "grid",
            Self::Assignment => "assignment",
            Self::Intra => "intra",
            Self::Inter => "inter",
            Self::Histogram => "histogram",
            Self::Codes => "codes",
            Self::Attributes => "attributes",
            Self::Vectors => "vectors",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SectionEntry {
    pub kind: SectionKind,
    pub index: u32,
    pub offset: u64,
    pub len: u64,
}

impl SectionEntry {
    fn label(&self) -> String {
        match self.kind {
            SectionKind::Intra | SectionKind::Inter => format!("{}[{}]", self.kind.name(), self.index),
            k => k.name().to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Header {
    pub n: u64,
    pub dim: u32,
    pub num_attributes: u32,
    pub partition_attributes: u32,
    pub num_cells: u32,
    pub intra_degree: u32,
    pub inter_degree: u32,
    pub seed: u64,
    pub metric: Metric,
}

#[derive(Default)]
struct Buf(Vec<u8>);

impl Buf {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u32s(&mut self, v: &[u32]) {
        v.iter().for_each(|&x| self.u32(x));
    }
    fn f32s(&mut self, v: &[f32]) {
        v.iter().for_each(|x| self.0.extend_from_slice(&x.to_le_bytes()));
    }
    fn f64s(&mut self, v: &[f64]) {
        v.iter().for_each(|x| self.0.extend_from_slice(&x.to_le_bytes()));
    }
}

/// Cursor over one section's bytes; every short read names the section.
pub(crate) struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    section: String,
}

impl<'a> Cursor<'a> {
    pub(crate) fn new(bytes: &'a [u8], section: impl Into<String>) -> Self {
        Self {
            bytes,
            pos: 0,
            section: section.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Truncated {
                section: self.section.clone(),
            }),
        }
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub(crate) fn len(&mut self, elem: usize) -> Result<usize> {
        let n = self.u64()? as usize;
        if n.checked_mul(elem).is_none_or(|b| b > self.bytes.len() - self.pos) {
            return Err(Error::Truncated {
                section: self.section.clone(),
            });
        }
        Ok(n)
    }

    pub(crate) fn u32s(&mut self, n: usize) -> Result<Vec<u32>> {
        Ok(self
            .take(n.checked_mul(4).ok_or_else(|| self.truncated())?)?
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }

    pub(crate) fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        Ok(self
            .take(n.checked_mul(4).ok_or_else(|| self.truncated())?)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }

    pub(crate) fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        Ok(self
            .take(n.checked_mul(8).ok_or_else(|| self.truncated())?)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    pub(crate) fn bytes(&mut self, n: usize) -> Result<Vec<u8>> {
        Ok(self.take(n)?.to_vec())
    }

    fn truncated(&self) -> Error {
        Error::Truncated {
            section: self.section.clone(),
        }
    }

    pub(crate) fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::Corrupt(format!("trailing bytes in section {}", self.section)));
        }
        Ok(())
    }
}

fn encode_grid(grid: &GridSpec) -> Vec<u8> {
    let mut b = Buf::default();
    b.u64(grid.n() as u64);
    b.u32(grid.attributes().len() as u32);
    for axis in 0..grid.attributes().len() {
        b.u32(grid.attributes()[axis] as u32);
        b.u32(grid.segments()[axis] as u32);
        b.f64s(&grid.boundaries()[axis]);
        for &(lo, hi) in &grid.segment_ranges()[axis] {
            b.f64s(&[lo, hi]);
        }
    }
    b.0
}

fn decode_grid(bytes: &[u8]) -> Result<GridSpec> {
    let mut c = Cursor::new(bytes, "grid");
    let n = c.u64()? as usize;
    let p = c.u32()? as usize;
    let (mut attrs, mut segs, mut bounds, mut ranges) = (vec![], vec![], vec![], vec![]);
    for _ in 0..p {
        attrs.push(c.u32()? as usize);
        let s = c.u32()? as usize;
        segs.push(s);
        bounds.push(c.f64s(s.saturating_sub(1))?);
        let r = c.f64s(2 * s)?;
        ranges.push(r.chunks_exact(2).map(|x| (x[0], x[1])).collect());
    }
    c.finish()?;
    GridSpec::from_parts(n, attrs, segs, bounds, ranges)
}

pub(crate) fn encode_intra(g: &IntraCellGraph) -> Vec<u8> {
    let mut b = Buf::default();
    b.u32(g.degree() as u32);
    b.u64(g.num_nodes() as u64);
    b.u32s(g.adjacency());
    b.0
}

pub(crate) fn decode_intra(bytes: &[u8], label: &str) -> Result<IntraCellGraph> {
    let mut c = Cursor::new(bytes, label);
    let degree = c.u32()? as usize;
    let count = c.u64()? as usize;
    let adj = c.u32s(count.checked_mul(degree).ok_or_else(|| c.truncated())?)?;
    c.finish()?;
    IntraCellGraph::from_parts(degree, adj)
}

pub(crate) fn encode_inter(block: &InterBlock) -> Vec<u8> {
    let mut b = Buf::default();
    b.u32(block.counts().len() as u32);
    b.u32s(block.counts());
    b.u64(block.edges().len() as u64);
    b.u32s(block.edges());
    b.0
}

pub(crate) fn decode_inter(bytes: &[u8], label: &str) -> Result<InterBlock> {
    let mut c = Cursor::new(bytes, label);
    let s = c.u32()? as usize;
    let counts = c.u32s(s)?;
    let e = c.len(4)?;
    let edges = c.u32s(e)?;
    c.finish()?;
    InterBlock::from_parts(counts, edges)
}

fn encode_histogram(h: &ClusterHistogram) -> Vec<u8> {
    let mut b = Buf::default();
    b.u32(h.dim() as u32);
    b.u32(h.num_cells() as u32);
    b.u32(h.top_m() as u32);
    b.u32(h.num_clusters() as u32);
    b.f32s(h.centroids());
    b.u32s(h.counts());
    b.0
}

fn decode_histogram(bytes: &[u8]) -> Result<ClusterHistogram> {
    let mut c = Cursor::new(bytes, "histogram");
    let dim = c.u32()? as usize;
    let s = c.u32()? as usize;
    let top_m = c.u32()? as usize;
    let kc = c.u32()? as usize;
    let centroids = c.f32s(kc * dim)?;
    let counts = c.u32s(kc * s)?;
    c.finish()?;
    ClusterHistogram::from_parts(dim, s, top_m, centroids, counts)
}

fn encode_codes(q: &QuantizedVectors) -> Vec<u8> {
    let mut b = Buf::default();
    b.u32(q.dim() as u32);
    b.f32s(q.quantizer().mins());
    b.f32s(q.quantizer().scales());
    b.u64(q.codes().len() as u64);
    b.0.extend_from_slice(q.codes());
    b.0
}

fn decode_codes(bytes: &[u8]) -> Result<QuantizedVectors> {
    let mut c = Cursor::new(bytes, "codes");
    let dim = c.u32()? as usize;
    let mins = c.f32s(dim)?;
    let scales = c.f32s(dim)?;
    let len = c.len(1)?;
    let codes = c.bytes(len)?;
    c.finish()?;
    if dim == 0 || codes.len() % dim != 0 {
        return Err(Error::Corrupt("code array is not a multiple of dim".into()));
    }
    Ok(QuantizedVectors::from_parts(ScalarQuantizer::from_parts(mins, scales), codes))
}

/// Serializes the full index.
pub fn write_index_to<W: Write>(index: &GmgIndex, mut w: W) -> Result<()> {
    let ds = index.dataset();
    let s = index.num_cells();
    let mut sections: Vec<(SectionKind, u32, Vec<u8>)> = Vec::with_capacity(2 * s + 8);
    sections.push((SectionKind::Params, 0, serde_json::to_vec(index.params())?));
    sections.push((SectionKind::Grid, 0, encode_grid(index.grid())));
    let mut a = Buf::default();
    a.u32s(index.assignment().cell_map());
    sections.push((SectionKind::Assignment, 0, a.0));
    for (c, g) in index.intra_graphs().iter().enumerate() {
        sections.push((SectionKind::Intra, c as u32, encode_intra(g)));
    }
    for (c, blk) in index.inter_edges().blocks().iter().enumerate() {
        sections.push((SectionKind::Inter, c as u32, encode_inter(blk)));
    }
    sections.push((SectionKind::Histogram, 0, encode_histogram(index.histogram())));
    sections.push((SectionKind::Codes, 0, encode_codes(index.codes())));
    let mut at = Buf::default();
    at.f64s(ds.raw_attributes());
    sections.push((SectionKind::Attributes, 0, at.0));
    let mut v = Buf::default();
    v.f32s(ds.raw_vectors());
    sections.push((SectionKind::Vectors, 0, v.0));

    let p = index.params();
    let mut h = Buf::default();
    h.0.extend_from_slice(&MAGIC);
    h.u32(VERSION);
    h.u64(ds.len() as u64);
    h.u32(ds.dim() as u32);
    h.u32(ds.num_attributes() as u32);
    h.u32(index.grid().attributes().len() as u32);
    h.u32(s as u32);
    h.u32(p.intra_degree as u32);
    h.u32(p.inter_degree as u32);
    h.u64(p.seed);
    h.u32(p.metric.code());
    h.u32(sections.len() as u32);
    let mut offset = (HEADER_LEN + ENTRY_LEN * sections.len()) as u64;
    for (kind, idx, bytes) in &sections {
        h.u32(*kind as u32);
        h.u32(*idx);
        h.u64(offset);
        h.u64(bytes.len() as u64);
        offset += bytes.len() as u64;
    }
    w.write_all(&h.0)?;
    for (_, _, bytes) in &sections {
        w.write_all(bytes)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_index(index: &GmgIndex, path: impl AsRef<Path>) -> Result<()> {
    let f = File::create(path)?;
    write_index_to(index, std::io::BufWriter::new(f))
}

pub fn load_index(path: impl AsRef<Path>) -> Result<GmgIndex> {
    IndexFile::open(path)?.load()
}

/// Reads a whole index from bytes.
pub fn read_index_bytes(bytes: &[u8]) -> Result<GmgIndex> {
    let (header, table) = parse_head(bytes, bytes.len() as u64)?;
    let src = |e: &SectionEntry| -> Result<Vec<u8>> {
        Ok(bytes[e.offset as usize..(e.offset + e.len) as usize].to_vec())
    };
    assemble(&header, &table, src)
}

fn parse_head(bytes: &[u8], file_len: u64) -> Result<(Header, Vec<SectionEntry>)> {
    if bytes.len() < 4 {
        return Err(Error::Truncated {
            section: "header".into(),
        });
    }
    let found: [u8; 4] = bytes[..4].try_into().expect("4 bytes");
    if found != MAGIC {
        return Err(Error::BadMagic { found });
    }
    let mut c = Cursor::new(bytes, "header");
    c.take(4)?;
    let version = c.u32()?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let header = Header {
        n: c.u64()?,
        dim: c.u32()?,
        num_attributes: c.u32()?,
        partition_attributes: c.u32()?,
        num_cells: c.u32()?,
        intra_degree: c.u32()?,
        inter_degree: c.u32()?,
        seed: c.u64()?,
        metric: Metric::from_code(c.u32()?)?,
    };
    let count = c.u32()? as usize;
    let mut c = Cursor::new(&bytes[HEADER_LEN.min(bytes.len())..], "section table");
    let mut table = Vec::with_capacity(count.min(1 << 20));
    for _ in 0..count {
        let e = SectionEntry {
            kind: SectionKind::from_u32(c.u32()?)?,
            index: c.u32()?,
            offset: c.u64()?,
            len: c.u64()?,
        };
        if e.offset.checked_add(e.len).is_none_or(|end| end > file_len) {
            return Err(Error::Truncated { section: e.label() });
        }
        table.push(e);
    }
    Ok((header, table))
}

fn assemble(
    header: &Header,
    table: &[SectionEntry],
    read: impl Fn(&SectionEntry) -> Result<Vec<u8>>,
) -> Result<GmgIndex> {
    let find = |kind: SectionKind, index: u32| -> Result<&SectionEntry> {
        table
            .iter()
            .find(|e| e.kind == kind && e.index == index)
            .ok_or_else(|| Error::Corrupt(format!("missing section {}[{index}]", kind.name())))
    };
    let n = header.n as usize;
    let dim = header.dim as usize;
    let m = header.num_attributes as usize;
    let s = header.num_cells as usize;

    let build: BuildParams = serde_json::from_slice(&read(find(SectionKind::Params, 0)?)?)?;
    let grid = decode_grid(&read(find(SectionKind::Grid, 0)?)?)?;
    if grid.num_cells() != s {
        return Err(Error::Corrupt("grid cell count differs from header".into()));
    }
    let bytes = read(find(SectionKind::Assignment, 0)?)?;
    let mut c = Cursor::new(&bytes, "assignment");
    let cell_of = c.u32s(n)?;
    c.finish()?;
    let assignment = CellAssignment::from_cell_of(&grid, cell_of)?;
    let mut intra = Vec::with_capacity(s);
    let mut blocks = Vec::with_capacity(s);
    for cell in 0..s as u32 {
        let e = find(SectionKind::Intra, cell)?;
        intra.push(decode_intra(&read(e)?, &e.label())?);
    }
    for cell in 0..s as u32 {
        let e = find(SectionKind::Inter, cell)?;
        blocks.push(decode_inter(&read(e)?, &e.label())?);
    }
    let histogram = decode_histogram(&read(find(SectionKind::Histogram, 0)?)?)?;
    let codes = decode_codes(&read(find(SectionKind::Codes, 0)?)?)?;
    let bytes = read(find(SectionKind::Attributes, 0)?)?;
    let mut c = Cursor::new(&bytes, "attributes");
    let attributes = c.f64s(n * m)?;
    c.finish()?;
    let bytes = read(find(SectionKind::Vectors, 0)?)?;
    let mut c = Cursor::new(&bytes, "vectors");
    let vectors = c.f32s(n * dim)?;
    c.finish()?;
    let dataset = Dataset::new(dim, m, vectors, attributes)?;
    GmgIndex::from_parts(
        build,
        grid,
        assignment,
        intra,
        InterCellEdges::from_blocks(blocks),
        histogram,
        codes,
        dataset,
    )
}

#[cfg(unix)]
fn read_at(file: &File, buf: &mut [u8], offset: u64) -> std::io::Result<()> {
    std::os::unix::fs::FileExt::read_exact_at(file, buf, offset)
}

#[cfg(windows)]
fn read_at(file: &File, mut buf: &mut [u8], mut offset: u64) -> std::io::Result<()> {
    use std::os::windows::fs::FileExt;
    while !buf.is_empty() {
        let n = file.seek_read(buf, offset)?;
        if n == 0 {
            return Err(std::io::ErrorKind::UnexpectedEof.into());
        }
        buf = &mut buf[n..];
        offset += n as u64;
    }
    Ok(())
}

/// An index file opened for lazy, per-section positioned reads.
#[derive(Debug)]
pub struct IndexFile {
    file: File,
    header: Header,
    table: Vec<SectionEntry>,
}

impl IndexFile {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let file = File::open(path)?;
        let file_len = file.metadata()?.len();
        let mut head = vec![0u8; HEADER_LEN.min(file_len as usize)];
        read_at(&file, &mut head, 0)?;
        if head.len() >= 4 && head[..4] != MAGIC {
            return Err(Error::BadMagic {
                found: head[..4].try_into().expect("4 bytes"),
            });
        }
        if head.len() < HEADER_LEN {
            return Err(Error::Truncated {
                section: "header".into(),
            });
        }
        let count = u32::from_le_bytes(head[HEADER_LEN - 4..].try_into().expect("4 bytes")) as u64;
        let table_len = count * ENTRY_LEN as u64;
        if HEADER_LEN as u64 + table_len > file_len {
            return Err(Error::Truncated {
                section: "section table".into(),
            });
        }
        let mut all = head;
        all.resize(HEADER_LEN + table_len as usize, 0);
        read_at(&file, &mut all[HEADER_LEN..], HEADER_LEN as u64)?;
        let (header, table) = parse_head(&all, file_len)?;
        Ok(Self {
            file,
            header,
            table,
        })
    }

    pub fn header(&self) -> &Header {
        &self.header
    }

    pub fn sections(&self) -> &[SectionEntry] {
        &self.table
    }

    pub fn entry(&self, kind: SectionKind, index: u32) -> Result<&SectionEntry> {
        self.table
            .iter()
            .find(|e| e.kind == kind && e.index == index)
            .ok_or_else(|| Error::Corrupt(format!("missing section {}[{index}]", kind.name())))
    }

    pub fn read_section(&self, kind: SectionKind, index: u32) -> Result<Vec<u8>> {
        let e = *self.entry(kind, index)?;
        self.read_entry(&e)
    }

    fn read_entry(&self, e: &SectionEntry) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; e.len as usize];
        read_at(&self.file, &mut buf, e.offset).map_err(|err| {
            if err.kind() == std::io::ErrorKind::UnexpectedEof {
                Error::Truncated { section: e.label() }
            } else {
                Error::Io(err)
            }
        })?;
        Ok(buf)
    }

    pub fn read_intra(&self, cell: usize) -> Result<IntraCellGraph> {
        let e = *self.entry(SectionKind::Intra, cell as u32)?;
        decode_intra(&self.read_entry(&e)?, &e.label())
    }

    pub fn read_inter(&self, cell: usize) -> Result<InterBlock> {
        let e = *self.entry(SectionKind::Inter, cell as u32)?;
        decode_inter(&self.read_entry(&e)?, &e.label())
    }

    pub fn read_params(&self) -> Result<BuildParams> {
        Ok(serde_json::from_slice(&self.read_section(SectionKind::Params, 0)?)?)
    }

    pub fn read_grid(&self) -> Result<GridSpec> {
        decode_grid(&self.read_section(SectionKind::Grid, 0)?)
    }

    pub fn read_assignment(&self, grid: &GridSpec) -> Result<CellAssignment> {
        let bytes = self.read_section(SectionKind::Assignment, 0)?;
        let mut c = Cursor::new(&bytes, "assignment");
        let cell_of = c.u32s(self.header.n as usize)?;
        c.finish()?;
        CellAssignment::from_cell_of(grid, cell_of)
    }

    pub fn read_inter_edges(&self) -> Result<InterCellEdges> {
        let blocks = (0..self.header.num_cells as usize)
            .map(|c| self.read_inter(c))
            .collect::<Result<Vec<_>>>()?;
        Ok(InterCellEdges::from_blocks(blocks))
    }

    pub fn read_histogram(&self) -> Result<ClusterHistogram> {
        decode_histogram(&self.read_section(SectionKind::Histogram, 0)?)
    }

    pub fn read_codes(&self) -> Result<QuantizedVectors> {
        decode_codes(&self.read_section(SectionKind::Codes, 0)?)
    }

    /// Vectors and attributes.
    pub fn read_dataset(&self) -> Result<Dataset> {
        let (n, dim, m) = (
            self.header.n as usize,
            self.header.dim as usize,
            self.header.num_attributes as usize,
        );
        let bytes = self.read_section(SectionKind::Attributes, 0)?;
        let mut c = Cursor::new(&bytes, "attributes");
        let attributes = c.f64s(n * m)?;
        c.finish()?;
        let bytes = self.read_section(SectionKind::Vectors, 0)?;
        let mut c = Cursor::new(&bytes, "vectors");
        let vectors = c.f32s(n * dim)?;
        c.finish()?;
        Dataset::new(dim, m, vectors, attributes)
    }

    pub fn load(&self) -> Result<GmgIndex> {
        assemble(&self.header, &self.table, |e| self.read_entry(e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridParams;
    use crate::index::{build_index, IndexParams};

    fn small_index() -> GmgIndex {
        let rows: Vec<(Vec<f32>, Vec<f64>)> = (0..60)
            .map(|i| (vec![i as f32, (i * 7 % 13) as f32], vec![(i % 10) as f64, (i / 6) as f64]))
            .collect();
        let ds = Dataset::from_rows(&rows).unwrap();
        let params = IndexParams {
            grid: GridParams::with_cells(4),
            build: BuildParams {
                intra_degree: 4,
                ..BuildParams::default()
            },
            histogram: crate::histogram::HistogramParams {
                num_clusters: 8,
                ..Default::default()
            },
        };
        build_index(ds, &params).unwrap()
    }

    #[test]
    fn roundtrip_is_identical() {
        let idx = small_index();
        let mut bytes = Vec::new();
        write_index_to(&idx, &mut bytes).unwrap();
        assert_eq!(read_index_bytes(&bytes).unwrap(), idx);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.gmg");
        save_index(&idx, &path).unwrap();
        let f = IndexFile::open(&path).unwrap();
        assert_eq!(f.header().num_cells, 4);
        assert_eq!(f.read_intra(2).unwrap(), idx.intra_graphs()[2]);
        assert_eq!(f.load().unwrap(), idx);
    }

    #[test]
    fn bad_magic_and_version() {
        let idx = small_index();
        let mut bytes = Vec::new();
        write_index_to(&idx, &mut bytes).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(read_index_bytes(&bad), Err(Error::BadMagic { .. })));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(read_index_bytes(&bad), Err(Error::UnsupportedVersion(9))));
    }

    #[test]
    fn truncation_names_the_section() {
        let idx = small_index();
        let mut bytes = Vec::new();
        write_index_to(&idx, &mut bytes).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.gmg");
        std::fs::write(&path, &bytes[..bytes.len() - 10]).unwrap();
        match IndexFile::open(&path) {
            Err(Error::Truncated { section }) => assert_eq!(section, "vectors"),
            other => panic!("unexpected {other:?}"),
        }
        std::fs::write(&path, &bytes[..20]).unwrap();
        assert!(matches!(IndexFile::open(&path), Err(Error::Truncated { section }) if section == "header"));
    }
}
