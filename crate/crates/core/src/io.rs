//! Readers and writers for the on-disk exchange formats: `*.fvecs` / `*.bvecs` /
//! `*.ivecs` vector files, attribute CSV files and JSON-lines query files.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Dataset, RangeQuery};

fn read_vecs<R: Read, T>(
    mut reader: R,
    elem_size: usize,
    decode: impl Fn(&[u8]) -> T,
) -> Result<(usize, Vec<T>)> {
    let mut dim_buf = [0u8; 4];
    let mut dim = None;
    let mut out = Vec::new();
    let mut payload = Vec::new();
    loop {
        match reader.read_exact(&mut dim_buf) {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(e.into()),
        }
        let d = i32::from_le_bytes(dim_buf);
        if d <= 0 {
            return Err(Error::Parse(format!("non-positive vector dimension {d}")));
        }
        let d = d as usize;
        match dim {
            None => dim = Some(d),
            Some(expected) if expected != d => {
                return Err(Error::DimensionMismatch {
                    expected,
                    actual: d,
                })
            }
            _ => {}
        }
        payload.resize(d * elem_size, 0);
        reader.read_exact(&mut payload).map_err(|e| {
            if e.kind() == std::io::ErrorKind::UnexpectedEof {
                Error::Parse("truncated vector record".into())
            } else {
                e.into()
            }
        })?;
        out.extend(payload.chunks_exact(elem_size).map(&decode));
    }
    Ok((dim.unwrap_or(0), out))
}

/// Reads an `.fvecs` stream: per record a little-endian `i32` dimension
/// followed by that many `f32` values. Returns `(dim, flat row-major data)`.
pub fn read_fvecs_from<R: Read>(reader: R) -> Result<(usize, Vec<f32>)> {
    read_vecs(reader, 4, |b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
}

pub fn read_bvecs_from<R: Read>(reader: R) -> Result<(usize, Vec<u8>)> {
    read_vecs(reader, 1, |b| b[0])
}

pub fn read_ivecs_from<R: Read>(reader: R) -> Result<(usize, Vec<i32>)> {
    read_vecs(reader, 4, |b| i32::from_le_bytes([b[0], b[1], b[2], b[3]]))
}

pub fn read_fvecs(path: impl AsRef<Path>) -> Result<(usize, Vec<f32>)> {
    read_fvecs_from(BufReader::new(File::open(path)?))
}

pub fn read_bvecs(path: impl AsRef<Path>) -> Result<(usize, Vec<u8>)> {
    read_bvecs_from(BufReader::new(File::open(path)?))
}

pub fn read_ivecs(path: impl AsRef<Path>) -> Result<(usize, Vec<i32>)> {
    read_ivecs_from(BufReader::new(File::open(path)?))
}

/// Reads `.fvecs` or `.bvecs` (by extension) into `f32` rows.
pub fn read_vectors(path: impl AsRef<Path>) -> Result<(usize, Vec<f32>)> {
    let path = path.as_ref();
    match path.extension().and_then(|e| e.to_str()) {
        Some("bvecs") => {
            let (dim, bytes) = read_bvecs(path)?;
            Ok((dim, bytes.into_iter().map(f32::from).collect()))
        }
        Some("fvecs") | None => read_fvecs(path),
        Some(other) => Err(Error::Parse(format!(
            "unsupported vector file extension `.{other}`"
        ))),
    }
}

pub fn write_fvecs_to<W: Write>(mut w: W, dim: usize, data: &[f32]) -> Result<()> {
    for row in data.chunks_exact(dim) {
        w.write_all(&(dim as i32).to_le_bytes())?;
        for v in row {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_fvecs(path: impl AsRef<Path>, dim: usize, data: &[f32]) -> Result<()> {
    write_fvecs_to(BufWriter::new(File::create(path)?), dim, data)
}

pub fn write_ivecs(path: impl AsRef<Path>, rows: &[Vec<i32>]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for row in rows {
        w.write_all(&(row.len() as i32).to_le_bytes())?;
        for v in row {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Parses an attribute CSV with header `id,a_1,...,a_m`. Rows may come in any
/// order but the ids must be exactly `0..n`.
pub fn read_attributes_from<R: Read>(reader: R) -> Result<(usize, Vec<f64>)> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(csv_err)?.clone();
    if headers.get(0) != Some("id") {
        return Err(Error::Parse("attribute CSV must start with an `id` column".into()));
    }
    let m = headers.len() - 1;
    let mut rows: Vec<(usize, Vec<f64>)> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        if rec.len() != m + 1 {
            return Err(Error::Parse(format!(
                "row has {} fields, expected {}",
                rec.len(),
                m + 1
            )));
        }
        let id: usize = rec[0]
            .parse()
            .map_err(|_| Error::Parse(format!("bad id `{}`", &rec[0])))?;
        let vals = (1..=m)
            .map(|i| {
                rec[i]
                    .parse::<f64>()
                    .map_err(|_| Error::Parse(format!("bad attribute value `{}`", &rec[i])))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push((id, vals));
    }
    let n = rows.len();
    let mut out = vec![0.0; n * m];
    let mut seen = vec![false; n];
    for (id, vals) in rows {
        if id >= n || std::mem::replace(&mut seen[id], true) {
            return Err(Error::Parse(format!("attribute ids must be dense in [0, {n})")));
        }
        out[id * m..(id + 1) * m].copy_from_slice(&vals);
    }
    Ok((m, out))
}

fn csv_err(e: csv::Error) -> Error {
    Error::Parse(e.to_string())
}

pub fn read_attributes(path: impl AsRef<Path>) -> Result<(usize, Vec<f64>)> {
    read_attributes_from(BufReader::new(File::open(path)?))
}

pub fn write_attributes_to<W: Write>(w: W, m: usize, data: &[f64]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let mut header = vec!["id".to_string()];
    header.extend((1..=m).map(|i| format!("a_{i}")));
    wtr.write_record(&header).map_err(csv_err)?;
    let rows = if m == 0 { 0 } else { data.len() / m };
    for id in 0..rows {
        let mut rec = vec![id.to_string()];
        rec.extend(data[id * m..(id + 1) * m].iter().map(|v| v.to_string()));
        wtr.write_record(&rec).map_err(csv_err)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_attributes(path: impl AsRef<Path>, m: usize, data: &[f64]) -> Result<()> {
    write_attributes_to(BufWriter::new(File::create(path)?), m, data)
}

/// Loads vectors plus the attribute CSV into one dataset.
pub fn load_dataset(vectors: impl AsRef<Path>, attributes: impl AsRef<Path>) -> Result<Dataset> {
    let (dim, data) = read_vectors(vectors)?;
    let (m, attrs) = read_attributes(attributes)?;
    if dim == 0 {
        return Err(Error::EmptyDataset);
    }
    Dataset::new(dim, m, data, attrs)
}

/// One line of a query file. `selectivity` is written by the query generator
/// and ignored by readers that only want the query.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QueryLine {
    #[serde(flatten)]
    pub query: RangeQuery,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selectivity: Option<f64>,
}

pub fn read_queries_from<R: BufRead>(reader: R) -> Result<Vec<RangeQuery>> {
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: QueryLine = serde_json::from_str(&line)
            .map_err(|e| Error::Parse(format!("query line {}: {e}", lineno + 1)))?;
        out.push(parsed.query);
    }
    Ok(out)
}

pub fn read_queries(path: impl AsRef<Path>) -> Result<Vec<RangeQuery>> {
    read_queries_from(BufReader::new(File::open(path)?))
}

pub fn write_queries_to<W: Write>(
    mut w: W,
    queries: &[RangeQuery],
    selectivities: Option<&[f64]>,
) -> Result<()> {
    for (i, q) in queries.iter().enumerate() {
        let line = QueryLine {
            query: q.clone(),
            selectivity: selectivities.map(|s| s[i]),
        };
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_queries(
    path: impl AsRef<Path>,
    queries: &[RangeQuery],
    selectivities: Option<&[f64]>,
) -> Result<()> {
    write_queries_to(BufWriter::new(File::create(path)?), queries, selectivities)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Predicate;

    #[test]
    fn fvecs_layout_is_dim_then_payload() {
        let mut buf = Vec::new();
        write_fvecs_to(&mut buf, 2, &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(buf.len(), 2 * (4 + 8));
        assert_eq!(&buf[..4], &2i32.to_le_bytes());
        assert_eq!(&buf[4..8], &1.0f32.to_le_bytes());
        let (dim, data) = read_fvecs_from(&buf[..]).unwrap();
        assert_eq!(dim, 2);
        assert_eq!(data, vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn bvecs_and_ivecs_decode() {
        let mut b = Vec::new();
        b.extend_from_slice(&3i32.to_le_bytes());
        b.extend_from_slice(&[7, 8, 255]);
        assert_eq!(read_bvecs_from(&b[..]).unwrap(), (3, vec![7, 8, 255]));

        let mut i = Vec::new();
        i.extend_from_slice(&1i32.to_le_bytes());
        i.extend_from_slice(&(-5i32).to_le_bytes());
        assert_eq!(read_ivecs_from(&i[..]).unwrap(), (1, vec![-5]));
    }

    #[test]
    fn truncated_vecs_is_an_error() {
        let mut buf = Vec::new();
        write_fvecs_to(&mut buf, 3, &[1.0, 2.0, 3.0]).unwrap();
        buf.truncate(buf.len() - 2);
        assert!(read_fvecs_from(&buf[..]).is_err());
    }

    #[test]
    fn attribute_csv_out_of_order_rows() {
        let csv = "id,a_1,a_2\n1,3,4\n0,1.5,2\n";
        let (m, data) = read_attributes_from(csv.as_bytes()).unwrap();
        assert_eq!(m, 2);
        assert_eq!(data, vec![1.5, 2.0, 3.0, 4.0]);
        assert!(read_attributes_from("id,a_1\n0,1\n2,1\n".as_bytes()).is_err());
        assert!(read_attributes_from("x,a_1\n0,1\n".as_bytes()).is_err());
    }

    #[test]
    fn attribute_csv_write_read() {
        let mut buf = Vec::new();
        write_attributes_to(&mut buf, 2, &[1.0, 2.5, 3.0, -4.0]).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("id,a_1,a_2\n0,1,2.5\n"));
        assert_eq!(read_attributes_from(&buf[..]).unwrap().1, vec![1.0, 2.5, 3.0, -4.0]);
    }

    #[test]
    fn query_lines_round_trip_with_selectivity() {
        let q = RangeQuery::new(vec![0.5, 1.0], vec![Predicate::new(1, 0.0, 2.0)], 10);
        let mut buf = Vec::new();
        write_queries_to(&mut buf, std::slice::from_ref(&q), Some(&[0.25])).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.contains("\"selectivity\":0.25"));
        assert!(text.contains("\"filters\":[{\"attr\":1,\"low\":0.0,\"high\":2.0}]"));
        assert_eq!(read_queries_from(&buf[..]).unwrap(), vec![q]);
    }
}
