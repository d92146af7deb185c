use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"EMBF";
const TEXT_HEADER: &str = "emb v1";

/// Dense `n × d` table of finite vectors keyed by contiguous ids.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    values: Array2<f64>,
}

impl EmbeddingMatrix {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if let Some(((r, c), v)) = values.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::Validation(format!("non-finite entry {v} at ({r}, {c})")));
        }
        Ok(Self { values })
    }

    pub fn zeros(n: usize, d: usize) -> Self {
        Self {
            values: Array2::zeros((n, d)),
        }
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn d(&self) -> usize {
        self.values.ncols()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.values.row(i)
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }

    /// Rows `ids`, in that order.
    pub fn select_rows(&self, ids: &[u32]) -> Self {
        let idx: Vec<usize> = ids.iter().map(|&i| i as usize).collect();
        Self {
            values: self.values.select(ndarray::Axis(0), &idx),
        }
    }

    /// The matrix as it will read back from disk (rounded to 32-bit floats).
    pub fn quantized(&self) -> Self {
        Self {
            values: self.values.mapv(|v| v as f32 as f64),
        }
    }

    /// Checks the row count against an id space of size `n`.
    pub fn expect_rows(&self, n: usize, what: &str) -> Result<()> {
        if self.n() != n {
            return Err(Error::Shape(format!("{what}: expected {n} rows, found {}", self.n())));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbeddingEncoding {
    Text,
    Binary,
}

impl EmbeddingEncoding {
    /// Binary for `.emb`/`.bin` files, text otherwise.
    pub fn for_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("emb") | Some("bin") => EmbeddingEncoding::Binary,
            _ => EmbeddingEncoding::Text,
        }
    }
}

pub fn save_embeddings(m: &EmbeddingMatrix, path: &Path, encoding: EmbeddingEncoding) -> Result<()> {
    let ctx = || format!("writing {}", path.display());
    let file = std::fs::File::create(path).map_err(|e| Error::io(ctx(), e))?;
    let mut w = BufWriter::new(file);
    write_embeddings(m, &mut w, encoding).map_err(|e| Error::io(ctx(), e))?;
    w.flush().map_err(|e| Error::io(ctx(), e))
}

pub fn write_embeddings<W: Write>(m: &EmbeddingMatrix, w: &mut W, encoding: EmbeddingEncoding) -> std::io::Result<()> {
    let (n, d) = (m.n(), m.d());
    match encoding {
        EmbeddingEncoding::Binary => {
            w.write_all(MAGIC)?;
            w.write_all(&(n as u32).to_le_bytes())?;
            w.write_all(&(d as u32).to_le_bytes())?;
            for v in m.values.iter() {
                w.write_all(&(*v as f32).to_le_bytes())?;
            }
        }
        EmbeddingEncoding::Text => {
            writeln!(w, "{TEXT_HEADER} {n} {d}")?;
            for row in m.values.rows() {
                let mut first = true;
                for v in row {
                    if !first {
                        w.write_all(b" ")?;
                    }
                    first = false;
                    // shortest representation that round-trips the f32
                    write!(w, "{}", *v as f32)?;
                }
                w.write_all(b"\n")?;
            }
        }
    }
    Ok(())
}

/// Loads either encoding, detected from the leading bytes.
pub fn load_embeddings(path: &Path) -> Result<EmbeddingMatrix> {
    let ctx = || format!("reading {}", path.display());
    let file = std::fs::File::open(path).map_err(|e| Error::io(ctx(), e))?;
    read_embeddings(BufReader::new(file))
}

pub fn read_embeddings<R: BufRead>(mut r: R) -> Result<EmbeddingMatrix> {
    let io = |e| Error::io("reading embeddings", e);
    let head = r.fill_buf().map_err(io)?;
    if head.starts_with(MAGIC) {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes).map_err(io)?;
        return decode_binary(&bytes);
    }
    let mut text = String::new();
    r.read_to_string(&mut text)
        .map_err(|_| Error::Format("neither EMBF binary nor UTF-8 text".into()))?;
    decode_text(&text)
}

fn decode_binary(bytes: &[u8]) -> Result<EmbeddingMatrix> {
    if bytes.len() < 12 {
        return Err(Error::Format("truncated binary header".into()));
    }
    let n = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let d = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let expected = 12 + 4 * n * d;
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "binary {n}x{d} matrix needs {expected} bytes, file has {}",
            bytes.len()
        )));
    }
    let values: Vec<f64> = bytes[12..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    EmbeddingMatrix::new(Array2::from_shape_vec((n, d), values).expect("length checked"))
}

fn decode_text(text: &str) -> Result<EmbeddingMatrix> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Format("missing header".into()))?;
    let rest = header
        .strip_prefix(TEXT_HEADER)
        .ok_or_else(|| Error::Format(format!("bad header {header:?}")))?;
    let dims: Vec<usize> = rest
        .split_ascii_whitespace()
        .map(|t| t.parse().map_err(|_| Error::Format(format!("bad header {header:?}"))))
        .collect::<Result<_>>()?;
    let [n, d] = dims[..] else {
        return Err(Error::Format(format!("bad header {header:?}")));
    };
    let mut values = Vec::with_capacity(n * d);
    let mut rows = 0;
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let before = values.len();
        for tok in line.split_ascii_whitespace() {
            let v: f32 = tok
                .parse()
                .map_err(|_| Error::Format(format!("row {}: bad number {tok:?}", lineno + 1)))?;
            values.push(v as f64);
        }
        if values.len() - before != d {
            return Err(Error::Format(format!(
                "row {} has {} values, header says {d}",
                lineno + 1,
                values.len() - before
            )));
        }
        rows += 1;
    }
    if rows != n {
        return Err(Error::Format(format!("header says {n} rows, found {rows}")));
    }
    EmbeddingMatrix::new(Array2::from_shape_vec((n, d), values).expect("length checked"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn roundtrip(m: &EmbeddingMatrix, enc: EmbeddingEncoding) -> EmbeddingMatrix {
        let mut buf = Vec::new();
        write_embeddings(m, &mut buf, enc).unwrap();
        read_embeddings(&buf[..]).unwrap()
    }

    #[test]
    fn small_text_roundtrip() {
        let m = EmbeddingMatrix::new(array![[1.5, -2.0, 0.1], [3.25e-7, 0.0, 1e30]]).unwrap().quantized();
        assert_eq!(roundtrip(&m, EmbeddingEncoding::Text), m);
        assert_eq!(roundtrip(&m, EmbeddingEncoding::Binary), m);
    }

    #[test]
    fn nan_rejected() {
        assert!(matches!(
            EmbeddingMatrix::new(array![[1.0, f64::NAN]]),
            Err(Error::Validation(_))
        ));
        let mut bytes = b"EMBF".to_vec();
        bytes.extend(1u32.to_le_bytes());
        bytes.extend(1u32.to_le_bytes());
        bytes.extend(f32::NAN.to_le_bytes());
        assert!(matches!(read_embeddings(&bytes[..]), Err(Error::Validation(_))));
        assert!(matches!(read_embeddings("emb v1 1 2\n1 nan\n".as_bytes()), Err(Error::Validation(_))));
    }

    #[test]
    fn shape_mismatches() {
        assert!(matches!(read_embeddings("emb v1 2 2\n1 2\n".as_bytes()), Err(Error::Format(_))));
        assert!(matches!(read_embeddings("emb v1 1 2\n1 2 3\n".as_bytes()), Err(Error::Format(_))));
        assert!(matches!(read_embeddings("emb v2 1 2\n1 2\n".as_bytes()), Err(Error::Format(_))));
        let mut bytes = b"EMBF".to_vec();
        bytes.extend(2u32.to_le_bytes());
        bytes.extend(2u32.to_le_bytes());
        bytes.extend([0u8; 12]);
        assert!(matches!(read_embeddings(&bytes[..]), Err(Error::Format(_))));
    }
}
