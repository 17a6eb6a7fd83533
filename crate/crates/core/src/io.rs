//! Binary containers: `GEQSMP01` sample streams and `GEQMAT01` matrix sections.
//!
//! Both start with 8 magic bytes, a little-endian `u32` header length and a UTF-8
//! JSON header, followed by little-endian `f64` payload.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SAMPLE_MAGIC: &[u8; 8] = b"GEQSMP01";
pub const MATRIX_MAGIC: &[u8; 8] = b"GEQMAT01";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleHeader {
    #[serde(rename = "D")]
    pub d: usize,
    #[serde(rename = "N")]
    pub n: usize,
    pub count: usize,
    pub dtype: String,
}

fn write_header<W: Write, H: Serialize>(w: &mut W, magic: &[u8; 8], h: &H) -> Result<()> {
    let json = serde_json::to_vec(h)?;
    w.write_all(magic)?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    Ok(())
}

fn write_f64s<W: Write>(w: &mut W, v: &[f64]) -> Result<()> {
    for x in v {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

/// Writes `(c, x)` records. Every `c` must have length `d` and every `x` length `n`.
pub fn write_sample_stream<'a, I>(path: &Path, d: usize, n: usize, records: I) -> Result<()>
where
    I: IntoIterator<Item = (&'a [f64], &'a [f64])>,
{
    let recs: Vec<_> = records.into_iter().collect();
    for (c, x) in &recs {
        if c.len() != d {
            return Err(Error::Dimension { context: "sample record c", expected: d, got: c.len() });
        }
        if x.len() != n {
            return Err(Error::Dimension { context: "sample record x", expected: n, got: x.len() });
        }
    }
    let header = SampleHeader { d, n, count: recs.len(), dtype: "f64".into() };
    let mut w = BufWriter::new(File::create(path)?);
    write_header(&mut w, SAMPLE_MAGIC, &header)?;
    for (c, x) in recs {
        write_f64s(&mut w, c)?;
        write_f64s(&mut w, x)?;
    }
    w.flush()?;
    Ok(())
}

/// Reader over a `GEQSMP01` file yielding `(c, x)` records.
pub struct SampleStream {
    header: SampleHeader,
    reader: BufReader<File>,
    next: usize,
    failed: bool,
}

pub fn open_sample_stream(path: &Path) -> Result<SampleStream> {
    let file = File::open(path)?;
    let file_len = file.metadata()?.len();
    let mut reader = BufReader::new(file);
    let (header, hlen): (SampleHeader, usize) = read_header(&mut reader, SAMPLE_MAGIC, "GEQSMP01")?;
    if header.dtype != "f64" {
        return Err(Error::Format(format!("unsupported dtype {:?}", header.dtype)));
    }
    let expected = 12 + hlen as u64 + (header.count as u64) * ((header.d + header.n) as u64) * 8;
    if file_len > expected {
        return Err(Error::LengthMismatch { expected, got: file_len });
    }
    Ok(SampleStream { header, reader, next: 0, failed: false })
}

fn read_header<R: Read, H: for<'de> Deserialize<'de>>(
    r: &mut R,
    magic: &[u8; 8],
    magic_name: &'static str,
) -> Result<(H, usize)> {
    let mut m = [0u8; 8];
    r.read_exact(&mut m).map_err(|_| Error::BadMagic { expected: magic_name })?;
    if &m != magic {
        return Err(Error::BadMagic { expected: magic_name });
    }
    let mut lb = [0u8; 4];
    r.read_exact(&mut lb)
        .map_err(|_| Error::Format("missing header length".into()))?;
    let len = u32::from_le_bytes(lb) as usize;
    let mut hb = vec![0u8; len];
    r.read_exact(&mut hb)
        .map_err(|_| Error::Format("truncated header".into()))?;
    let h = serde_json::from_slice(&hb)?;
    Ok((h, len))
}

impl SampleStream {
    pub fn header(&self) -> &SampleHeader {
        &self.header
    }
}

impl Iterator for SampleStream {
    type Item = Result<(Vec<f64>, Vec<f64>)>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed || self.next >= self.header.count {
            return None;
        }
        let rec = self.next;
        self.next += 1;
        let mut c = vec![0.0; self.header.d];
        let mut x = vec![0.0; self.header.n];
        for v in c.iter_mut().chain(x.iter_mut()) {
            let mut b = [0u8; 8];
            if self.reader.read_exact(&mut b).is_err() {
                self.failed = true;
                return Some(Err(Error::Truncated { record: rec }));
            }
            *v = f64::from_le_bytes(b);
        }
        Some(Ok((c, x)))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixHeader {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub dtype: String,
    pub layout: String,
}

/// A named row-major matrix section.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixSection {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

pub fn write_matrix_section<W: Write>(w: &mut W, s: &MatrixSection) -> Result<()> {
    if s.data.len() != s.rows * s.cols {
        return Err(Error::Dimension {
            context: "matrix section payload",
            expected: s.rows * s.cols,
            got: s.data.len(),
        });
    }
    let h = MatrixHeader {
        name: s.name.clone(),
        rows: s.rows,
        cols: s.cols,
        dtype: "f64".into(),
        layout: "row-major".into(),
    };
    write_header(w, MATRIX_MAGIC, &h)?;
    write_f64s(w, &s.data)
}

pub fn read_matrix_section<R: Read>(r: &mut R) -> Result<MatrixSection> {
    let (h, _): (MatrixHeader, usize) = read_header(r, MATRIX_MAGIC, "GEQMAT01")?;
    if h.dtype != "f64" || h.layout != "row-major" {
        return Err(Error::Format(format!(
            "unsupported section encoding {}/{}",
            h.dtype, h.layout
        )));
    }
    let mut bytes = vec![0u8; h.rows * h.cols * 8];
    r.read_exact(&mut bytes)
        .map_err(|_| Error::Format(format!("truncated payload in section {:?}", h.name)))?;
    let data = bytes
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
        .collect();
    Ok(MatrixSection { name: h.name, rows: h.rows, cols: h.cols, data })
}

/// Writes sections followed by a trailing `u32` length-prefixed JSON manifest.
pub fn write_matrix_file<M: Serialize>(path: &Path, sections: &[MatrixSection], manifest: &M) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for s in sections {
        write_matrix_section(&mut w, s)?;
    }
    let json = serde_json::to_vec(manifest)?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    w.flush()?;
    Ok(())
}

/// Reads `n_sections` sections and the trailing manifest.
pub fn read_matrix_file<M: for<'de> Deserialize<'de>>(
    path: &Path,
    n_sections: usize,
) -> Result<(Vec<MatrixSection>, M)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut out = Vec::with_capacity(n_sections);
    for _ in 0..n_sections {
        out.push(read_matrix_section(&mut r)?);
    }
    let mut lb = [0u8; 4];
    r.read_exact(&mut lb)
        .map_err(|_| Error::Format("missing manifest".into()))?;
    let mut mb = vec![0u8; u32::from_le_bytes(lb) as usize];
    r.read_exact(&mut mb)
        .map_err(|_| Error::Format("truncated manifest".into()))?;
    let m = serde_json::from_slice(&mb)?;
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(Error::Format(format!("{} trailing bytes after manifest", rest.len())));
    }
    Ok((out, m))
}
