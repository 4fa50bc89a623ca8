//! Document streams and the binary embedding/score files.
//!
//! Corpora are newline-delimited JSON objects with string fields `id` and
//! `text`. Embeddings (`LUXE`) and scores (`LUXS`) are little-endian binary
//! files with a magic/version header and length-prefixed ids.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::binio::{checked_len, LeReader, LeWriter};
use crate::error::{Error, Result};

pub const EMBEDDINGS_MAGIC: &[u8; 4] = b"LUXE";
pub const SCORES_MAGIC: &[u8; 4] = b"LUXS";

/// Rows must have unit norm within this tolerance unless they are all-zero.
pub const UNIT_NORM_TOLERANCE: f32 = 1e-4;

const MAX_ROWS: u64 = 1 << 40;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: String,
}

impl Document {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Self { id: id.into(), text: text.into() }
    }
}

#[derive(Deserialize)]
struct RawRecord {
    id: Option<String>,
    text: Option<String>,
}

/// Streaming NDJSON corpus reader. Holds one line in memory at a time.
pub struct CorpusReader<R> {
    input: R,
    line_no: usize,
    remaining: Option<usize>,
    buf: Vec<u8>,
    failed: bool,
}

impl<R: BufRead> CorpusReader<R> {
    pub fn new(input: R, limit: Option<usize>) -> Self {
        Self { input, line_no: 0, remaining: limit, buf: Vec::new(), failed: false }
    }

    fn parse_line(&self) -> Result<Document> {
        let line = self.line_no;
        let text = std::str::from_utf8(&self.buf)
            .map_err(|e| Error::Corpus { line, message: format!("invalid UTF-8: {e}") })?;
        let raw: RawRecord = serde_json::from_str(text)
            .map_err(|e| Error::Corpus { line, message: format!("malformed record: {e}") })?;
        let id = raw.id.ok_or(Error::MissingField { line, field: "id" })?;
        let text = raw.text.ok_or(Error::MissingField { line, field: "text" })?;
        Ok(Document { id, text })
    }
}

impl<R: BufRead> Iterator for CorpusReader<R> {
    type Item = Result<Document>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed || self.remaining == Some(0) {
            return None;
        }
        loop {
            self.buf.clear();
            match self.input.read_until(b'\n', &mut self.buf) {
                Ok(0) => return None,
                Ok(_) => {}
                Err(e) => {
                    self.failed = true;
                    return Some(Err(e.into()));
                }
            }
            self.line_no += 1;
            while matches!(self.buf.last(), Some(b'\n' | b'\r')) {
                self.buf.pop();
            }
            if self.buf.iter().all(u8::is_ascii_whitespace) {
                continue;
            }
            let parsed = self.parse_line();
            if parsed.is_err() {
                self.failed = true;
            } else if let Some(r) = self.remaining.as_mut() {
                *r -= 1;
            }
            return Some(parsed);
        }
    }
}

/// Opens an NDJSON corpus for streaming. Blank lines are skipped; the first
/// bad record ends the stream with an error naming its line.
pub fn read_corpus(path: impl AsRef<Path>, limit: Option<usize>) -> Result<CorpusReader<BufReader<File>>> {
    let file = File::open(path)?;
    Ok(CorpusReader::new(BufReader::with_capacity(1 << 20, file), limit))
}

/// Collects a whole corpus into memory.
pub fn load_corpus(path: impl AsRef<Path>, limit: Option<usize>) -> Result<Vec<Document>> {
    read_corpus(path, limit)?.collect()
}

pub fn write_corpus(path: impl AsRef<Path>, docs: &[Document]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for doc in docs {
        serde_json::to_writer(&mut out, doc).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Row-major batch of unit-norm (or all-zero) f32 embeddings with ids.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    d: usize,
    values: Vec<f32>,
    ids: Vec<String>,
}

fn squared_norm(row: &[f32]) -> f32 {
    row.iter().map(|x| x * x).sum()
}

impl EmbeddingMatrix {
    /// Validates shape and the unit-norm-or-zero row invariant.
    pub fn new(ids: Vec<String>, d: usize, values: Vec<f32>) -> Result<Self> {
        let m = Self::new_unchecked(ids, d, values)?;
        for (i, row) in m.rows().enumerate() {
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput(format!("row {i} has non-finite entries")));
            }
            if row.iter().all(|&v| v == 0.0) {
                continue;
            }
            let norm = squared_norm(row).sqrt();
            if (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
                return Err(Error::InvalidInput(format!(
                    "row {i} (`{}`) has norm {norm}, expected 1 or an all-zero row",
                    m.ids[i]
                )));
            }
        }
        Ok(m)
    }

    /// Checks shape only. Used for intermediate matrices whose rows are not
    /// yet normalized.
    pub fn new_unchecked(ids: Vec<String>, d: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != ids.len() * d {
            return Err(Error::DimensionMismatch(format!(
                "{} ids × d={d} needs {} values, got {}",
                ids.len(),
                ids.len() * d,
                values.len()
            )));
        }
        Ok(Self { d, values, ids })
    }

    pub fn empty(d: usize) -> Self {
        Self { d, values: Vec::new(), ids: Vec::new() }
    }

    pub fn n(&self) -> usize {
        self.ids.len()
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f32]> + '_ {
        // chunks_exact(0) panics; a zero-width matrix still has n rows.
        (0..self.n()).map(move |i| self.row(i))
    }

    pub fn is_zero_row(&self, i: usize) -> bool {
        self.row(i).iter().all(|&v| v == 0.0)
    }

    /// Keeps the rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Self {
        let mut values = Vec::with_capacity(indices.len() * self.d);
        let mut ids = Vec::with_capacity(indices.len());
        for &i in indices {
            values.extend_from_slice(self.row(i));
            ids.push(self.ids[i].clone());
        }
        Self { d: self.d, values, ids }
    }

    pub fn into_parts(self) -> (Vec<String>, usize, Vec<f32>) {
        (self.ids, self.d, self.values)
    }
}

pub fn write_embeddings_to<W: Write>(out: W, m: &EmbeddingMatrix) -> Result<W> {
    let mut w = LeWriter::new(out);
    w.header(EMBEDDINGS_MAGIC)?;
    w.u64(m.n() as u64)?;
    let d = u32::try_from(m.d()).map_err(|_| Error::InvalidInput("embedding width exceeds u32".into()))?;
    w.u32(d)?;
    for id in m.ids() {
        w.str(id)?;
    }
    w.f32s(m.values())?;
    w.finish()
}

pub fn read_embeddings_from<R: Read>(input: R) -> Result<EmbeddingMatrix> {
    let mut r = LeReader::new(input, "embeddings");
    r.header(EMBEDDINGS_MAGIC)?;
    let n = checked_len("embeddings", r.u64()?, MAX_ROWS)?;
    let d = r.u32()? as usize;
    let ids = (0..n).map(|_| r.str()).collect::<Result<Vec<_>>>()?;
    let values = r.f32s(n.checked_mul(d).ok_or_else(|| Error::Corrupt("embeddings: n·d overflows".into()))?)?;
    r.expect_eof()?;
    EmbeddingMatrix::new(ids, d, values).map_err(|e| Error::Corrupt(format!("embeddings: {e}")))
}

pub fn write_embeddings(path: impl AsRef<Path>, m: &EmbeddingMatrix) -> Result<()> {
    write_embeddings_to(BufWriter::new(File::create(path)?), m)?;
    Ok(())
}

pub fn read_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingMatrix> {
    read_embeddings_from(BufReader::new(File::open(path)?))
}

/// Per-document scalar scores, aligned with ids.
#[derive(Debug, Clone, PartialEq)]
pub struct Scores {
    pub ids: Vec<String>,
    pub scores: Vec<f32>,
}

impl Scores {
    pub fn new(ids: Vec<String>, scores: Vec<f32>) -> Result<Self> {
        if ids.len() != scores.len() {
            return Err(Error::DimensionMismatch(format!("{} ids but {} scores", ids.len(), scores.len())));
        }
        Ok(Self { ids, scores })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

pub fn write_scores_to<W: Write>(out: W, s: &Scores) -> Result<W> {
    let mut w = LeWriter::new(out);
    w.header(SCORES_MAGIC)?;
    w.u64(s.len() as u64)?;
    for id in &s.ids {
        w.str(id)?;
    }
    w.f32s(&s.scores)?;
    w.finish()
}

pub fn read_scores_from<R: Read>(input: R) -> Result<Scores> {
    let mut r = LeReader::new(input, "scores");
    r.header(SCORES_MAGIC)?;
    let n = checked_len("scores", r.u64()?, MAX_ROWS)?;
    let ids = (0..n).map(|_| r.str()).collect::<Result<Vec<_>>>()?;
    let scores = r.f32s(n)?;
    r.expect_eof()?;
    Scores::new(ids, scores)
}

pub fn write_scores(path: impl AsRef<Path>, s: &Scores) -> Result<()> {
    write_scores_to(BufWriter::new(File::create(path)?), s)?;
    Ok(())
}

pub fn read_scores(path: impl AsRef<Path>) -> Result<Scores> {
    read_scores_from(BufReader::new(File::open(path)?))
}
