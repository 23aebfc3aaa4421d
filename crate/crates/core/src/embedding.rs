//! Speaker embeddings, cosine geometry, and the embedding-record file format.
//!
//! Record files are line oriented. Each non-blank line that does not start
//! with `#` holds one record:
//!
//! ```text
//! <speaker_id>\t<language_id>\t<v1>,<v2>,...,<vD>
//! ```
//!
//! Values are written with 17 significant digits so an `f64` survives a
//! write/read cycle bit for bit.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// A point in speaker-embedding space. Never empty, always finite.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidArgument("embedding dimension must be > 0".into()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("embedding component {i} is {}", values[i])));
        }
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }

    /// Euclidean distance to `other`.
    pub fn distance(&self, other: &Embedding) -> Result<f64> {
        check_dims("distance", self.dim(), other.dim())?;
        Ok(self
            .0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt())
    }
}

impl TryFrom<Vec<f64>> for Embedding {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Embedding::new(values)
    }
}

impl AsRef<[f64]> for Embedding {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn check_dims(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::DimensionMismatch {
            context,
            expected,
            actual,
        });
    }
    Ok(())
}

/// Cosine similarity of two embeddings, clamped to `[-1, 1]`.
///
/// Zero-norm inputs are rejected with [`Error::Degenerate`] rather than
/// mapped to 0.
pub fn cosine_similarity(a: &Embedding, b: &Embedding) -> Result<f64> {
    cosine_slices(a.as_slice(), b.as_slice())
}

pub(crate) fn cosine_slices(a: &[f64], b: &[f64]) -> Result<f64> {
    check_dims("cosine_similarity", a.len(), b.len())?;
    let na = norm(a);
    let nb = norm(b);
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Degenerate("cosine similarity of a zero-norm vector".into()));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRecord {
    pub speaker_id: u32,
    pub language_id: u32,
    pub embedding: Embedding,
}

impl EmbeddingRecord {
    pub fn new(speaker_id: u32, language_id: u32, embedding: Embedding) -> Self {
        Self {
            speaker_id,
            language_id,
            embedding,
        }
    }
}

/// Formats a real with 17 significant digits.
pub(crate) fn fmt_real(v: f64) -> String {
    format!("{v:.16e}")
}

pub(crate) fn fmt_reals(values: &[f64], sep: char) -> String {
    let mut out = String::with_capacity(values.len() * 24);
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            out.push(sep);
        }
        let _ = write!(out, "{v:.16e}");
    }
    out
}

pub fn format_record(record: &EmbeddingRecord) -> String {
    format!(
        "{}\t{}\t{}",
        record.speaker_id,
        record.language_id,
        fmt_reals(record.embedding.as_slice(), ',')
    )
}

/// Serializes records to the line format. Does not validate consistency.
pub fn records_to_string(records: &[EmbeddingRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&format_record(r));
        out.push('\n');
    }
    out
}

/// Parses and validates a record file held in memory. `path` is only used in messages.
pub fn parse_records(text: &str, path: &Path) -> Result<Vec<EmbeddingRecord>> {
    let mut records = Vec::new();
    let mut dim: Option<usize> = None;
    let mut languages: HashMap<u32, u32> = HashMap::new();

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::format(
                path,
                line_no,
                format!("expected 3 tab-separated fields, found {}", fields.len()),
            ));
        }
        let speaker_id: u32 = fields[0]
            .trim()
            .parse()
            .map_err(|_| Error::format(path, line_no, format!("bad speaker_id {:?}", fields[0])))?;
        let language_id: u32 = fields[1]
            .trim()
            .parse()
            .map_err(|_| Error::format(path, line_no, format!("bad language_id {:?}", fields[1])))?;
        let values = fields[2]
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::format(path, line_no, format!("bad embedding value: {e}")))?;
        let embedding = Embedding::new(values).map_err(|e| Error::format(path, line_no, e.to_string()))?;

        match dim {
            None => dim = Some(embedding.dim()),
            Some(d) if d != embedding.dim() => {
                return Err(Error::format(
                    path,
                    line_no,
                    format!("embedding dimension {} differs from {d}", embedding.dim()),
                ))
            }
            Some(_) => {}
        }
        match languages.get(&speaker_id) {
            Some(&lang) if lang != language_id => {
                return Err(Error::format(
                    path,
                    line_no,
                    format!("speaker {speaker_id} mapped to languages {lang} and {language_id}"),
                ))
            }
            Some(_) => {}
            None => {
                languages.insert(speaker_id, language_id);
            }
        }
        records.push(EmbeddingRecord {
            speaker_id,
            language_id,
            embedding,
        });
    }
    Ok(records)
}

pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<EmbeddingRecord>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_records(&text, path)
}

pub fn write_records(path: impl AsRef<Path>, records: &[EmbeddingRecord]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, records_to_string(records)).map_err(|e| Error::io(path, e))
}
