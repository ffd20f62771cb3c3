//! On-disk corpus data: EMB1 embedding files, JSON-lines manifests and
//! gold / pre-aligned document pair lists.
//!
//! # EMB1 layout
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! offset  size  field
//!      0     4  magic "EMB1"
//!      4     2  format version (u16, = 1)
//!      6     2  reserved, zero
//!      8     4  dim (u32)
//!     12     4  rows (u32)
//!     16     *  rows x dim f32, row-major
//! ```
//!
//! There is no padding and no footer. Loading validates eagerly; everything
//! downstream assumes validated inputs.

use std::collections::HashSet;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::Matrix;

pub const EMB1_MAGIC: [u8; 4] = *b"EMB1";
pub const EMB1_VERSION: u16 = 1;
pub const EMB1_HEADER_LEN: usize = 16;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("bad magic {found:?}, expected \"EMB1\"")]
    BadMagic { found: [u8; 4] },
    #[error("unsupported EMB1 version {found} (expected {EMB1_VERSION})")]
    VersionMismatch { found: u16 },
    #[error("reserved header bytes are not zero")]
    ReservedNonZero,
    #[error("embedding dimension must be positive")]
    ZeroDim,
    #[error("truncated file: row {row} is incomplete ({found} of {expected} payload bytes present)")]
    TruncatedFile {
        row: usize,
        expected: u64,
        found: u64,
    },
    #[error("{extra} unexpected bytes after the payload")]
    TrailingBytes { extra: u64 },
    #[error("non-finite value at row {row}, column {col}")]
    NonFiniteValue { row: usize, col: usize },
    #[error("data length {len} is not rows x dim = {rows} x {dim}")]
    ShapeMismatch { rows: usize, dim: usize, len: usize },
    #[error("matrix too large for EMB1 ({rows} rows x {dim} dims)")]
    TooLarge { rows: usize, dim: usize },
    #[error("manifest line {line}: {message}")]
    ManifestSyntax { line: usize, message: String },
    #[error("sentence ranges leave a gap at row {row}")]
    RangeGap { row: usize },
    #[error("sentence ranges overlap at row {row} (document {doc_id})")]
    RangeOverlap { row: usize, doc_id: String },
    #[error("manifest covers {covered} rows but the embedding file has {rows}")]
    RowCountMismatch { covered: usize, rows: usize },
    #[error("duplicate document id {0:?}")]
    DuplicateDocId(String),
    #[error("document {0:?} has no sentences")]
    EmptyDocument(String),
    #[error("manifest mixes languages {first:?} and {other:?}")]
    MixedLanguages { first: String, other: String },
    #[error("pair file line {line}: expected two tab-separated columns")]
    PairSyntax { line: usize },
    #[error("document {0:?} appears more than once on the source side")]
    DuplicateSource(String),
    #[error("document {0:?} appears more than once on the target side")]
    DuplicateTarget(String),
}

impl CorpusError {
    fn io(path: &Path, source: io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, CorpusError>;

/// Dense `rows x dim` matrix of sentence (or document) vectors in `f32`.
///
/// Row identity comes from the paired [`CorpusManifest`]; see
/// [`CorpusManifest::sentence_ids`].
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    dim: usize,
    data: Vec<f32>,
}

impl EmbeddingMatrix {
    /// Validates shape and finiteness.
    pub fn new(dim: usize, data: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(CorpusError::ZeroDim);
        }
        if !data.len().is_multiple_of(dim) {
            return Err(CorpusError::ShapeMismatch {
                rows: data.len() / dim,
                dim,
                len: data.len(),
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(CorpusError::NonFiniteValue {
                row: pos / dim,
                col: pos % dim,
            });
        }
        Ok(Self { dim, data })
    }

    /// Rounds an `f64` matrix to `f32` storage.
    pub fn from_matrix(m: &Matrix) -> Result<Self> {
        Self::new(m.cols(), m.as_slice().iter().map(|&v| v as f32).collect())
    }

    pub fn to_matrix(&self) -> Matrix {
        Matrix::from_vec(
            self.rows(),
            self.dim,
            self.data.iter().map(|&v| f64::from(v)).collect(),
        )
        .expect("validated shape")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    /// Copies rows `start..start + count` into a new matrix.
    pub fn slice_rows(&self, start: usize, count: usize) -> Self {
        Self {
            dim: self.dim,
            data: self.data[start * self.dim..(start + count) * self.dim].to_vec(),
        }
    }

    pub fn read_from<R: Read>(mut reader: R) -> Result<Self> {
        let path = Path::new("<reader>");
        let mut header = [0u8; EMB1_HEADER_LEN];
        let got = read_up_to(&mut reader, &mut header).map_err(|e| CorpusError::io(path, e))?;
        if got < 4 || header[..4] != EMB1_MAGIC {
            let mut found = [0u8; 4];
            found[..got.min(4)].copy_from_slice(&header[..got.min(4)]);
            return Err(CorpusError::BadMagic { found });
        }
        if got < EMB1_HEADER_LEN {
            return Err(CorpusError::TruncatedFile {
                row: 0,
                expected: EMB1_HEADER_LEN as u64,
                found: got as u64,
            });
        }
        let version = u16::from_le_bytes([header[4], header[5]]);
        if version != EMB1_VERSION {
            return Err(CorpusError::VersionMismatch { found: version });
        }
        if header[6] != 0 || header[7] != 0 {
            return Err(CorpusError::ReservedNonZero);
        }
        let dim = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
        let rows = u32::from_le_bytes(header[12..16].try_into().unwrap()) as usize;
        if dim == 0 {
            return Err(CorpusError::ZeroDim);
        }

        let expected = rows as u64 * dim as u64 * 4;
        let mut payload = Vec::new();
        reader
            .by_ref()
            .take(expected)
            .read_to_end(&mut payload)
            .map_err(|e| CorpusError::io(path, e))?;
        if (payload.len() as u64) < expected {
            let row_bytes = dim * 4;
            return Err(CorpusError::TruncatedFile {
                row: payload.len() / row_bytes,
                expected,
                found: payload.len() as u64,
            });
        }
        let mut rest = Vec::new();
        reader
            .read_to_end(&mut rest)
            .map_err(|e| CorpusError::io(path, e))?;
        if !rest.is_empty() {
            return Err(CorpusError::TrailingBytes {
                extra: rest.len() as u64,
            });
        }
        let data = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        Self::new(dim, data)
    }

    pub fn write_to<W: Write>(&self, mut writer: W) -> io::Result<()> {
        let (dim, rows) = self.header_fields().map_err(io::Error::other)?;
        writer.write_all(&EMB1_MAGIC)?;
        writer.write_all(&EMB1_VERSION.to_le_bytes())?;
        writer.write_all(&[0, 0])?;
        writer.write_all(&dim.to_le_bytes())?;
        writer.write_all(&rows.to_le_bytes())?;
        for v in &self.data {
            writer.write_all(&v.to_le_bytes())?;
        }
        writer.flush()
    }

    fn header_fields(&self) -> Result<(u32, u32)> {
        match (u32::try_from(self.dim), u32::try_from(self.rows())) {
            (Ok(d), Ok(r)) => Ok((d, r)),
            _ => Err(CorpusError::TooLarge {
                rows: self.rows(),
                dim: self.dim,
            }),
        }
    }
}

fn read_up_to<R: Read>(reader: &mut R, buf: &mut [u8]) -> io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match reader.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(filled)
}

pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingMatrix> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| CorpusError::io(path, e))?;
    EmbeddingMatrix::read_from(BufReader::new(file)).map_err(|e| match e {
        CorpusError::Io { source, .. } => CorpusError::io(path, source),
        other => other,
    })
}

pub fn save_embeddings(m: &EmbeddingMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    m.header_fields()?;
    let file = File::create(path).map_err(|e| CorpusError::io(path, e))?;
    m.write_to(BufWriter::new(file))
        .map_err(|e| CorpusError::io(path, e))
}

/// One document: a contiguous run of embedding rows.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentRecord {
    pub doc_id: String,
    pub sentence_start: usize,
    pub sentence_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub url: Option<String>,
}

impl DocumentRecord {
    pub fn rows(&self) -> std::ops::Range<usize> {
        self.sentence_start..self.sentence_start + self.sentence_count
    }
}

#[derive(Serialize, Deserialize)]
struct ManifestLine {
    doc_id: String,
    lang: String,
    sentence_start: usize,
    sentence_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    url: Option<String>,
}

/// Identity of one embedding row.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SentenceId {
    pub doc_id: String,
    pub sentence_index: usize,
}

/// Documents of a monolingual corpus and their sentence ranges.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusManifest {
    pub language: String,
    pub docs: Vec<DocumentRecord>,
}

impl CorpusManifest {
    /// Checks that the documents tile `0..rows` exactly, in order.
    pub fn validate(&self, rows: usize) -> Result<()> {
        let mut seen = HashSet::with_capacity(self.docs.len());
        let mut next = 0usize;
        for doc in &self.docs {
            if doc.sentence_count == 0 {
                return Err(CorpusError::EmptyDocument(doc.doc_id.clone()));
            }
            if !seen.insert(doc.doc_id.as_str()) {
                return Err(CorpusError::DuplicateDocId(doc.doc_id.clone()));
            }
            if doc.sentence_start > next {
                return Err(CorpusError::RangeGap { row: next });
            }
            if doc.sentence_start < next {
                return Err(CorpusError::RangeOverlap {
                    row: doc.sentence_start,
                    doc_id: doc.doc_id.clone(),
                });
            }
            next = doc.sentence_start + doc.sentence_count;
        }
        if next != rows {
            return Err(CorpusError::RowCountMismatch {
                covered: next,
                rows,
            });
        }
        Ok(())
    }

    pub fn total_rows(&self) -> usize {
        self.docs.last().map_or(0, |d| d.sentence_start + d.sentence_count)
    }

    pub fn doc_ids(&self) -> Vec<String> {
        self.docs.iter().map(|d| d.doc_id.clone()).collect()
    }

    /// `(doc_id, sentence_index)` for every row, in row order.
    pub fn sentence_ids(&self) -> Vec<SentenceId> {
        self.docs
            .iter()
            .flat_map(|d| {
                (0..d.sentence_count).map(move |i| SentenceId {
                    doc_id: d.doc_id.clone(),
                    sentence_index: i,
                })
            })
            .collect()
    }

    pub fn parse<R: BufRead>(reader: R) -> Result<Self> {
        let mut language: Option<String> = None;
        let mut docs = Vec::new();
        for (idx, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| CorpusError::io(Path::new("<manifest>"), e))?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: ManifestLine =
                serde_json::from_str(&line).map_err(|e| CorpusError::ManifestSyntax {
                    line: idx + 1,
                    message: e.to_string(),
                })?;
            match &language {
                None => language = Some(parsed.lang.clone()),
                Some(l) if *l != parsed.lang => {
                    return Err(CorpusError::MixedLanguages {
                        first: l.clone(),
                        other: parsed.lang,
                    })
                }
                Some(_) => {}
            }
            docs.push(DocumentRecord {
                doc_id: parsed.doc_id,
                sentence_start: parsed.sentence_start,
                sentence_count: parsed.sentence_count,
                url: parsed.url,
            });
        }
        Ok(Self {
            language: language.unwrap_or_default(),
            docs,
        })
    }

    pub fn write_to<W: Write>(&self, mut writer: W) -> io::Result<()> {
        for d in &self.docs {
            let line = ManifestLine {
                doc_id: d.doc_id.clone(),
                lang: self.language.clone(),
                sentence_start: d.sentence_start,
                sentence_count: d.sentence_count,
                url: d.url.clone(),
            };
            serde_json::to_writer(&mut writer, &line)?;
            writer.write_all(b"\n")?;
        }
        writer.flush()
    }
}

/// Loads a manifest and validates it against the embedding row count.
pub fn load_manifest(path: impl AsRef<Path>, emb: &EmbeddingMatrix) -> Result<CorpusManifest> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| CorpusError::io(path, e))?;
    let manifest = CorpusManifest::parse(BufReader::new(file))?;
    manifest.validate(emb.rows())?;
    Ok(manifest)
}

pub fn save_manifest(manifest: &CorpusManifest, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| CorpusError::io(path, e))?;
    manifest
        .write_to(BufWriter::new(file))
        .map_err(|e| CorpusError::io(path, e))
}

/// Embeddings together with the manifest describing their rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub embeddings: EmbeddingMatrix,
    pub manifest: CorpusManifest,
}

impl Corpus {
    pub fn new(embeddings: EmbeddingMatrix, manifest: CorpusManifest) -> Result<Self> {
        manifest.validate(embeddings.rows())?;
        Ok(Self {
            embeddings,
            manifest,
        })
    }

    pub fn load(emb_path: impl AsRef<Path>, manifest_path: impl AsRef<Path>) -> Result<Self> {
        let embeddings = load_embeddings(emb_path)?;
        let manifest = load_manifest(manifest_path, &embeddings)?;
        Ok(Self {
            embeddings,
            manifest,
        })
    }

    pub fn language(&self) -> &str {
        &self.manifest.language
    }
}

/// One-to-one list of `(source_doc_id, target_doc_id)` pairs.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct GoldAlignment {
    pub pairs: Vec<(String, String)>,
}

impl GoldAlignment {
    pub fn new(pairs: Vec<(String, String)>) -> Result<Self> {
        let mut src = HashSet::new();
        let mut tgt = HashSet::new();
        for (s, t) in &pairs {
            if !src.insert(s.as_str()) {
                return Err(CorpusError::DuplicateSource(s.clone()));
            }
            if !tgt.insert(t.as_str()) {
                return Err(CorpusError::DuplicateTarget(t.clone()));
            }
        }
        Ok(Self { pairs })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Parses `source<TAB>target` lines (no header). Extra columns are ignored so
/// alignment output files can be read back.
pub fn parse_pairs<R: BufRead>(reader: R) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| CorpusError::io(Path::new("<pairs>"), e))?;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.is_empty() {
            continue;
        }
        let mut cols = line.split('\t');
        match (cols.next(), cols.next()) {
            (Some(s), Some(t)) if !s.is_empty() && !t.is_empty() => {
                pairs.push((s.to_string(), t.to_string()))
            }
            _ => return Err(CorpusError::PairSyntax { line: idx + 1 }),
        }
    }
    Ok(pairs)
}

pub fn load_pairs(path: impl AsRef<Path>) -> Result<Vec<(String, String)>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| CorpusError::io(path, e))?;
    parse_pairs(BufReader::new(file))
}

pub fn load_gold(path: impl AsRef<Path>) -> Result<GoldAlignment> {
    GoldAlignment::new(load_pairs(path)?)
}

pub fn write_pairs<W: Write>(pairs: &[(String, String)], mut writer: W) -> io::Result<()> {
    for (s, t) in pairs {
        writeln!(writer, "{s}\t{t}")?;
    }
    writer.flush()
}

pub fn save_pairs(pairs: &[(String, String)], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| CorpusError::io(path, e))?;
    write_pairs(pairs, BufWriter::new(file)).map_err(|e| CorpusError::io(path, e))
}
