//! On-disk exchange formats.
//!
//! A tensor is stored as two files sharing a base path: `<base>.f32` holds the
//! raw little-endian row-major payload and `<base>.json` holds a metadata
//! sidecar. Concept sets are plain UTF-8 word lists, one concept per line.
//! Result records are JSON Lines.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView2};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DTYPE_F32: &str = "f32";
pub const LAYOUT_ROW_MAJOR: &str = "row-major";

/// Role of a tensor in the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TensorTag {
    Activations,
    ImageEmbeddings,
    TextEmbeddings,
    SentenceEmbeddings,
    Weights,
    Scores,
}

/// Spatial reduction the extractor applied to produce summarized activations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SummaryKind {
    Mean,
    Max,
}

impl SummaryKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SummaryKind::Mean => "mean",
            SummaryKind::Max => "max",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorMeta {
    pub rows: usize,
    pub cols: usize,
    pub dtype: String,
    pub layout: String,
    pub name: String,
    pub tag: TensorTag,
    /// Layer the activations were recorded from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layer: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary: Option<SummaryKind>,
    /// Identity of the encoder that produced an embedding matrix.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub encoder: Option<String>,
    /// Keys this engine does not interpret; kept so metadata round-trips.
    #[serde(flatten)]
    pub extra: BTreeMap<String, serde_json::Value>,
}

impl TensorMeta {
    pub fn new(name: impl Into<String>, tag: TensorTag, rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            dtype: DTYPE_F32.to_string(),
            layout: LAYOUT_ROW_MAJOR.to_string(),
            name: name.into(),
            tag,
            layer: None,
            summary: None,
            encoder: None,
            extra: BTreeMap::new(),
        }
    }

    pub fn with_layer(mut self, layer: impl Into<String>) -> Self {
        self.layer = Some(layer.into());
        self
    }

    pub fn with_summary(mut self, summary: SummaryKind) -> Self {
        self.summary = Some(summary);
        self
    }

    pub fn with_encoder(mut self, encoder: impl Into<String>) -> Self {
        self.encoder = Some(encoder.into());
        self
    }

    fn validate(&self, path: &Path) -> Result<()> {
        let bad = |message: String| Error::Metadata {
            path: path.to_path_buf(),
            message,
        };
        if self.dtype != DTYPE_F32 {
            return Err(bad(format!("unsupported dtype {:?}", self.dtype)));
        }
        if self.layout != LAYOUT_ROW_MAJOR {
            return Err(bad(format!("unsupported layout {:?}", self.layout)));
        }
        if self.rows == 0 || self.cols == 0 {
            return Err(bad(format!(
                "rows and cols must be positive, got {}x{}",
                self.rows, self.cols
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorFile {
    pub data: Array2<f32>,
    pub meta: TensorMeta,
}

/// Path of the raw payload for a tensor base path.
pub fn payload_path(base: &Path) -> PathBuf {
    with_suffix(&strip_known_suffix(base), "f32")
}

/// Path of the metadata sidecar for a tensor base path.
pub fn meta_path(base: &Path) -> PathBuf {
    with_suffix(&strip_known_suffix(base), "json")
}

// Accept either the base path or one of the two concrete file names.
fn strip_known_suffix(base: &Path) -> PathBuf {
    match base.extension().and_then(|e| e.to_str()) {
        Some("f32") | Some("json") => base.with_extension(""),
        _ => base.to_path_buf(),
    }
}

pub(crate) fn with_suffix(base: &Path, suffix: &str) -> PathBuf {
    let mut s = base.as_os_str().to_os_string();
    s.push(".");
    s.push(suffix);
    PathBuf::from(s)
}

/// Writes `<base>.f32` and `<base>.json`. Each file is written to a temporary
/// sibling and renamed into place.
pub fn write_tensor(base: &Path, matrix: ArrayView2<'_, f32>, meta: &TensorMeta) -> Result<()> {
    let (rows, cols) = matrix.dim();
    if rows != meta.rows || cols != meta.cols {
        return Err(Error::Shape(format!(
            "matrix is {rows}x{cols} but metadata declares {}x{}",
            meta.rows, meta.cols
        )));
    }
    let payload = payload_path(base);
    meta.validate(&meta_path(base))?;
    let mut bytes = Vec::with_capacity(rows * cols * 4);
    for (index, &value) in matrix.iter().enumerate() {
        if !value.is_finite() {
            return Err(Error::NonFinite {
                path: payload,
                index,
                row: index / cols,
                col: index % cols,
                value,
            });
        }
        bytes.extend_from_slice(&value.to_le_bytes());
    }
    let mut json = serde_json::to_vec_pretty(meta).expect("metadata serializes");
    json.push(b'\n');
    write_atomic(&payload, &bytes)?;
    write_atomic(&meta_path(base), &json)
}

pub fn read_tensor(base: &Path) -> Result<TensorFile> {
    let meta_file = meta_path(base);
    let payload_file = payload_path(base);
    let raw_meta = fs::read(&meta_file).map_err(|e| Error::io(&meta_file, e))?;
    let meta: TensorMeta = serde_json::from_slice(&raw_meta).map_err(|source| Error::Json {
        path: meta_file.clone(),
        source,
    })?;
    meta.validate(&meta_file)?;

    let bytes = fs::read(&payload_file).map_err(|e| Error::io(&payload_file, e))?;
    let expected = (meta.rows as u64) * (meta.cols as u64) * 4;
    if bytes.len() as u64 != expected {
        return Err(Error::SizeMismatch {
            path: payload_file,
            expected,
            actual: bytes.len() as u64,
        });
    }
    let mut values = Vec::with_capacity(meta.rows * meta.cols);
    for (index, chunk) in bytes.chunks_exact(4).enumerate() {
        let value = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
        if !value.is_finite() {
            return Err(Error::NonFinite {
                path: payload_file,
                index,
                row: index / meta.cols,
                col: index % meta.cols,
                value,
            });
        }
        values.push(value);
    }
    let data = Array2::from_shape_vec((meta.rows, meta.cols), values)
        .expect("payload length checked against metadata");
    Ok(TensorFile { data, meta })
}

/// Reads a tensor and checks its tag.
pub fn read_tagged(base: &Path, tag: TensorTag) -> Result<TensorFile> {
    let tensor = read_tensor(base)?;
    if tensor.meta.tag != tag {
        return Err(Error::Metadata {
            path: meta_path(base),
            message: format!("expected tag {tag:?}, found {:?}", tensor.meta.tag),
        });
    }
    Ok(tensor)
}

/// Writes `bytes` to a temporary sibling of `path`, then renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = with_suffix(path, "tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Ordered, case-insensitively unique list of concept strings.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConceptSet {
    concepts: Vec<String>,
    source_name: String,
}

fn dedup_key(concept: &str) -> String {
    concept.trim().to_lowercase()
}

impl ConceptSet {
    pub fn new(concepts: Vec<String>, source_name: impl Into<String>) -> Result<Self> {
        let source_name = source_name.into();
        let mut seen: HashMap<String, usize> = HashMap::with_capacity(concepts.len());
        let mut cleaned: Vec<String> = Vec::with_capacity(concepts.len());
        for (i, concept) in concepts.into_iter().enumerate() {
            let trimmed = concept.trim();
            if trimmed.is_empty() {
                return Err(Error::InvalidParameter(format!(
                    "concept {i} of {source_name} is empty"
                )));
            }
            if let Some(&first) = seen.get(&dedup_key(trimmed)) {
                return Err(Error::DuplicateConcept {
                    duplicate: trimmed.to_string(),
                    first: cleaned[first].clone(),
                    line: i + 1,
                });
            }
            seen.insert(dedup_key(trimmed), cleaned.len());
            cleaned.push(trimmed.to_string());
        }
        if cleaned.is_empty() {
            return Err(Error::EmptyConcepts {
                path: PathBuf::from(source_name),
            });
        }
        Ok(Self {
            concepts: cleaned,
            source_name,
        })
    }

    pub fn concepts(&self) -> &[String] {
        &self.concepts
    }

    pub fn source_name(&self) -> &str {
        &self.source_name
    }

    pub fn len(&self) -> usize {
        self.concepts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.concepts.is_empty()
    }

    pub fn get(&self, index: usize) -> Option<&str> {
        self.concepts.get(index).map(String::as_str)
    }

    /// Case-insensitive membership test, using the same normalization as dedup.
    pub fn contains(&self, concept: &str) -> bool {
        let key = dedup_key(concept);
        self.concepts.iter().any(|c| dedup_key(c) == key)
    }
}

/// Reads a word list. Lines are trimmed and blank lines skipped; line numbers
/// in duplicate errors refer to the file.
pub fn read_concepts(path: &Path) -> Result<ConceptSet> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let text = text.strip_prefix('\u{feff}').unwrap_or(&text);
    let mut seen: HashMap<String, String> = HashMap::new();
    let mut concepts = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let concept = line.trim();
        if concept.is_empty() {
            continue;
        }
        if let Some(first) = seen.get(&dedup_key(concept)) {
            return Err(Error::DuplicateConcept {
                duplicate: concept.to_string(),
                first: first.clone(),
                line: lineno + 1,
            });
        }
        seen.insert(dedup_key(concept), concept.to_string());
        concepts.push(concept.to_string());
    }
    if concepts.is_empty() {
        return Err(Error::EmptyConcepts {
            path: path.to_path_buf(),
        });
    }
    let source_name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    ConceptSet::new(concepts, source_name)
}

pub fn write_concepts(path: &Path, concepts: &ConceptSet) -> Result<()> {
    let mut text = concepts.concepts().join("\n");
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

/// Writes one JSON record per line.
pub fn write_jsonl<'a, T, I>(path: &Path, records: I) -> Result<()>
where
    T: Serialize + 'a,
    I: IntoIterator<Item = &'a T>,
{
    let tmp = with_suffix(path, "tmp");
    let file = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    let mut out = BufWriter::new(file);
    for record in records {
        serde_json::to_writer(&mut out, record).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        out.write_all(b"\n").map_err(|e| Error::io(&tmp, e))?;
    }
    out.flush().map_err(|e| Error::io(&tmp, e))?;
    drop(out);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        records.push(record);
    }
    Ok(records)
}

/// Writes a single pretty-printed JSON document.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}
