//! On-disk trajectory bundles.
//!
//! A bundle is a directory holding one `manifest.json` plus binary tensor
//! files per sequence:
//!
//! ```text
//! manifest.json            UTF-8 JSON, see [`BundleManifest`]
//! seq_<id>.bin             activations  [layer][token][dim]
//! seq_<id>.logits.bin      tracked logits [token][tracked]   (when tracked ids exist)
//! seq_<id>.emb.bin         pre-block embedding rows          (when `embedding_stored`)
//! ```
//!
//! Activation and embedding files start with the magic `TRJB` followed by
//! four little-endian `u32`s: format version, n_layers, n_tokens, hidden_dim.
//! Logit files start with `TRJL`, then version, n_tokens, n_tracked. The
//! payload is row-major little-endian IEEE-754 float32.

use std::collections::HashSet;
use std::fs::{self, File};
use std::io::{BufWriter, Read, Seek, SeekFrom, Write};
use std::ops::Range;
use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const FORMAT_VERSION: u32 = 1;
pub const ACTIVATION_MAGIC: [u8; 4] = *b"TRJB";
pub const LOGIT_MAGIC: [u8; 4] = *b"TRJL";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const ACTIVATION_HEADER_LEN: u64 = 20;
pub const LOGIT_HEADER_LEN: u64 = 16;

/// Default layer tag: index 0 is the residual stream after the first block.
pub const LAYER_SEMANTICS_BLOCK_OUTPUT: &str = "block-output";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed manifest {path}: {source}")]
    Manifest {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("format version mismatch in {path}: found {found}, expected {expected}")]
    VersionMismatch { path: PathBuf, found: u32, expected: u32 },
    #[error("bad magic bytes in {path}: found {found:?}, expected {expected:?}")]
    BadMagic { path: PathBuf, found: [u8; 4], expected: [u8; 4] },
    #[error("tensor file for sequence `{sequence}` is truncated: {actual} bytes, expected {expected}")]
    Truncated { sequence: String, expected: u64, actual: u64 },
    #[error("tensor file for sequence `{sequence}` has {extra} trailing bytes")]
    TrailingData { sequence: String, extra: u64 },
    #[error("shape mismatch for sequence `{sequence}`: expected {expected:?}, found {found:?}")]
    ShapeMismatch { sequence: String, expected: Vec<usize>, found: Vec<usize> },
    #[error("non-finite value in sequence `{sequence}` at flat index {index}")]
    NonFinite { sequence: String, index: usize },
    #[error("span [{start}, {end}) of sequence `{sequence}` exceeds its {n_tokens} tokens")]
    SpanOutOfRange { sequence: String, start: usize, end: usize, n_tokens: usize },
    #[error("span [{start}, {end}) of sequence `{sequence}` is empty or reversed")]
    InvalidSpan { sequence: String, start: usize, end: usize },
    #[error("duplicate sequence id `{0}`")]
    DuplicateSequence(String),
    #[error("sequence id `{0}` must be nonempty and use only [A-Za-z0-9_.-]")]
    InvalidSequenceId(String),
    #[error("sequence `{0}` has no tokens")]
    EmptyTokens(String),
    #[error("bundle stores {0} layers, at least 2 are required")]
    TooFewLayers(usize),
    #[error("unknown sequence `{0}`")]
    UnknownSequence(String),
    #[error("expected tensors for {expected} sequences, got {found}")]
    TensorCount { expected: usize, found: usize },
    #[error("sequence `{0}`: tracked logits required but missing")]
    MissingLogits(String),
    #[error("sequence `{0}`: logits supplied but the bundle tracks no tokens")]
    UnexpectedLogits(String),
    #[error("sequence `{0}`: embedding rows present/absent inconsistently with the manifest")]
    EmbeddingMismatch(String),
}

pub type Result<T, E = StoreError> = std::result::Result<T, E>;

/// Experimental condition a sequence belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Condition {
    Short,
    Long,
    LongRepeat,
    ZeroShot,
    ShotK,
    RandomControl,
    Natural,
}

impl Condition {
    pub const ALL: [Condition; 7] = [
        Condition::Short,
        Condition::Long,
        Condition::LongRepeat,
        Condition::ZeroShot,
        Condition::ShotK,
        Condition::RandomControl,
        Condition::Natural,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Condition::Short => "short",
            Condition::Long => "long",
            Condition::LongRepeat => "long-repeat",
            Condition::ZeroShot => "zero-shot",
            Condition::ShotK => "shot-k",
            Condition::RandomControl => "random-control",
            Condition::Natural => "natural",
        }
    }
}

impl std::fmt::Display for Condition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Condition {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Condition::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| format!("unknown condition `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpanLabel {
    TestWindow,
    Prefix,
    Question,
    Transition,
    Choice,
    Answer,
    ShotBoundary,
}

impl SpanLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            SpanLabel::TestWindow => "test-window",
            SpanLabel::Prefix => "prefix",
            SpanLabel::Question => "question",
            SpanLabel::Transition => "transition",
            SpanLabel::Choice => "choice",
            SpanLabel::Answer => "answer",
            SpanLabel::ShotBoundary => "shot-boundary",
        }
    }
}

/// Half-open token range `[start, end)` with a label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledSpan {
    pub start: usize,
    pub end: usize,
    pub label: SpanLabel,
}

impl LabeledSpan {
    pub fn new(start: usize, end: usize, label: SpanLabel) -> Self {
        Self { start, end, label }
    }

    pub fn range(&self) -> Range<usize> {
        self.start..self.end
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceRecord {
    pub id: String,
    pub token_ids: Vec<u32>,
    pub condition: Condition,
    #[serde(default)]
    pub spans: Vec<LabeledSpan>,
    /// Task-specific ground truth (grid walk, expected answer, ...).
    #[serde(default)]
    pub truth: serde_json::Value,
}

impl SequenceRecord {
    pub fn n_tokens(&self) -> usize {
        self.token_ids.len()
    }

    pub fn spans_labeled(&self, label: SpanLabel) -> impl Iterator<Item = &LabeledSpan> {
        self.spans.iter().filter(move |s| s.label == label)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleManifest {
    pub format_version: u32,
    pub model_id: String,
    pub n_layers_stored: usize,
    pub layer_semantics: String,
    pub hidden_dim: usize,
    pub tokenizer_id: String,
    pub sequences: Vec<SequenceRecord>,
    pub tracked_token_ids: Vec<u32>,
    pub seed: u64,
    /// Whether `seq_<id>.emb.bin` files with pre-block embeddings exist.
    #[serde(default)]
    pub embedding_stored: bool,
}

impl BundleManifest {
    pub fn new(model_id: impl Into<String>, n_layers_stored: usize, hidden_dim: usize) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            model_id: model_id.into(),
            n_layers_stored,
            layer_semantics: LAYER_SEMANTICS_BLOCK_OUTPUT.to_string(),
            hidden_dim,
            tokenizer_id: String::new(),
            sequences: Vec::new(),
            tracked_token_ids: Vec::new(),
            seed: 0,
            embedding_stored: false,
        }
    }

    pub fn sequence(&self, id: &str) -> Option<&SequenceRecord> {
        self.sequences.iter().find(|s| s.id == id)
    }

    /// Checks every manifest-level invariant.
    pub fn validate(&self) -> Result<()> {
        if self.n_layers_stored < 2 {
            return Err(StoreError::TooFewLayers(self.n_layers_stored));
        }
        let mut seen = HashSet::new();
        for seq in &self.sequences {
            if !is_valid_id(&seq.id) {
                return Err(StoreError::InvalidSequenceId(seq.id.clone()));
            }
            if !seen.insert(seq.id.as_str()) {
                return Err(StoreError::DuplicateSequence(seq.id.clone()));
            }
            if seq.token_ids.is_empty() {
                return Err(StoreError::EmptyTokens(seq.id.clone()));
            }
            for span in &seq.spans {
                check_span(&seq.id, span.start, span.end, seq.n_tokens())?;
            }
        }
        Ok(())
    }
}

fn is_valid_id(id: &str) -> bool {
    !id.is_empty()
        && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
        && id != "."
        && id != ".."
}

fn check_span(sequence: &str, start: usize, end: usize, n_tokens: usize) -> Result<()> {
    if start >= end {
        return Err(StoreError::InvalidSpan { sequence: sequence.to_string(), start, end });
    }
    if end > n_tokens {
        return Err(StoreError::SpanOutOfRange {
            sequence: sequence.to_string(),
            start,
            end,
            n_tokens,
        });
    }
    Ok(())
}

/// Tensors for one sequence, in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceTensors {
    /// `(n_layers_stored, n_tokens, hidden_dim)`.
    pub activations: Array3<f32>,
    /// `(n_tokens, n_tracked)`; required iff the manifest tracks tokens.
    pub logits: Option<Array2<f32>>,
    /// `(n_tokens, hidden_dim)`; required iff `embedding_stored`.
    pub embedding: Option<Array2<f32>>,
}

impl SequenceTensors {
    pub fn new(activations: Array3<f32>) -> Self {
        Self { activations, logits: None, embedding: None }
    }

    pub fn with_logits(mut self, logits: Array2<f32>) -> Self {
        self.logits = Some(logits);
        self
    }
}

pub fn activation_path(root: &Path, id: &str) -> PathBuf {
    root.join(format!("seq_{id}.bin"))
}

pub fn logit_path(root: &Path, id: &str) -> PathBuf {
    root.join(format!("seq_{id}.logits.bin"))
}

pub fn embedding_path(root: &Path, id: &str) -> PathBuf {
    root.join(format!("seq_{id}.emb.bin"))
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io { path: path.to_path_buf(), source }
}

fn check_finite(sequence: &str, data: impl Iterator<Item = f32>) -> Result<()> {
    for (index, v) in data.enumerate() {
        if !v.is_finite() {
            return Err(StoreError::NonFinite { sequence: sequence.to_string(), index });
        }
    }
    Ok(())
}

/// Writes `manifest` and its tensors into `dir`, creating it if needed.
///
/// Identical inputs always produce identical bytes.
pub fn write_bundle(dir: &Path, manifest: &BundleManifest, tensors: &[SequenceTensors]) -> Result<()> {
    manifest.validate()?;
    if tensors.len() != manifest.sequences.len() {
        return Err(StoreError::TensorCount {
            expected: manifest.sequences.len(),
            found: tensors.len(),
        });
    }
    let n_tracked = manifest.tracked_token_ids.len();
    for (seq, t) in manifest.sequences.iter().zip(tensors) {
        let expected = vec![manifest.n_layers_stored, seq.n_tokens(), manifest.hidden_dim];
        if t.activations.shape() != expected.as_slice() {
            return Err(StoreError::ShapeMismatch {
                sequence: seq.id.clone(),
                expected,
                found: t.activations.shape().to_vec(),
            });
        }
        check_finite(&seq.id, t.activations.iter().copied())?;
        match (&t.logits, n_tracked) {
            (None, 0) => {}
            (Some(_), 0) => return Err(StoreError::UnexpectedLogits(seq.id.clone())),
            (None, _) => return Err(StoreError::MissingLogits(seq.id.clone())),
            (Some(l), n) => {
                let expected = vec![seq.n_tokens(), n];
                if l.shape() != expected.as_slice() {
                    return Err(StoreError::ShapeMismatch {
                        sequence: seq.id.clone(),
                        expected,
                        found: l.shape().to_vec(),
                    });
                }
                check_finite(&seq.id, l.iter().copied())?;
            }
        }
        match (&t.embedding, manifest.embedding_stored) {
            (None, false) => {}
            (Some(e), true) => {
                let expected = vec![seq.n_tokens(), manifest.hidden_dim];
                if e.shape() != expected.as_slice() {
                    return Err(StoreError::ShapeMismatch {
                        sequence: seq.id.clone(),
                        expected,
                        found: e.shape().to_vec(),
                    });
                }
                check_finite(&seq.id, e.iter().copied())?;
            }
            _ => return Err(StoreError::EmbeddingMismatch(seq.id.clone())),
        }
    }

    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let manifest_path = dir.join(MANIFEST_FILE);
    let mut text = serde_json::to_string_pretty(manifest)
        .map_err(|source| StoreError::Manifest { path: manifest_path.clone(), source })?;
    text.push('\n');
    fs::write(&manifest_path, text).map_err(io_err(&manifest_path))?;

    for (seq, t) in manifest.sequences.iter().zip(tensors) {
        let (l, n, d) = t.activations.dim();
        write_tensor_file(
            &activation_path(dir, &seq.id),
            ACTIVATION_MAGIC,
            &[l as u32, n as u32, d as u32],
            t.activations.iter().copied(),
        )?;
        if let Some(logits) = &t.logits {
            let (n, k) = logits.dim();
            write_tensor_file(&logit_path(dir, &seq.id), LOGIT_MAGIC, &[n as u32, k as u32], logits.iter().copied())?;
        }
        if let Some(emb) = &t.embedding {
            let (n, d) = emb.dim();
            write_tensor_file(
                &embedding_path(dir, &seq.id),
                ACTIVATION_MAGIC,
                &[1, n as u32, d as u32],
                emb.iter().copied(),
            )?;
        }
    }
    Ok(())
}

fn write_tensor_file(path: &Path, magic: [u8; 4], dims: &[u32], data: impl Iterator<Item = f32>) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    let mut write = |bytes: &[u8]| w.write_all(bytes).map_err(io_err(path));
    write(&magic)?;
    write(&FORMAT_VERSION.to_le_bytes())?;
    for d in dims {
        write(&d.to_le_bytes())?;
    }
    for v in data {
        write(&v.to_le_bytes())?;
    }
    w.flush().map_err(io_err(path))
}

/// Parsed fixed-size header of a tensor file.
struct Header {
    dims: Vec<usize>,
}

fn read_header(file: &mut File, path: &Path, magic: [u8; 4], n_dims: usize) -> Result<Header> {
    let mut head = vec![0u8; 8 + 4 * n_dims];
    let len = file.metadata().map_err(io_err(path))?.len();
    if len < head.len() as u64 {
        // Too short for a header: report magic first if even that is wrong.
        let mut buf = Vec::new();
        file.read_to_end(&mut buf).map_err(io_err(path))?;
        if buf.len() >= 4 && buf[..4] != magic {
            return Err(StoreError::BadMagic {
                path: path.to_path_buf(),
                found: [buf[0], buf[1], buf[2], buf[3]],
                expected: magic,
            });
        }
        return Err(StoreError::Io {
            path: path.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::UnexpectedEof, "file shorter than header"),
        });
    }
    file.read_exact(&mut head).map_err(io_err(path))?;
    let found = [head[0], head[1], head[2], head[3]];
    if found != magic {
        return Err(StoreError::BadMagic { path: path.to_path_buf(), found, expected: magic });
    }
    let word = |i: usize| u32::from_le_bytes([head[i], head[i + 1], head[i + 2], head[i + 3]]);
    let version = word(4);
    if version != FORMAT_VERSION {
        return Err(StoreError::VersionMismatch {
            path: path.to_path_buf(),
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let dims = (0..n_dims).map(|k| word(8 + 4 * k) as usize).collect();
    Ok(Header { dims })
}

/// Opens a tensor file and checks magic, version, shape and exact length.
fn open_checked(path: &Path, sequence: &str, magic: [u8; 4], expected_dims: &[usize]) -> Result<File> {
    let mut file = File::open(path).map_err(io_err(path))?;
    let header = read_header(&mut file, path, magic, expected_dims.len())?;
    if header.dims != expected_dims {
        return Err(StoreError::ShapeMismatch {
            sequence: sequence.to_string(),
            expected: expected_dims.to_vec(),
            found: header.dims,
        });
    }
    let header_len = 8 + 4 * expected_dims.len() as u64;
    let expected = header_len + 4 * expected_dims.iter().product::<usize>() as u64;
    let actual = file.metadata().map_err(io_err(path))?.len();
    if actual < expected {
        return Err(StoreError::Truncated { sequence: sequence.to_string(), expected, actual });
    }
    if actual > expected {
        return Err(StoreError::TrailingData { sequence: sequence.to_string(), extra: actual - expected });
    }
    Ok(file)
}

fn read_f32s(file: &mut File, path: &Path, count: usize) -> Result<Vec<f32>> {
    let mut bytes = vec![0u8; count * 4];
    file.read_exact(&mut bytes).map_err(io_err(path))?;
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

/// A validated bundle on disk. Tensor payloads are read on demand.
#[derive(Debug, Clone)]
pub struct TrajectoryBundle {
    root: PathBuf,
    pub manifest: BundleManifest,
}

/// Reads and validates a bundle directory.
///
/// Every manifest invariant and every tensor file header, shape and length is
/// checked before returning.
pub fn read_bundle(dir: &Path) -> Result<TrajectoryBundle> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&manifest_path).map_err(io_err(&manifest_path))?;
    let raw: serde_json::Value = serde_json::from_str(&text)
        .map_err(|source| StoreError::Manifest { path: manifest_path.clone(), source })?;
    // Check the version before the full schema so old bundles fail clearly.
    if let Some(found) = raw.get("format_version").and_then(|v| v.as_u64()) {
        if found != FORMAT_VERSION as u64 {
            return Err(StoreError::VersionMismatch {
                path: manifest_path,
                found: found as u32,
                expected: FORMAT_VERSION,
            });
        }
    }
    let manifest: BundleManifest = serde_json::from_value(raw)
        .map_err(|source| StoreError::Manifest { path: manifest_path.clone(), source })?;
    manifest.validate()?;

    let bundle = TrajectoryBundle { root: dir.to_path_buf(), manifest };
    for seq in &bundle.manifest.sequences {
        bundle.open_activations(seq)?;
        if !bundle.manifest.tracked_token_ids.is_empty() {
            bundle.open_logits(seq)?;
        }
        if bundle.manifest.embedding_stored {
            bundle.open_embedding(seq)?;
        }
    }
    Ok(bundle)
}

impl TrajectoryBundle {
    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn n_sequences(&self) -> usize {
        self.manifest.sequences.len()
    }

    pub fn n_layers(&self) -> usize {
        self.manifest.n_layers_stored
    }

    pub fn hidden_dim(&self) -> usize {
        self.manifest.hidden_dim
    }

    pub fn sequences(&self) -> &[SequenceRecord] {
        &self.manifest.sequences
    }

    pub fn sequence(&self, id: &str) -> Result<&SequenceRecord> {
        self.manifest
            .sequence(id)
            .ok_or_else(|| StoreError::UnknownSequence(id.to_string()))
    }

    fn activation_dims(&self, seq: &SequenceRecord) -> [usize; 3] {
        [self.manifest.n_layers_stored, seq.n_tokens(), self.manifest.hidden_dim]
    }

    fn open_activations(&self, seq: &SequenceRecord) -> Result<File> {
        open_checked(&activation_path(&self.root, &seq.id), &seq.id, ACTIVATION_MAGIC, &self.activation_dims(seq))
    }

    fn open_logits(&self, seq: &SequenceRecord) -> Result<File> {
        let dims = [seq.n_tokens(), self.manifest.tracked_token_ids.len()];
        open_checked(&logit_path(&self.root, &seq.id), &seq.id, LOGIT_MAGIC, &dims)
    }

    fn open_embedding(&self, seq: &SequenceRecord) -> Result<File> {
        let dims = [1, seq.n_tokens(), self.manifest.hidden_dim];
        open_checked(&embedding_path(&self.root, &seq.id), &seq.id, ACTIVATION_MAGIC, &dims)
    }

    /// Full `(layers, tokens, dim)` activation tensor of one sequence.
    pub fn load_activations(&self, id: &str) -> Result<Array3<f32>> {
        let seq = self.sequence(id)?;
        let path = activation_path(&self.root, id);
        let mut file = self.open_activations(seq)?;
        let dims = self.activation_dims(seq);
        let data = read_f32s(&mut file, &path, dims.iter().product())?;
        check_finite(id, data.iter().copied())?;
        Ok(Array3::from_shape_vec((dims[0], dims[1], dims[2]), data).expect("shape checked"))
    }

    /// Tracked logits `(tokens, n_tracked)`, or `None` when the bundle tracks no tokens.
    pub fn load_logits(&self, id: &str) -> Result<Option<Array2<f32>>> {
        let seq = self.sequence(id)?;
        let n_tracked = self.manifest.tracked_token_ids.len();
        if n_tracked == 0 {
            return Ok(None);
        }
        let path = logit_path(&self.root, id);
        let mut file = self.open_logits(seq)?;
        let data = read_f32s(&mut file, &path, seq.n_tokens() * n_tracked)?;
        check_finite(id, data.iter().copied())?;
        Ok(Some(Array2::from_shape_vec((seq.n_tokens(), n_tracked), data).expect("shape checked")))
    }

    pub fn load_embedding(&self, id: &str) -> Result<Option<Array2<f32>>> {
        let seq = self.sequence(id)?;
        if !self.manifest.embedding_stored {
            return Ok(None);
        }
        let path = embedding_path(&self.root, id);
        let mut file = self.open_embedding(seq)?;
        let n = seq.n_tokens();
        let d = self.manifest.hidden_dim;
        let data = read_f32s(&mut file, &path, n * d)?;
        check_finite(id, data.iter().copied())?;
        Ok(Some(Array2::from_shape_vec((n, d), data).expect("shape checked")))
    }

    pub fn load(&self, id: &str) -> Result<SequenceTensors> {
        Ok(SequenceTensors {
            activations: self.load_activations(id)?,
            logits: self.load_logits(id)?,
            embedding: self.load_embedding(id)?,
        })
    }

    /// Copies tokens `span` at every stored layer: `(layers, span.len(), dim)`.
    ///
    /// Only the requested rows are read from disk.
    pub fn slice_window(&self, id: &str, span: Range<usize>) -> Result<Array3<f32>> {
        let seq = self.sequence(id)?;
        check_span(id, span.start, span.end, seq.n_tokens())?;
        let path = activation_path(&self.root, id);
        let mut file = self.open_activations(seq)?;
        let [n_layers, n_tokens, dim] = self.activation_dims(seq);
        let width = span.len();
        let mut out = Vec::with_capacity(n_layers * width * dim);
        for layer in 0..n_layers {
            let offset = ACTIVATION_HEADER_LEN + 4 * ((layer * n_tokens + span.start) * dim) as u64;
            file.seek(SeekFrom::Start(offset)).map_err(io_err(&path))?;
            out.extend(read_f32s(&mut file, &path, width * dim)?);
        }
        check_finite(id, out.iter().copied())?;
        Ok(Array3::from_shape_vec((n_layers, width, dim), out).expect("shape checked"))
    }
}
