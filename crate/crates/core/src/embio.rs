//! Binary embedding interchange and the deterministic mock encoder.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic      8 bytes   "ZEUSEMB1" (patch) or "ZEUSTXT1" (text)
//! version    u32       1
//! dim        u32
//! count      u64
//! model_id   u16 length + UTF-8
//! slide_id   u16 length + UTF-8   (text files: prompt-spec hash)
//! records    count x (u64 id, dim x f32)
//! ```
//!
//! Patch files key records by tile id, strictly increasing. Text files key
//! records by class id, non-decreasing: a per-prompt file holds N*M records
//! per class in prompt-expansion order, a prototype file holds exactly one.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::error::{invalid, Result, ZeusError};
use crate::prompts::{expand_prompts, PromptSpec};
use crate::stream::CounterStream;
use crate::tiling::TileGrid;

pub const PATCH_MAGIC: &[u8; 8] = b"ZEUSEMB1";
pub const TEXT_MAGIC: &[u8; 8] = b"ZEUSTXT1";
pub const FORMAT_VERSION: u32 = 1;

/// Bytes before the first record.
pub fn header_len(model_id: &str, slide_id: &str) -> usize {
    8 + 4 + 4 + 8 + 2 + model_id.len() + 2 + slide_id.len()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FileKind {
    Patch,
    Text,
}

impl FileKind {
    pub fn magic(self) -> &'static [u8; 8] {
        match self {
            FileKind::Patch => PATCH_MAGIC,
            FileKind::Text => TEXT_MAGIC,
        }
    }
}

/// An in-memory embedding file: header fields plus a flat record store.
///
/// For patch files this is the slide's embedding set `v_j` keyed by tile id.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingFile {
    pub kind: FileKind,
    pub model_id: String,
    /// Slide id for patch files, prompt-spec hash for text files.
    pub slide_id: String,
    dim: usize,
    ids: Vec<u64>,
    data: Vec<f32>,
}

/// Patch-embedding set of one slide.
pub type EmbeddingSet = EmbeddingFile;

fn check_label(what: &str, s: &str) -> Result<()> {
    if s.len() > u16::MAX as usize {
        return Err(invalid(format!("{what} longer than {} bytes", u16::MAX)));
    }
    Ok(())
}

impl EmbeddingFile {
    pub fn new(kind: FileKind, model_id: impl Into<String>, slide_id: impl Into<String>, dim: usize) -> Result<Self> {
        let (model_id, slide_id) = (model_id.into(), slide_id.into());
        check_label("model_id", &model_id)?;
        check_label("slide_id", &slide_id)?;
        if dim == 0 || dim > u32::MAX as usize {
            return Err(invalid(format!("embedding dimension {dim} out of range")));
        }
        Ok(Self {
            kind,
            model_id,
            slide_id,
            dim,
            ids: Vec::new(),
            data: Vec::new(),
        })
    }

    /// Patch-embedding set for one slide.
    pub fn patches(model_id: impl Into<String>, slide_id: impl Into<String>, dim: usize) -> Result<Self> {
        Self::new(FileKind::Patch, model_id, slide_id, dim)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn vector(&self, index: usize) -> &[f32] {
        &self.data[index * self.dim..(index + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, &[f32])> + '_ {
        self.ids.iter().copied().zip(self.data.chunks_exact(self.dim))
    }

    fn check_order(&self, prev: u64, id: u64) -> bool {
        match self.kind {
            FileKind::Patch => id > prev,
            FileKind::Text => id >= prev,
        }
    }

    /// Appends a record, enforcing id order, dimension and finiteness.
    pub fn push(&mut self, id: u64, vector: &[f32]) -> Result<()> {
        if vector.len() != self.dim {
            return Err(ZeusError::DimMismatch {
                expected: self.dim,
                found: vector.len(),
            });
        }
        if vector.iter().any(|x| !x.is_finite()) {
            return Err(invalid(format!("record {id} has a non-finite component")));
        }
        if let Some(&prev) = self.ids.last() {
            if !self.check_order(prev, id) {
                return Err(invalid(format!("record id {id} out of order after {prev}")));
            }
        }
        self.ids.push(id);
        self.data.extend_from_slice(vector);
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        check_label("model_id", &self.model_id)?;
        check_label("slide_id", &self.slide_id)?;
        if self.data.iter().any(|x| !x.is_finite()) {
            return Err(invalid("embedding set has a non-finite component"));
        }
        for w in self.ids.windows(2) {
            if !self.check_order(w[0], w[1]) {
                return Err(invalid(format!("record id {} out of order after {}", w[1], w[0])));
            }
        }
        Ok(())
    }

    /// Checks a patch set against a grid: one record per tile, same ids.
    pub fn check_matches_grid(&self, grid: &TileGrid) -> Result<()> {
        if self.kind != FileKind::Patch {
            return Err(invalid("expected a ZEUSEMB1 patch-embedding file"));
        }
        if self.len() != grid.len() || !self.ids.iter().zip(&grid.tiles).all(|(&id, t)| id == t.tile_id) {
            return Err(invalid(format!(
                "embedding records ({}) do not match the grid's {} tiles",
                self.len(),
                grid.len()
            )));
        }
        Ok(())
    }
}

/// Serializes `set`; validation runs before the first byte is written.
pub fn write_embeddings<W: Write>(set: &EmbeddingFile, mut out: W) -> Result<u64> {
    set.validate()?;
    let mut header = Vec::with_capacity(header_len(&set.model_id, &set.slide_id));
    header.extend_from_slice(set.kind.magic());
    header.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    header.extend_from_slice(&(set.dim as u32).to_le_bytes());
    header.extend_from_slice(&(set.len() as u64).to_le_bytes());
    for s in [&set.model_id, &set.slide_id] {
        header.extend_from_slice(&(s.len() as u16).to_le_bytes());
        header.extend_from_slice(s.as_bytes());
    }
    out.write_all(&header)?;
    let mut written = header.len() as u64;
    let mut record = Vec::with_capacity(8 + 4 * set.dim);
    for (id, v) in set.iter() {
        record.clear();
        record.extend_from_slice(&id.to_le_bytes());
        for x in v {
            record.extend_from_slice(&x.to_le_bytes());
        }
        out.write_all(&record)?;
        written += record.len() as u64;
    }
    out.flush()?;
    Ok(written)
}

fn read_exactly<R: Read>(input: &mut R, n: usize, what: &str) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    // `take` keeps allocation proportional to the bytes actually present.
    input.take(n as u64).read_to_end(&mut buf)?;
    if buf.len() < n {
        return Err(ZeusError::Truncated(format!(
            "{what}: needed {n} bytes, found {}",
            buf.len()
        )));
    }
    Ok(buf)
}

fn read_label<R: Read>(input: &mut R, what: &str) -> Result<String> {
    let len = read_exactly(input, 2, what)?;
    let len = u16::from_le_bytes([len[0], len[1]]) as usize;
    let bytes = read_exactly(input, len, what)?;
    String::from_utf8(bytes).map_err(|_| ZeusError::Corrupt(format!("{what} is not UTF-8")))
}

/// Parses and validates an embedding file of either kind.
pub fn read_embeddings<R: Read>(mut input: R) -> Result<EmbeddingFile> {
    let magic = read_exactly(&mut input, 8, "magic")?;
    let kind = if magic == PATCH_MAGIC {
        FileKind::Patch
    } else if magic == TEXT_MAGIC {
        FileKind::Text
    } else {
        return Err(ZeusError::Format(format!(
            "bad magic {:?}",
            String::from_utf8_lossy(&magic)
        )));
    };
    let fixed = read_exactly(&mut input, 16, "header")?;
    let version = u32::from_le_bytes(fixed[0..4].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(ZeusError::Format(format!("unsupported version {version}")));
    }
    let dim = u32::from_le_bytes(fixed[4..8].try_into().unwrap()) as usize;
    let count = u64::from_le_bytes(fixed[8..16].try_into().unwrap());
    if dim == 0 {
        return Err(ZeusError::Corrupt("dimension 0".into()));
    }
    let model_id = read_label(&mut input, "model_id")?;
    let slide_id = read_label(&mut input, "slide_id")?;
    let mut set = EmbeddingFile::new(kind, model_id, slide_id, dim)?;
    let record_len = 8 + 4 * dim;
    for i in 0..count {
        let raw = read_exactly(&mut input, record_len, &format!("record {i}"))?;
        let id = u64::from_le_bytes(raw[0..8].try_into().unwrap());
        if let Some(&prev) = set.ids.last() {
            if !set.check_order(prev, id) {
                return Err(ZeusError::Corrupt(format!("record id {id} out of order after {prev}")));
            }
        }
        let start = set.data.len();
        set.data.extend(
            raw[8..]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])),
        );
        if set.data[start..].iter().any(|x| !x.is_finite()) {
            return Err(ZeusError::Corrupt(format!("record {id} has a non-finite component")));
        }
        set.ids.push(id);
    }
    let mut probe = [0u8; 1];
    if input.read(&mut probe)? != 0 {
        return Err(ZeusError::Corrupt("trailing bytes after last record".into()));
    }
    Ok(set)
}

pub fn write_embeddings_file(set: &EmbeddingFile, path: &Path) -> Result<u64> {
    write_embeddings(set, BufWriter::new(File::create(path)?))
}

pub fn read_embeddings_file(path: &Path) -> Result<EmbeddingFile> {
    read_embeddings(BufReader::new(File::open(path)?))
}

/// Deterministic stand-in for a vision encoder: uniform `[-1, 1)` components
/// from the counter stream keyed by `(seed, tile_id)`, scaled to unit norm.
pub fn mock_encode(tile_id: u64, seed: u64, dim: usize) -> Result<Vec<f32>> {
    if dim == 0 {
        return Err(invalid("mock encoder dimension must be >= 1"));
    }
    let stream = CounterStream::new(seed, tile_id);
    let raw: Vec<f64> = (0..dim as u64).map(|i| 2.0 * stream.uniform(i) - 1.0).collect();
    let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        let mut v = vec![0.0f32; dim];
        v[0] = 1.0;
        return Ok(v);
    }
    Ok(raw.iter().map(|x| (x / norm) as f32).collect())
}

/// Mock patch embeddings for every tile of a grid.
pub fn mock_encode_grid(grid: &TileGrid, seed: u64, dim: usize, model_id: &str) -> Result<EmbeddingFile> {
    let vectors: Vec<Vec<f32>> = grid
        .tiles
        .par_iter()
        .map(|t| mock_encode(t.tile_id, seed, dim))
        .collect::<Result<_>>()?;
    let mut set = EmbeddingFile::patches(model_id, grid.slide.slide_id.clone(), dim)?;
    for (t, v) in grid.tiles.iter().zip(vectors) {
        set.push(t.tile_id, &v)?;
    }
    Ok(set)
}

/// Seed offset separating mock text vectors from mock patch vectors.
const TEXT_SEED_OFFSET: u64 = 0x5445_5854_0000_0000;

/// Mock per-prompt text embeddings in canonical prompt order. Prompt `k` of
/// class `c` is keyed by `(c << 32) | k`.
pub fn mock_encode_prompts(spec: &PromptSpec, seed: u64, dim: usize, model_id: &str) -> Result<EmbeddingFile> {
    let mut file = EmbeddingFile::new(FileKind::Text, model_id, spec.spec_hash(), dim)?;
    for class in &spec.classes {
        let prompts = expand_prompts(spec, class.class_id)?;
        for k in 0..prompts.len() as u64 {
            let key = (class.class_id << 32) | k;
            file.push(
                class.class_id,
                &mock_encode(key, seed.wrapping_add(TEXT_SEED_OFFSET), dim)?,
            )?;
        }
    }
    Ok(file)
}
