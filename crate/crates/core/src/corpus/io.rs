//! Manifest and feature-blob formats.
//!
//! Feature blob: 8-byte header of two little-endian `u32` (`n_frames`, `d_v`)
//! followed by `n_frames * d_v` little-endian `f32` values, row-major.
//!
//! Manifest: UTF-8 text whose first line is [`MANIFEST_MAGIC`]; every
//! following non-blank line is one JSON object
//! `{"id", "features", "title", "descriptions", "highlight", "split"}` where
//! `features` is a blob path relative to the manifest directory and
//! `highlight` is `{"start", "length"}` in pooled clip indices or `null`.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{pool_frames, CorpusRecord, PoolingConfig, Split};
use crate::error::{Error, Result};
use crate::highlight::HighlightWindow;
use crate::numerics::Tensor;

pub const MANIFEST_MAGIC: &str = "titlegen-manifest v1";

#[derive(Serialize, Deserialize)]
struct ManifestLine {
    id: String,
    features: String,
    title: String,
    #[serde(default)]
    descriptions: Vec<String>,
    #[serde(default)]
    highlight: Option<HighlightWindow>,
    split: Split,
}

/// Records plus any non-fatal warnings raised while loading.
#[derive(Clone, Debug, Default)]
pub struct LoadedCorpus {
    pub records: Vec<CorpusRecord>,
    pub warnings: Vec<String>,
}

pub fn write_blob(path: &Path, frames: &Tensor) -> Result<()> {
    if frames.rank() != 2 {
        return Err(Error::dim("write_blob", frames.shape(), &[0, 0]));
    }
    let mut bytes = Vec::with_capacity(8 + 4 * frames.len());
    bytes.extend_from_slice(&(frames.rows() as u32).to_le_bytes());
    bytes.extend_from_slice(&(frames.cols() as u32).to_le_bytes());
    for v in frames.data() {
        bytes.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_blob(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |msg: &str| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        msg: msg.to_string(),
    };
    if bytes.len() < 8 {
        return Err(bad("blob shorter than its header"));
    }
    let n = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
    let d = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    if n == 0 || d == 0 {
        return Err(bad("blob has zero frames or zero dimension"));
    }
    if bytes.len() != 8 + 4 * n * d {
        return Err(bad("blob length does not match header"));
    }
    let data = bytes[8..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Tensor::matrix(n, d, data)
}

/// Parses a manifest, reads and pools every blob, and validates records.
pub fn load_corpus(manifest: &Path, pooling: &PoolingConfig) -> Result<LoadedCorpus> {
    let text = fs::read_to_string(manifest).map_err(|e| Error::io(manifest, e))?;
    let base = manifest.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut loaded = LoadedCorpus::default();
    let mut lines = text.lines().enumerate();
    match lines.next() {
        None => {
            loaded.warnings.push(format!("{}: empty manifest", manifest.display()));
            return Ok(loaded);
        }
        Some((_, first)) if first.trim() == MANIFEST_MAGIC => {}
        Some(_) => {
            return Err(Error::Parse {
                path: manifest.to_path_buf(),
                line: 1,
                msg: format!("expected header {MANIFEST_MAGIC:?}"),
            })
        }
    }
    let mut seen = HashSet::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |msg: String| Error::Parse {
            path: manifest.to_path_buf(),
            line: i + 1,
            msg,
        };
        let entry: ManifestLine =
            serde_json::from_str(line).map_err(|e| parse_err(e.to_string()))?;
        if !seen.insert(entry.id.clone()) {
            return Err(parse_err(format!("duplicate id {}", entry.id)));
        }
        let blob = base.join(&entry.features);
        if !blob.is_file() {
            return Err(Error::MissingBlob { id: entry.id, path: blob });
        }
        let frames = read_blob(&blob)?;
        let record = CorpusRecord {
            id: entry.id,
            video: Arc::new(pool_frames(&frames, pooling)?),
            title: entry.title,
            descriptions: entry.descriptions,
            highlight: entry.highlight,
            split: entry.split,
        };
        record.validate()?;
        loaded.records.push(record);
    }
    if loaded.records.is_empty() {
        loaded.warnings.push(format!("{}: manifest has no records", manifest.display()));
    }
    Ok(loaded)
}

/// Writes `records` under `dir` as `manifest.txt` plus one blob per record in
/// `features/`. Returns the manifest path.
pub fn write_corpus(dir: &Path, records: &[CorpusRecord]) -> Result<PathBuf> {
    let feat_dir = dir.join("features");
    fs::create_dir_all(&feat_dir).map_err(|e| Error::io(&feat_dir, e))?;
    let manifest = dir.join("manifest.txt");
    let mut out = Vec::new();
    writeln!(out, "{MANIFEST_MAGIC}").unwrap();
    for (i, r) in records.iter().enumerate() {
        r.validate()?;
        let rel = format!("features/{i:05}.bin");
        write_blob(&dir.join(&rel), r.video.as_tensor())?;
        let line = ManifestLine {
            id: r.id.clone(),
            features: rel,
            title: r.title.clone(),
            descriptions: r.descriptions.clone(),
            highlight: r.highlight,
            split: r.split,
        };
        writeln!(out, "{}", serde_json::to_string(&line).expect("manifest line")).unwrap();
    }
    fs::write(&manifest, out).map_err(|e| Error::io(&manifest, e))?;
    Ok(manifest)
}
