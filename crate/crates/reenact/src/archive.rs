//! Named-tensor archives: a JSON manifest describing name, shape and byte
//! layout, next to a flat binary blob of little-endian `f64` data.
//!
//! The manifest lives at `<stem>.json` and the data at `<stem>.bin`, so any
//! runtime can read the parameters without this crate.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::Tensor;

const FORMAT: &str = "ntensor-v1";

#[derive(Debug, Error)]
pub enum ArchiveError {
    #[error("archive io {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("archive manifest {path}: {source}")]
    Manifest { path: PathBuf, source: serde_json::Error },
    #[error("archive {path}: unsupported format {format:?}")]
    UnsupportedFormat { path: PathBuf, format: String },
    #[error("archive {path}: tensor {name} spans {span} bytes but the blob has {len}")]
    OutOfBounds { path: PathBuf, name: String, span: usize, len: usize },
    #[error("archive {path}: tensor {name} shape {shape:?} disagrees with its byte length {len}")]
    ShapeMismatch { path: PathBuf, name: String, shape: Vec<usize>, len: usize },
    #[error("archive {path}: missing tensor {name}")]
    MissingTensor { path: PathBuf, name: String },
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
    byte_offset: usize,
    byte_len: usize,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format: String,
    dtype: String,
    byte_order: String,
    tensors: Vec<ManifestEntry>,
}

fn bin_path(manifest_path: &Path) -> PathBuf {
    manifest_path.with_extension("bin")
}

/// Write tensors to `<manifest_path>` + the sibling `.bin`, sorted by name.
pub fn save(manifest_path: &Path, tensors: &BTreeMap<String, Tensor>) -> Result<(), ArchiveError> {
    let mut blob = Vec::new();
    let mut entries = Vec::with_capacity(tensors.len());
    for (name, t) in tensors {
        let byte_offset = blob.len();
        for v in t.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
        entries.push(ManifestEntry {
            name: name.clone(),
            shape: t.shape().to_vec(),
            byte_offset,
            byte_len: blob.len() - byte_offset,
        });
    }
    let manifest = Manifest {
        format: FORMAT.to_string(),
        dtype: "f64".to_string(),
        byte_order: "little".to_string(),
        tensors: entries,
    };
    let io_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source| ArchiveError::Io { path, source }
    };
    std::fs::write(
        manifest_path,
        serde_json::to_string_pretty(&manifest).expect("manifest serialization cannot fail"),
    )
    .map_err(io_err(manifest_path))?;
    let bp = bin_path(manifest_path);
    std::fs::write(&bp, blob).map_err(io_err(&bp))?;
    Ok(())
}

/// Load every tensor of an archive.
pub fn load(manifest_path: &Path) -> Result<BTreeMap<String, Tensor>, ArchiveError> {
    let text = std::fs::read_to_string(manifest_path).map_err(|source| ArchiveError::Io {
        path: manifest_path.to_path_buf(),
        source,
    })?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|source| {
        ArchiveError::Manifest { path: manifest_path.to_path_buf(), source }
    })?;
    if manifest.format != FORMAT || manifest.dtype != "f64" || manifest.byte_order != "little" {
        return Err(ArchiveError::UnsupportedFormat {
            path: manifest_path.to_path_buf(),
            format: format!("{}/{}/{}", manifest.format, manifest.dtype, manifest.byte_order),
        });
    }
    let bp = bin_path(manifest_path);
    let blob = std::fs::read(&bp).map_err(|source| ArchiveError::Io { path: bp, source })?;

    let mut out = BTreeMap::new();
    for e in manifest.tensors {
        let end = e.byte_offset + e.byte_len;
        if end > blob.len() {
            return Err(ArchiveError::OutOfBounds {
                path: manifest_path.to_path_buf(),
                name: e.name,
                span: end,
                len: blob.len(),
            });
        }
        let numel: usize = e.shape.iter().product();
        if numel * 8 != e.byte_len {
            return Err(ArchiveError::ShapeMismatch {
                path: manifest_path.to_path_buf(),
                name: e.name,
                shape: e.shape,
                len: e.byte_len,
            });
        }
        let data: Vec<f64> = blob[e.byte_offset..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        out.insert(e.name, Tensor::new(e.shape, data));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_bits() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("params.json");
        let mut tensors = BTreeMap::new();
        tensors.insert("a.weight".to_string(), Tensor::new(vec![2, 2], vec![1.5, -2.25, 1e-300, f64::MIN_POSITIVE]));
        tensors.insert("a.bias".to_string(), Tensor::from_vec(vec![0.1 + 0.2]));
        save(&path, &tensors).unwrap();
        let back = load(&path).unwrap();
        assert_eq!(tensors, back);
    }

    #[test]
    fn truncated_blob_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("params.json");
        let mut tensors = BTreeMap::new();
        tensors.insert("w".to_string(), Tensor::from_vec(vec![1.0, 2.0, 3.0]));
        save(&path, &tensors).unwrap();
        std::fs::write(dir.path().join("params.bin"), [0u8; 8]).unwrap();
        assert!(matches!(load(&path), Err(ArchiveError::OutOfBounds { .. })));
    }
}
