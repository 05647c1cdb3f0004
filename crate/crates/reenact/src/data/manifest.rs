//! JSON-Lines dataset manifests: one entry per line with image, identity,
//! expression and landmark-file fields, all paths relative to the manifest's
//! directory.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::geometry::LandmarkSet;
use crate::image_io;
use crate::tensor::Tensor;

use super::DataError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub image_path: String,
    pub identity_id: String,
    pub expression_id: String,
    pub landmarks_path: String,
}

#[derive(Clone, Debug)]
pub struct DatasetManifest {
    root: PathBuf,
    entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn new(root: PathBuf, entries: Vec<ManifestEntry>) -> Self {
        Self { root, entries }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn identities(&self) -> BTreeSet<&str> {
        self.entries.iter().map(|e| e.identity_id.as_str()).collect()
    }

    pub fn image_path(&self, entry: &ManifestEntry) -> PathBuf {
        self.root.join(&entry.image_path)
    }

    pub fn landmarks_path(&self, entry: &ManifestEntry) -> PathBuf {
        self.root.join(&entry.landmarks_path)
    }

    /// Load one entry's image and landmarks.
    pub fn load_entry(&self, index: usize) -> Result<(Tensor, LandmarkSet), DataError> {
        let entry = &self.entries[index];
        let image = image_io::load_png(&self.image_path(entry))?;
        let landmarks = LandmarkSet::load(&self.landmarks_path(entry))?;
        Ok((image, landmarks))
    }

    /// Serialize to JSON Lines at `path` (which becomes the new root's
    /// manifest file; paths inside stay relative).
    pub fn save(&self, path: &Path) -> Result<(), DataError> {
        let mut text = String::new();
        for e in &self.entries {
            text.push_str(&serde_json::to_string(e).expect("entry serialization cannot fail"));
            text.push('\n');
        }
        std::fs::write(path, text).map_err(|source| DataError::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

/// Parse and validate a JSON-Lines manifest. Every referenced file must
/// exist under the manifest's directory; failures name the offending row.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest, DataError> {
    let text = std::fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let root = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let mut entries = Vec::new();
    for (row, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let entry: ManifestEntry = serde_json::from_str(line).map_err(|source| {
            DataError::ManifestRow { path: path.to_path_buf(), row, source }
        })?;
        for rel in [&entry.image_path, &entry.landmarks_path] {
            let p = root.join(rel);
            if !p.exists() {
                return Err(DataError::DanglingPath { row, path: p });
            }
        }
        entries.push(entry);
    }
    if entries.is_empty() {
        return Err(DataError::EmptyManifest { path: path.to_path_buf() });
    }
    Ok(DatasetManifest { root, entries })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Layout;

    fn write_entry_files(dir: &Path, stem: &str) {
        let img = Tensor::full(vec![3, 4, 4], 0.0);
        image_io::save_png(&img, &dir.join(format!("{stem}.png"))).unwrap();
        let lms = LandmarkSet::with_standard_groups(
            Layout::Anchor5,
            vec![[0.0, 0.0], [3.0, 0.0], [1.5, 1.5], [1.0, 3.0], [2.0, 3.0]],
        )
        .unwrap();
        lms.save(&dir.join(format!("{stem}.json"))).unwrap();
    }

    fn entry_line(stem: &str, id: &str, ex: &str) -> String {
        format!(
            "{{\"image_path\":\"{stem}.png\",\"identity_id\":\"{id}\",\"expression_id\":\"{ex}\",\"landmarks_path\":\"{stem}.json\"}}"
        )
    }

    #[test]
    fn empty_manifest_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.jsonl");
        std::fs::write(&path, "").unwrap();
        assert!(matches!(load_manifest(&path), Err(DataError::EmptyManifest { .. })));
    }

    #[test]
    fn valid_rows_load_in_file_order() {
        let dir = tempfile::tempdir().unwrap();
        write_entry_files(dir.path(), "a");
        write_entry_files(dir.path(), "b");
        let path = dir.path().join("manifest.jsonl");
        std::fs::write(
            &path,
            format!("{}\n{}\n", entry_line("a", "id0", "ex0"), entry_line("b", "id1", "ex1")),
        )
        .unwrap();
        let m = load_manifest(&path).unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m.entries()[0].identity_id, "id0");
        assert_eq!(m.entries()[1].identity_id, "id1");
    }

    #[test]
    fn dangling_image_names_the_row() {
        let dir = tempfile::tempdir().unwrap();
        write_entry_files(dir.path(), "a");
        let path = dir.path().join("manifest.jsonl");
        std::fs::write(
            &path,
            format!("{}\n{}\n", entry_line("a", "id0", "ex0"), entry_line("missing", "id1", "ex1")),
        )
        .unwrap();
        match load_manifest(&path) {
            Err(DataError::DanglingPath { row, .. }) => assert_eq!(row, 1),
            other => panic!("expected dangling-path error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_row_names_the_row() {
        let dir = tempfile::tempdir().unwrap();
        write_entry_files(dir.path(), "a");
        let path = dir.path().join("manifest.jsonl");
        std::fs::write(&path, format!("{}\nnot json\n", entry_line("a", "id0", "ex0"))).unwrap();
        match load_manifest(&path) {
            Err(DataError::ManifestRow { row, .. }) => assert_eq!(row, 1),
            other => panic!("expected row error, got {other:?}"),
        }
    }
}
