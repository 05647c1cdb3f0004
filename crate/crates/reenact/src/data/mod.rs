//! Dataset manifests, scenario-aware pair sampling, and the procedural
//! synthetic-face generator with analytically known landmarks.

mod manifest;
mod scenario;
mod synthetic;

pub use manifest::{load_manifest, DatasetManifest, ManifestEntry};
pub use scenario::{scenario_from_fields, PairSampler, Scenario, ScenarioSpec};
pub use synthetic::{
    build_synthetic_manifest, render_synthetic_face, SynthesisConfig, SyntheticFaceParams,
};

use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("manifest {path} row {row}: {source}")]
    ManifestRow { path: PathBuf, row: usize, source: serde_json::Error },
    #[error("empty manifest {path}")]
    EmptyManifest { path: PathBuf },
    #[error("manifest row {row} references missing file {path}")]
    DanglingPath { row: usize, path: PathBuf },
    #[error("identity {0:?} does not exist in the manifest")]
    UnknownIdentity(String),
    #[error("one-to-another needs distinct source and target identities, both were {0:?}")]
    SameIdentityPair(String),
    #[error("scenario {0} has no valid pairs in this manifest")]
    UnsatisfiableScenario(String),
    #[error("unknown scenario kind {0:?}")]
    UnknownScenario(String),
    #[error("invalid synthetic-face parameters: {0}")]
    BadParams(String),
    #[error(transparent)]
    Image(#[from] crate::image_io::ImageIoError),
    #[error(transparent)]
    Geometry(#[from] crate::geometry::GeometryError),
}
