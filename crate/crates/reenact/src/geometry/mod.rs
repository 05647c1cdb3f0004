//! Landmark geometry: layouts and landmark sets, similarity-transform
//! estimation and face normalization, boundary-line interpolation and the
//! rasterized conditioning maps.
//!
//! Left/right are image-space throughout: the "left-eye" group is the eye
//! with the smaller x coordinate.

mod boundary;
mod landmarks;
mod transform;

pub use boundary::{
    boundary_map_for, interpolate_boundaries, rasterize_boundary_map, BoundaryConfig, BoundaryMap,
    Polyline,
};
pub use landmarks::{interocular_distance, region, LandmarkSet, Layout};
pub use transform::{
    anchors_from_landmarks, estimate_similarity, normalize_face, warp_crop, AnchorTemplate,
    NormalizedFace, SimilarityTransform,
};

use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("unknown landmark layout {0:?}")]
    UnknownLayout(String),
    #[error("layout {layout:?} expects {expected} points, got {actual}")]
    PointCountMismatch { layout: Layout, expected: usize, actual: usize },
    #[error("non-finite coordinate at landmark index {0}")]
    NonFiniteCoordinate(usize),
    #[error("group {group:?} range {start}..{end} is out of bounds or empty")]
    BadGroupRange { group: String, start: usize, end: usize },
    #[error("landmark index {index} is covered by {count} groups; every index must belong to exactly one")]
    GroupCoverage { index: usize, count: usize },
    #[error("missing landmark group {0:?}")]
    MissingGroup(String),
    #[error("layout mismatch: expected {expected:?}, got {actual:?}")]
    LayoutMismatch { expected: Layout, actual: Layout },
    #[error("degenerate anchor geometry: points do not determine a similarity transform")]
    DegenerateAnchors,
    #[error("inter-ocular distance is zero")]
    ZeroInterocular,
    #[error("invalid anchor template: {0}")]
    BadTemplate(String),
    #[error("image must be non-empty")]
    EmptyImage,
    #[error("output size must be positive")]
    BadOutputSize,
    #[error("interpolation density must be positive")]
    BadDensity,
    #[error("boundary map channels must be between 1 and 3, got {0}")]
    BadChannelCount(usize),
    #[error("reading {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("parsing landmark file {path}: {source}")]
    Parse { path: PathBuf, source: serde_json::Error },
}
