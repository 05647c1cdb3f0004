//! Ordered 2-D facial keypoints with semantic group labels.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::GeometryError;

/// Well-known group names. Groups are free-form strings in the file format;
/// these are the ones the built-in layouts use.
pub mod region {
    pub const LEFT_EYE: &str = "left-eye";
    pub const RIGHT_EYE: &str = "right-eye";
    pub const LEFT_BROW: &str = "left-brow";
    pub const RIGHT_BROW: &str = "right-brow";
    pub const NOSE: &str = "nose";
    pub const MOUTH: &str = "mouth";
    pub const MOUTH_OUTER: &str = "mouth-outer";
    pub const MOUTH_INNER: &str = "mouth-inner";
    pub const JAW: &str = "jaw";
    pub const MOUTH_LEFT: &str = "mouth-left";
    pub const MOUTH_RIGHT: &str = "mouth-right";
}

/// Point convention of a landmark set.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layout {
    Canonical68,
    Synthetic18,
    Anchor5,
}

impl Layout {
    pub fn point_count(self) -> usize {
        match self {
            Layout::Canonical68 => 68,
            Layout::Synthetic18 => 18,
            Layout::Anchor5 => 5,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Layout::Canonical68 => "canonical68",
            Layout::Synthetic18 => "synthetic18",
            Layout::Anchor5 => "anchor5",
        }
    }

    pub fn parse(s: &str) -> Result<Self, GeometryError> {
        match s {
            "canonical68" => Ok(Layout::Canonical68),
            "synthetic18" => Ok(Layout::Synthetic18),
            "anchor5" => Ok(Layout::Anchor5),
            other => Err(GeometryError::UnknownLayout(other.to_string())),
        }
    }

    /// The standard group table for this layout; ranges are `[start, end)`.
    pub fn standard_groups(self) -> BTreeMap<String, (usize, usize)> {
        let table: &[(&str, usize, usize)] = match self {
            // iBUG ordering, named by image position (36..42 is the eye with
            // the smaller x in a frontal portrait).
            Layout::Canonical68 => &[
                (region::JAW, 0, 17),
                (region::LEFT_BROW, 17, 22),
                (region::RIGHT_BROW, 22, 27),
                (region::NOSE, 27, 36),
                (region::LEFT_EYE, 36, 42),
                (region::RIGHT_EYE, 42, 48),
                (region::MOUTH_OUTER, 48, 60),
                (region::MOUTH_INNER, 60, 68),
            ],
            Layout::Synthetic18 => &[
                (region::LEFT_EYE, 0, 4),
                (region::RIGHT_EYE, 4, 8),
                (region::LEFT_BROW, 8, 10),
                (region::RIGHT_BROW, 10, 12),
                (region::NOSE, 12, 13),
                (region::MOUTH, 13, 18),
            ],
            Layout::Anchor5 => &[
                (region::LEFT_EYE, 0, 1),
                (region::RIGHT_EYE, 1, 2),
                (region::NOSE, 2, 3),
                (region::MOUTH_LEFT, 3, 4),
                (region::MOUTH_RIGHT, 4, 5),
            ],
        };
        table.iter().map(|&(n, s, e)| (n.to_string(), (s, e))).collect()
    }
}

/// Ordered 2-D keypoints plus a disjoint, covering partition into semantic
/// groups.
#[derive(Clone, Debug, PartialEq)]
pub struct LandmarkSet {
    layout: Layout,
    points: Vec<[f64; 2]>,
    groups: BTreeMap<String, (usize, usize)>,
}

#[derive(Serialize, Deserialize)]
struct LandmarkFile {
    layout: String,
    points: Vec<[f64; 2]>,
    groups: BTreeMap<String, [usize; 2]>,
}

impl LandmarkSet {
    pub fn new(
        layout: Layout,
        points: Vec<[f64; 2]>,
        groups: BTreeMap<String, (usize, usize)>,
    ) -> Result<Self, GeometryError> {
        if points.len() != layout.point_count() {
            return Err(GeometryError::PointCountMismatch {
                layout,
                expected: layout.point_count(),
                actual: points.len(),
            });
        }
        for (i, p) in points.iter().enumerate() {
            if !p[0].is_finite() || !p[1].is_finite() {
                return Err(GeometryError::NonFiniteCoordinate(i));
            }
        }
        let mut coverage = vec![0usize; points.len()];
        for (name, &(start, end)) in &groups {
            if start >= end || end > points.len() {
                return Err(GeometryError::BadGroupRange {
                    group: name.clone(),
                    start,
                    end,
                });
            }
            for c in &mut coverage[start..end] {
                *c += 1;
            }
        }
        if let Some((index, &count)) = coverage.iter().enumerate().find(|(_, &c)| c != 1) {
            return Err(GeometryError::GroupCoverage { index, count });
        }
        Ok(Self { layout, points, groups })
    }

    /// Points with this layout's standard grouping.
    pub fn with_standard_groups(layout: Layout, points: Vec<[f64; 2]>) -> Result<Self, GeometryError> {
        Self::new(layout, points, layout.standard_groups())
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn groups(&self) -> &BTreeMap<String, (usize, usize)> {
        &self.groups
    }

    pub fn group_points(&self, name: &str) -> Result<&[[f64; 2]], GeometryError> {
        let &(start, end) = self
            .groups
            .get(name)
            .ok_or_else(|| GeometryError::MissingGroup(name.to_string()))?;
        Ok(&self.points[start..end])
    }

    pub fn centroid(&self, group: &str) -> Result<[f64; 2], GeometryError> {
        let pts = self.group_points(group)?;
        let n = pts.len() as f64;
        let (sx, sy) = pts.iter().fold((0.0, 0.0), |(sx, sy), p| (sx + p[0], sy + p[1]));
        Ok([sx / n, sy / n])
    }

    /// A copy with every point mapped through `f`, keeping layout and groups.
    pub fn mapped(&self, f: impl Fn([f64; 2]) -> [f64; 2]) -> LandmarkSet {
        LandmarkSet {
            layout: self.layout,
            points: self.points.iter().map(|&p| f(p)).collect(),
            groups: self.groups.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        let file = LandmarkFile {
            layout: self.layout.name().to_string(),
            points: self.points.clone(),
            groups: self.groups.iter().map(|(k, &(s, e))| (k.clone(), [s, e])).collect(),
        };
        serde_json::to_string_pretty(&file).expect("landmark serialization cannot fail")
    }

    pub fn from_json(text: &str, path: &Path) -> Result<Self, GeometryError> {
        let file: LandmarkFile = serde_json::from_str(text).map_err(|source| {
            GeometryError::Parse { path: path.to_path_buf(), source }
        })?;
        let layout = Layout::parse(&file.layout)?;
        let groups = file.groups.into_iter().map(|(k, [s, e])| (k, (s, e))).collect();
        Self::new(layout, file.points, groups)
    }

    pub fn load(path: &Path) -> Result<Self, GeometryError> {
        let text = std::fs::read_to_string(path).map_err(|source| GeometryError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text, path)
    }

    pub fn save(&self, path: &Path) -> Result<(), GeometryError> {
        std::fs::write(path, self.to_json()).map_err(|source| GeometryError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Eye centroids as `(left pupil, right pupil)`.
    pub fn pupils(&self) -> Result<([f64; 2], [f64; 2]), GeometryError> {
        Ok((self.centroid(region::LEFT_EYE)?, self.centroid(region::RIGHT_EYE)?))
    }
}

/// Euclidean distance between the eye-group centroids.
pub fn interocular_distance(landmarks: &LandmarkSet) -> Result<f64, GeometryError> {
    let (l, r) = landmarks.pupils()?;
    let d = ((l[0] - r[0]).powi(2) + (l[1] - r[1]).powi(2)).sqrt();
    if d == 0.0 {
        return Err(GeometryError::ZeroInterocular);
    }
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn anchor_set(points: [[f64; 2]; 5]) -> LandmarkSet {
        LandmarkSet::with_standard_groups(Layout::Anchor5, points.to_vec()).unwrap()
    }

    #[test]
    fn interocular_axis_aligned() {
        let s = anchor_set([[0., 0.], [10., 0.], [5., 5.], [3., 8.], [7., 8.]]);
        assert_eq!(interocular_distance(&s).unwrap(), 10.0);
    }

    #[test]
    fn interocular_three_four_five() {
        let s = anchor_set([[0., 0.], [3., 4.], [5., 5.], [3., 8.], [7., 8.]]);
        assert_eq!(interocular_distance(&s).unwrap(), 5.0);
    }

    #[test]
    fn interocular_zero_is_degenerate() {
        let s = anchor_set([[1., 1.], [1., 1.], [5., 5.], [3., 8.], [7., 8.]]);
        assert!(matches!(
            interocular_distance(&s),
            Err(GeometryError::ZeroInterocular)
        ));
    }

    #[test]
    fn interocular_uses_centroids_on_full_layouts() {
        // 68-point set: each eye group has 6 points; the oracle is the
        // hand-computed centroid distance.
        let mut points = vec![[0.0f64, 0.0]; 68];
        let groups = Layout::Canonical68.standard_groups();
        let (ls, le) = groups[region::LEFT_EYE];
        let (rs, re) = groups[region::RIGHT_EYE];
        assert_eq!(le - ls, 6);
        assert_eq!(re - rs, 6);
        for (k, p) in points[ls..le].iter_mut().enumerate() {
            *p = [10.0 + k as f64, 20.0 + (k % 2) as f64];
        }
        for (k, p) in points[rs..re].iter_mut().enumerate() {
            *p = [40.0 + 2.0 * k as f64, 21.0 + (k % 3) as f64];
        }
        let set = LandmarkSet::with_standard_groups(Layout::Canonical68, points.clone()).unwrap();

        let centroid = |pts: &[[f64; 2]]| {
            let n = pts.len() as f64;
            [
                pts.iter().map(|p| p[0]).sum::<f64>() / n,
                pts.iter().map(|p| p[1]).sum::<f64>() / n,
            ]
        };
        let cl = centroid(&points[ls..le]);
        let cr = centroid(&points[rs..re]);
        let expected = ((cl[0] - cr[0]).powi(2) + (cl[1] - cr[1]).powi(2)).sqrt();
        assert!((interocular_distance(&set).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn point_count_must_match_layout() {
        let err = LandmarkSet::with_standard_groups(Layout::Anchor5, vec![[0.0, 0.0]; 4]);
        assert!(matches!(err, Err(GeometryError::PointCountMismatch { .. })));
    }

    #[test]
    fn groups_must_cover_every_index_once() {
        let mut groups = BTreeMap::new();
        groups.insert("a".to_string(), (0usize, 3usize));
        groups.insert("b".to_string(), (2usize, 5usize));
        let err = LandmarkSet::new(Layout::Anchor5, vec![[0.0, 0.0]; 5], groups);
        assert!(matches!(err, Err(GeometryError::GroupCoverage { index: 2, count: 2 })));
    }

    #[test]
    fn non_finite_coordinates_are_rejected() {
        let err = LandmarkSet::with_standard_groups(
            Layout::Anchor5,
            vec![[0.0, 0.0], [f64::NAN, 1.0], [2.0, 2.0], [3.0, 3.0], [4.0, 4.0]],
        );
        assert!(matches!(err, Err(GeometryError::NonFiniteCoordinate(1))));
    }

    #[test]
    fn json_round_trip_preserves_everything() {
        let s = anchor_set([[0.5, 1.5], [10., 0.25], [5., 5.], [3., 8.], [7., 8.]]);
        let back = LandmarkSet::from_json(&s.to_json(), Path::new("mem")).unwrap();
        assert_eq!(s, back);
    }

    #[test]
    fn standard_68_grouping_is_the_ibug_partition() {
        let g = Layout::Canonical68.standard_groups();
        assert_eq!(g[region::JAW], (0, 17));
        assert_eq!(g[region::MOUTH_OUTER], (48, 60));
        assert_eq!(g[region::MOUTH_INNER], (60, 68));
        let total: usize = g.values().map(|&(s, e)| e - s).sum();
        assert_eq!(total, 68);
    }
}
