//! Dense boundary polylines from landmarks and their rasterized channel maps.

use crate::par;
use crate::tensor::Tensor;

use super::landmarks::{LandmarkSet, Layout};
use super::GeometryError;

/// Dense samples along one semantic group's boundary.
#[derive(Clone, Debug, PartialEq)]
pub struct Polyline {
    pub group: String,
    pub points: Vec<[f64; 2]>,
}

/// Piecewise-linear interpolation of each group's landmarks: consecutive
/// samples are at most `1/density` pixels apart and the endpoints coincide
/// with the group's first and last landmark. Single-point groups come back
/// as single-point polylines.
pub fn interpolate_boundaries(
    landmarks: &LandmarkSet,
    density: f64,
) -> Result<Vec<Polyline>, GeometryError> {
    if !(density > 0.0) {
        return Err(GeometryError::BadDensity);
    }
    let mut out = Vec::with_capacity(landmarks.groups().len());
    for (name, &(start, end)) in landmarks.groups() {
        let pts = &landmarks.points()[start..end];
        let mut dense = vec![pts[0]];
        for seg in pts.windows(2) {
            let (a, b) = (seg[0], seg[1]);
            let len = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
            let steps = (len * density).ceil().max(1.0) as usize;
            for s in 1..=steps {
                let t = s as f64 / steps as f64;
                dense.push([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]);
            }
        }
        out.push(Polyline { group: name.clone(), points: dense });
    }
    Ok(out)
}

/// Rasterized boundary lines, one or more `[0, 1]`-valued channels.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryMap {
    channels: usize,
    size: usize,
    source_layout: Layout,
    data: Vec<f64>,
}

impl BoundaryMap {
    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn source_layout(&self) -> Layout {
        self.source_layout
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.size + y) * self.size + x]
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![self.channels, self.size, self.size], self.data.clone())
    }
}

/// Channel-assignment and line-width settings for rasterization.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryConfig {
    /// 3 = {eyes+brows, nose, mouth+jaw}; lower counts fold the later
    /// classes into the last available channel.
    pub channels: usize,
    pub line_width: f64,
}

impl Default for BoundaryConfig {
    fn default() -> Self {
        Self { channels: 3, line_width: 1.0 }
    }
}

impl BoundaryConfig {
    pub fn validate(&self) -> Result<(), GeometryError> {
        if self.channels == 0 || self.channels > 3 {
            return Err(GeometryError::BadChannelCount(self.channels));
        }
        Ok(())
    }

    /// Semantic class of a group name: eyes and brows, then nose, then
    /// mouth/jaw/chin, clamped to the configured channel count.
    pub fn channel_for_group(&self, group: &str) -> usize {
        let class = if group.contains("eye") || group.contains("brow") {
            0
        } else if group.contains("nose") {
            1
        } else {
            2
        };
        class.min(self.channels - 1)
    }
}

fn point_segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0)
    };
    let (cx, cy) = (a[0] + t * dx, a[1] + t * dy);
    ((p[0] - cx).powi(2) + (p[1] - cy).powi(2)).sqrt()
}

/// Hard-rasterize polylines: a pixel is 1 when its center lies within
/// `line_width/2` of any segment of a polyline assigned to its channel.
///
/// Only pixels inside each segment's inflated bounding box are visited, so
/// this stays cheap on large maps.
pub fn rasterize_boundary_map(
    polylines: &[Polyline],
    size: usize,
    config: &BoundaryConfig,
    source_layout: Layout,
) -> Result<BoundaryMap, GeometryError> {
    if size == 0 {
        return Err(GeometryError::BadOutputSize);
    }
    config.validate()?;
    let radius = config.line_width / 2.0;
    let mut data = vec![0.0; config.channels * size * size];
    par::for_each_chunk_mut(&mut data, size * size, |channel, plane| {
        for line in polylines {
            if config.channel_for_group(&line.group) != channel {
                continue;
            }
            let segments: Vec<([f64; 2], [f64; 2])> = if line.points.len() == 1 {
                vec![(line.points[0], line.points[0])]
            } else {
                line.points.windows(2).map(|s| (s[0], s[1])).collect()
            };
            for (a, b) in segments {
                let x_lo = ((a[0].min(b[0]) - radius).floor().max(0.0)) as usize;
                let y_lo = ((a[1].min(b[1]) - radius).floor().max(0.0)) as usize;
                let x_hi = ((a[0].max(b[0]) + radius).ceil()).min(size as f64 - 1.0);
                let y_hi = ((a[1].max(b[1]) + radius).ceil()).min(size as f64 - 1.0);
                if x_hi < 0.0 || y_hi < 0.0 {
                    continue;
                }
                for y in y_lo..=y_hi as usize {
                    for x in x_lo..=x_hi as usize {
                        if point_segment_distance([x as f64, y as f64], a, b) <= radius {
                            plane[y * size + x] = 1.0;
                        }
                    }
                }
            }
        }
    });
    Ok(BoundaryMap { channels: config.channels, size, source_layout, data })
}

/// Interpolate a landmark set and rasterize it in one step.
pub fn boundary_map_for(
    landmarks: &LandmarkSet,
    size: usize,
    config: &BoundaryConfig,
) -> Result<BoundaryMap, GeometryError> {
    let lines = interpolate_boundaries(landmarks, 2.0)?;
    rasterize_boundary_map(&lines, size, config, landmarks.layout())
}
