//! Similarity transforms, least-squares anchor alignment and face
//! normalization.

use crate::par;
use crate::tensor::Tensor;

use super::landmarks::{region, LandmarkSet, Layout};
use super::GeometryError;

/// Scale + rotation + translation. Applied as `s·R(θ)·p + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimilarityTransform {
    pub scale: f64,
    pub rotation: f64,
    pub translation: [f64; 2],
}

impl SimilarityTransform {
    pub fn identity() -> Self {
        Self { scale: 1.0, rotation: 0.0, translation: [0.0, 0.0] }
    }

    pub fn new(scale: f64, rotation: f64, translation: [f64; 2]) -> Self {
        assert!(scale > 0.0, "similarity scale must be positive");
        Self { scale, rotation, translation }
    }

    /// Linear coefficients `(a, b)` with the matrix `[[a, -b], [b, a]]`.
    fn coeffs(&self) -> (f64, f64) {
        (self.scale * self.rotation.cos(), self.scale * self.rotation.sin())
    }

    pub fn apply(&self, p: [f64; 2]) -> [f64; 2] {
        let (a, b) = self.coeffs();
        [
            a * p[0] - b * p[1] + self.translation[0],
            b * p[0] + a * p[1] + self.translation[1],
        ]
    }

    pub fn inverse(&self) -> SimilarityTransform {
        let inv = SimilarityTransform {
            scale: 1.0 / self.scale,
            rotation: -self.rotation,
            translation: [0.0, 0.0],
        };
        let t = inv.apply(self.translation);
        SimilarityTransform {
            translation: [-t[0], -t[1]],
            ..inv
        }
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &SimilarityTransform) -> SimilarityTransform {
        let t = self.apply(other.translation);
        SimilarityTransform {
            scale: self.scale * other.scale,
            rotation: wrap_angle(self.rotation + other.rotation),
            translation: t,
        }
    }
}

/// Wrap an angle into `(-π, π]`.
pub fn wrap_angle(theta: f64) -> f64 {
    let mut t = theta.rem_euclid(2.0 * std::f64::consts::PI);
    if t > std::f64::consts::PI {
        t -= 2.0 * std::f64::consts::PI;
    }
    t
}

/// The five canonical anchor positions (left pupil, right pupil, nose, left
/// mouth corner, right mouth corner) in the output crop's frame.
#[derive(Clone, Debug, PartialEq)]
pub struct AnchorTemplate {
    points: [[f64; 2]; 5],
    crop_size: usize,
}

impl AnchorTemplate {
    /// Frontal-alignment proportions of the crop size.
    const PROPORTIONS: [[f64; 2]; 5] = [
        [0.35, 0.40],
        [0.65, 0.40],
        [0.50, 0.58],
        [0.39, 0.76],
        [0.61, 0.76],
    ];

    pub fn standard(crop_size: usize) -> Self {
        let n = crop_size as f64;
        let points = Self::PROPORTIONS.map(|[x, y]| [x * n, y * n]);
        Self { points, crop_size }
    }

    pub fn new(points: [[f64; 2]; 5], crop_size: usize) -> Result<Self, GeometryError> {
        if crop_size == 0 {
            return Err(GeometryError::BadTemplate("crop size must be positive".into()));
        }
        if points[0][0] >= points[1][0] {
            return Err(GeometryError::BadTemplate(
                "left pupil must have a smaller x than the right pupil".into(),
            ));
        }
        let n = crop_size as f64;
        for p in &points {
            if !(p[0].is_finite() && p[1].is_finite())
                || p[0] < 0.0
                || p[0] >= n
                || p[1] < 0.0
                || p[1] >= n
            {
                return Err(GeometryError::BadTemplate(format!(
                    "anchor ({}, {}) outside [0, {n})²",
                    p[0], p[1]
                )));
            }
        }
        Ok(Self { points, crop_size })
    }

    pub fn points(&self) -> &[[f64; 2]; 5] {
        &self.points
    }

    pub fn crop_size(&self) -> usize {
        self.crop_size
    }
}

/// Least-squares similarity transform `T` minimizing
/// `Σ‖T(srcᵢ) − templateᵢ‖²` over the five anchor pairs.
///
/// Closed form: with centered sources `p` and targets `q`, the linear part
/// `[[a, -b], [b, a]]` has `a = Σ(p·q)/Σ‖p‖²` and `b = Σ(p×q)/Σ‖p‖²`.
pub fn estimate_similarity(
    src_anchors: &LandmarkSet,
    template: &AnchorTemplate,
) -> Result<SimilarityTransform, GeometryError> {
    if src_anchors.len() != 5 {
        return Err(GeometryError::PointCountMismatch {
            layout: src_anchors.layout(),
            expected: 5,
            actual: src_anchors.len(),
        });
    }
    estimate_similarity_points(src_anchors.points(), template.points())
}

pub(crate) fn estimate_similarity_points(
    src: &[[f64; 2]],
    dst: &[[f64; 2]],
) -> Result<SimilarityTransform, GeometryError> {
    assert_eq!(src.len(), dst.len());
    let n = src.len() as f64;
    let mean = |pts: &[[f64; 2]]| {
        let (sx, sy) = pts.iter().fold((0.0, 0.0), |(sx, sy), p| (sx + p[0], sy + p[1]));
        [sx / n, sy / n]
    };
    let mp = mean(src);
    let mq = mean(dst);

    let mut dot = 0.0;
    let mut cross = 0.0;
    let mut norm = 0.0;
    for (p, q) in src.iter().zip(dst.iter()) {
        let (px, py) = (p[0] - mp[0], p[1] - mp[1]);
        let (qx, qy) = (q[0] - mq[0], q[1] - mq[1]);
        dot += px * qx + py * qy;
        cross += px * qy - py * qx;
        norm += px * px + py * py;
    }
    if norm < 1e-12 {
        return Err(GeometryError::DegenerateAnchors);
    }
    let a = dot / norm;
    let b = cross / norm;
    let scale = (a * a + b * b).sqrt();
    if scale < 1e-12 {
        return Err(GeometryError::DegenerateAnchors);
    }
    let rotation = b.atan2(a);
    let translation = [
        mq[0] - (a * mp[0] - b * mp[1]),
        mq[1] - (b * mp[0] + a * mp[1]),
    ];
    Ok(SimilarityTransform { scale, rotation, translation })
}

/// Resample `image` (`[C,H,W]`) through `t` into an `out_size` square crop.
///
/// Each output pixel samples the input at `t⁻¹(pixel)` with bilinear
/// interpolation; reads outside the source are 0.
pub fn warp_crop(
    image: &Tensor,
    t: &SimilarityTransform,
    out_size: usize,
) -> Result<Tensor, GeometryError> {
    if out_size == 0 {
        return Err(GeometryError::BadOutputSize);
    }
    if image.numel() == 0 {
        return Err(GeometryError::EmptyImage);
    }
    let (c, h, w) = (image.channels(), image.height(), image.width());
    let inv = t.inverse();
    let (ia, ib) = inv.coeffs();
    let (tx, ty) = (inv.translation[0], inv.translation[1]);

    let mut out = Tensor::zeros(vec![c, out_size, out_size]);
    par::for_each_chunk_mut(out.data_mut(), out_size * out_size, |ch, oplane| {
        let plane = image.plane(ch);
        let sample = |x: isize, y: isize| -> f64 {
            if x >= 0 && (x as usize) < w && y >= 0 && (y as usize) < h {
                plane[y as usize * w + x as usize]
            } else {
                0.0
            }
        };
        for oy in 0..out_size {
            let orow = &mut oplane[oy * out_size..(oy + 1) * out_size];
            for (ox, o) in orow.iter_mut().enumerate() {
                let sx = ia * ox as f64 - ib * oy as f64 + tx;
                let sy = ib * ox as f64 + ia * oy as f64 + ty;
                let x0 = sx.floor();
                let y0 = sy.floor();
                let fx = sx - x0;
                let fy = sy - y0;
                let (x0, y0) = (x0 as isize, y0 as isize);
                *o = sample(x0, y0) * (1.0 - fx) * (1.0 - fy)
                    + sample(x0 + 1, y0) * fx * (1.0 - fy)
                    + sample(x0, y0 + 1) * (1.0 - fx) * fy
                    + sample(x0 + 1, y0 + 1) * fx * fy;
            }
        }
    });
    Ok(out)
}

/// Aligned crop plus the landmarks mapped into the crop's frame.
#[derive(Clone, Debug)]
pub struct NormalizedFace {
    pub image: Tensor,
    pub landmarks: LandmarkSet,
    pub transform: SimilarityTransform,
    /// Largest distance between a mapped anchor and its template position.
    pub anchor_residual: f64,
}

/// Derive the five alignment anchors from a full landmark set: pupils are
/// the eye-group centroids, the nose anchor is the nose-group centroid, and
/// the mouth corners are the mouth points with extreme projection onto the
/// inter-pupil axis.
pub fn anchors_from_landmarks(landmarks: &LandmarkSet) -> Result<[[f64; 2]; 5], GeometryError> {
    if landmarks.layout() == Layout::Anchor5 {
        let p = landmarks.points();
        return Ok([p[0], p[1], p[2], p[3], p[4]]);
    }
    let (left_pupil, right_pupil) = landmarks.pupils()?;
    let nose = landmarks.centroid(region::NOSE)?;

    let mouth = landmarks
        .group_points(region::MOUTH_OUTER)
        .or_else(|_| landmarks.group_points(region::MOUTH))?;
    let axis = [right_pupil[0] - left_pupil[0], right_pupil[1] - left_pupil[1]];
    let proj = |p: &[f64; 2]| p[0] * axis[0] + p[1] * axis[1];
    let mut left = mouth[0];
    let mut right = mouth[0];
    for p in mouth {
        if proj(p) < proj(&left) {
            left = *p;
        }
        if proj(p) > proj(&right) {
            right = *p;
        }
    }
    Ok([left_pupil, right_pupil, nose, left, right])
}

/// Align a face: derive anchors, estimate the similarity to the template,
/// crop, and carry all landmarks through the same transform.
pub fn normalize_face(
    image: &Tensor,
    full_landmarks: &LandmarkSet,
    template: &AnchorTemplate,
) -> Result<NormalizedFace, GeometryError> {
    let anchors = anchors_from_landmarks(full_landmarks)?;
    let t = estimate_similarity_points(&anchors, template.points())?;
    let crop = warp_crop(image, &t, template.crop_size())?;
    let landmarks = full_landmarks.mapped(|p| t.apply(p));

    let anchor_residual = anchors
        .iter()
        .zip(template.points())
        .map(|(a, tp)| {
            let m = t.apply(*a);
            ((m[0] - tp[0]).powi(2) + (m[1] - tp[1]).powi(2)).sqrt()
        })
        .fold(0.0, f64::max);

    Ok(NormalizedFace { image: crop, landmarks, transform: t, anchor_residual })
}
