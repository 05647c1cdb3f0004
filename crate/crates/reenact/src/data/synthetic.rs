//! Procedural face renderer with analytically exact landmarks.
//!
//! Faces are abstract: a head ellipse, elliptical eyes with pupils, brow
//! strokes, a nose stroke and a parametric mouth curve. Identity fixes the
//! proportions and palette; expression moves brows and mouth. Every
//! proportion is quantized to 1/1024 so landmark arithmetic (eye centroids,
//! expression symmetry) is exact in floating point, not merely close.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geometry::{LandmarkSet, Layout, SimilarityTransform};
use crate::image_io;
use crate::par;
use crate::tensor::Tensor;

use super::manifest::{DatasetManifest, ManifestEntry};
use super::DataError;

/// Snap to the 1/1024 grid; sums and small products of snapped values stay
/// exact in f64.
fn q10(v: f64) -> f64 {
    (v * 1024.0).round() / 1024.0
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticFaceParams {
    /// All geometry below lives in unit canvas coordinates `[0, 1]²`.
    pub head_center: [f64; 2],
    pub head_axes: [f64; 2],
    pub eye_spacing: f64,
    pub eye_height: f64,
    pub eye_radius: [f64; 2],
    pub brow_half_len: f64,
    pub brow_offset: f64,
    pub nose_drop: f64,
    pub mouth_drop: f64,
    pub mouth_half_width: f64,
    /// Expression controls.
    pub brow_raise: f64,
    pub mouth_curvature: f64,
    pub mouth_openness: f64,
    /// Seed the fixed proportions came from.
    pub identity_seed: u64,
    /// Global pose applied to the whole face, in pixel coordinates.
    pub pose: SimilarityTransform,
    /// Palette.
    pub skin: [f64; 3],
    pub feature: [f64; 3],
    pub mouth_tone: [f64; 3],
    pub background: [f64; 3],
}

const BROW_RAISE_AMP: f64 = 0.02;
const MOUTH_CURVE_AMP: f64 = 0.03;
const MOUTH_OPEN_GAP: f64 = 0.05;
const LIP_THICKNESS: f64 = 0.014;
const STROKE_THICKNESS: f64 = 0.012;

impl SyntheticFaceParams {
    /// Derive a face from an identity seed: neutral expression, identity pose.
    pub fn from_identity(identity_seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(identity_seed);
        let mut range = |lo: f64, hi: f64| q10(rng.gen_range(lo..hi));
        let head_axes = [range(0.26, 0.34), range(0.34, 0.42)];
        let eye_rx = range(0.035, 0.05);
        Self {
            head_center: [0.5, 0.52],
            head_axes,
            eye_spacing: range(0.20, 0.28),
            eye_height: range(0.08, 0.12),
            eye_radius: [eye_rx, q10(eye_rx * 0.65)],
            brow_half_len: range(0.04, 0.06),
            brow_offset: range(0.05, 0.07),
            nose_drop: range(0.04, 0.07),
            mouth_drop: range(0.13, 0.18),
            mouth_half_width: range(0.08, 0.12),
            brow_raise: 0.0,
            mouth_curvature: 0.0,
            mouth_openness: 0.0,
            identity_seed,
            pose: SimilarityTransform::identity(),
            skin: [rng.gen_range(0.30..0.60), rng.gen_range(0.10..0.35), rng.gen_range(-0.05..0.20)],
            feature: [rng.gen_range(-0.75..-0.55); 3],
            mouth_tone: [rng.gen_range(0.05..0.30), -0.45, -0.35],
            background: [
                rng.gen_range(-0.35..-0.10),
                rng.gen_range(-0.30..-0.05),
                rng.gen_range(-0.20..0.00),
            ],
        }
    }

    pub fn with_expression(mut self, brow_raise: f64, curvature: f64, openness: f64) -> Self {
        self.brow_raise = q10(brow_raise);
        self.mouth_curvature = q10(curvature);
        self.mouth_openness = q10(openness);
        self
    }

    pub fn with_pose(mut self, pose: SimilarityTransform) -> Self {
        self.pose = pose;
        self
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let in_range = |v: f64, lo: f64, hi: f64| v >= lo && v <= hi;
        if !in_range(self.brow_raise, -1.0, 1.0) {
            return Err(DataError::BadParams("brow_raise outside [-1, 1]".into()));
        }
        if !in_range(self.mouth_curvature, -1.0, 1.0) {
            return Err(DataError::BadParams("mouth_curvature outside [-1, 1]".into()));
        }
        if !in_range(self.mouth_openness, 0.0, 1.0) {
            return Err(DataError::BadParams("mouth_openness outside [0, 1]".into()));
        }
        // The whole head must sit inside the unit canvas at identity pose.
        let margin = 0.02;
        let [cx, cy] = self.head_center;
        let [rx, ry] = self.head_axes;
        if cx - rx < margin || cx + rx > 1.0 - margin || cy - ry < margin || cy + ry > 1.0 - margin
        {
            return Err(DataError::BadParams("head ellipse leaves the canvas".into()));
        }
        Ok(())
    }

    fn eye_centers(&self) -> ([f64; 2], [f64; 2]) {
        let y = self.head_center[1] - self.eye_height;
        (
            [self.head_center[0] - self.eye_spacing / 2.0, y],
            [self.head_center[0] + self.eye_spacing / 2.0, y],
        )
    }

    fn brow_y(&self) -> f64 {
        self.head_center[1] - self.eye_height - self.brow_offset
            - self.brow_raise * BROW_RAISE_AMP
    }

    /// The mouth landmark curve (the lip line) at parameter `u ∈ [-1, 1]`.
    fn mouth_point(&self, u: f64) -> [f64; 2] {
        let my = self.head_center[1] + self.mouth_drop;
        [
            self.head_center[0] + u * self.mouth_half_width,
            my - self.mouth_curvature * MOUTH_CURVE_AMP * (u * u)
                + self.mouth_openness * MOUTH_OPEN_GAP * (1.0 - u * u),
        ]
    }

    /// The 18 landmarks in unit coordinates, neutral pose.
    fn unit_landmarks(&self) -> Vec<[f64; 2]> {
        let (el, er) = self.eye_centers();
        let [erx, ery] = self.eye_radius;
        let c = std::f64::consts::FRAC_1_SQRT_2;
        // Diagonal offsets with explicit signs so the 4-point centroid
        // cancels exactly back to the eye center.
        let offsets = [[c, -c], [-c, -c], [-c, c], [c, c]];
        let mut pts = Vec::with_capacity(18);
        for center in [el, er] {
            for o in offsets {
                pts.push([center[0] + o[0] * erx, center[1] + o[1] * ery]);
            }
        }
        let by = self.brow_y();
        for center in [el, er] {
            pts.push([center[0] - self.brow_half_len, by]);
            pts.push([center[0] + self.brow_half_len, by]);
        }
        pts.push([self.head_center[0], self.head_center[1] + self.nose_drop]);
        for u in [-1.0, -0.5, 0.0, 0.5, 1.0] {
            pts.push(self.mouth_point(u));
        }
        pts
    }
}

fn dist_to_segment(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0)
    };
    ((p[0] - a[0] - t * dx).powi(2) + (p[1] - a[1] - t * dy).powi(2)).sqrt()
}

fn inside_ellipse(p: [f64; 2], center: [f64; 2], axes: [f64; 2]) -> bool {
    let nx = (p[0] - center[0]) / axes[0];
    let ny = (p[1] - center[1]) / axes[1];
    nx * nx + ny * ny <= 1.0
}

fn face_color(p: [f64; 2], params: &SyntheticFaceParams) -> [f64; 3] {
    let mut color = params.background;
    if inside_ellipse(p, params.head_center, params.head_axes) {
        color = params.skin;
    }
    let by = params.brow_y();
    let (el, er) = params.eye_centers();
    for center in [el, er] {
        let a = [center[0] - params.brow_half_len, by];
        let b = [center[0] + params.brow_half_len, by];
        if dist_to_segment(p, a, b) <= STROKE_THICKNESS {
            color = params.feature;
        }
    }
    for center in [el, er] {
        if inside_ellipse(p, center, params.eye_radius) {
            color = [0.65, 0.65, 0.62];
        }
        let pupil = params.eye_radius[1] * 0.45;
        if inside_ellipse(p, center, [pupil, pupil]) {
            color = params.feature;
        }
    }
    let nose_top = [params.head_center[0], params.head_center[1] - 0.01];
    let nose_tip = [params.head_center[0], params.head_center[1] + params.nose_drop];
    if dist_to_segment(p, nose_top, nose_tip) <= STROKE_THICKNESS {
        color = params.feature;
    }
    // Mouth: the region between the closed-lip curve and the open lower
    // curve, inflated by the lip thickness.
    let u = (p[0] - params.head_center[0]) / params.mouth_half_width;
    if u.abs() <= 1.0 {
        let my = params.head_center[1] + params.mouth_drop;
        let base = my - params.mouth_curvature * MOUTH_CURVE_AMP * (u * u);
        let lower = base + params.mouth_openness * MOUTH_OPEN_GAP * (1.0 - u * u);
        if p[1] >= base - LIP_THICKNESS && p[1] <= lower + LIP_THICKNESS {
            color = params.mouth_tone;
        }
    }
    color
}

/// Rasterize the face and return the image with its exact landmark set.
///
/// Landmarks are `pose(size · unit_position)`; the image is colored by
/// evaluating the face function at `pose⁻¹(pixel) / size`, so geometry and
/// annotation can never drift apart.
pub fn render_synthetic_face(
    params: &SyntheticFaceParams,
    size: usize,
) -> Result<(Tensor, LandmarkSet), DataError> {
    params.validate()?;
    let s = size as f64;
    let points: Vec<[f64; 2]> = params
        .unit_landmarks()
        .iter()
        .map(|p| params.pose.apply([p[0] * s, p[1] * s]))
        .collect();
    let landmarks = LandmarkSet::with_standard_groups(Layout::Synthetic18, points)?;

    let inv = params.pose.inverse();
    let mut pixels = vec![[0.0f64; 3]; size * size];
    par::for_each_chunk_mut(&mut pixels, size, |y, row| {
        for (x, px) in row.iter_mut().enumerate() {
            let q = inv.apply([x as f64, y as f64]);
            *px = face_color([q[0] / s, q[1] / s], params);
        }
    });
    let mut image = Tensor::zeros(vec![3, size, size]);
    for c in 0..3 {
        let plane_start = c * size * size;
        for (i, px) in pixels.iter().enumerate() {
            image.data_mut()[plane_start + i] = px[c];
        }
    }
    Ok((image, landmarks))
}

/// Settings for [`build_synthetic_manifest`].
#[derive(Clone, Debug)]
pub struct SynthesisConfig {
    pub identities: usize,
    pub expressions: usize,
    pub size: usize,
    pub seed: u64,
    /// When positive, each sample gets a random pose: scale within
    /// `1 ± jitter`, rotation within `± jitter` radians, translation within
    /// `± jitter · size` pixels.
    pub pose_jitter: f64,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        Self { identities: 4, expressions: 3, size: 64, seed: 0, pose_jitter: 0.0 }
    }
}

/// Render an identities × expressions grid, write images and landmark files
/// under `out_dir`, and return the manifest (also written as
/// `manifest.jsonl`).
pub fn build_synthetic_manifest(
    cfg: &SynthesisConfig,
    out_dir: &Path,
) -> Result<DatasetManifest, DataError> {
    if cfg.identities == 0 || cfg.expressions == 0 {
        return Err(DataError::BadParams("identities and expressions must be positive".into()));
    }
    let io_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source| DataError::Io { path, source }
    };
    let images_dir = out_dir.join("images");
    let landmarks_dir = out_dir.join("landmarks");
    std::fs::create_dir_all(&images_dir).map_err(io_err(&images_dir))?;
    std::fs::create_dir_all(&landmarks_dir).map_err(io_err(&landmarks_dir))?;

    // One expression table shared by all identities, so expression ids mean
    // the same face motion everywhere.
    let mut ex_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0xE58));
    let expressions: Vec<(f64, f64, f64)> = (0..cfg.expressions)
        .map(|_| {
            (
                ex_rng.gen_range(-1.0..1.0),
                ex_rng.gen_range(-1.0..1.0),
                ex_rng.gen_range(0.0..1.0),
            )
        })
        .collect();
    let mut id_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let identity_seeds: Vec<u64> = (0..cfg.identities).map(|_| id_rng.gen()).collect();
    let mut pose_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x905e));

    let mut entries = Vec::with_capacity(cfg.identities * cfg.expressions);
    for (i, &id_seed) in identity_seeds.iter().enumerate() {
        for (e, &(brow, curve, open)) in expressions.iter().enumerate() {
            let pose = if cfg.pose_jitter > 0.0 {
                let j = cfg.pose_jitter;
                SimilarityTransform::new(
                    pose_rng.gen_range(1.0 - j..1.0 + j),
                    pose_rng.gen_range(-j..j),
                    [
                        pose_rng.gen_range(-j..j) * cfg.size as f64,
                        pose_rng.gen_range(-j..j) * cfg.size as f64,
                    ],
                )
            } else {
                SimilarityTransform::identity()
            };
            let params = SyntheticFaceParams::from_identity(id_seed)
                .with_expression(brow, curve, open)
                .with_pose(pose);
            let (image, landmarks) = render_synthetic_face(&params, cfg.size)?;
            let stem = format!("id{i:02}_ex{e:02}");
            image_io::save_png(&image, &images_dir.join(format!("{stem}.png")))?;
            landmarks.save(&landmarks_dir.join(format!("{stem}.json")))?;
            entries.push(ManifestEntry {
                image_path: format!("images/{stem}.png"),
                identity_id: format!("id{i:02}"),
                expression_id: format!("ex{e:02}"),
                landmarks_path: format!("landmarks/{stem}.json"),
            });
        }
    }
    let manifest = DatasetManifest::new(out_dir.to_path_buf(), entries);
    manifest.save(&out_dir.join("manifest.jsonl"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::region;

    #[test]
    fn pupil_landmarks_equal_parametric_eye_centers_exactly() {
        let params = SyntheticFaceParams::from_identity(99);
        let (_, lms) = render_synthetic_face(&params, 64).unwrap();
        let (el, er) = params.eye_centers();
        let (lp, rp) = lms.pupils().unwrap();
        assert_eq!(lp, [el[0] * 64.0, el[1] * 64.0]);
        assert_eq!(rp, [er[0] * 64.0, er[1] * 64.0]);
    }

    #[test]
    fn posed_landmarks_equal_transformed_neutral_landmarks() {
        let t = SimilarityTransform::new(1.3, 0.4, [5.0, -3.0]);
        let base = SyntheticFaceParams::from_identity(7).with_expression(0.25, -0.5, 0.5);
        let (_, neutral) = render_synthetic_face(&base, 64).unwrap();
        let (_, posed) = render_synthetic_face(&base.clone().with_pose(t), 64).unwrap();
        for (p, n) in posed.points().iter().zip(neutral.points()) {
            let expect = t.apply(*n);
            assert!((p[0] - expect[0]).abs() < 1e-9);
            assert!((p[1] - expect[1]).abs() < 1e-9);
        }
    }

    #[test]
    fn landmark_pose_composes_exactly() {
        let s = SimilarityTransform::new(0.8, -0.2, [2.0, 4.0]);
        let t = SimilarityTransform::new(1.1, 0.7, [-6.0, 1.0]);
        let base = SyntheticFaceParams::from_identity(3);
        let (_, neutral) = render_synthetic_face(&base, 64).unwrap();
        let (_, composed) = render_synthetic_face(&base.clone().with_pose(t.compose(&s)), 64).unwrap();
        for (c, n) in composed.points().iter().zip(neutral.points()) {
            let expect = t.apply(s.apply(*n));
            assert!((c[0] - expect[0]).abs() < 1e-9);
            assert!((c[1] - expect[1]).abs() < 1e-9);
        }
    }

    #[test]
    fn mouth_curvature_moves_corners_symmetrically_in_y_only() {
        let base = SyntheticFaceParams::from_identity(11);
        let smile = base.clone().with_expression(0.0, 1.0, 0.0);
        let frown = base.clone().with_expression(0.0, -1.0, 0.0);
        let neutral = base.with_expression(0.0, 0.0, 0.0);
        let (_, ls) = render_synthetic_face(&smile, 64).unwrap();
        let (_, lf) = render_synthetic_face(&frown, 64).unwrap();
        let (_, ln) = render_synthetic_face(&neutral, 64).unwrap();
        let (ms, _) = Layout::Synthetic18.standard_groups()[region::MOUTH];
        for corner in [ms, ms + 4] {
            let (s, f, n) = (ls.points()[corner], lf.points()[corner], ln.points()[corner]);
            assert_eq!(s[0], f[0], "corner x must not move");
            assert_eq!(s[0], n[0]);
            assert_eq!(n[1] - s[1], f[1] - n[1], "corners mirror about neutral");
            assert!(n[1] > s[1], "smile lifts the corners");
        }
    }

    #[test]
    fn rendering_is_deterministic() {
        let params = SyntheticFaceParams::from_identity(5).with_expression(0.3, 0.3, 0.3);
        let (a, _) = render_synthetic_face(&params, 32).unwrap();
        let (b, _) = render_synthetic_face(&params, 32).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn out_of_range_expression_is_rejected() {
        let params = SyntheticFaceParams::from_identity(5);
        let mut bad = params;
        bad.mouth_openness = 1.5;
        assert!(matches!(bad.validate(), Err(DataError::BadParams(_))));
    }

    #[test]
    fn manifest_builder_counts_and_determinism() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthesisConfig { identities: 4, expressions: 3, size: 32, seed: 9, pose_jitter: 0.0 };
        let m = build_synthetic_manifest(&cfg, dir.path()).unwrap();
        assert_eq!(m.len(), 12);
        assert_eq!(m.identities().len(), 4);
        let per_id = m
            .entries()
            .iter()
            .filter(|e| e.identity_id == "id00")
            .map(|e| e.expression_id.clone())
            .collect::<Vec<_>>();
        assert_eq!(per_id, vec!["ex00", "ex01", "ex02"]);

        let dir2 = tempfile::tempdir().unwrap();
        build_synthetic_manifest(&cfg, dir2.path()).unwrap();
        let a = std::fs::read(dir.path().join("images/id00_ex00.png")).unwrap();
        let b = std::fs::read(dir2.path().join("images/id00_ex00.png")).unwrap();
        assert_eq!(a, b, "same seed must give byte-identical images");
    }

    #[test]
    fn single_face_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthesisConfig { identities: 1, expressions: 1, size: 32, seed: 2, pose_jitter: 0.0 };
        let m = build_synthetic_manifest(&cfg, dir.path()).unwrap();
        assert_eq!(m.len(), 1);
        // Round-trips through the loader.
        let loaded = super::super::load_manifest(&dir.path().join("manifest.jsonl")).unwrap();
        assert_eq!(loaded.len(), 1);
        let (img, lms) = loaded.load_entry(0).unwrap();
        assert_eq!(img.shape(), &[3, 32, 32]);
        assert_eq!(lms.layout(), Layout::Synthetic18);
    }
}
