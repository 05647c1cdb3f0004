//! Quantitative evaluation: landmark NMSE, embedding cosine similarity and
//! the Fréchet distance between feature distributions, aggregated into
//! JSON-serializable reports.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{interocular_distance, GeometryError, LandmarkSet};
use crate::losses::{embed_identity, identity_loss, FeatureExtractor, LossError};
use crate::model::{Generator, ModelError};
use crate::par;
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("landmark layout mismatch between source and generated sets")]
    LayoutMismatch,
    #[error("landmark counts differ: {0} vs {1}")]
    CountMismatch(usize, usize),
    #[error("embedding dimensions differ: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("cosine similarity of a zero vector is undefined")]
    ZeroVector,
    #[error("{which} feature set has {n} samples; at least 2 are required")]
    TooFewSamples { which: &'static str, n: usize },
    #[error("feature vectors are not all finite")]
    NonFiniteFeature,
    #[error("feature dimensions are inconsistent")]
    FeatureDimMismatch,
    #[error("evaluation needs at least one pair")]
    EmptyPairList,
    #[error("every pair failed; first error: {0}")]
    AllPairsFailed(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Loss(#[from] LossError),
}

/// Landmark error normalized by the source's inter-ocular distance, in
/// percent: `(Σᵢ‖srcᵢ - genᵢ‖) / (L · interocular) · 100`.
pub fn nmse(src: &LandmarkSet, gen: &LandmarkSet) -> Result<f64, MetricError> {
    if src.layout() != gen.layout() {
        return Err(MetricError::LayoutMismatch);
    }
    let interocular = interocular_distance(src)?;
    nmse_points(src.points(), gen.points(), interocular)
}

/// The bare formula over point lists, for callers that carry the
/// normalizer themselves.
pub fn nmse_points(
    src: &[[f64; 2]],
    gen: &[[f64; 2]],
    interocular: f64,
) -> Result<f64, MetricError> {
    if src.len() != gen.len() {
        return Err(MetricError::CountMismatch(src.len(), gen.len()));
    }
    if !(interocular > 0.0) {
        return Err(MetricError::Geometry(GeometryError::ZeroInterocular));
    }
    let sum: f64 = src
        .iter()
        .zip(gen)
        .map(|(a, b)| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt())
        .sum();
    Ok(sum / (src.len() as f64 * interocular) * 100.0)
}

/// Cosine similarity of two embeddings, in `[-1, 1]`.
pub fn csim(a: &crate::losses::IdentityEmbedding, b: &crate::losses::IdentityEmbedding) -> Result<f64, MetricError> {
    if a.dim() != b.dim() {
        return Err(MetricError::DimensionMismatch(a.dim(), b.dim()));
    }
    let dot: f64 = a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| x * y).sum();
    let na: f64 = a.as_slice().iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.as_slice().iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(MetricError::ZeroVector);
    }
    Ok(dot / (na * nb))
}

/// Mean and covariance of a feature set. The covariance uses the unbiased
/// `n - 1` estimator.
#[derive(Clone, Debug)]
pub struct GaussianStats {
    pub dim: usize,
    pub mean: Vec<f64>,
    /// Row-major `dim × dim`.
    pub cov: Vec<f64>,
}

pub fn gaussian_stats(features: &[Vec<f64>], which: &'static str) -> Result<GaussianStats, MetricError> {
    let n = features.len();
    if n < 2 {
        return Err(MetricError::TooFewSamples { which, n });
    }
    let dim = features[0].len();
    for f in features {
        if f.len() != dim {
            return Err(MetricError::FeatureDimMismatch);
        }
        if f.iter().any(|v| !v.is_finite()) {
            return Err(MetricError::NonFiniteFeature);
        }
    }
    let mut mean = vec![0.0; dim];
    for f in features {
        for (m, v) in mean.iter_mut().zip(f) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut cov = vec![0.0; dim * dim];
    par::for_each_chunk_mut(&mut cov, dim, |i, row| {
        for f in features {
            let di = f[i] - mean[i];
            for (j, r) in row.iter_mut().enumerate() {
                *r += di * (f[j] - mean[j]);
            }
        }
        for r in row.iter_mut() {
            *r /= (n - 1) as f64;
        }
    });
    Ok(GaussianStats { dim, mean, cov })
}

fn sqrtm_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    // Symmetrize first; eigenvalues below zero are rounding noise and clip to 0.
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// Fréchet distance between two Gaussians:
/// `‖μ₁-μ₂‖² + Tr(Σ₁ + Σ₂ - 2(Σ₁Σ₂)^½)`, with the cross square root
/// computed as `sqrtm(sqrtm(Σ₂)·Σ₁·sqrtm(Σ₂))` so every decomposition is
/// symmetric. Rounding residue below zero clips to zero.
pub fn frechet_distance(a: &GaussianStats, b: &GaussianStats) -> Result<f64, MetricError> {
    if a.dim != b.dim {
        return Err(MetricError::FeatureDimMismatch);
    }
    let d = a.dim;
    let mean_term: f64 = a
        .mean
        .iter()
        .zip(&b.mean)
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    let c1 = DMatrix::from_row_slice(d, d, &a.cov);
    let c2 = DMatrix::from_row_slice(d, d, &b.cov);
    let s2 = sqrtm_psd(&c2);
    let cross = sqrtm_psd(&(&s2 * &c1 * &s2));
    let trace_term = c1.trace() + c2.trace() - 2.0 * cross.trace();
    Ok((mean_term + trace_term).max(0.0))
}

/// Fréchet distance between the Gaussian fits of two feature sets.
pub fn fid(features_a: &[Vec<f64>], features_b: &[Vec<f64>]) -> Result<f64, MetricError> {
    let a = gaussian_stats(features_a, "first")?;
    let b = gaussian_stats(features_b, "second")?;
    frechet_distance(&a, &b)
}

/// One evaluation unit: a source (expression donor) and a target (identity
/// donor), both normalized, with ground-truth landmarks.
#[derive(Clone, Debug)]
pub struct EvalPair {
    pub id: String,
    pub source_image: Tensor,
    pub source_landmarks: LandmarkSet,
    pub target_image: Tensor,
    pub target_landmarks: LandmarkSet,
}

/// Where the landmarks of a generated image come from. Real deployments put
/// a detector here; synthetic evaluations use the stored ground truth.
pub trait LandmarkSource: Sync {
    fn landmarks_for(&self, pair: &EvalPair, generated: &Tensor)
        -> Result<LandmarkSet, MetricError>;
    fn descriptor(&self) -> &str;
}

/// Mock detector returning the target's ground-truth landmarks, the
/// desk-scale stand-in when no detector is available.
pub struct TargetGroundTruth;

impl LandmarkSource for TargetGroundTruth {
    fn landmarks_for(
        &self,
        pair: &EvalPair,
        _generated: &Tensor,
    ) -> Result<LandmarkSet, MetricError> {
        Ok(pair.target_landmarks.clone())
    }

    fn descriptor(&self) -> &str {
        "target-ground-truth"
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct PairRecord {
    pub pair_id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nmse_percent: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub csim: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct EvalAggregate {
    pub sample_count: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_nmse_percent: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_csim: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fid: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct EvalReport {
    pub scenario: String,
    pub records: Vec<PairRecord>,
    pub aggregate: EvalAggregate,
}

impl EvalReport {
    /// Re-derive the mean metrics from the records; the stored aggregate
    /// must always match.
    pub fn recomputed_means(&self) -> (Option<f64>, Option<f64>, usize) {
        let ok: Vec<&PairRecord> = self.records.iter().filter(|r| r.error.is_none()).collect();
        let n = ok.len();
        if n == 0 {
            return (None, None, 0);
        }
        let mean = |f: &dyn Fn(&PairRecord) -> f64| ok.iter().map(|r| f(r)).sum::<f64>() / n as f64;
        (
            Some(mean(&|r| r.nmse_percent.unwrap())),
            Some(mean(&|r| r.csim.unwrap())),
            n,
        )
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// Run the generator over every pair and aggregate NMSE, CSIM and FID.
///
/// Per-pair failures land in that pair's record instead of aborting; only a
/// fully failed run is an error. Pairs may be processed concurrently but
/// records keep the input order.
pub fn evaluate_pairs(
    pairs: &[EvalPair],
    generator: &Generator,
    landmark_source: &dyn LandmarkSource,
    embedder: &dyn FeatureExtractor,
    feature_extractor: &dyn FeatureExtractor,
    scenario: &str,
) -> Result<EvalReport, MetricError> {
    if pairs.is_empty() {
        return Err(MetricError::EmptyPairList);
    }

    struct PairOutcome {
        record: PairRecord,
        real_features: Option<Vec<f64>>,
        gen_features: Option<Vec<f64>>,
    }

    let evaluate_one = |pair: &EvalPair| -> Result<(PairRecord, Vec<f64>, Vec<f64>), MetricError> {
        let generated = generator.generate(&pair.source_image, &pair.target_image)?;
        let gen_landmarks = landmark_source.landmarks_for(pair, &generated)?;
        let nmse_percent = nmse(&pair.source_landmarks, &gen_landmarks)?;
        let e_gen = embed_identity(embedder, &generated)?;
        let e_tgt = embed_identity(embedder, &pair.target_image)?;
        let similarity = csim(&e_gen, &e_tgt)?;
        let real_features = feature_extractor.extract(&pair.target_image).into_data();
        let gen_features = feature_extractor.extract(&generated).into_data();
        Ok((
            PairRecord {
                pair_id: pair.id.clone(),
                nmse_percent: Some(nmse_percent),
                csim: Some(similarity),
                error: None,
            },
            real_features,
            gen_features,
        ))
    };

    let outcomes: Vec<PairOutcome> = par::map_indexed(pairs, |_, pair| match evaluate_one(pair) {
        Ok((record, real, generated)) => PairOutcome {
            record,
            real_features: Some(real),
            gen_features: Some(generated),
        },
        Err(e) => PairOutcome {
            record: PairRecord {
                pair_id: pair.id.clone(),
                nmse_percent: None,
                csim: None,
                error: Some(e.to_string()),
            },
            real_features: None,
            gen_features: None,
        },
    });

    let records: Vec<PairRecord> = outcomes.iter().map(|o| o.record.clone()).collect();
    let real_features: Vec<Vec<f64>> =
        outcomes.iter().filter_map(|o| o.real_features.clone()).collect();
    let gen_features: Vec<Vec<f64>> =
        outcomes.iter().filter_map(|o| o.gen_features.clone()).collect();

    let ok_count = records.iter().filter(|r| r.error.is_none()).count();
    if ok_count == 0 {
        let first = records
            .iter()
            .find_map(|r| r.error.clone())
            .unwrap_or_else(|| "unknown".to_string());
        return Err(MetricError::AllPairsFailed(first));
    }
    let n = ok_count as f64;
    let mean_nmse =
        records.iter().filter_map(|r| r.nmse_percent).sum::<f64>() / n;
    let mean_csim = records.iter().filter_map(|r| r.csim).sum::<f64>() / n;
    let fid_value = if real_features.len() >= 2 && gen_features.len() >= 2 {
        Some(fid(&real_features, &gen_features)?)
    } else {
        None
    };

    Ok(EvalReport {
        scenario: scenario.to_string(),
        records,
        aggregate: EvalAggregate {
            sample_count: ok_count,
            mean_nmse_percent: Some(mean_nmse),
            mean_csim: Some(mean_csim),
            fid: fid_value,
        },
    })
}

/// The identity loss between two embeddings, re-exported here so reports can
/// cite it next to CSIM.
pub fn embedding_distance(
    a: &crate::losses::IdentityEmbedding,
    b: &crate::losses::IdentityEmbedding,
) -> Result<f64, MetricError> {
    Ok(identity_loss(a, b)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Layout;
    use crate::losses::IdentityEmbedding;

    fn emb(v: &[f64]) -> IdentityEmbedding {
        IdentityEmbedding::new(v.to_vec())
    }

    #[test]
    fn nmse_identical_sets_is_zero() {
        let pts: Vec<[f64; 2]> = (0..18).map(|i| [i as f64, 2.0 * i as f64]).collect();
        let a = LandmarkSet::with_standard_groups(Layout::Synthetic18, pts.clone()).unwrap();
        let b = LandmarkSet::with_standard_groups(Layout::Synthetic18, pts).unwrap();
        assert_eq!(nmse(&a, &b).unwrap(), 0.0);
    }

    #[test]
    fn nmse_single_point_hand_value() {
        // L=1, error vector (3,4) of length 5, inter-ocular 10 -> 50%.
        let v = nmse_points(&[[0.0, 0.0]], &[[3.0, 4.0]], 10.0).unwrap();
        assert!((v - 50.0).abs() < 1e-12);
    }

    #[test]
    fn nmse_two_point_hand_value() {
        // Errors (3,0) and (0,4), inter-ocular 10 -> (3+4)/(2*10)*100 = 35%.
        let v = nmse_points(
            &[[0.0, 0.0], [10.0, 10.0]],
            &[[3.0, 0.0], [10.0, 14.0]],
            10.0,
        )
        .unwrap();
        assert!((v - 35.0).abs() < 1e-12);
    }

    #[test]
    fn nmse_full_sets_use_the_source_interocular() {
        // Shift every point of the generated set by (0.6, 0.8): each distance
        // is 1, so NMSE = 18 / (18 * io) * 100 = 100/io.
        let mut pts = vec![[0.0f64; 2]; 18];
        let groups = Layout::Synthetic18.standard_groups();
        let (ls, le) = groups["left-eye"];
        let (rs, re) = groups["right-eye"];
        for (k, p) in pts.iter_mut().enumerate() {
            *p = [k as f64 * 3.0, (k % 5) as f64];
        }
        // Make the eye groups symmetric around known pupils (4, 10) and (24, 10).
        let offsets = [[-1.0, 0.0], [1.0, 0.0], [0.0, -1.0], [0.0, 1.0]];
        for (k, p) in pts[ls..le].iter_mut().enumerate() {
            *p = [4.0 + offsets[k][0], 10.0 + offsets[k][1]];
        }
        for (k, p) in pts[rs..re].iter_mut().enumerate() {
            *p = [24.0 + offsets[k][0], 10.0 + offsets[k][1]];
        }
        let src = LandmarkSet::with_standard_groups(Layout::Synthetic18, pts.clone()).unwrap();
        let gen = src.mapped(|p| [p[0] + 0.6, p[1] + 0.8]);
        let io = 20.0;
        let expected = 100.0 / io;
        assert!((nmse(&src, &gen).unwrap() - expected).abs() < 1e-9);
    }

    #[test]
    fn nmse_rejects_layout_mismatch() {
        let a = LandmarkSet::with_standard_groups(
            Layout::Anchor5,
            vec![[0.0, 0.0], [10.0, 0.0], [5.0, 5.0], [3.0, 8.0], [7.0, 8.0]],
        )
        .unwrap();
        let pts: Vec<[f64; 2]> = (0..18).map(|i| [i as f64, i as f64]).collect();
        let b = LandmarkSet::with_standard_groups(Layout::Synthetic18, pts).unwrap();
        assert!(matches!(nmse(&a, &b), Err(MetricError::LayoutMismatch)));
    }

    #[test]
    fn csim_cardinal_cases() {
        let a = emb(&[1.0, 2.0, -3.0]);
        assert!((csim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let neg = emb(&[-1.0, -2.0, 3.0]);
        assert!((csim(&a, &neg).unwrap() + 1.0).abs() < 1e-12);
        let x = emb(&[1.0, 0.0]);
        let y = emb(&[0.0, 1.0]);
        assert_eq!(csim(&x, &y).unwrap(), 0.0);
        assert!(matches!(csim(&x, &emb(&[0.0, 0.0])), Err(MetricError::ZeroVector)));
    }

    #[test]
    fn csim_is_scale_invariant() {
        let a = emb(&[0.4, -1.2, 2.0]);
        let b = emb(&[1.0, 0.5, -0.25]);
        let base = csim(&a, &b).unwrap();
        let scaled = csim(&emb(&[0.4 * 7.0, -1.2 * 7.0, 2.0 * 7.0]), &emb(&[0.3, 0.15, -0.075])).unwrap();
        assert!((base - scaled).abs() < 1e-12);
    }

    /// Four points per dimension pair with exactly unit covariance and the
    /// requested mean, for closed-form FID checks.
    fn unit_cov_cloud(mean: [f64; 2]) -> Vec<Vec<f64>> {
        let s = (3.0f64 / 2.0).sqrt();
        vec![
            vec![mean[0] + s, mean[1]],
            vec![mean[0] - s, mean[1]],
            vec![mean[0], mean[1] + s],
            vec![mean[0], mean[1] - s],
        ]
    }

    #[test]
    fn fid_of_identical_sets_is_zero() {
        let a = unit_cov_cloud([1.0, -2.0]);
        assert!(fid(&a, &a.clone()).unwrap() < 1e-6);
    }

    #[test]
    fn fid_mean_shift_with_unit_covariance() {
        // μ₁=(0,0), μ₂=(3,4), Σ₁=Σ₂=I: the trace term vanishes and the
        // distance is ‖μ₁-μ₂‖² = 25.
        let a = unit_cov_cloud([0.0, 0.0]);
        let b = unit_cov_cloud([3.0, 4.0]);
        let sa = gaussian_stats(&a, "a").unwrap();
        assert!((sa.cov[0] - 1.0).abs() < 1e-12 && (sa.cov[3] - 1.0).abs() < 1e-12);
        assert!(sa.cov[1].abs() < 1e-12);
        let v = fid(&a, &b).unwrap();
        assert!((v - 25.0).abs() < 1e-9, "fid {v}");
    }

    #[test]
    fn fid_one_dimensional_closed_form() {
        // Equal means, σ₁²=4, σ₂²=1: 4 + 1 - 2·2 = 1.
        let a = GaussianStats { dim: 1, mean: vec![0.7], cov: vec![4.0] };
        let b = GaussianStats { dim: 1, mean: vec![0.7], cov: vec![1.0] };
        let v = frechet_distance(&a, &b).unwrap();
        assert!((v - 1.0).abs() < 1e-9);
    }

    #[test]
    fn fid_needs_two_samples_per_set() {
        let a = vec![vec![0.0, 0.0]];
        let b = unit_cov_cloud([0.0, 0.0]);
        assert!(matches!(fid(&a, &b), Err(MetricError::TooFewSamples { .. })));
    }

    #[test]
    fn fid_rejects_non_finite_features() {
        let mut a = unit_cov_cloud([0.0, 0.0]);
        a[0][1] = f64::INFINITY;
        let b = unit_cov_cloud([0.0, 0.0]);
        assert!(matches!(fid(&a, &b), Err(MetricError::NonFiniteFeature)));
    }
}
