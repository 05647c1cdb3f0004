//! The reenactment networks: a dual-FPN encoder/decoder generator and a
//! landmark-conditioned critic.

mod discriminator;
mod generator;
mod layers;
pub mod params;

pub use discriminator::{ConditionedSample, Discriminator, DiscriminatorConfig};
pub use generator::{
    create_backbone, Backbone, EncoderId, FeaturePyramid, Generator, GeneratorConfig,
    PYRAMID_STRIDES,
};
pub use layers::{Conv2d, InstanceNorm};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("{what}: expected shape {expected:?}, got {actual:?}")]
    ShapeMismatch { what: String, expected: Vec<usize>, actual: Vec<usize> },
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("unknown backbone {0:?}")]
    UnknownBackbone(String),
    #[error("parameter {0} missing from archive")]
    MissingParam(String),
    #[error("archive carries unexpected parameter {0}")]
    UnexpectedParam(String),
    #[error("parameter {name}: expected shape {expected:?}, got {actual:?}")]
    ParamShape { name: String, expected: Vec<usize>, actual: Vec<usize> },
}

pub(crate) fn expect_image(t: &crate::Tensor, n: usize, what: &str) -> Result<(), ModelError> {
    if t.shape() != [3, n, n] {
        return Err(ModelError::ShapeMismatch {
            what: what.to_string(),
            expected: vec![3, n, n],
            actual: t.shape().to_vec(),
        });
    }
    Ok(())
}
