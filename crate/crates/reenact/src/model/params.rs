//! Named-parameter traversal shared by the optimizer and the archive format.

use std::collections::BTreeMap;

use crate::tensor::Tensor;

use super::ModelError;

/// Anything holding named tensors. Names must be stable across construction
/// with the same config — they key optimizer state and checkpoints.
pub trait Params {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor));
}

pub fn collect(model: &dyn Params) -> BTreeMap<String, Tensor> {
    let mut out = BTreeMap::new();
    model.visit(&mut |name, t| {
        out.insert(name.to_string(), t.clone());
    });
    out
}

pub fn count_scalars(model: &dyn Params) -> usize {
    let mut n = 0;
    model.visit(&mut |_, t| n += t.numel());
    n
}

/// Overwrite every parameter from the map; the name sets must match exactly.
pub fn load(model: &mut dyn Params, archive: &BTreeMap<String, Tensor>) -> Result<(), ModelError> {
    let mut seen = Vec::new();
    let mut error = None;
    model.visit_mut(&mut |name, t| {
        if error.is_some() {
            return;
        }
        seen.push(name.to_string());
        match archive.get(name) {
            None => error = Some(ModelError::MissingParam(name.to_string())),
            Some(src) if src.shape() != t.shape() => {
                error = Some(ModelError::ParamShape {
                    name: name.to_string(),
                    expected: t.shape().to_vec(),
                    actual: src.shape().to_vec(),
                })
            }
            Some(src) => *t = src.clone(),
        }
    });
    if let Some(e) = error {
        return Err(e);
    }
    for name in archive.keys() {
        if !seen.contains(name) {
            return Err(ModelError::UnexpectedParam(name.clone()));
        }
    }
    Ok(())
}

pub fn zero_all(model: &mut dyn Params) {
    model.visit_mut(&mut |_, t| {
        t.data_mut().fill(0.0);
    });
}
