//! Named-tensor archive.
//!
//! ```json
//! {"format": "hydra-tensors", "version": 1, "seed": 7,
//!  "config": { ...architecture... },
//!  "tensors": [{"name": "sparse.0.weight", "shape": [64, 11], "data": [...]}, ...]}
//! ```
//!
//! Tensor data is stored as `f64` regardless of the in-memory scalar.

use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use crate::scalar::Scalar;
use crate::{HydraError, Result};

pub const ARCHIVE_FORMAT: &str = "hydra-tensors";
pub const ARCHIVE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Archive<C> {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub config: C,
    pub tensors: Vec<TensorRecord>,
}

impl<C> Archive<C> {
    pub fn from_store<S: Scalar>(config: C, ps: &ParamStore<S>) -> Self {
        Self {
            format: ARCHIVE_FORMAT.into(),
            version: ARCHIVE_VERSION,
            seed: ps.seed(),
            config,
            tensors: ps
                .params()
                .iter()
                .map(|p| TensorRecord {
                    name: p.name.clone(),
                    shape: p.shape.clone(),
                    data: p.value.iter().map(|v| v.as_f64()).collect(),
                })
                .collect(),
        }
    }

    pub fn check_header(&self) -> Result<()> {
        if self.format != ARCHIVE_FORMAT || self.version != ARCHIVE_VERSION {
            return Err(HydraError::validation(format!(
                "unsupported archive {} v{}",
                self.format, self.version
            )));
        }
        Ok(())
    }

    /// Copy tensor values into a store with the same names and shapes.
    pub fn restore_into<S: Scalar>(&self, ps: &mut ParamStore<S>) -> Result<()> {
        self.check_header()?;
        if self.tensors.len() != ps.len() {
            return Err(HydraError::validation(format!(
                "archive holds {} tensors, model has {}",
                self.tensors.len(),
                ps.len()
            )));
        }
        for (rec, p) in self.tensors.iter().zip(ps.params_mut()) {
            if rec.name != p.name || rec.shape != p.shape || rec.data.len() != p.value.len() {
                return Err(HydraError::validation(format!(
                    "archive tensor {} {:?} does not match model tensor {} {:?}",
                    rec.name, rec.shape, p.name, p.shape
                )));
            }
            for (dst, &src) in p.value.iter_mut().zip(&rec.data) {
                *dst = S::lit(src);
            }
        }
        Ok(())
    }
}
