//! Trainable networks and their helpers.

pub mod mlp;
pub mod params;
pub mod refine;
pub mod volume;

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::tape::{Tape, Var, GATHER_ZERO};
use crate::tensor::TensorError;

pub use mlp::{MlpConfig, RadianceMlp};
pub use params::ParamSet;
pub use refine::{RefineConfig, RefineNet};
pub use volume::{volume_render, VolumeSamples};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("parameter `{name}`: {reason}")]
    Parameter { name: String, reason: String },
}

/// Places row `n` of `rows[N×C]` at pixel `pixel_ids[n]` of a `C×H×W` map;
/// all other pixels are zero. Gradients flow back to the rows.
pub fn scatter_features(
    tape: &mut Tape,
    rows: Var,
    pixel_ids: &[usize],
    height: usize,
    width: usize,
) -> Result<Var, TensorError> {
    let shape = tape.shape(rows);
    if shape.len() != 2 || shape[0] != pixel_ids.len() {
        return Err(TensorError::Usage(format!(
            "scatter: {} pixel ids for rows of shape {shape:?}",
            pixel_ids.len()
        )));
    }
    let channels = shape[1];
    let plane = height * width;
    let mut owner = vec![GATHER_ZERO; plane];
    for (n, &p) in pixel_ids.iter().enumerate() {
        if p >= plane {
            return Err(TensorError::Usage(format!(
                "scatter: pixel id {p} out of range for {height}×{width}"
            )));
        }
        if owner[p] != GATHER_ZERO {
            return Err(TensorError::Usage(format!("scatter: duplicate pixel id {p}")));
        }
        owner[p] = n;
    }
    let mut index = Vec::with_capacity(channels * plane);
    for c in 0..channels {
        index.extend(owner.iter().map(|&n| if n == GATHER_ZERO { GATHER_ZERO } else { n * channels + c }));
    }
    tape.gather(rows, index, &[channels, height, width])
}
