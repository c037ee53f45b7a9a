//! Model checkpoints on top of the RMCK archive.
//!
//! Besides the network parameters an archive holds:
//!
//! - `meta.config`: the model configuration as JSON, one byte per element;
//! - `meta.step`: the optimization step;
//! - `adam.m.<param>` / `adam.v.<param>`: Adam moments, when saved from a
//!   training run.

use std::path::Path;

use radmap_core::models::{ModelError, ParamSet};
use radmap_core::pipeline::{ModelConfig, Pipeline};
use radmap_core::training::TrainState;
use radmap_core::{AdamConfig, AdamState, Tensor};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, Entry};
use crate::dataset::BoxJson;
use crate::error::{Error, Result};

/// Largest step count an f32 holds exactly.
pub const MAX_STEP: u64 = 1 << 24;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub coord_freqs: usize,
    pub dir_freqs: usize,
    pub include_raw: bool,
    pub hidden: [usize; 4],
    pub refine_multiplier: f64,
    pub tau: f64,
    pub rectify: bool,
    pub bbox: BoxJson,
}

impl ModelMeta {
    pub fn new(cfg: &ModelConfig, bbox: radmap_core::Aabb) -> Self {
        ModelMeta {
            coord_freqs: cfg.coord_freqs,
            dir_freqs: cfg.dir_freqs,
            include_raw: cfg.include_raw,
            hidden: cfg.mlp_hidden,
            refine_multiplier: cfg.refine_multiplier,
            tau: cfg.tau,
            rectify: cfg.rectify,
            bbox: bbox.into(),
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            coord_freqs: self.coord_freqs,
            dir_freqs: self.dir_freqs,
            include_raw: self.include_raw,
            mlp_hidden: self.hidden,
            refine_multiplier: self.refine_multiplier,
            tau: self.tau,
            rectify: self.rectify,
        }
    }

    pub fn of(p: &Pipeline) -> Self {
        ModelMeta::new(&p.config, p.encoding.bbox)
    }
}

fn adam_entries(out: &mut Vec<Entry>, params: &ParamSet, adam: &AdamState) {
    for (kind, moments) in [("m", &adam.m), ("v", &adam.v)] {
        for ((name, t), m) in params.iter().zip(moments) {
            let t = Tensor::new(t.shape(), m.clone()).expect("moment matches its parameter");
            out.push((format!("adam.{kind}.{name}"), t));
        }
    }
}

pub fn entries(pipeline: &Pipeline, state: Option<&TrainState>) -> Result<Vec<Entry>> {
    let meta = serde_json::to_vec(&ModelMeta::of(pipeline)).expect("plain JSON");
    let step = state.map_or(0, |s| s.step);
    if step > MAX_STEP {
        return Err(Error::Validation(format!("step {step} exceeds the checkpoint limit {MAX_STEP}")));
    }
    let mut out = vec![
        (
            "meta.config".to_string(),
            Tensor::new(&[meta.len()], meta.iter().map(|&b| b as f64).collect()).expect("non-empty"),
        ),
        ("meta.step".to_string(), Tensor::new(&[1], vec![step as f64]).expect("scalar")),
    ];
    for set in [&pipeline.mlp.params, &pipeline.refine.params] {
        out.extend(set.iter().map(|(n, t)| (n.to_string(), t.clone())));
    }
    if let Some(s) = state {
        adam_entries(&mut out, &pipeline.mlp.params, &s.adam_mlp);
        adam_entries(&mut out, &pipeline.refine.params, &s.adam_refine);
    }
    Ok(out)
}

pub fn save(path: &Path, pipeline: &Pipeline, state: Option<&TrainState>) -> Result<()> {
    checkpoint::save(&entries(pipeline, state)?, path)
}

#[derive(Debug, Clone)]
pub struct Loaded {
    pub meta: ModelMeta,
    pub pipeline: Pipeline,
    pub step: u64,
    /// Present when the archive carries optimizer moments.
    pub state: Option<TrainState>,
}

fn find<'a>(entries: &'a [Entry], name: &str) -> Option<&'a Tensor> {
    entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
}

fn param_error(e: ModelError) -> Error {
    Error::Format(format!("checkpoint does not match the architecture: {e}"))
}

fn load_adam(entries: &[Entry], params: &ParamSet, adam: AdamConfig, step: u64) -> Result<Option<AdamState>> {
    let mut state = AdamState::new(adam, params.tensors());
    state.step_count = step;
    for (kind, moments) in [("m", &mut state.m), ("v", &mut state.v)] {
        for ((name, t), m) in params.iter().zip(moments.iter_mut()) {
            let key = format!("adam.{kind}.{name}");
            let Some(src) = find(entries, &key) else {
                return Ok(None);
            };
            if src.shape() != t.shape() {
                return Err(Error::Format(format!(
                    "checkpoint tensor '{key}' has shape {:?}, expected {:?}",
                    src.shape(),
                    t.shape()
                )));
            }
            *m = src.data().to_vec();
        }
    }
    Ok(Some(state))
}

pub fn from_entries(entries: &[Entry], adam: AdamConfig) -> Result<Loaded> {
    let meta_t = find(entries, "meta.config").ok_or_else(|| Error::Format("checkpoint lacks 'meta.config'".into()))?;
    let bytes: Vec<u8> = meta_t.data().iter().map(|&v| v as u8).collect();
    let meta: ModelMeta =
        serde_json::from_slice(&bytes).map_err(|e| Error::Format(format!("checkpoint 'meta.config': {e}")))?;
    let step = find(entries, "meta.step")
        .and_then(|t| t.data().first().copied())
        .ok_or_else(|| Error::Format("checkpoint lacks 'meta.step'".into()))? as u64;
    let mut pipeline = Pipeline::new(meta.model_config(), (&meta.bbox).into(), 0)
        .map_err(|e| Error::Format(format!("checkpoint 'meta.config': {e}")))?;
    pipeline.mlp.params.load(|n| find(entries, n)).map_err(param_error)?;
    pipeline.refine.params.load(|n| find(entries, n)).map_err(param_error)?;
    let mlp = load_adam(entries, &pipeline.mlp.params, adam, step)?;
    let refine = load_adam(entries, &pipeline.refine.params, adam, step)?;
    let state = match (mlp, refine) {
        (Some(adam_mlp), Some(adam_refine)) => Some(TrainState {
            step,
            adam_mlp,
            adam_refine,
            losses: Vec::new(),
        }),
        _ => None,
    };
    Ok(Loaded {
        meta,
        pipeline,
        step,
        state,
    })
}

pub fn load(path: &Path, adam: AdamConfig) -> Result<Loaded> {
    from_entries(&checkpoint::load(path)?, adam).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        e => e,
    })
}
