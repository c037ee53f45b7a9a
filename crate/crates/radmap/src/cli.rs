//! Command-line arguments. Every subcommand also reads its flags from an
//! optional JSON file (`--config`); flags given on the command line win.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{self, Error, Result};

#[derive(Debug, Parser)]
#[command(name = "radmap", version, about = "Point-cloud rendering with radiance mapping")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic scene: point cloud, cameras, ground-truth images.
    Synth(SynthArgs),
    /// Train on a scene directory.
    Fit(FitArgs),
    /// Render a camera file with a trained checkpoint.
    Render(RenderArgs),
    /// Score rendered PNGs against ground truth.
    Eval(EvalArgs),
    /// Time the pipeline stages.
    Bench(BenchArgs),
    /// Finite-difference check of every differentiable operation.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthArgs {
    /// JSON file with default values for the flags below.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// sphere, plane or textured-cube.
    #[arg(long)]
    pub primitive: Option<String>,
    /// checker or constant.
    #[arg(long)]
    pub radiance: Option<String>,
    #[arg(long)]
    pub points: Option<usize>,
    #[arg(long)]
    pub views: Option<usize>,
    #[arg(long)]
    pub test_views: Option<usize>,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub height: Option<usize>,
    /// Horizontal field of view in radians.
    #[arg(long)]
    pub fov: Option<f64>,
    #[arg(long)]
    pub distance: Option<f64>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Scene directory written by `synth`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// desk or full.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub max_steps: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub lr_mlp: Option<f64>,
    #[arg(long)]
    pub lr_refine: Option<f64>,
    #[arg(long)]
    pub lr_decay: Option<f64>,
    /// Views averaged per optimization step.
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Square training crop; 0 trains on whole images.
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub eval_every: Option<u64>,
    #[arg(long)]
    pub checkpoint_every: Option<u64>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub coord_freqs: Option<usize>,
    #[arg(long)]
    pub dir_freqs: Option<usize>,
    /// Four comma-separated MLP widths.
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
    #[arg(long)]
    pub refine_multiplier: Option<f64>,
    /// Feed raw point positions to the MLP instead of rectified ones.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub no_rectify: Option<bool>,
    /// Keep every k-th point of the cloud.
    #[arg(long)]
    pub downsample: Option<usize>,
    #[arg(long)]
    pub w_l2: Option<f64>,
    #[arg(long)]
    pub w_perc: Option<f64>,
    /// RMCK file with frozen perceptual-network weights.
    #[arg(long)]
    pub perceptual_weights: Option<PathBuf>,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// transforms JSON.
    #[arg(long)]
    pub cameras: Option<PathBuf>,
    /// PLY point cloud.
    #[arg(long)]
    pub cloud: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Directory of rendered PNGs.
    #[arg(long)]
    pub renders: Option<PathBuf>,
    /// Directory with ground-truth PNGs of the same names.
    #[arg(long)]
    pub gt: Option<PathBuf>,
    /// Also write the table to this file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub cloud: Option<PathBuf>,
    #[arg(long)]
    pub cameras: Option<PathBuf>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub reps: Option<usize>,
    /// Trained weights; fresh desk-width networks otherwise.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Also write the report to this file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Random configurations per check.
    #[arg(long)]
    pub configs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

/// `flags` with every unset field taken from the JSON file, if any.
pub fn with_file<T: Serialize + DeserializeOwned>(flags: T, file: Option<&Path>) -> Result<T> {
    let Some(path) = file else {
        return Ok(flags);
    };
    let text = error::read(path)?;
    let base: Value =
        serde_json::from_slice(&text).map_err(|e| Error::Validation(format!("{}: {e}", path.display())))?;
    let Value::Object(mut merged) = base else {
        return Err(Error::Validation(format!("{}: expected a JSON object", path.display())));
    };
    let Value::Object(set) = serde_json::to_value(&flags).expect("flags serialize") else {
        unreachable!("argument structs serialize to objects")
    };
    for (k, v) in set {
        if !v.is_null() {
            merged.insert(k, v);
        }
    }
    serde_json::from_value(Value::Object(merged)).map_err(|e| Error::Validation(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"points": 10, "seed": 3, "primitive": "plane"}"#).unwrap();
        let flags = SynthArgs {
            points: Some(99),
            ..SynthArgs::default()
        };
        let merged = with_file(flags, Some(&path)).unwrap();
        assert_eq!((merged.points, merged.seed, merged.primitive.as_deref()), (Some(99), Some(3), Some("plane")));
    }

    #[test]
    fn unknown_keys_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"pionts": 10}"#).unwrap();
        assert!(matches!(with_file(SynthArgs::default(), Some(&path)), Err(Error::Validation(_))));
    }
}
