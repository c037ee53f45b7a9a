//! Radiance-mapping MLP: encoded (coordinate, direction) → latent feature.
//!
//! Five linear layers. The encoded view direction joins the activation after
//! the second layer. Hidden layers use ReLU; the output layer is linear.

use alloc::format;
use alloc::vec::Vec;

use super::params::{init_rng, uniform_init};
use super::{ModelError, ParamSet};
use crate::sampling::EncodingConfig;
use crate::tape::{Tape, Var};
use crate::tensor::{Tensor, TensorError};

pub const FULL_HIDDEN: [usize; 4] = [256, 256, 256, 128];
pub const FEATURE_DIM: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MlpConfig {
    pub coord_width: usize,
    pub dir_width: usize,
    pub hidden: [usize; 4],
    pub feature_dim: usize,
}

impl MlpConfig {
    pub fn full(enc: &EncodingConfig) -> Self {
        MlpConfig {
            coord_width: enc.coord_width(),
            dir_width: enc.dir_width(),
            hidden: FULL_HIDDEN,
            feature_dim: FEATURE_DIM,
        }
    }

    /// Hidden widths scaled by `multiplier` (rounded, at least 1).
    pub fn scaled(enc: &EncodingConfig, multiplier: f64) -> Self {
        let mut cfg = Self::full(enc);
        for h in &mut cfg.hidden {
            *h = (libm::round(*h as f64 * multiplier) as usize).max(1);
        }
        cfg
    }

    /// `(input, output)` widths of the five layers.
    pub fn layer_dims(&self) -> [(usize, usize); 5] {
        let h = self.hidden;
        [
            (self.coord_width, h[0]),
            (h[0], h[1]),
            (h[1] + self.dir_width, h[2]),
            (h[2], h[3]),
            (h[3], self.feature_dim),
        ]
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims().iter().map(|(i, o)| i * o + o).sum()
    }

    fn validate(&self) -> Result<(), ModelError> {
        if self.coord_width == 0 || self.dir_width == 0 {
            return Err(ModelError::Config(format!(
                "encoded input widths must be positive (coords {}, dirs {})",
                self.coord_width, self.dir_width
            )));
        }
        if self.feature_dim == 0 || self.hidden.contains(&0) {
            return Err(ModelError::Config(format!(
                "layer widths must be positive, got {:?} → {}",
                self.hidden, self.feature_dim
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RadianceMlp {
    pub config: MlpConfig,
    pub params: ParamSet,
}

impl RadianceMlp {
    pub fn new(config: MlpConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = init_rng(seed);
        let mut params = ParamSet::new();
        for (l, (i, o)) in config.layer_dims().into_iter().enumerate() {
            params.push(format!("mlp.l{}.w", l + 1), uniform_init(&mut rng, &[i, o], i));
            params.push(format!("mlp.l{}.b", l + 1), uniform_init(&mut rng, &[o], i));
        }
        Ok(RadianceMlp { config, params })
    }

    /// `(parameter count, bytes as f32)`.
    pub fn count_params(&self) -> (usize, usize) {
        let n = self.params.scalar_count();
        (n, 4 * n)
    }

    /// `coords[N×coord_width]`, `dirs[N×dir_width]` → `N×feature_dim`.
    /// `vars` are this model's parameters bound on `tape`.
    pub fn forward(&self, tape: &mut Tape, vars: &[Var], coords: Var, dirs: Var) -> Result<Var, TensorError> {
        let cs = tape.shape(coords);
        if cs.len() != 2 || cs[1] != self.config.coord_width {
            return Err(TensorError::mismatch("radiance_forward", cs, &[cs[0], self.config.coord_width]));
        }
        let ds = tape.shape(dirs);
        if ds.len() != 2 || ds[1] != self.config.dir_width || ds[0] != cs[0] {
            return Err(TensorError::mismatch("radiance_forward", ds, &[cs[0], self.config.dir_width]));
        }
        let layer = |tape: &mut Tape, x: Var, l: usize| tape.linear(x, vars[2 * l], vars[2 * l + 1]);
        let h = layer(tape, coords, 0)?;
        let h = tape.relu(h);
        let h = layer(tape, h, 1)?;
        let h = tape.relu(h);
        let h = tape.concat(h, dirs, 1)?;
        let h = layer(tape, h, 2)?;
        let h = tape.relu(h);
        let h = layer(tape, h, 3)?;
        let h = tape.relu(h);
        layer(tape, h, 4)
    }

    /// Forward pass on plain tensors, without gradients.
    pub fn evaluate(&self, coords: &Tensor, dirs: &Tensor) -> Result<Tensor, TensorError> {
        let mut tape = Tape::new();
        let vars = self.params.bind(&mut tape, false);
        let (c, d) = (tape.constant(coords.clone()), tape.constant(dirs.clone()));
        let out = self.forward(&mut tape, &vars, c, d)?;
        Ok(tape.value(out).clone())
    }
}

/// Layer widths for reporting.
pub fn describe(cfg: &MlpConfig) -> Vec<(usize, usize)> {
    cfg.layer_dims().to_vec()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Aabb, Vec3};

    fn enc(fx: usize, fd: usize) -> EncodingConfig {
        let mut e = EncodingConfig::new(Aabb::new(Vec3::new(-1.0, -1.0, -1.0), Vec3::new(1.0, 1.0, 1.0)));
        e.coord_freqs = fx;
        e.dir_freqs = fd;
        e
    }

    #[test]
    fn default_size() {
        let cfg = MlpConfig::full(&enc(10, 4));
        assert_eq!(cfg.layer_dims()[0], (63, 256));
        assert_eq!(cfg.layer_dims()[2], (283, 256));
        let per_layer: Vec<usize> = cfg.layer_dims().iter().map(|(i, o)| i * o + o).collect();
        assert_eq!(per_layer, [16_384, 65_792, 72_704, 32_896, 1_032]);
        let mlp = RadianceMlp::new(cfg, 0).unwrap();
        assert_eq!(mlp.count_params(), (188_808, 755_232));
    }

    #[test]
    fn raw_only_encoding_size() {
        let cfg = MlpConfig::full(&enc(0, 0));
        assert_eq!((cfg.coord_width, cfg.dir_width), (3, 3));
        let expected = (3 * 256 + 256) + (256 * 256 + 256) + (259 * 256 + 256) + (256 * 128 + 128) + (128 * 8 + 8);
        assert_eq!(cfg.param_count(), expected);
        assert_eq!(RadianceMlp::new(cfg, 1).unwrap().count_params().0, expected);
    }

    #[test]
    fn degenerate_configs_rejected() {
        let mut cfg = MlpConfig::full(&enc(10, 4));
        cfg.hidden = [0, 0, 0, 0];
        assert!(matches!(RadianceMlp::new(cfg, 0), Err(ModelError::Config(_))));
        let mut e = enc(0, 0);
        e.include_raw = false;
        assert!(RadianceMlp::new(MlpConfig::full(&e), 0).is_err());
    }

    #[test]
    fn zero_weights_output_final_bias() {
        let cfg = MlpConfig::scaled(&enc(2, 1), 0.1);
        let mut mlp = RadianceMlp::new(cfg, 3).unwrap();
        let bias: Vec<f64> = (0..8).map(|i| i as f64 * 0.1).collect();
        for (name, t) in mlp.params.names().to_vec().iter().zip(mlp.params.tensors_mut()) {
            if name == "mlp.l5.b" {
                t.data_mut().copy_from_slice(&bias);
            } else {
                t.data_mut().fill(0.0);
            }
        }
        let coords = Tensor::full(&[2, cfg.coord_width], 0.3);
        let dirs = Tensor::full(&[2, cfg.dir_width], -0.2);
        let out = mlp.evaluate(&coords, &dirs).unwrap();
        assert_eq!(&out.data()[..8], bias.as_slice());
        assert_eq!(&out.data()[8..], bias.as_slice());
    }

    #[test]
    fn identical_rows_identical_outputs() {
        let cfg = MlpConfig::scaled(&enc(3, 2), 0.125);
        let mlp = RadianceMlp::new(cfg, 9).unwrap();
        let row: Vec<f64> = (0..cfg.coord_width).map(|i| (i as f64).sin()).collect();
        let coords = Tensor::new(&[2, cfg.coord_width], [row.clone(), row].concat()).unwrap();
        let dirs = Tensor::full(&[2, cfg.dir_width], 0.5);
        let out = mlp.evaluate(&coords, &dirs).unwrap();
        assert_eq!(out.data()[..8], out.data()[8..]);
    }

    #[test]
    fn width_mismatch_is_an_error() {
        let cfg = MlpConfig::scaled(&enc(2, 1), 0.1);
        let mlp = RadianceMlp::new(cfg, 0).unwrap();
        let coords = Tensor::zeros(&[1, cfg.coord_width + 1]);
        let dirs = Tensor::zeros(&[1, cfg.dir_width]);
        assert!(mlp.evaluate(&coords, &dirs).is_err());
    }
}
