//! Gated-convolution U-Net mapping a sparse feature map to an RGB image.
//!
//! Five resolution levels (four 2× average-pool downsamplings). Each block is
//! `relu(feat(x) ⊙ σ(gate(x)))` followed by instance normalization, with 3×3
//! convolutions at padding 1. The decoder upsamples by nearest neighbour and
//! concatenates the encoder features of the same level before its block. A
//! 1×1 convolution and a sigmoid produce the output.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::params::{init_rng, uniform_init};
use super::{ModelError, ParamSet};
use crate::tape::{Tape, Var};
use crate::tensor::{Tensor, TensorError};

pub const BASE_WIDTHS: [usize; 5] = [16, 32, 64, 128, 256];
pub const LEVELS: usize = 5;
/// Spatial extents must be multiples of this.
pub const ALIGN: usize = 1 << (LEVELS - 1);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefineConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    pub widths: [usize; LEVELS],
    pub norm_eps: f64,
}

impl RefineConfig {
    /// Base widths scaled by `multiplier`, rounded, at least 1.
    pub fn with_multiplier(in_channels: usize, multiplier: f64) -> Self {
        let mut widths = BASE_WIDTHS;
        for w in &mut widths {
            *w = (libm::round(*w as f64 * multiplier) as usize).max(1);
        }
        RefineConfig {
            in_channels,
            out_channels: 3,
            widths,
            norm_eps: 1e-5,
        }
    }

    pub fn full(in_channels: usize) -> Self {
        Self::with_multiplier(in_channels, 1.0)
    }

    fn validate(&self) -> Result<(), ModelError> {
        if self.in_channels == 0 || self.out_channels == 0 || self.widths.contains(&0) {
            return Err(ModelError::Config(format!(
                "channel counts must be positive: in {}, widths {:?}, out {}",
                self.in_channels, self.widths, self.out_channels
            )));
        }
        if !(self.norm_eps > 0.0) {
            return Err(ModelError::Config(format!("norm epsilon must be positive, got {}", self.norm_eps)));
        }
        Ok(())
    }

    /// `(input channels, output channels)` of every gated block, encoder
    /// levels 0..5 then decoder levels 3..=0.
    fn blocks(&self) -> Vec<(String, usize, usize)> {
        let w = self.widths;
        let mut out = Vec::with_capacity(2 * LEVELS - 1);
        for l in 0..LEVELS {
            let cin = if l == 0 { self.in_channels } else { w[l - 1] };
            out.push((format!("refine.enc{l}"), cin, w[l]));
        }
        for l in (0..LEVELS - 1).rev() {
            out.push((format!("refine.dec{l}"), w[l + 1] + w[l], w[l]));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefineNet {
    pub config: RefineConfig,
    pub params: ParamSet,
}

/// Parameter slots of one gated block within a bound variable list.
#[derive(Debug, Clone, Copy)]
pub struct GatedBlock {
    pub feat_w: Var,
    pub feat_b: Var,
    pub gate_w: Var,
    pub gate_b: Var,
    pub gamma: Var,
    pub beta: Var,
}

/// `relu(conv(x; feat) ⊙ σ(conv(x; gate)))`, 3×3 kernels, padding 1.
pub fn gated_conv(tape: &mut Tape, x: Var, feat: (Var, Var), gate: (Var, Var)) -> Result<Var, TensorError> {
    let f = tape.conv2d(x, feat.0, feat.1, 1, 1)?;
    let g = tape.conv2d(x, gate.0, gate.1, 1, 1)?;
    let g = tape.sigmoid(g);
    let y = tape.mul(f, g)?;
    Ok(tape.relu(y))
}

impl RefineNet {
    pub fn new(config: RefineConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = init_rng(seed);
        let mut params = ParamSet::new();
        for (name, cin, cout) in config.blocks() {
            let fan_in = cin * 9;
            for part in ["feat", "gate"] {
                params.push(format!("{name}.{part}.w"), uniform_init(&mut rng, &[cout, cin, 3, 3], fan_in));
                params.push(format!("{name}.{part}.b"), uniform_init(&mut rng, &[cout], fan_in));
            }
            params.push(format!("{name}.norm.gamma"), Tensor::full(&[cout], 1.0));
            params.push(format!("{name}.norm.beta"), Tensor::zeros(&[cout]));
        }
        let (c0, co) = (config.widths[0], config.out_channels);
        params.push("refine.out.w", uniform_init(&mut rng, &[co, c0, 1, 1], c0));
        params.push("refine.out.b", uniform_init(&mut rng, &[co], c0));
        Ok(RefineNet { config, params })
    }

    pub fn param_count(&self) -> usize {
        self.params.scalar_count()
    }

    fn block(vars: &[Var], i: usize) -> GatedBlock {
        let s = &vars[6 * i..6 * i + 6];
        GatedBlock {
            feat_w: s[0],
            feat_b: s[1],
            gate_w: s[2],
            gate_b: s[3],
            gamma: s[4],
            beta: s[5],
        }
    }

    fn apply_block(&self, tape: &mut Tape, x: Var, b: GatedBlock) -> Result<Var, TensorError> {
        let y = gated_conv(tape, x, (b.feat_w, b.feat_b), (b.gate_w, b.gate_b))?;
        tape.instance_norm(y, b.gamma, b.beta, self.config.norm_eps)
    }

    /// `fmap[C_in×H×W]` → `C_out×H×W` in (0, 1). `H` and `W` must be
    /// multiples of 16; see [`RefineNet::forward_padded`].
    pub fn forward(&self, tape: &mut Tape, vars: &[Var], fmap: Var) -> Result<Var, TensorError> {
        let s = tape.shape(fmap);
        if s.len() != 3 || s[0] != self.config.in_channels {
            return Err(TensorError::mismatch("refine_forward", s, &[self.config.in_channels, 0, 0]));
        }
        if s[1] % ALIGN != 0 || s[2] % ALIGN != 0 {
            return Err(TensorError::dim(
                "refine_forward",
                format!(
                    "extents {}×{} are not multiples of {ALIGN}; reflect-pad the feature map first",
                    s[1], s[2]
                ),
            ));
        }
        let mut skips = Vec::with_capacity(LEVELS);
        let mut h = fmap;
        for l in 0..LEVELS {
            if l > 0 {
                h = tape.downsample2(h)?;
            }
            h = self.apply_block(tape, h, Self::block(vars, l))?;
            skips.push(h);
        }
        for (i, l) in (0..LEVELS - 1).rev().enumerate() {
            let up = tape.upsample2(h)?;
            let cat = tape.concat(up, skips[l], 0)?;
            h = self.apply_block(tape, cat, Self::block(vars, LEVELS + i))?;
        }
        let n = vars.len();
        let out = tape.conv2d(h, vars[n - 2], vars[n - 1], 1, 0)?;
        Ok(tape.sigmoid(out))
    }

    /// Reflect-pads to multiples of 16, runs [`RefineNet::forward`] and crops
    /// back to the input extents.
    pub fn forward_padded(&self, tape: &mut Tape, vars: &[Var], fmap: Var) -> Result<Var, TensorError> {
        let s = tape.shape(fmap);
        if s.len() != 3 {
            return Err(TensorError::dim("refine_forward", format!("expected C×H×W, got {s:?}")));
        }
        let (h, w) = (s[1], s[2]);
        let (ph, pw) = (pad_to(h), pad_to(w));
        if ph == 0 && pw == 0 {
            return self.forward(tape, vars, fmap);
        }
        let padded = tape.reflect_pad(fmap, ph, pw)?;
        let out = self.forward(tape, vars, padded)?;
        tape.crop(out, 0, 0, h, w)
    }

    /// Forward pass on a plain tensor, without gradients.
    pub fn evaluate(&self, fmap: &Tensor) -> Result<Tensor, TensorError> {
        let mut tape = Tape::new();
        let vars = self.params.bind(&mut tape, false);
        let x = tape.constant(fmap.clone());
        let out = self.forward_padded(&mut tape, &vars, x)?;
        Ok(tape.value(out).clone())
    }
}

/// Padding that brings `n` up to the next multiple of 16.
pub fn pad_to(n: usize) -> usize {
    (ALIGN - n % ALIGN) % ALIGN
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn output_shape_and_range() {
        let net = RefineNet::new(RefineConfig::with_multiplier(8, 0.25), 0).unwrap();
        let out = net.evaluate(&random(&[8, 64, 64], 1)).unwrap();
        assert_eq!(out.shape(), &[3, 64, 64]);
        assert!(out.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn padded_forward_restores_extents() {
        let net = RefineNet::new(RefineConfig::with_multiplier(8, 0.125), 0).unwrap();
        let out = net.evaluate(&random(&[8, 20, 33], 2)).unwrap();
        assert_eq!(out.shape(), &[3, 20, 33]);
    }

    #[test]
    fn indivisible_extents_rejected() {
        let net = RefineNet::new(RefineConfig::with_multiplier(8, 0.125), 0).unwrap();
        let mut tape = Tape::new();
        let vars = net.params.bind(&mut tape, false);
        let x = tape.constant(Tensor::zeros(&[8, 24, 32]));
        let err = net.forward(&mut tape, &vars, x).unwrap_err();
        assert!(format!("{err}").contains("pad"));
    }

    #[test]
    fn widths_and_names() {
        let cfg = RefineConfig::full(8);
        assert_eq!(cfg.widths, [16, 32, 64, 128, 256]);
        assert_eq!(RefineConfig::with_multiplier(8, 0.25).widths, [4, 8, 16, 32, 64]);
        let net = RefineNet::new(RefineConfig::with_multiplier(8, 0.25), 0).unwrap();
        let names = net.params.names();
        assert_eq!(names[0], "refine.enc0.feat.w");
        assert!(names.iter().any(|n| n == "refine.dec0.norm.gamma"));
        assert_eq!(names.last().unwrap(), "refine.out.b");
        assert_eq!(net.params.get("refine.dec3.feat.w").unwrap().shape(), &[32, 96, 3, 3]);
    }

    #[test]
    fn zero_channels_rejected() {
        let mut cfg = RefineConfig::full(8);
        cfg.widths[2] = 0;
        assert!(RefineNet::new(cfg, 0).is_err());
    }

    #[test]
    fn saturated_gate_is_plain_conv() {
        let mut tape = Tape::new();
        let x = tape.constant(random(&[2, 5, 6], 3));
        let fw = tape.constant(random(&[3, 2, 3, 3], 4));
        let fb = tape.constant(random(&[3], 5));
        let gw = tape.constant(Tensor::zeros(&[3, 2, 3, 3]));
        let gb = tape.constant(Tensor::full(&[3], 20.0));
        let gated = gated_conv(&mut tape, x, (fw, fb), (gw, gb)).unwrap();
        let plain = tape.conv2d(x, fw, fb, 1, 1).unwrap();
        let plain = tape.relu(plain);
        for (a, b) in tape.value(gated).data().iter().zip(tape.value(plain).data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }
}
