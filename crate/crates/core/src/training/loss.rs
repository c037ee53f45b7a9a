//! Reconstruction losses: pixel MSE plus a perceptual term computed with a
//! frozen convolutional feature pyramid.

use alloc::format;
use alloc::vec::Vec;

use crate::models::params::{init_rng, uniform_init};
use crate::models::{ModelError, ParamSet};
use crate::tape::{Tape, Var};
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerceptualConfig {
    pub channels: [usize; 3],
    pub seed: u64,
}

impl Default for PerceptualConfig {
    fn default() -> Self {
        PerceptualConfig {
            channels: [8, 16, 32],
            seed: 0x5eed,
        }
    }
}

/// Three 3×3 conv + relu levels; the first keeps the resolution, the others
/// halve it. Never trained.
#[derive(Debug, Clone, PartialEq)]
pub struct PerceptualExtractor {
    params: ParamSet,
}

impl PerceptualExtractor {
    pub fn new(cfg: PerceptualConfig) -> Self {
        let mut rng = init_rng(cfg.seed);
        let mut params = ParamSet::new();
        let mut cin = 3;
        for (l, &cout) in cfg.channels.iter().enumerate() {
            let fan_in = cin * 9;
            let mut w = uniform_init(&mut rng, &[cout, cin, 3, 3], fan_in);
            w.data_mut().iter_mut().for_each(|v| *v *= libm::sqrt(6.0));
            params.push(format!("perc.l{l}.w"), w);
            params.push(format!("perc.l{l}.b"), Tensor::zeros(&[cout]));
            cin = cout;
        }
        PerceptualExtractor { params }
    }

    /// Externally supplied weights; names and shapes follow [`Self::new`]'s
    /// layout for the given channel counts.
    pub fn from_params(channels: [usize; 3], mut lookup: impl FnMut(&str) -> Option<Tensor>) -> Result<Self, ModelError> {
        let mut ex = Self::new(PerceptualConfig { channels, seed: 0 });
        let loaded: Vec<Option<Tensor>> = ex.params.names().iter().map(|n| lookup(n)).collect();
        let names: Vec<_> = ex.params.names().to_vec();
        ex.params.load(|name| {
            let i = names.iter().position(|n| n == name)?;
            loaded[i].as_ref()
        })?;
        Ok(ex)
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    /// Binds the weights as constants: nothing flows back into them.
    pub fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.params.bind(tape, false)
    }

    pub fn features(&self, tape: &mut Tape, vars: &[Var], img: Var) -> Result<Vec<Var>, TensorError> {
        let mut out = Vec::with_capacity(3);
        let mut h = img;
        for l in 0..3 {
            let stride = if l == 0 { 1 } else { 2 };
            h = tape.conv2d(h, vars[2 * l], vars[2 * l + 1], stride, 1)?;
            h = tape.relu(h);
            out.push(h);
        }
        Ok(out)
    }
}

/// Sum over pyramid levels of the feature MSE.
pub fn perceptual_loss(
    tape: &mut Tape,
    ex: &PerceptualExtractor,
    vars: &[Var],
    pred: Var,
    gt: Var,
) -> Result<Var, TensorError> {
    if tape.shape(pred) != tape.shape(gt) {
        return Err(TensorError::mismatch("perceptual_loss", tape.shape(pred), tape.shape(gt)));
    }
    let fp = ex.features(tape, vars, pred)?;
    let fg = ex.features(tape, vars, gt)?;
    let mut total: Option<Var> = None;
    for (a, b) in fp.into_iter().zip(fg) {
        let m = tape.mse(a, b)?;
        total = Some(match total {
            None => m,
            Some(t) => tape.add(t, m)?,
        });
    }
    Ok(total.expect("three levels"))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub w_l2: f64,
    pub w_perc: f64,
    pub perceptual: PerceptualConfig,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            w_l2: 1.0,
            w_perc: 0.01,
            perceptual: PerceptualConfig::default(),
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.w_l2 >= 0.0 && self.w_perc >= 0.0) {
            return Err(ModelError::Config(format!(
                "loss weights must be non-negative, got {} and {}",
                self.w_l2, self.w_perc
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub total: Var,
    pub l2: Var,
    pub perceptual: Var,
}

/// `w_l2·mse + w_perc·perceptual`.
pub fn total_loss(
    tape: &mut Tape,
    cfg: &LossConfig,
    ex: &PerceptualExtractor,
    ex_vars: &[Var],
    pred: Var,
    gt: Var,
) -> Result<LossVars, TensorError> {
    let l2 = tape.mse(pred, gt)?;
    let perceptual = perceptual_loss(tape, ex, ex_vars, pred, gt)?;
    let a = tape.scale(l2, cfg.w_l2);
    let b = tape.scale(perceptual, cfg.w_perc);
    let total = tape.add(a, b)?;
    Ok(LossVars { total, l2, perceptual })
}
