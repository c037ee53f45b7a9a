//! Discrete volume-rendering quadrature along one ray.
//!
//! Used as a reference: when a ray meets a single opaque surface, the
//! quadrature collapses to the colour of that one sample, which is what the
//! radiance MLP predicts directly.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

#[derive(Debug, Clone, PartialEq)]
pub struct VolumeSamples {
    ts: Vec<f64>,
    sigmas: Vec<f64>,
    colors: Vec<[f64; 3]>,
    t_near: f64,
    t_far: f64,
}

impl VolumeSamples {
    /// Depths must be strictly increasing inside `[t_near, t_far]` and
    /// densities non-negative.
    pub fn new(
        ts: Vec<f64>,
        sigmas: Vec<f64>,
        colors: Vec<[f64; 3]>,
        t_near: f64,
        t_far: f64,
    ) -> Result<Self, String> {
        if ts.len() != sigmas.len() || ts.len() != colors.len() {
            return Err(format!(
                "length mismatch: {} depths, {} densities, {} colours",
                ts.len(),
                sigmas.len(),
                colors.len()
            ));
        }
        if !(t_near < t_far) {
            return Err(format!("empty interval [{t_near}, {t_far}]"));
        }
        if ts.windows(2).any(|w| !(w[0] < w[1])) {
            return Err("depths must be strictly increasing".into());
        }
        if ts.iter().any(|&t| !(t >= t_near && t <= t_far)) {
            return Err(format!("depths must lie in [{t_near}, {t_far}]"));
        }
        if sigmas.iter().any(|&s| !(s >= 0.0)) {
            return Err("densities must be non-negative".into());
        }
        Ok(VolumeSamples {
            ts,
            sigmas,
            colors,
            t_near,
            t_far,
        })
    }

    pub fn len(&self) -> usize {
        self.ts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ts.is_empty()
    }

    pub fn ts(&self) -> &[f64] {
        &self.ts
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }

    pub fn colors(&self) -> &[[f64; 3]] {
        &self.colors
    }

    /// Interval lengths. The last one runs to `t_far`, or spans the whole
    /// interval when the last sample sits on `t_far`.
    pub fn deltas(&self) -> Vec<f64> {
        let n = self.ts.len();
        let mut d: Vec<f64> = self.ts.windows(2).map(|w| w[1] - w[0]).collect();
        if n > 0 {
            let tail = self.t_far - self.ts[n - 1];
            d.push(if tail > 0.0 { tail } else { self.t_far - self.t_near });
        }
        d
    }
}

/// `C = Σ T_i α_i c_i` with `α_i = 1 − exp(−σ_i δ_i)`, `T_i = Π_{j<i} (1 − α_j)`.
pub fn volume_render(s: &VolumeSamples) -> [f64; 3] {
    let mut out = [0.0; 3];
    let mut transmittance = 1.0;
    for ((&sigma, delta), c) in s.sigmas.iter().zip(s.deltas()).zip(&s.colors) {
        let alpha = 1.0 - libm::exp(-sigma * delta);
        let w = transmittance * alpha;
        for k in 0..3 {
            out[k] += w * c[k];
        }
        transmittance *= 1.0 - alpha;
    }
    out
}
