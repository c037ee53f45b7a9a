//! The full renderer: rasterize → query → MLP → scatter → refine.

use alloc::vec::Vec;

use crate::camera::Camera;
use crate::cloud::PointCloud;
use crate::geometry::Aabb;
use crate::image::Image;
use crate::models::mlp::{FEATURE_DIM, FULL_HIDDEN};
use crate::models::{scatter_features, MlpConfig, ModelError, RadianceMlp, RefineConfig, RefineNet};
use crate::raster::{rasterize, FragmentBuffer, RasterConfig, TAU_SYNTHETIC};
use crate::sampling::{build_query_batch, EncodingConfig, QueryBatch, QueryMode};
use crate::tape::{Tape, Var};
use crate::tensor::{Tensor, TensorError};

/// Everything that fixes the architecture and the query path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub coord_freqs: usize,
    pub dir_freqs: usize,
    pub include_raw: bool,
    pub mlp_hidden: [usize; 4],
    pub refine_multiplier: f64,
    pub tau: f64,
    /// `false` feeds raw winning-point positions to the encoder.
    pub rectify: bool,
}

impl ModelConfig {
    pub const DESK_HIDDEN: [usize; 4] = [64, 64, 64, 32];
    pub const DESK_REFINE: f64 = 0.25;
    pub const DESK_TAU: f64 = 0.025;

    pub fn full() -> Self {
        ModelConfig {
            coord_freqs: 10,
            dir_freqs: 4,
            include_raw: true,
            mlp_hidden: FULL_HIDDEN,
            refine_multiplier: 1.0,
            tau: TAU_SYNTHETIC,
            rectify: true,
        }
    }

    /// Narrow networks and a radius threshold suited to 64×64 toy scenes.
    pub fn desk() -> Self {
        ModelConfig {
            mlp_hidden: Self::DESK_HIDDEN,
            refine_multiplier: Self::DESK_REFINE,
            tau: Self::DESK_TAU,
            ..Self::full()
        }
    }

    pub fn encoding(&self, bbox: Aabb) -> EncodingConfig {
        EncodingConfig {
            coord_freqs: self.coord_freqs,
            dir_freqs: self.dir_freqs,
            include_raw: self.include_raw,
            bbox,
        }
    }

    pub fn raster(&self) -> RasterConfig {
        RasterConfig {
            tau: self.tau,
            ..RasterConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pipeline {
    pub config: ModelConfig,
    pub encoding: EncodingConfig,
    pub mlp: RadianceMlp,
    pub refine: RefineNet,
}

/// Parameters of both networks bound on one tape.
#[derive(Debug, Clone)]
pub struct BoundParams {
    pub mlp: Vec<Var>,
    pub refine: Vec<Var>,
}

impl Pipeline {
    /// Fresh networks; the MLP is seeded with `seed`, the U-Net with `seed + 1`.
    pub fn new(config: ModelConfig, bbox: Aabb, seed: u64) -> Result<Self, ModelError> {
        if !(config.tau > 0.0) {
            return Err(ModelError::Config(alloc::format!("radius threshold must be positive, got {}", config.tau)));
        }
        if !(config.refine_multiplier > 0.0) {
            return Err(ModelError::Config(alloc::format!(
                "width multiplier must be positive, got {}",
                config.refine_multiplier
            )));
        }
        let encoding = config.encoding(bbox);
        let mlp_cfg = MlpConfig {
            hidden: config.mlp_hidden,
            ..MlpConfig::full(&encoding)
        };
        let mlp = RadianceMlp::new(mlp_cfg, seed)?;
        let refine = RefineNet::new(
            RefineConfig::with_multiplier(FEATURE_DIM, config.refine_multiplier),
            seed.wrapping_add(1),
        )?;
        Ok(Pipeline {
            config,
            encoding,
            mlp,
            refine,
        })
    }

    pub fn raster_config(&self) -> RasterConfig {
        self.config.raster()
    }

    pub fn bind(&self, tape: &mut Tape, requires_grad: bool) -> BoundParams {
        BoundParams {
            mlp: self.mlp.params.bind(tape, requires_grad),
            refine: self.refine.params.bind(tape, requires_grad),
        }
    }

    pub fn queries(&self, frag: &FragmentBuffer, cloud: &PointCloud) -> QueryBatch {
        let mode = if self.config.rectify {
            QueryMode::Rectified
        } else {
            QueryMode::Raw(cloud)
        };
        build_query_batch(frag, &self.encoding, mode)
    }

    /// Latent feature map `C×H×W` of a query batch.
    pub fn feature_map(
        &self,
        tape: &mut Tape,
        params: &BoundParams,
        batch: &QueryBatch,
        height: usize,
        width: usize,
    ) -> Result<Var, TensorError> {
        let (Some(coords), Some(dirs)) = (batch.coords_tensor(), batch.dirs_tensor()) else {
            let c = self.mlp.config.feature_dim;
            return Ok(tape.constant(Tensor::zeros(&[c, height, width])));
        };
        let (coords, dirs) = (tape.constant(coords), tape.constant(dirs));
        let rows = self.mlp.forward(tape, &params.mlp, coords, dirs)?;
        scatter_features(tape, rows, &batch.pixel_ids, height, width)
    }

    /// `3×H×W` prediction for one fragment buffer.
    pub fn forward(
        &self,
        tape: &mut Tape,
        params: &BoundParams,
        frag: &FragmentBuffer,
        cloud: &PointCloud,
    ) -> Result<Var, TensorError> {
        let batch = self.queries(frag, cloud);
        let fmap = self.feature_map(tape, params, &batch, frag.height, frag.width)?;
        self.refine.forward_padded(tape, &params.refine, fmap)
    }

    pub fn render_fragments(&self, frag: &FragmentBuffer, cloud: &PointCloud) -> Result<Image, TensorError> {
        let mut tape = Tape::new();
        let params = self.bind(&mut tape, false);
        let out = self.forward(&mut tape, &params, frag, cloud)?;
        Ok(Image::from_planar(tape.value(out)))
    }

    pub fn render(&self, cloud: &PointCloud, camera: &Camera) -> Result<Image, TensorError> {
        let frag = rasterize(cloud, camera, &self.raster_config());
        self.render_fragments(&frag, cloud)
    }
}
