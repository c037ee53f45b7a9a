//! Optimization loop, augmentation and evaluation.

pub mod loss;

use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::adam::{AdamConfig, AdamState};
use crate::cloud::PointCloud;
use crate::image::Image;
use crate::metrics;
use crate::models::ModelError;
use crate::pipeline::Pipeline;
use crate::raster::{rasterize, FragmentBuffer};
use crate::scene::Dataset;
use crate::tape::Tape;
use crate::tensor::TensorError;

pub use loss::{perceptual_loss, total_loss, LossConfig, PerceptualConfig, PerceptualExtractor};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("non-finite loss {loss} at step {step} on training view {view}")]
    NonFinite { step: u64, view: usize, loss: f64 },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metric(#[from] metrics::MetricError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub lr_mlp: f64,
    pub lr_refine: f64,
    pub lr_decay: f64,
    pub batch_size: usize,
    pub max_steps: u64,
    /// Side of the square training crop; `None` trains on whole images.
    pub window: Option<usize>,
    pub seed: u64,
    /// Test-split evaluation period in steps; 0 evaluates only at the ends.
    pub eval_every: u64,
    /// Checkpoint period in steps; 0 checkpoints only at the end.
    pub checkpoint_every: u64,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr_mlp: 5e-4,
            lr_refine: 1.5e-4,
            lr_decay: 0.9999,
            batch_size: 1,
            max_steps: 1000,
            window: None,
            seed: 0,
            eval_every: 0,
            checkpoint_every: 0,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Learning rates scaled up for the narrow desk networks on 64×64 scenes.
    pub const DESK_LR_SCALE: f64 = 10.0;

    /// Whole-image steps with [`Self::DESK_LR_SCALE`] times the default
    /// rates.
    pub fn desk() -> Self {
        let base = TrainConfig::default();
        TrainConfig {
            lr_mlp: base.lr_mlp * Self::DESK_LR_SCALE,
            lr_refine: base.lr_refine * Self::DESK_LR_SCALE,
            max_steps: 5000,
            eval_every: 500,
            checkpoint_every: 1000,
            ..base
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.lr_mlp > 0.0 && self.lr_refine > 0.0) {
            return Err(TrainError::Config(alloc::format!(
                "learning rates must be positive, got {} and {}",
                self.lr_mlp, self.lr_refine
            )));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(TrainError::Config(alloc::format!("decay must be in (0, 1], got {}", self.lr_decay)));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch size must be positive".into()));
        }
        if self.window == Some(0) {
            return Err(TrainError::Config("training window must be positive".into()));
        }
        Ok(())
    }

    pub fn lr_mlp_at(&self, step: u64) -> f64 {
        lr_at(self.lr_mlp, self.lr_decay, step)
    }

    pub fn lr_refine_at(&self, step: u64) -> f64 {
        lr_at(self.lr_refine, self.lr_decay, step)
    }
}

/// `lr0 · decay^step`.
pub fn lr_at(lr0: f64, decay: f64, step: u64) -> f64 {
    lr0 * libm::pow(decay, step as f64)
}

/// Random stream for one step; independent of how many steps ran before,
/// so a resumed run draws the same numbers.
pub fn step_rng(seed: u64, step: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step);
    rng
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub step: u64,
    pub adam_mlp: AdamState,
    pub adam_refine: AdamState,
    /// Total loss of every step taken so far.
    pub losses: Vec<f64>,
}

impl TrainState {
    pub fn new(pipeline: &Pipeline, adam: AdamConfig) -> Self {
        TrainState {
            step: 0,
            adam_mlp: AdamState::new(adam, pipeline.mlp.params.tensors()),
            adam_refine: AdamState::new(adam, pipeline.refine.params.tensors()),
            losses: Vec::new(),
        }
    }

    /// Rounds parameters and moment estimates to single precision, the
    /// precision checkpoints store. Applied at every checkpoint so a run
    /// resumed from a file continues exactly like the uninterrupted one.
    pub fn quantize(&mut self, pipeline: &mut Pipeline) {
        let q = |v: &mut f64| *v = f64::from(*v as f32);
        for t in pipeline
            .mlp
            .params
            .tensors_mut()
            .iter_mut()
            .chain(pipeline.refine.params.tensors_mut())
        {
            t.data_mut().iter_mut().for_each(q);
        }
        for a in [&mut self.adam_mlp, &mut self.adam_refine] {
            for v in a.m.iter_mut().chain(a.v.iter_mut()) {
                v.iter_mut().for_each(q);
            }
        }
    }
}

/// Scene, cloud and the full-resolution fragments of every view.
#[derive(Debug, Clone)]
pub struct TrainData {
    pub cloud: PointCloud,
    pub dataset: Dataset,
    pub fragments: Vec<FragmentBuffer>,
}

impl TrainData {
    pub fn new(cloud: PointCloud, dataset: Dataset, pipeline: &Pipeline) -> Self {
        let cfg = pipeline.raster_config();
        let fragments = dataset.views.iter().map(|v| rasterize(&cloud, &v.camera, &cfg)).collect();
        TrainData {
            cloud,
            dataset,
            fragments,
        }
    }

    /// Uses precomputed fragments, one per view.
    pub fn with_fragments(cloud: PointCloud, dataset: Dataset, fragments: Vec<FragmentBuffer>) -> Result<Self, TrainError> {
        if fragments.len() != dataset.views.len() {
            return Err(TrainError::Config(alloc::format!(
                "{} fragment buffers for {} views",
                fragments.len(),
                dataset.views.len()
            )));
        }
        for (i, (f, v)) in fragments.iter().zip(&dataset.views).enumerate() {
            if f.width != v.camera.width || f.height != v.camera.height {
                return Err(TrainError::Config(alloc::format!("fragment buffer {i} does not match its camera")));
            }
        }
        Ok(TrainData {
            cloud,
            dataset,
            fragments,
        })
    }
}

/// A crop of a view and its fragments.
#[derive(Debug, Clone, PartialEq)]
pub struct Augmented {
    pub image: Image,
    pub fragments: FragmentBuffer,
    pub top: usize,
    pub left: usize,
}

/// Random axis-aligned crop of side `window` (clamped to the image).
pub fn augment(image: &Image, frag: &FragmentBuffer, window: Option<usize>, rng: &mut ChaCha8Rng) -> Augmented {
    let (h, w) = (image.height, image.width);
    let (ch, cw) = match window {
        Some(s) => (s.min(h), s.min(w)),
        None => (h, w),
    };
    if (ch, cw) == (h, w) {
        return Augmented {
            image: image.clone(),
            fragments: frag.clone(),
            top: 0,
            left: 0,
        };
    }
    let top = rng.gen_range(0..=h - ch);
    let left = rng.gen_range(0..=w - cw);
    Augmented {
        image: image.crop(top, left, ch, cw),
        fragments: frag.crop(top, left, ch, cw),
        top,
        left,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    /// Step count after the update.
    pub step: u64,
    pub view: usize,
    pub loss: f64,
    pub l2: f64,
    pub perceptual: f64,
    pub lr_mlp: f64,
    pub lr_refine: f64,
}

fn accumulate(acc: &mut Vec<Vec<f64>>, grads: Vec<Vec<f64>>, w: f64) {
    if acc.is_empty() {
        *acc = grads;
        acc.iter_mut().flatten().for_each(|g| *g *= w);
    } else {
        for (a, g) in acc.iter_mut().zip(grads) {
            a.iter_mut().zip(g).for_each(|(a, g)| *a += g * w);
        }
    }
}

/// One optimization step on the mean loss of `batch_size` randomly drawn,
/// randomly cropped training views.
pub fn train_step(
    state: &mut TrainState,
    data: &TrainData,
    pipeline: &mut Pipeline,
    loss_cfg: &LossConfig,
    extractor: &PerceptualExtractor,
    cfg: &TrainConfig,
) -> Result<StepReport, TrainError> {
    let train = &data.dataset.train;
    if train.is_empty() {
        return Err(TrainError::Config("the training split is empty".into()));
    }
    let mut rng = step_rng(cfg.seed, state.step);
    let inv = 1.0 / cfg.batch_size as f64;
    let (mut loss, mut l2, mut perceptual) = (0.0, 0.0, 0.0);
    let mut first_view = None;
    let mut g_mlp: Vec<Vec<f64>> = Vec::new();
    let mut g_refine: Vec<Vec<f64>> = Vec::new();
    for _ in 0..cfg.batch_size {
        let view = train[rng.gen_range(0..train.len())];
        first_view.get_or_insert(view);
        let aug = augment(&data.dataset.views[view].image, &data.fragments[view], cfg.window, &mut rng);

        let mut tape = Tape::new();
        let params = pipeline.bind(&mut tape, true);
        let ex_vars = extractor.bind(&mut tape);
        let pred = pipeline.forward(&mut tape, &params, &aug.fragments, &data.cloud)?;
        let gt = tape.constant(aug.image.to_planar());
        let l = total_loss(&mut tape, loss_cfg, extractor, &ex_vars, pred, gt)?;
        let v = tape.value(l.total).item();
        if !v.is_finite() {
            return Err(TrainError::NonFinite {
                step: state.step,
                view,
                loss: v,
            });
        }
        tape.backward(l.total)?;
        loss += v * inv;
        l2 += tape.value(l.l2).item() * inv;
        perceptual += tape.value(l.perceptual).item() * inv;
        accumulate(&mut g_mlp, pipeline.mlp.params.grads(&tape, &params.mlp), inv);
        accumulate(&mut g_refine, pipeline.refine.params.grads(&tape, &params.refine), inv);
    }
    let view = first_view.expect("batch size is positive");
    let (lr_mlp, lr_refine) = (cfg.lr_mlp_at(state.step), cfg.lr_refine_at(state.step));
    state.adam_mlp.step(pipeline.mlp.params.tensors_mut(), &g_mlp, lr_mlp);
    state.adam_refine.step(pipeline.refine.params.tensors_mut(), &g_refine, lr_refine);
    state.step += 1;
    state.losses.push(loss);
    Ok(StepReport {
        step: state.step,
        view,
        loss,
        l2,
        perceptual,
        lr_mlp,
        lr_refine,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    /// `(view id, psnr, ssim)` per test view.
    pub per_view: Vec<(usize, f64, f64)>,
    pub psnr: f64,
    pub ssim: f64,
}

/// Full-resolution, unaugmented renders of `views` scored against their
/// ground truth. Means are over views.
pub fn evaluate(pipeline: &Pipeline, data: &TrainData, views: &[usize]) -> Result<EvalReport, TrainError> {
    let mut per_view = Vec::with_capacity(views.len());
    for &i in views {
        let img = pipeline.render_fragments(&data.fragments[i], &data.cloud)?;
        let gt = &data.dataset.views[i].image;
        per_view.push((i, metrics::psnr(&img, gt)?, metrics::ssim(&img, gt)?));
    }
    let n = per_view.len().max(1) as f64;
    Ok(EvalReport {
        psnr: per_view.iter().map(|r| r.1).sum::<f64>() / n,
        ssim: per_view.iter().map(|r| r.2).sum::<f64>() / n,
        per_view,
    })
}

/// One line of the metrics log. Evaluation columns are filled only on the
/// steps where the test split was scored.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRow {
    pub step: u64,
    pub loss: Option<f64>,
    pub l2: Option<f64>,
    pub perceptual: Option<f64>,
    pub lr_mlp: Option<f64>,
    pub lr_refine: Option<f64>,
    pub test_psnr: Option<f64>,
    pub test_ssim: Option<f64>,
}

impl MetricsRow {
    fn from_step(r: &StepReport) -> Self {
        MetricsRow {
            step: r.step,
            loss: Some(r.loss),
            l2: Some(r.l2),
            perceptual: Some(r.perceptual),
            lr_mlp: Some(r.lr_mlp),
            lr_refine: Some(r.lr_refine),
            test_psnr: None,
            test_ssim: None,
        }
    }

    fn eval_only(step: u64, e: &EvalReport) -> Self {
        MetricsRow {
            step,
            loss: None,
            l2: None,
            perceptual: None,
            lr_mlp: None,
            lr_refine: None,
            test_psnr: Some(e.psnr),
            test_ssim: Some(e.ssim),
        }
    }
}

/// Hooks into [`fit`]; every method defaults to doing nothing.
pub trait FitObserver {
    fn on_step(&mut self, _report: &StepReport) {}
    fn on_eval(&mut self, _step: u64, _report: &EvalReport) {}
    /// Called with quantized state; an error aborts the run.
    fn on_checkpoint(&mut self, _pipeline: &Pipeline, _state: &TrainState) -> Result<(), String> {
        Ok(())
    }
}

impl FitObserver for () {}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub rows: Vec<MetricsRow>,
    pub initial: Option<EvalReport>,
    pub last: Option<EvalReport>,
}

/// Trains from `state.step` up to `cfg.max_steps`. The test split is scored
/// before the first step of a fresh run, every `eval_every` steps and at the
/// end.
pub fn fit(
    data: &TrainData,
    pipeline: &mut Pipeline,
    state: &mut TrainState,
    loss_cfg: &LossConfig,
    extractor: &PerceptualExtractor,
    cfg: &TrainConfig,
    observer: &mut dyn FitObserver,
) -> Result<FitReport, TrainError> {
    cfg.validate()?;
    loss_cfg.validate()?;
    let test = &data.dataset.test;
    let mut rows = Vec::new();
    let mut initial = None;
    let mut last = None;
    if state.step == 0 && !test.is_empty() {
        let e = evaluate(pipeline, data, test)?;
        observer.on_eval(0, &e);
        rows.push(MetricsRow::eval_only(0, &e));
        initial = Some(e.clone());
        last = Some(e);
    }
    while state.step < cfg.max_steps {
        let r = train_step(state, data, pipeline, loss_cfg, extractor, cfg)?;
        observer.on_step(&r);
        let mut row = MetricsRow::from_step(&r);
        let at_end = state.step == cfg.max_steps;
        if cfg.checkpoint_every > 0 && state.step % cfg.checkpoint_every == 0 && !at_end {
            state.quantize(pipeline);
            observer.on_checkpoint(pipeline, state).map_err(TrainError::Checkpoint)?;
        }
        let periodic = cfg.eval_every > 0 && state.step % cfg.eval_every == 0;
        if (periodic || at_end) && !test.is_empty() {
            let e = evaluate(pipeline, data, test)?;
            observer.on_eval(state.step, &e);
            row.test_psnr = Some(e.psnr);
            row.test_ssim = Some(e.ssim);
            last = Some(e);
        }
        rows.push(row);
    }
    state.quantize(pipeline);
    observer.on_checkpoint(pipeline, state).map_err(TrainError::Checkpoint)?;
    Ok(FitReport { rows, initial, last })
}
