//! What each subcommand does, independent of argument parsing.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use radmap_core::gradcheck::{self, CheckOutcome, GradcheckConfig};
use radmap_core::metrics;
use radmap_core::pipeline::{ModelConfig, Pipeline};
use radmap_core::raster::{rasterize, FragmentBuffer};
use radmap_core::scene::{generate_scene, Primitive, Radiance, SceneSpec};
use radmap_core::training::{
    self, EvalReport, FitObserver, FitReport, LossConfig, MetricsRow, PerceptualConfig, PerceptualExtractor,
    StepReport, TrainConfig, TrainData, TrainError, TrainState,
};
use radmap_core::{AdamConfig, PointCloud, Tape, Tensor};
use sha2::{Digest, Sha256};

use crate::cli::{BenchArgs, EvalArgs, FitArgs, GradcheckArgs, RenderArgs, SynthArgs};
use crate::dataset::{self, Manifest};
use crate::error::{self, Error, Result};
use crate::{checkpoint, ply, png_io, run, transforms};

fn required(v: Option<PathBuf>, flag: &str) -> Result<PathBuf> {
    v.ok_or_else(|| Error::Validation(format!("--{flag} is required")))
}

fn existing(v: Option<PathBuf>, flag: &str) -> Result<PathBuf> {
    let p = required(v, flag)?;
    if !p.exists() {
        return Err(Error::Validation(format!("--{flag}: {} does not exist", p.display())));
    }
    Ok(p)
}

fn create_dir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

// ---------------------------------------------------------------- synth

#[derive(Debug, Clone)]
pub struct SynthSettings {
    pub out: PathBuf,
    pub spec: SceneSpec,
    pub views: usize,
}

pub const DEFAULT_VIEWS: usize = 38;
pub const CONSTANT_RADIANCE: [f64; 3] = [0.8, 0.5, 0.3];

impl SynthArgs {
    pub fn resolve(self) -> Result<SynthSettings> {
        let a = crate::cli::with_file(self.clone(), self.config.as_deref())?;
        let toy = SceneSpec::toy_sphere();
        let primitive = match a.primitive.as_deref() {
            None => toy.primitive,
            Some(n) => Primitive::by_name(n).ok_or_else(|| Error::Validation(format!("unknown primitive '{n}'")))?,
        };
        let radiance = match a.radiance.as_deref() {
            None | Some("checker") => Radiance::DEFAULT_CHECKER,
            Some("constant") => Radiance::Constant(CONSTANT_RADIANCE),
            Some(n) => return Err(Error::Validation(format!("unknown radiance '{n}'"))),
        };
        let spec = SceneSpec {
            primitive,
            radiance,
            point_count: a.points.unwrap_or(toy.point_count),
            noise_sigma: a.noise.unwrap_or(toy.noise_sigma),
            seed: a.seed.unwrap_or(toy.seed),
            width: a.width.unwrap_or(toy.width),
            height: a.height.unwrap_or(toy.height),
            fov_x: a.fov.unwrap_or(toy.fov_x),
            camera_distance: a.distance.unwrap_or(toy.camera_distance),
            background: toy.background,
            test_views: a.test_views.unwrap_or(toy.test_views),
        };
        let views = a.views.unwrap_or(DEFAULT_VIEWS);
        if spec.point_count == 0 {
            return Err(Error::Validation("--points must be positive".into()));
        }
        if views == 0 {
            return Err(Error::Validation("--views must be positive".into()));
        }
        if spec.test_views >= views {
            return Err(Error::Validation(format!(
                "--test-views ({}) must be smaller than --views ({views})",
                spec.test_views
            )));
        }
        if spec.width == 0 || spec.height == 0 {
            return Err(Error::Validation("image extents must be positive".into()));
        }
        Ok(SynthSettings {
            out: required(a.out, "out")?,
            spec,
            views,
        })
    }
}

pub fn synth(s: &SynthSettings) -> Result<Manifest> {
    let (cloud, ds) = generate_scene(&s.spec, s.views).map_err(|e| Error::Validation(e.to_string()))?;
    dataset::write_scene(&s.out, &cloud, &ds, dataset::describe_spec(&s.spec, s.views))
}

// ---------------------------------------------------------------- fit

#[derive(Debug, Clone)]
pub struct FitSettings {
    pub data: PathBuf,
    pub out: PathBuf,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub loss: LossConfig,
    pub downsample: usize,
    pub perceptual_weights: Option<PathBuf>,
    pub resume: Option<PathBuf>,
}

impl FitArgs {
    pub fn resolve(self) -> Result<FitSettings> {
        let a = crate::cli::with_file(self.clone(), self.config.as_deref())?;
        let (model, train) = match a.preset.as_deref() {
            None | Some("desk") => (ModelConfig::desk(), TrainConfig::desk()),
            Some("full") => (ModelConfig::full(), TrainConfig::default()),
            Some(p) => return Err(Error::Validation(format!("unknown preset '{p}'"))),
        };
        let hidden = match a.hidden {
            None => model.mlp_hidden,
            Some(h) => <[usize; 4]>::try_from(h.as_slice())
                .map_err(|_| Error::Validation(format!("--hidden needs four widths, got {}", h.len())))?,
        };
        let model = ModelConfig {
            coord_freqs: a.coord_freqs.unwrap_or(model.coord_freqs),
            dir_freqs: a.dir_freqs.unwrap_or(model.dir_freqs),
            mlp_hidden: hidden,
            refine_multiplier: a.refine_multiplier.unwrap_or(model.refine_multiplier),
            tau: a.tau.unwrap_or(model.tau),
            rectify: !a.no_rectify.unwrap_or(false),
            ..model
        };
        let train = TrainConfig {
            lr_mlp: a.lr_mlp.unwrap_or(train.lr_mlp),
            lr_refine: a.lr_refine.unwrap_or(train.lr_refine),
            lr_decay: a.lr_decay.unwrap_or(train.lr_decay),
            max_steps: a.max_steps.unwrap_or(train.max_steps),
            batch_size: a.batch_size.unwrap_or(train.batch_size),
            window: match a.window {
                None => train.window,
                Some(0) => None,
                Some(w) => Some(w),
            },
            seed: a.seed.unwrap_or(train.seed),
            eval_every: a.eval_every.unwrap_or(train.eval_every),
            checkpoint_every: a.checkpoint_every.unwrap_or(train.checkpoint_every),
            ..train
        };
        train.validate().map_err(|e| Error::Validation(e.to_string()))?;
        if !(model.tau > 0.0 && model.tau.is_finite()) {
            return Err(Error::Validation(format!("--tau must be positive, got {}", model.tau)));
        }
        if !(model.refine_multiplier > 0.0) || hidden.contains(&0) {
            return Err(Error::Validation("network widths must be positive".into()));
        }
        let loss = LossConfig {
            w_l2: a.w_l2.unwrap_or(1.0),
            w_perc: a.w_perc.unwrap_or(0.01),
            ..LossConfig::default()
        };
        loss.validate().map_err(|e| Error::Validation(e.to_string()))?;
        let downsample = a.downsample.unwrap_or(1);
        if downsample == 0 {
            return Err(Error::Validation("--downsample must be at least 1".into()));
        }
        let data = existing(a.data, "data")?;
        if !data.join(dataset::MANIFEST).exists() {
            return Err(Error::Validation(format!("--data: {} has no {}", data.display(), dataset::MANIFEST)));
        }
        let perceptual_weights = match a.perceptual_weights {
            Some(p) => Some(existing(Some(p), "perceptual-weights")?),
            None => None,
        };
        let resume = match a.resume {
            Some(p) => Some(existing(Some(p), "resume")?),
            None => None,
        };
        Ok(FitSettings {
            data,
            out: required(a.out, "out")?,
            model,
            train,
            loss,
            downsample,
            perceptual_weights,
            resume,
        })
    }
}

pub const CHECKPOINT: &str = "checkpoint.rmck";
pub const METRICS: &str = "metrics.csv";
pub const REPORT: &str = "report.json";
pub const NONFINITE: &str = "nonfinite.json";

pub const METRICS_HEADER: &str = "step,loss,l2,perceptual,lr_mlp,lr_refine,test_psnr,test_ssim";

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let f = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x}"));
    let mut s = String::from(METRICS_HEADER);
    s.push('\n');
    for r in rows {
        s += &format!(
            "{},{},{},{},{},{},{},{}\n",
            r.step,
            f(r.loss),
            f(r.l2),
            f(r.perceptual),
            f(r.lr_mlp),
            f(r.lr_refine),
            f(r.test_psnr),
            f(r.test_ssim)
        );
    }
    s
}

/// Weights named `perc.l{0,1,2}.{w,b}`; channel counts follow the shapes.
pub fn load_perceptual(path: &Path) -> Result<PerceptualExtractor> {
    let entries = checkpoint::load(path)?;
    let get = |n: &str| entries.iter().find(|(k, _)| k == n).map(|(_, t)| t.clone());
    let mut channels = [0; 3];
    for (l, c) in channels.iter_mut().enumerate() {
        let name = format!("perc.l{l}.w");
        *c = get(&name)
            .map(|t| t.shape()[0])
            .ok_or_else(|| Error::Format(format!("{}: missing tensor '{name}'", path.display())))?;
    }
    PerceptualExtractor::from_params(channels, get).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

struct Progress {
    checkpoint: PathBuf,
    start: Instant,
    max_steps: u64,
    verbose: bool,
}

impl FitObserver for Progress {
    fn on_step(&mut self, r: &StepReport) {
        if self.verbose && (r.step % 100 == 0 || r.step == self.max_steps) {
            eprintln!(
                "[{:>7.1}s] step {:>6}/{} loss {:.5} (l2 {:.5}, perceptual {:.5})",
                self.start.elapsed().as_secs_f64(),
                r.step,
                self.max_steps,
                r.loss,
                r.l2,
                r.perceptual
            );
        }
    }

    fn on_eval(&mut self, step: u64, r: &EvalReport) {
        if self.verbose {
            eprintln!(
                "[{:>7.1}s] step {step:>6}: test psnr {:.3} dB, ssim {:.4}",
                self.start.elapsed().as_secs_f64(),
                r.psnr,
                r.ssim
            );
        }
    }

    fn on_checkpoint(&mut self, pipeline: &Pipeline, state: &TrainState) -> std::result::Result<(), String> {
        run::save(&self.checkpoint, pipeline, Some(state)).map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub report: FitReport,
    pub checkpoint: PathBuf,
    pub metrics: PathBuf,
}

impl FitOutcome {
    pub fn final_psnr(&self) -> Option<f64> {
        self.report.last.as_ref().map(|e| e.psnr)
    }
}

fn report_json(r: &FitReport) -> serde_json::Value {
    let eval = |e: &EvalReport| {
        serde_json::json!({
            "psnr": e.psnr,
            "ssim": e.ssim,
            "views": e.per_view.iter().map(|&(i, p, s)| serde_json::json!({"view": i, "psnr": p, "ssim": s})).collect::<Vec<_>>(),
        })
    };
    serde_json::json!({
        "initial": r.initial.as_ref().map(eval),
        "final": r.last.as_ref().map(eval),
    })
}

pub fn fit(s: &FitSettings, verbose: bool) -> Result<FitOutcome> {
    let scene = dataset::load_scene(&s.data)?;
    let cloud = scene.cloud.downsample(s.downsample);
    let (mut pipeline, mut state) = match &s.resume {
        Some(path) => {
            let loaded = run::load(path, s.train.adam)?;
            let state = loaded
                .state
                .ok_or_else(|| Error::Format(format!("{}: checkpoint has no optimizer state", path.display())))?;
            (loaded.pipeline, state)
        }
        None => {
            let p = Pipeline::new(s.model, scene.dataset.bbox, s.train.seed).map_err(|e| Error::Validation(e.to_string()))?;
            let st = TrainState::new(&p, s.train.adam);
            (p, st)
        }
    };
    let extractor = match &s.perceptual_weights {
        Some(p) => load_perceptual(p)?,
        None => PerceptualExtractor::new(PerceptualConfig::default()),
    };
    create_dir(&s.out)?;
    if verbose {
        eprintln!(
            "fit: {} points, {} train / {} test views, starting at step {}",
            cloud.len(),
            scene.dataset.train.len(),
            scene.dataset.test.len(),
            state.step
        );
    }
    let data = TrainData::new(cloud, scene.dataset, &pipeline);
    let mut progress = Progress {
        checkpoint: s.out.join(CHECKPOINT),
        start: Instant::now(),
        max_steps: s.train.max_steps,
        verbose,
    };
    let report = match training::fit(&data, &mut pipeline, &mut state, &s.loss, &extractor, &s.train, &mut progress) {
        Ok(r) => r,
        Err(TrainError::NonFinite { step, view, loss }) => {
            let dump = serde_json::json!({"step": step, "view": view, "loss": format!("{loss}")});
            let _ = error::write(&s.out.join(NONFINITE), dump.to_string().as_bytes());
            return Err(Error::Numeric(format!("non-finite loss {loss} at step {step} on training view {view}")));
        }
        Err(TrainError::Config(m)) => return Err(Error::Validation(m)),
        Err(TrainError::Checkpoint(m)) => return Err(Error::Validation(format!("cannot write checkpoint: {m}"))),
        Err(e) => return Err(Error::Numeric(e.to_string())),
    };
    let metrics = s.out.join(METRICS);
    error::write(&metrics, metrics_csv(&report.rows).as_bytes())?;
    let text = serde_json::to_string_pretty(&report_json(&report)).expect("plain JSON") + "\n";
    error::write(&s.out.join(REPORT), text.as_bytes())?;
    Ok(FitOutcome {
        report,
        checkpoint: s.out.join(CHECKPOINT),
        metrics,
    })
}

// ---------------------------------------------------------------- render

#[derive(Debug, Clone)]
pub struct RenderSettings {
    pub checkpoint: PathBuf,
    pub cameras: PathBuf,
    pub cloud: PathBuf,
    pub out: PathBuf,
}

impl RenderArgs {
    pub fn resolve(self) -> Result<RenderSettings> {
        let a = crate::cli::with_file(self.clone(), self.config.as_deref())?;
        Ok(RenderSettings {
            checkpoint: existing(a.checkpoint, "checkpoint")?,
            cameras: existing(a.cameras, "cameras")?,
            cloud: existing(a.cloud, "cloud")?,
            out: required(a.out, "out")?,
        })
    }
}

fn frame_png_name(file_path: &str) -> String {
    let stem = Path::new(file_path)
        .file_stem()
        .map_or_else(|| file_path.to_string(), |s| s.to_string_lossy().into_owned());
    format!("{stem}.png")
}

/// One PNG per camera, named after the frame's file.
pub fn render(s: &RenderSettings) -> Result<Vec<PathBuf>> {
    let loaded = run::load(&s.checkpoint, AdamConfig::default())?;
    let frames = transforms::load_transforms(&s.cameras)?;
    let cloud = ply::load_ply(&s.cloud)?;
    create_dir(&s.out)?;
    let mut written = Vec::with_capacity(frames.len());
    for f in &frames {
        let img = loaded
            .pipeline
            .render(&cloud, &f.camera)
            .map_err(|e| Error::Numeric(e.to_string()))?;
        let path = s.out.join(frame_png_name(&f.file_path));
        png_io::save_png(&img, &path)?;
        written.push(path);
    }
    Ok(written)
}

// ---------------------------------------------------------------- eval

#[derive(Debug, Clone)]
pub struct EvalSettings {
    pub renders: PathBuf,
    pub gt: PathBuf,
    pub out: Option<PathBuf>,
}

impl EvalArgs {
    pub fn resolve(self) -> Result<EvalSettings> {
        let a = crate::cli::with_file(self.clone(), self.config.as_deref())?;
        Ok(EvalSettings {
            renders: existing(a.renders, "renders")?,
            gt: existing(a.gt, "gt")?,
            out: a.out,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub name: String,
    pub psnr: f64,
    pub ssim: f64,
}

pub fn eval(s: &EvalSettings) -> Result<Vec<EvalRow>> {
    let mut names: Vec<String> = fs::read_dir(&s.renders)
        .map_err(|e| Error::io(&s.renders, e))?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".png"))
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(Error::Validation(format!("{}: no PNG files", s.renders.display())));
    }
    let mut rows = Vec::with_capacity(names.len());
    for name in names {
        let pred = png_io::load_png(&s.renders.join(&name))?;
        let gt_path = s.gt.join(&name);
        if !gt_path.exists() {
            return Err(Error::Validation(format!("no ground truth {} for {name}", gt_path.display())));
        }
        let gt = png_io::load_png(&gt_path)?;
        let psnr = metrics::psnr(&pred, &gt).map_err(|e| Error::Validation(format!("{name}: {e}")))?;
        let ssim = metrics::ssim(&pred, &gt).map_err(|e| Error::Validation(format!("{name}: {e}")))?;
        rows.push(EvalRow { name, psnr, ssim });
    }
    Ok(rows)
}

pub fn eval_csv(rows: &[EvalRow]) -> String {
    let mut s = String::from("image,psnr,ssim\n");
    for r in rows {
        s += &format!("{},{:.6},{:.6}\n", r.name, r.psnr, r.ssim);
    }
    let n = rows.len().max(1) as f64;
    let mp = rows.iter().map(|r| r.psnr).sum::<f64>() / n;
    let ms = rows.iter().map(|r| r.ssim).sum::<f64>() / n;
    s += &format!("mean,{mp:.6},{ms:.6}\n");
    s
}

// ---------------------------------------------------------------- bench

#[derive(Debug, Clone)]
pub struct BenchSettings {
    pub cloud: PathBuf,
    pub cameras: PathBuf,
    pub tau: Option<f64>,
    pub reps: usize,
    pub checkpoint: Option<PathBuf>,
    pub seed: u64,
    pub out: Option<PathBuf>,
}

impl BenchArgs {
    pub fn resolve(self) -> Result<BenchSettings> {
        let a = crate::cli::with_file(self.clone(), self.config.as_deref())?;
        let reps = a.reps.unwrap_or(5);
        if reps == 0 {
            return Err(Error::Validation("--reps must be positive".into()));
        }
        if let Some(t) = a.tau {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::Validation(format!("--tau must be positive, got {t}")));
            }
        }
        let checkpoint = match a.checkpoint {
            Some(p) => Some(existing(Some(p), "checkpoint")?),
            None => None,
        };
        Ok(BenchSettings {
            cloud: existing(a.cloud, "cloud")?,
            cameras: existing(a.cameras, "cameras")?,
            tau: a.tau,
            reps,
            checkpoint,
            seed: a.seed.unwrap_or(0),
            out: a.out,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageTiming {
    pub stage: &'static str,
    pub mean_ms: f64,
    pub std_ms: f64,
    /// SHA-256 of the stage outputs over all cameras.
    pub sha256: String,
}

fn hash_f64s<'a>(h: &mut Sha256, v: impl IntoIterator<Item = &'a f64>) {
    for x in v {
        h.update(x.to_le_bytes());
    }
}

fn hash_fragments(h: &mut Sha256, f: &FragmentBuffer) {
    for i in 0..f.len() {
        h.update([f.occupied[i] as u8]);
        h.update((f.point_index[i] as u64).to_le_bytes());
        h.update(f.depth[i].to_le_bytes());
    }
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, v.sqrt())
}

pub fn bench(s: &BenchSettings) -> Result<Vec<StageTiming>> {
    let cloud: PointCloud = ply::load_ply(&s.cloud)?;
    let frames = transforms::load_transforms(&s.cameras)?;
    let mut pipeline = match &s.checkpoint {
        Some(p) => run::load(p, AdamConfig::default())?.pipeline,
        None => {
            let bbox = radmap_core::Aabb::from_points(cloud.positions())
                .ok_or_else(|| Error::Validation("empty point cloud".into()))?;
            Pipeline::new(ModelConfig::desk(), bbox, s.seed).map_err(|e| Error::Validation(e.to_string()))?
        }
    };
    if let Some(t) = s.tau {
        pipeline.config.tau = t;
    }
    let raster_cfg = pipeline.raster_config();
    let mut times = [Vec::new(), Vec::new(), Vec::new()];
    let mut hashes = [String::new(), String::new(), String::new()];
    for rep in 0..s.reps {
        let mut hs = [Sha256::new(), Sha256::new(), Sha256::new()];
        let mut t = [0.0; 3];
        for f in &frames {
            let t0 = Instant::now();
            let frag = rasterize(&cloud, &f.camera, &raster_cfg);
            t[0] += t0.elapsed().as_secs_f64();
            hash_fragments(&mut hs[0], &frag);

            let t1 = Instant::now();
            let mut tape = Tape::new();
            let params = pipeline.bind(&mut tape, false);
            let batch = pipeline.queries(&frag, &cloud);
            let fmap = pipeline
                .feature_map(&mut tape, &params, &batch, frag.height, frag.width)
                .map_err(|e| Error::Numeric(e.to_string()))?;
            let fmap: Tensor = tape.value(fmap).clone();
            t[1] += t1.elapsed().as_secs_f64();
            hash_f64s(&mut hs[1], fmap.data());

            let t2 = Instant::now();
            let img = pipeline.refine.evaluate(&fmap).map_err(|e| Error::Numeric(e.to_string()))?;
            t[2] += t2.elapsed().as_secs_f64();
            hash_f64s(&mut hs[2], img.data());
        }
        for k in 0..3 {
            times[k].push(t[k] * 1e3);
        }
        let digests = hs.map(|h| hex::encode(h.finalize()));
        if rep == 0 {
            hashes = digests;
        } else if digests != hashes {
            return Err(Error::Numeric("stage outputs changed between repetitions".into()));
        }
    }
    let names = ["rasterize", "mlp", "refine"];
    Ok((0..3)
        .map(|k| {
            let (mean_ms, std_ms) = mean_std(&times[k]);
            StageTiming {
                stage: names[k],
                mean_ms,
                std_ms,
                sha256: hashes[k].clone(),
            }
        })
        .collect())
}

pub fn bench_csv(rows: &[StageTiming]) -> String {
    let mut s = String::from("stage,mean_ms,std_ms,sha256\n");
    for r in rows {
        s += &format!("{},{:.3},{:.3},{}\n", r.stage, r.mean_ms, r.std_ms, r.sha256);
    }
    s
}

// ---------------------------------------------------------------- gradcheck

impl GradcheckArgs {
    pub fn resolve(self) -> Result<GradcheckConfig> {
        let a = crate::cli::with_file(self.clone(), self.config.as_deref())?;
        let base = GradcheckConfig::default();
        let configs = a.configs.unwrap_or(base.configs);
        if configs == 0 {
            return Err(Error::Validation("--configs must be positive".into()));
        }
        Ok(GradcheckConfig {
            configs,
            seed: a.seed.unwrap_or(base.seed),
            ..base
        })
    }
}

pub fn gradcheck(cfg: &GradcheckConfig) -> Vec<CheckOutcome> {
    gradcheck::run_suite(cfg)
}

pub fn gradcheck_line(o: &CheckOutcome) -> String {
    format!(
        "{} {:<16} configs {:>4} comparisons {:>6} redraws {:>3} worst rel {:.2e}",
        if o.passed() { "PASS" } else { "FAIL" },
        o.name,
        o.configs,
        o.comparisons,
        o.redraws,
        o.worst_rel
    )
}
