//! Central finite-difference checks of every differentiable operation and of
//! both networks.
//!
//! Each check draws random configurations (shapes, hyperparameters, inputs),
//! reduces the output to a scalar with fixed pseudo-random weights and
//! compares the tape's gradient with `(f(x + h) − f(x − h)) / 2h`. Small
//! primitives are checked on every input coordinate; the networks on sampled
//! coordinates of every parameter tensor plus random directions through all
//! parameters at once.
//!
//! A ReLU whose input lies within `h` of zero makes the function locally
//! non-differentiable. When a comparison fails there and the one-sided
//! differences disagree as well, the configuration is redrawn and counted
//! instead of reported as a failure.

use alloc::boxed::Box;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geometry::{Aabb, Vec3};
use crate::models::{scatter_features, MlpConfig, RadianceMlp, RefineConfig, RefineNet};
use crate::sampling::EncodingConfig;
use crate::tape::{Tape, Var, GATHER_ZERO};
use crate::tensor::{Tensor, TensorError};
use crate::training::{perceptual_loss, PerceptualConfig, PerceptualExtractor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradcheckConfig {
    pub h: f64,
    pub rel_tol: f64,
    /// Differences below this pass regardless of the relative error.
    pub abs_floor: f64,
    pub configs: usize,
    pub seed: u64,
    /// Sampled coordinates per parameter tensor for the networks.
    pub samples_per_tensor: usize,
    pub directions: usize,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            h: 1e-5,
            rel_tol: 1e-4,
            abs_floor: 1e-8,
            configs: 100,
            seed: 0,
            samples_per_tensor: 2,
            directions: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub configs: usize,
    pub comparisons: usize,
    pub redraws: usize,
    pub worst_rel: f64,
    pub failures: Vec<String>,
}

impl CheckOutcome {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

type Build = Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var, TensorError>>;

/// One random configuration: its inputs and how to compute the output.
pub struct Case {
    pub inputs: Vec<Tensor>,
    pub build: Build,
    /// `None` checks every coordinate; `Some(k)` samples `k` per input.
    pub sample: Option<usize>,
}

/// Fixed pseudo-random reduction weights, independent of the output shape.
fn probe_weight(i: usize) -> f64 {
    let x = libm::sin(i as f64 * 12.9898 + 78.233) * 43758.5453;
    2.0 * (x - libm::floor(x)) - 1.0
}

fn reduce(tape: &mut Tape, out: Var) -> Result<Var, TensorError> {
    let shape = tape.shape(out).to_vec();
    let n: usize = shape.iter().product();
    if n == 1 {
        return Ok(out);
    }
    let w = tape.constant(Tensor::new(&shape, (0..n).map(probe_weight).collect())?);
    let y = tape.mul(out, w)?;
    Ok(tape.mean(y))
}

fn value(case: &Case, inputs: &[Tensor]) -> Result<f64, TensorError> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let out = (case.build)(&mut tape, &vars)?;
    let l = reduce(&mut tape, out)?;
    Ok(tape.value(l).item())
}

fn analytic(case: &Case) -> Result<Vec<Vec<f64>>, TensorError> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = case.inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let out = (case.build)(&mut tape, &vars)?;
    let l = reduce(&mut tape, out)?;
    tape.backward(l)?;
    Ok(vars
        .iter()
        .zip(&case.inputs)
        .map(|(&v, t)| tape.grad(v).map_or_else(|| vec![0.0; t.len()], <[f64]>::to_vec))
        .collect())
}

enum Verdict {
    Pass(f64),
    Kink,
    Fail(f64, f64, f64),
}

/// Compares `a` with the central difference along `dir` (a list of
/// per-input perturbations).
fn compare(case: &Case, a: f64, dir: &[Vec<f64>], cfg: &GradcheckConfig) -> Result<Verdict, TensorError> {
    let shifted = |s: f64| -> Vec<Tensor> {
        case.inputs
            .iter()
            .zip(dir)
            .map(|(t, d)| {
                let mut t = t.clone();
                t.data_mut().iter_mut().zip(d).for_each(|(v, dv)| *v += s * dv);
                t
            })
            .collect()
    };
    let (fp, fm) = (value(case, &shifted(cfg.h))?, value(case, &shifted(-cfg.h))?);
    let n = (fp - fm) / (2.0 * cfg.h);
    let diff = (a - n).abs();
    let scale = a.abs().max(n.abs());
    let rel = if scale > 0.0 { diff / scale } else { 0.0 };
    if diff <= cfg.rel_tol * scale || diff <= cfg.abs_floor {
        return Ok(Verdict::Pass(if diff <= cfg.abs_floor { 0.0 } else { rel }));
    }
    let f0 = value(case, &case.inputs)?;
    let (fwd, bwd) = ((fp - f0) / cfg.h, (f0 - fm) / cfg.h);
    if (fwd - bwd).abs() > 1e-2 * fwd.abs().max(bwd.abs()).max(1e-3) {
        return Ok(Verdict::Kink);
    }
    Ok(Verdict::Fail(a, n, rel))
}

/// Runs one case; `Ok(false)` signals a kink.
fn run_case(case: &Case, cfg: &GradcheckConfig, rng: &mut ChaCha8Rng, out: &mut CheckOutcome) -> Result<bool, TensorError> {
    let grads = analytic(case)?;
    let zero_dir = || -> Vec<Vec<f64>> { case.inputs.iter().map(|t| vec![0.0; t.len()]).collect() };
    let mut probes: Vec<(Vec<Vec<f64>>, f64, String)> = Vec::new();
    for (i, t) in case.inputs.iter().enumerate() {
        let coords: Vec<usize> = match case.sample {
            None => (0..t.len()).collect(),
            Some(k) => (0..k.min(t.len())).map(|_| rng.gen_range(0..t.len())).collect(),
        };
        for j in coords {
            let mut d = zero_dir();
            d[i][j] = 1.0;
            probes.push((d, grads[i][j], format!("input {i}, coordinate {j}")));
        }
    }
    if case.sample.is_some() {
        for k in 0..cfg.directions {
            let d: Vec<Vec<f64>> = case
                .inputs
                .iter()
                .map(|t| (0..t.len()).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect();
            let norm = libm::sqrt(d.iter().flatten().map(|v| v * v).sum::<f64>());
            let d: Vec<Vec<f64>> = d.into_iter().map(|v| v.into_iter().map(|x| x / norm).collect()).collect();
            let a = d.iter().zip(&grads).map(|(dv, g)| dv.iter().zip(g).map(|(x, y)| x * y).sum::<f64>()).sum();
            probes.push((d, a, format!("random direction {k}")));
        }
    }
    let mut failures = Vec::new();
    let mut worst = 0.0f64;
    for (d, a, label) in &probes {
        match compare(case, *a, d, cfg)? {
            Verdict::Pass(rel) => worst = worst.max(rel),
            Verdict::Kink => return Ok(false),
            Verdict::Fail(a, n, rel) => {
                worst = worst.max(rel);
                failures.push(format!("{label}: analytic {a:e}, numeric {n:e}, relative error {rel:e}"));
            }
        }
    }
    out.comparisons += probes.len();
    out.worst_rel = out.worst_rel.max(worst);
    out.failures.extend(failures);
    Ok(true)
}

/// Draws `cfg.configs` cases from `make` and checks each.
pub fn check(
    name: &'static str,
    cfg: &GradcheckConfig,
    mut make: impl FnMut(&mut ChaCha8Rng) -> Case,
) -> CheckOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ fnv(name));
    let mut out = CheckOutcome {
        name,
        configs: 0,
        comparisons: 0,
        redraws: 0,
        worst_rel: 0.0,
        failures: Vec::new(),
    };
    let max_redraws = cfg.configs.max(1);
    while out.configs < cfg.configs {
        let case = make(&mut rng);
        match run_case(&case, cfg, &mut rng, &mut out) {
            Ok(true) => out.configs += 1,
            Ok(false) => {
                out.redraws += 1;
                if out.redraws > max_redraws {
                    out.failures.push(format!("more than {max_redraws} configurations hit a kink"));
                    break;
                }
            }
            Err(e) => {
                out.failures.push(format!("configuration {}: {e}", out.configs));
                out.configs += 1;
            }
        }
    }
    out
}

fn fnv(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ u64::from(b)).wrapping_mul(0x100_0000_01b3))
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(lo..hi)).collect()).expect("positive shape")
}

fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let mut t = uniform(rng, shape, -2.0, 2.0);
    for v in t.data_mut() {
        if v.abs() < 0.01 {
            *v = 0.01_f64.copysign(*v);
        }
    }
    t
}

fn shape3(rng: &mut ChaCha8Rng, c: usize, hmax: usize) -> [usize; 3] {
    [rng.gen_range(1..=c), rng.gen_range(1..=hmax), rng.gen_range(1..=hmax)]
}

fn case(inputs: Vec<Tensor>, build: impl Fn(&mut Tape, &[Var]) -> Result<Var, TensorError> + 'static) -> Case {
    Case {
        inputs,
        build: Box::new(build),
        sample: None,
    }
}

pub fn check_linear(cfg: &GradcheckConfig) -> CheckOutcome {
    check("linear", cfg, |rng| {
        let (b, i, o) = (rng.gen_range(1..=4), rng.gen_range(1..=6), rng.gen_range(1..=6));
        let inputs = vec![uniform(rng, &[b, i], -1.0, 1.0), uniform(rng, &[i, o], -1.0, 1.0), uniform(rng, &[o], -1.0, 1.0)];
        case(inputs, |t, v| t.linear(v[0], v[1], v[2]))
    })
}

pub fn check_conv2d(cfg: &GradcheckConfig) -> CheckOutcome {
    check("conv2d", cfg, |rng| {
        let k: usize = [1, 3, 5][rng.gen_range(0..3)];
        let (cin, cout) = (rng.gen_range(1..=3), rng.gen_range(1..=3));
        let (stride, pad) = (rng.gen_range(1..=2), rng.gen_range(0..=k / 2 + 1));
        let lo = k.saturating_sub(2 * pad).max(1);
        let (h, w) = (rng.gen_range(lo..=lo + 4), rng.gen_range(lo..=lo + 4));
        let inputs = vec![
            uniform(rng, &[cin, h, w], -1.0, 1.0),
            uniform(rng, &[cout, cin, k, k], -1.0, 1.0),
            uniform(rng, &[cout], -1.0, 1.0),
        ];
        case(inputs, move |t, v| t.conv2d(v[0], v[1], v[2], stride, pad))
    })
}

pub fn check_relu(cfg: &GradcheckConfig) -> CheckOutcome {
    check("relu", cfg, |rng| {
        let s = shape3(rng, 3, 4);
        case(vec![away_from_zero(rng, &s)], |t, v| Ok(t.relu(v[0])))
    })
}

pub fn check_sigmoid(cfg: &GradcheckConfig) -> CheckOutcome {
    check("sigmoid", cfg, |rng| {
        let s = shape3(rng, 3, 4);
        case(vec![uniform(rng, &s, -8.0, 8.0)], |t, v| Ok(t.sigmoid(v[0])))
    })
}

pub fn check_add(cfg: &GradcheckConfig) -> CheckOutcome {
    check("add", cfg, |rng| {
        let s = shape3(rng, 3, 4);
        case(vec![uniform(rng, &s, -1.0, 1.0), uniform(rng, &s, -1.0, 1.0)], |t, v| t.add(v[0], v[1]))
    })
}

pub fn check_mul(cfg: &GradcheckConfig) -> CheckOutcome {
    check("mul", cfg, |rng| {
        let s = shape3(rng, 3, 4);
        case(vec![uniform(rng, &s, -1.0, 1.0), uniform(rng, &s, -1.0, 1.0)], |t, v| t.mul(v[0], v[1]))
    })
}

pub fn check_scale(cfg: &GradcheckConfig) -> CheckOutcome {
    check("scale", cfg, |rng| {
        let s = shape3(rng, 3, 4);
        let k = rng.gen_range(-3.0..3.0);
        case(vec![uniform(rng, &s, -1.0, 1.0)], move |t, v| Ok(t.scale(v[0], k)))
    })
}

pub fn check_concat(cfg: &GradcheckConfig) -> CheckOutcome {
    check("concat", cfg, |rng| {
        let a = shape3(rng, 3, 4);
        let axis = rng.gen_range(0..3);
        let mut b = a;
        b[axis] = rng.gen_range(1..=3);
        case(vec![uniform(rng, &a, -1.0, 1.0), uniform(rng, &b, -1.0, 1.0)], move |t, v| {
            t.concat(v[0], v[1], axis)
        })
    })
}

pub fn check_instance_norm(cfg: &GradcheckConfig) -> CheckOutcome {
    check("instance_norm", cfg, |rng| {
        let s = shape3(rng, 3, 4);
        let inputs = vec![
            uniform(rng, &s, -1.0, 1.0),
            uniform(rng, &[s[0]], 0.5, 1.5),
            uniform(rng, &[s[0]], -0.5, 0.5),
        ];
        case(inputs, |t, v| t.instance_norm(v[0], v[1], v[2], 1e-5))
    })
}

pub fn check_downsample2(cfg: &GradcheckConfig) -> CheckOutcome {
    check("downsample2", cfg, |rng| {
        let s = [rng.gen_range(1..=3), 2 * rng.gen_range(1..=3), 2 * rng.gen_range(1..=3)];
        case(vec![uniform(rng, &s, -1.0, 1.0)], |t, v| t.downsample2(v[0]))
    })
}

pub fn check_upsample2(cfg: &GradcheckConfig) -> CheckOutcome {
    check("upsample2", cfg, |rng| {
        let s = shape3(rng, 3, 3);
        case(vec![uniform(rng, &s, -1.0, 1.0)], |t, v| t.upsample2(v[0]))
    })
}

pub fn check_reflect_pad(cfg: &GradcheckConfig) -> CheckOutcome {
    check("reflect_pad", cfg, |rng| {
        let s = shape3(rng, 2, 5);
        let (b, r) = (rng.gen_range(0..s[1]), rng.gen_range(0..s[2]));
        case(vec![uniform(rng, &s, -1.0, 1.0)], move |t, v| t.reflect_pad(v[0], b, r))
    })
}

pub fn check_crop(cfg: &GradcheckConfig) -> CheckOutcome {
    check("crop", cfg, |rng| {
        let s = shape3(rng, 2, 5);
        let (h, w) = (rng.gen_range(1..=s[1]), rng.gen_range(1..=s[2]));
        let (top, left) = (rng.gen_range(0..=s[1] - h), rng.gen_range(0..=s[2] - w));
        case(vec![uniform(rng, &s, -1.0, 1.0)], move |t, v| t.crop(v[0], top, left, h, w))
    })
}

pub fn check_gather(cfg: &GradcheckConfig) -> CheckOutcome {
    check("gather", cfg, |rng| {
        let n = rng.gen_range(1..=8);
        let m = rng.gen_range(1..=12);
        let index: Vec<usize> = (0..m)
            .map(|_| if rng.gen_bool(0.2) { GATHER_ZERO } else { rng.gen_range(0..n) })
            .collect();
        case(vec![uniform(rng, &[n], -1.0, 1.0)], move |t, v| t.gather(v[0], index.clone(), &[m]))
    })
}

pub fn check_scatter(cfg: &GradcheckConfig) -> CheckOutcome {
    check("scatter_features", cfg, |rng| {
        let (h, w, c) = (rng.gen_range(1..=4), rng.gen_range(1..=4), rng.gen_range(1..=4));
        let mut ids: Vec<usize> = (0..h * w).filter(|_| rng.gen_bool(0.5)).collect();
        if ids.is_empty() {
            ids.push(0);
        }
        let n = ids.len();
        case(vec![uniform(rng, &[n, c], -1.0, 1.0)], move |t, v| scatter_features(t, v[0], &ids, h, w))
    })
}

pub fn check_mse(cfg: &GradcheckConfig) -> CheckOutcome {
    check("mse", cfg, |rng| {
        let s = shape3(rng, 3, 4);
        case(vec![uniform(rng, &s, -1.0, 1.0), uniform(rng, &s, -1.0, 1.0)], |t, v| t.mse(v[0], v[1]))
    })
}

pub fn check_mean(cfg: &GradcheckConfig) -> CheckOutcome {
    check("mean", cfg, |rng| {
        let s = shape3(rng, 3, 4);
        case(vec![uniform(rng, &s, -1.0, 1.0)], |t, v| Ok(t.mean(v[0])))
    })
}

pub fn check_perceptual(cfg: &GradcheckConfig) -> CheckOutcome {
    check("perceptual_loss", cfg, |rng| {
        let ex = PerceptualExtractor::new(PerceptualConfig {
            seed: rng.gen(),
            ..PerceptualConfig::default()
        });
        let gt = uniform(rng, &[3, 8, 8], 0.0, 1.0);
        let mut c = case(vec![uniform(rng, &[3, 8, 8], 0.0, 1.0)], move |t, v| {
            let vars = ex.bind(t);
            let g = t.constant(gt.clone());
            perceptual_loss(t, &ex, &vars, v[0], g)
        });
        c.sample = Some(24);
        c
    })
}

/// Small radiance MLPs: random encodings, widths and batch; inputs are the
/// parameters.
pub fn check_mlp(cfg: &GradcheckConfig) -> CheckOutcome {
    let samples = cfg.samples_per_tensor;
    check("radiance_mlp", cfg, move |rng| {
        let mut enc = EncodingConfig::new(Aabb::new(Vec3::new(-1.0, -1.0, -1.0), Vec3::new(1.0, 1.0, 1.0)));
        enc.coord_freqs = rng.gen_range(0..=3);
        enc.dir_freqs = rng.gen_range(0..=2);
        let hidden = [0; 4].map(|_| rng.gen_range(2..=8));
        let mcfg = MlpConfig {
            hidden,
            ..MlpConfig::full(&enc)
        };
        let mlp = RadianceMlp::new(mcfg, rng.gen()).expect("valid config");
        let n = rng.gen_range(1..=4);
        let coords = uniform(rng, &[n, mcfg.coord_width], -1.0, 1.0);
        let dirs = uniform(rng, &[n, mcfg.dir_width], -1.0, 1.0);
        let inputs = mlp.params.tensors().to_vec();
        let mut c = case(inputs, move |t, v| {
            let (a, b) = (t.constant(coords.clone()), t.constant(dirs.clone()));
            mlp.forward(t, v, a, b)
        });
        c.sample = Some(samples);
        c
    })
}

/// Tiny U-Nets on 8×16×16 feature maps.
pub fn check_refine(cfg: &GradcheckConfig) -> CheckOutcome {
    let samples = cfg.samples_per_tensor;
    check("refine_net", cfg, move |rng| {
        let mut rcfg = RefineConfig::with_multiplier(8, 0.125);
        rcfg.widths = [0; 5].map(|_| rng.gen_range(1..=3));
        let net = RefineNet::new(rcfg, rng.gen()).expect("valid config");
        let fmap = uniform(rng, &[8, 16, 16], -1.0, 1.0);
        let inputs = net.params.tensors().to_vec();
        let mut c = case(inputs, move |t, v| {
            let x = t.constant(fmap.clone());
            net.forward(t, v, x)
        });
        c.sample = Some(samples);
        c
    })
}

/// Every check, in a fixed order.
pub fn run_suite(cfg: &GradcheckConfig) -> Vec<CheckOutcome> {
    let checks: [fn(&GradcheckConfig) -> CheckOutcome; 19] = [
        check_linear,
        check_conv2d,
        check_relu,
        check_sigmoid,
        check_add,
        check_mul,
        check_scale,
        check_concat,
        check_instance_norm,
        check_downsample2,
        check_upsample2,
        check_reflect_pad,
        check_crop,
        check_gather,
        check_scatter,
        check_mse,
        check_mean,
        check_perceptual,
        check_mlp,
    ];
    let mut out: Vec<CheckOutcome> = checks.iter().map(|f| f(cfg)).collect();
    out.push(check_refine(cfg));
    out
}
