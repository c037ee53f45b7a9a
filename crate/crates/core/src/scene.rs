//! Synthetic scenes with analytic ground truth.
//!
//! Surface points are sampled from a primitive and jittered by isotropic
//! Gaussian noise. Ground-truth images are rendered by exact ray–primitive
//! intersection, never from the point cloud, so the cloud's noise is the only
//! geometric error seen downstream.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::camera::{Camera, CameraError};
use crate::cloud::PointCloud;
use crate::geometry::{Aabb, Vec3};
use crate::image::Image;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SceneError {
    #[error("invalid scene: {0}")]
    Invalid(String),
    #[error(transparent)]
    Camera(#[from] CameraError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Primitive {
    Sphere { center: Vec3, radius: f64 },
    /// Square in the plane `z = center.z`, facing `+z`.
    Plane { center: Vec3, half_extent: f64 },
    /// Axis-aligned cube.
    TexturedCube { center: Vec3, half_extent: f64 },
}

impl Primitive {
    pub fn name(&self) -> &'static str {
        match self {
            Primitive::Sphere { .. } => "sphere",
            Primitive::Plane { .. } => "plane",
            Primitive::TexturedCube { .. } => "textured-cube",
        }
    }

    /// Unit-size primitive at the origin selected by name.
    pub fn by_name(name: &str) -> Option<Primitive> {
        match name {
            "sphere" => Some(Primitive::Sphere { center: Vec3::ZERO, radius: 1.0 }),
            "plane" => Some(Primitive::Plane { center: Vec3::ZERO, half_extent: 1.0 }),
            "textured-cube" | "cube" => Some(Primitive::TexturedCube { center: Vec3::ZERO, half_extent: 0.7 }),
            _ => None,
        }
    }

    pub fn bbox(&self) -> Aabb {
        match *self {
            Primitive::Sphere { center, radius } => {
                let r = Vec3::new(radius, radius, radius);
                Aabb::new(center - r, center + r)
            }
            Primitive::Plane { center, half_extent: h } => {
                let d = Vec3::new(h, h, 0.0);
                Aabb::new(center - d, center + d)
            }
            Primitive::TexturedCube { center, half_extent: h } => {
                let d = Vec3::new(h, h, h);
                Aabb::new(center - d, center + d)
            }
        }
    }

    /// Uniform sample on the surface and the outward normal there.
    pub fn sample_surface(&self, rng: &mut ChaCha8Rng) -> (Vec3, Vec3) {
        match *self {
            Primitive::Sphere { center, radius } => {
                let n = loop {
                    let v = Vec3::new(
                        StandardNormal.sample(rng),
                        StandardNormal.sample(rng),
                        StandardNormal.sample(rng),
                    );
                    let len = v.norm();
                    if len > 1e-12 {
                        break v * (1.0 / len);
                    }
                };
                (center + n * radius, n)
            }
            Primitive::Plane { center, half_extent: h } => {
                let p = center + Vec3::new(rng.gen_range(-h..h), rng.gen_range(-h..h), 0.0);
                (p, Vec3::new(0.0, 0.0, 1.0))
            }
            Primitive::TexturedCube { center, half_extent: h } => {
                let face = rng.gen_range(0..6);
                let (axis, sign) = (face / 2, if face % 2 == 0 { 1.0 } else { -1.0 });
                let mut c = [rng.gen_range(-h..h), rng.gen_range(-h..h), rng.gen_range(-h..h)];
                c[axis] = sign * h;
                let mut n = [0.0; 3];
                n[axis] = sign;
                (center + Vec3::from_array(c), Vec3::from_array(n))
            }
        }
    }

    /// Nearest intersection with `t > 0` of the ray `o + t·d`.
    pub fn intersect(&self, o: Vec3, d: Vec3) -> Option<f64> {
        match *self {
            Primitive::Sphere { center, radius } => {
                let oc = o - center;
                let a = d.dot(d);
                let b = oc.dot(d);
                let c = oc.dot(oc) - radius * radius;
                let disc = b * b - a * c;
                if disc < 0.0 {
                    return None;
                }
                let sq = libm::sqrt(disc);
                [(-b - sq) / a, (-b + sq) / a].into_iter().find(|&t| t > 0.0)
            }
            Primitive::Plane { center, half_extent: h } => {
                if d.z == 0.0 {
                    return None;
                }
                let t = (center.z - o.z) / d.z;
                let p = o + d * t;
                (t > 0.0 && (p.x - center.x).abs() <= h && (p.y - center.y).abs() <= h).then_some(t)
            }
            Primitive::TexturedCube { center, half_extent: h } => {
                let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
                for k in 0..3 {
                    let (ok, dk) = (o[k] - center[k], d[k]);
                    if dk == 0.0 {
                        if ok.abs() > h {
                            return None;
                        }
                        continue;
                    }
                    let (a, b) = ((-h - ok) / dk, (h - ok) / dk);
                    t0 = t0.max(a.min(b));
                    t1 = t1.min(a.max(b));
                }
                if t0 > t1 {
                    None
                } else if t0 > 0.0 {
                    Some(t0)
                } else if t1 > 0.0 {
                    Some(t1)
                } else {
                    None
                }
            }
        }
    }
}

/// Surface radiance as a function of position and view direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Radiance {
    Constant([f64; 3]),
    /// Solid 3D checkerboard with cubic cells of edge `cell`.
    Checker { cell: f64, a: [f64; 3], b: [f64; 3] },
}

impl Radiance {
    pub const DEFAULT_CHECKER: Radiance = Radiance::Checker {
        cell: 0.5,
        a: [0.9, 0.75, 0.2],
        b: [0.15, 0.3, 0.8],
    };

    pub fn eval(&self, p: Vec3, _dir: Vec3) -> [f64; 3] {
        match *self {
            Radiance::Constant(c) => c,
            Radiance::Checker { cell, a, b } => {
                let k = |v: f64| libm::floor(v / cell) as i64;
                if (k(p.x) + k(p.y) + k(p.z)).rem_euclid(2) == 0 {
                    a
                } else {
                    b
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneSpec {
    pub primitive: Primitive,
    pub radiance: Radiance,
    pub point_count: usize,
    pub noise_sigma: f64,
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    pub fov_x: f64,
    pub camera_distance: f64,
    pub background: [f64; 3],
    pub test_views: usize,
}

impl SceneSpec {
    /// Checkered unit sphere seen from 3.5 units at 64×64.
    pub fn toy_sphere() -> Self {
        SceneSpec {
            primitive: Primitive::Sphere { center: Vec3::ZERO, radius: 1.0 },
            radiance: Radiance::DEFAULT_CHECKER,
            point_count: 20_000,
            noise_sigma: 0.002,
            seed: 7,
            width: 64,
            height: 64,
            fov_x: 0.7,
            camera_distance: 3.5,
            background: [0.0; 3],
            test_views: 8,
        }
    }

    fn validate(&self, n_views: usize) -> Result<(), SceneError> {
        if self.point_count == 0 {
            return Err(SceneError::Invalid("point count must be positive".into()));
        }
        if n_views == 0 {
            return Err(SceneError::Invalid("view count must be positive".into()));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(SceneError::Invalid(format!("noise sigma must be ≥ 0, got {}", self.noise_sigma)));
        }
        if !(self.fov_x > 0.0 && self.fov_x < PI) {
            return Err(SceneError::Invalid(format!("field of view must be in (0, π), got {}", self.fov_x)));
        }
        if !(self.camera_distance > 0.0) {
            return Err(SceneError::Invalid("camera distance must be positive".into()));
        }
        Ok(())
    }

    /// Noiseless box inflated by three noise deviations.
    pub fn bbox(&self) -> Aabb {
        self.primitive.bbox().inflated(3.0 * self.noise_sigma)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct View {
    pub camera: Camera,
    pub image: Image,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub views: Vec<View>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub bbox: Aabb,
}

impl Dataset {
    /// Checks image extents against cameras and that the splits are disjoint
    /// and in range.
    pub fn new(views: Vec<View>, train: Vec<usize>, test: Vec<usize>, bbox: Aabb) -> Result<Self, SceneError> {
        for (i, v) in views.iter().enumerate() {
            if v.image.width != v.camera.width || v.image.height != v.camera.height {
                return Err(SceneError::Invalid(format!(
                    "view {i}: image is {}×{} but camera is {}×{}",
                    v.image.width, v.image.height, v.camera.width, v.camera.height
                )));
            }
        }
        let mut seen = alloc::vec![false; views.len()];
        for &i in train.iter().chain(&test) {
            if i >= views.len() {
                return Err(SceneError::Invalid(format!("split index {i} out of range")));
            }
            if seen[i] {
                return Err(SceneError::Invalid(format!("view {i} appears twice in the splits")));
            }
            seen[i] = true;
        }
        Ok(Dataset { views, train, test, bbox })
    }

    pub fn train_views(&self) -> impl Iterator<Item = &View> {
        self.train.iter().map(|&i| &self.views[i])
    }

    pub fn test_views(&self) -> impl Iterator<Item = &View> {
        self.test.iter().map(|&i| &self.views[i])
    }
}

/// Evenly interleaved test indices: `n_test` of `n` views (at most `n − 1`).
pub fn split_indices(n: usize, n_test: usize) -> (Vec<usize>, Vec<usize>) {
    let n_test = n_test.min(n.saturating_sub(1));
    let test: Vec<usize> = (0..n_test).map(|j| ((2 * j + 1) * n) / (2 * n_test)).collect();
    let train = (0..n).filter(|i| !test.contains(i)).collect();
    (train, test)
}

/// Camera poses on a sphere around `target`: golden-angle azimuths with
/// elevations stratified over a band that avoids the poles. Plane scenes
/// only use the upper half.
pub fn orbit_cameras(spec: &SceneSpec, n_views: usize) -> Result<Vec<Camera>, SceneError> {
    let target = spec.primitive.bbox().center();
    let (lo, hi) = match spec.primitive {
        Primitive::Plane { .. } => (0.6, 1.2),
        _ => (-0.6, 0.9),
    };
    let golden = PI * (3.0 - libm::sqrt(5.0));
    (0..n_views)
        .map(|i| {
            let u = (i as f64 + 0.5) / n_views as f64;
            let elev = lo + (hi - lo) * u;
            let azim = golden * i as f64;
            let dir = Vec3::new(
                libm::cos(elev) * libm::cos(azim),
                libm::cos(elev) * libm::sin(azim),
                libm::sin(elev),
            );
            let eye = target + dir * spec.camera_distance;
            let pose = Camera::look_at(eye, target, Vec3::new(0.0, 0.0, 1.0));
            Ok(Camera::from_fov(spec.fov_x, spec.width, spec.height, pose)?)
        })
        .collect()
}

/// Analytic image of the primitive seen by `cam`.
pub fn render_ground_truth(spec: &SceneSpec, cam: &Camera) -> Image {
    let mut img = Image::filled(cam.width, cam.height, spec.background);
    for row in 0..cam.height {
        for col in 0..cam.width {
            let (o, d) = cam.pixel_ray(col, row);
            if let Some(t) = spec.primitive.intersect(o, d) {
                img.set_pixel(col, row, spec.radiance.eval(o + d * t, d));
            }
        }
    }
    img
}

/// Noisy surface samples coloured by the radiance seen along the inward
/// normal.
pub fn sample_cloud(spec: &SceneSpec) -> PointCloud {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut positions = Vec::with_capacity(spec.point_count);
    let mut colors = Vec::with_capacity(spec.point_count);
    for _ in 0..spec.point_count {
        let (p, n) = spec.primitive.sample_surface(&mut rng);
        colors.push(spec.radiance.eval(p, -n));
        let jitter: [f64; 3] = [
            StandardNormal.sample(&mut rng),
            StandardNormal.sample(&mut rng),
            StandardNormal.sample(&mut rng),
        ];
        positions.push(p + Vec3::from_array(jitter) * spec.noise_sigma);
    }
    PointCloud::new(positions, Some(colors)).expect("finite samples, colours in range")
}

pub fn generate_scene(spec: &SceneSpec, n_views: usize) -> Result<(PointCloud, Dataset), SceneError> {
    spec.validate(n_views)?;
    let cloud = sample_cloud(spec);
    let views = orbit_cameras(spec, n_views)?
        .into_iter()
        .map(|camera| View {
            image: render_ground_truth(spec, &camera),
            camera,
        })
        .collect();
    let (train, test) = split_indices(n_views, spec.test_views);
    let dataset = Dataset::new(views, train, test, spec.bbox())?;
    Ok((cloud, dataset))
}
