//! Per-pixel nearest-point search.
//!
//! A point is a candidate for a pixel when it lies in front of the camera and
//! its perpendicular distance to the pixel ray is below `tau`. Among the
//! candidates the one with the smallest camera-space depth wins; equal depths
//! go to the lower point index.
//!
//! [`rasterize_bruteforce`] tests every (pixel, point) pair. [`rasterize`]
//! splats each point only onto a conservative screen-space footprint and
//! evaluates the very same predicate, so both produce identical buffers.

use alloc::vec;
use alloc::vec::Vec;

use crate::camera::Camera;
use crate::cloud::PointCloud;
use crate::geometry::{Rigid, Vec3};

/// Radius threshold for synthetic object-centric scenes.
pub const TAU_SYNTHETIC: f64 = 5e-3;
/// Radius threshold for room-scale scans.
pub const TAU_ROOM: f64 = 1.5e-2;
/// Radius threshold for tabletop multi-view-stereo clouds.
pub const TAU_TABLETOP: f64 = 3e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RasterConfig {
    /// Radius threshold in world units.
    pub tau: f64,
    /// Tile edge in pixels for bucketing.
    pub tile_size: usize,
}

impl Default for RasterConfig {
    fn default() -> Self {
        RasterConfig {
            tau: TAU_SYNTHETIC,
            tile_size: 16,
        }
    }
}

impl RasterConfig {
    pub fn new(tau: f64, tile_size: usize) -> Self {
        assert!(tau > 0.0 && tau.is_finite(), "tau must be positive, got {tau}");
        assert!(tile_size >= 1, "tile_size must be at least 1");
        RasterConfig { tau, tile_size }
    }
}

/// Rasterization result for one camera.
#[derive(Debug, Clone, PartialEq)]
pub struct FragmentBuffer {
    pub width: usize,
    pub height: usize,
    /// Camera-to-world pose; the ray origin is its translation.
    pub pose: Rigid,
    pub occupied: Vec<bool>,
    /// Winning point per pixel; meaningful only where `occupied`.
    pub point_index: Vec<usize>,
    /// Camera-space depth of the winning point; 0 where unoccupied.
    pub depth: Vec<f64>,
    /// Unit world-space ray direction per pixel.
    pub ray_dir: Vec<Vec3>,
}

impl FragmentBuffer {
    pub fn origin(&self) -> Vec3 {
        self.pose.translation
    }

    pub fn view_axis(&self) -> Vec3 {
        -self.pose.column(2)
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn occupied_count(&self) -> usize {
        self.occupied.iter().filter(|&&o| o).count()
    }

    /// The `height × width` window starting at (`top`, `left`).
    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> FragmentBuffer {
        assert!(top + height <= self.height && left + width <= self.width);
        let pick = |r: usize, c: usize| (top + r) * self.width + left + c;
        let idx: Vec<usize> = (0..height)
            .flat_map(|r| (0..width).map(move |c| (r, c)))
            .map(|(r, c)| pick(r, c))
            .collect();
        FragmentBuffer {
            width,
            height,
            pose: self.pose,
            occupied: idx.iter().map(|&i| self.occupied[i]).collect(),
            point_index: idx.iter().map(|&i| self.point_index[i]).collect(),
            depth: idx.iter().map(|&i| self.depth[i]).collect(),
            ray_dir: idx.iter().map(|&i| self.ray_dir[i]).collect(),
        }
    }

    fn empty(camera: &Camera) -> Self {
        let n = camera.pixel_count();
        let mut ray_dir = Vec::with_capacity(n);
        for row in 0..camera.height {
            for col in 0..camera.width {
                ray_dir.push(camera.pixel_ray(col, row).1);
            }
        }
        FragmentBuffer {
            width: camera.width,
            height: camera.height,
            pose: camera.cam_to_world,
            occupied: vec![false; n],
            point_index: vec![0; n],
            depth: vec![0.0; n],
            ray_dir,
        }
    }

    fn record(&mut self, pixel: usize, best: Option<(f64, usize)>) {
        if let Some((z, i)) = best {
            self.occupied[pixel] = true;
            self.depth[pixel] = z;
            self.point_index[pixel] = i;
        }
    }
}

/// Unit camera-space directions for every pixel, row-major.
fn camera_dirs(camera: &Camera) -> Vec<Vec3> {
    let mut dirs = Vec::with_capacity(camera.pixel_count());
    for row in 0..camera.height {
        for col in 0..camera.width {
            dirs.push(camera.pixel_dir_camera(col, row).normalized());
        }
    }
    dirs
}

/// Whether a camera-space point lies strictly within `tau` of the ray with
/// unit camera-space direction `dir`.
#[inline]
fn within(pc: Vec3, dir: Vec3, tau_sq: f64) -> bool {
    pc.cross(dir).norm_squared() < tau_sq
}

#[inline]
fn better(cand: (f64, usize), best: Option<(f64, usize)>) -> bool {
    match best {
        None => true,
        Some((z, i)) => cand.0 < z || (cand.0 == z && cand.1 < i),
    }
}

/// Camera-space coordinates of every point in front of the camera.
fn visible_points(cloud: &PointCloud, camera: &Camera) -> Vec<(usize, Vec3)> {
    cloud
        .positions()
        .iter()
        .enumerate()
        .filter_map(|(i, &p)| {
            let pc = camera.world_to_camera(p);
            (-pc.z > 0.0).then_some((i, pc))
        })
        .collect()
}

/// Reference rasterizer: every pixel against every point.
pub fn rasterize_bruteforce(cloud: &PointCloud, camera: &Camera, cfg: &RasterConfig) -> FragmentBuffer {
    let mut frag = FragmentBuffer::empty(camera);
    let dirs = camera_dirs(camera);
    let points = visible_points(cloud, camera);
    let tau_sq = cfg.tau * cfg.tau;
    for (pixel, &dir) in dirs.iter().enumerate() {
        let mut best = None;
        for &(i, pc) in &points {
            let cand = (-pc.z, i);
            if within(pc, dir, tau_sq) && better(cand, best) {
                best = Some(cand);
            }
        }
        frag.record(pixel, best);
    }
    frag
}

/// Inclusive pixel rectangle `[c0, c1] × [r0, r1]`.
#[derive(Debug, Clone, Copy)]
struct Footprint {
    c0: usize,
    c1: usize,
    r0: usize,
    r1: usize,
}

/// Pixels whose rays can pass within `tau` of the camera-space point `pc`.
///
/// With `q = pc / depth` and `Δ` the offset of a pixel's normalized image
/// coordinates from those of `q`, the ray distance is at least
/// `depth·|Δ| / (|q| + |Δ|)`, so only `|Δ| < tau·|q| / (depth − tau)` can
/// qualify. One pixel of slack absorbs rounding.
fn footprint(pc: Vec3, camera: &Camera, tau: f64) -> Option<Footprint> {
    let depth = -pc.z;
    let (w, h) = (camera.width as f64, camera.height as f64);
    if depth <= tau {
        return Some(Footprint {
            c0: 0,
            c1: camera.width - 1,
            r0: 0,
            r1: camera.height - 1,
        });
    }
    let q_norm = pc.norm() / depth;
    let radius = tau * q_norm / (depth - tau) * camera.fx.max(camera.fy) + 1.0;
    let (u, v) = camera.project_camera(pc);
    // pixel c is inside when |c + 0.5 - u| <= radius
    let lo_c = libm::ceil(u - 0.5 - radius).max(0.0);
    let hi_c = libm::floor(u - 0.5 + radius).min(w - 1.0);
    let lo_r = libm::ceil(v - 0.5 - radius).max(0.0);
    let hi_r = libm::floor(v - 0.5 + radius).min(h - 1.0);
    if !(lo_c <= hi_c && lo_r <= hi_r) {
        return None;
    }
    Some(Footprint {
        c0: lo_c as usize,
        c1: hi_c as usize,
        r0: lo_r as usize,
        r1: hi_r as usize,
    })
}

struct Tile {
    c0: usize,
    r0: usize,
    c1: usize,
    r1: usize,
    /// Indices into the visible-point list.
    members: Vec<usize>,
}

fn process_tile(
    tile: &Tile,
    width: usize,
    dirs: &[Vec3],
    points: &[(usize, Vec3)],
    feet: &[Option<Footprint>],
    tau_sq: f64,
) -> Vec<Option<(f64, usize)>> {
    let tw = tile.c1 - tile.c0 + 1;
    let th = tile.r1 - tile.r0 + 1;
    let mut best = vec![None; tw * th];
    for &m in &tile.members {
        let (i, pc) = points[m];
        let fp = feet[m].expect("bucketed points have a footprint");
        let cand = (-pc.z, i);
        for r in fp.r0.max(tile.r0)..=fp.r1.min(tile.r1) {
            for c in fp.c0.max(tile.c0)..=fp.c1.min(tile.c1) {
                let slot = &mut best[(r - tile.r0) * tw + (c - tile.c0)];
                if within(pc, dirs[r * width + c], tau_sq) && better(cand, *slot) {
                    *slot = Some(cand);
                }
            }
        }
    }
    best
}

/// Screen-space bucketed rasterizer; output equals [`rasterize_bruteforce`].
pub fn rasterize(cloud: &PointCloud, camera: &Camera, cfg: &RasterConfig) -> FragmentBuffer {
    let mut frag = FragmentBuffer::empty(camera);
    let dirs = camera_dirs(camera);
    let points = visible_points(cloud, camera);
    let feet: Vec<Option<Footprint>> = points
        .iter()
        .map(|&(_, pc)| footprint(pc, camera, cfg.tau))
        .collect();

    let ts = cfg.tile_size.max(1);
    let tiles_x = camera.width.div_ceil(ts);
    let tiles_y = camera.height.div_ceil(ts);
    let mut tiles: Vec<Tile> = (0..tiles_y)
        .flat_map(|ty| (0..tiles_x).map(move |tx| (tx, ty)))
        .map(|(tx, ty)| Tile {
            c0: tx * ts,
            r0: ty * ts,
            c1: ((tx + 1) * ts).min(camera.width) - 1,
            r1: ((ty + 1) * ts).min(camera.height) - 1,
            members: Vec::new(),
        })
        .collect();
    for (m, fp) in feet.iter().enumerate() {
        let Some(fp) = fp else { continue };
        for ty in fp.r0 / ts..=fp.r1 / ts {
            for tx in fp.c0 / ts..=fp.c1 / ts {
                tiles[ty * tiles_x + tx].members.push(m);
            }
        }
    }

    let tau_sq = cfg.tau * cfg.tau;
    let run = |tile: &Tile| process_tile(tile, camera.width, &dirs, &points, &feet, tau_sq);
    #[cfg(feature = "parallel")]
    let results: Vec<_> = {
        use rayon::prelude::*;
        tiles.par_iter().map(run).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let results: Vec<_> = tiles.iter().map(run).collect();

    for (tile, best) in tiles.iter().zip(results) {
        let tw = tile.c1 - tile.c0 + 1;
        for (k, b) in best.into_iter().enumerate() {
            let (r, c) = (tile.r0 + k / tw, tile.c0 + k % tw);
            frag.record(r * camera.width + c, b);
        }
    }
    frag
}
