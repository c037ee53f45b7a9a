//! Query construction: coordinate rectification and positional encoding.
//!
//! The winning point of a pixel is usually a little off the pixel ray. It is
//! replaced by the point on the ray with the same camera-space depth,
//! `x = o + (z / cos θ) · d`, where `cos θ` is the component of the unit ray
//! direction along the camera's viewing axis. Every pixel therefore queries
//! its own coordinate, even when several pixels share one winning point.

use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::cloud::PointCloud;
use crate::geometry::{Aabb, Vec3};
use crate::raster::FragmentBuffer;
use crate::tensor::Tensor;

/// Rays whose viewing-axis component is at or below this are dropped.
pub const MIN_COS_THETA: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EncodingConfig {
    pub coord_freqs: usize,
    pub dir_freqs: usize,
    pub include_raw: bool,
    /// Box mapped onto `[-1, 1]³` before encoding coordinates.
    pub bbox: Aabb,
}

impl EncodingConfig {
    pub fn new(bbox: Aabb) -> Self {
        EncodingConfig {
            coord_freqs: 10,
            dir_freqs: 4,
            include_raw: true,
            bbox,
        }
    }

    pub fn coord_width(&self) -> usize {
        encoded_width(self.coord_freqs, self.include_raw)
    }

    pub fn dir_width(&self) -> usize {
        encoded_width(self.dir_freqs, self.include_raw)
    }
}

pub fn encoded_width(freqs: usize, include_raw: bool) -> usize {
    3 * usize::from(include_raw) + 6 * freqs
}

/// Which coordinate each occupied pixel queries.
#[derive(Debug, Clone, Copy)]
pub enum QueryMode<'a> {
    /// On-ray point at the z-buffer depth.
    Rectified,
    /// Raw position of the winning point (ablation baseline).
    Raw(&'a PointCloud),
}

/// Inputs of the radiance MLP for the occupied pixels of one view.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryBatch {
    /// Row-major pixel indices, increasing.
    pub pixel_ids: Vec<usize>,
    pub coords_world: Vec<Vec3>,
    pub dirs_world: Vec<Vec3>,
    /// `len × coord_width`, row-major.
    pub coords_encoded: Vec<f64>,
    /// `len × dir_width`, row-major.
    pub dirs_encoded: Vec<f64>,
    pub coord_width: usize,
    pub dir_width: usize,
    /// Occupied pixels discarded because of a grazing ray.
    pub dropped: usize,
}

impl QueryBatch {
    pub fn len(&self) -> usize {
        self.pixel_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixel_ids.is_empty()
    }

    /// Encoded coordinates as an `N × coord_width` tensor; `None` when empty.
    pub fn coords_tensor(&self) -> Option<Tensor> {
        (!self.is_empty()).then(|| {
            Tensor::new(&[self.len(), self.coord_width], self.coords_encoded.clone())
                .expect("consistent widths")
        })
    }

    pub fn dirs_tensor(&self) -> Option<Tensor> {
        (!self.is_empty()).then(|| {
            Tensor::new(&[self.len(), self.dir_width], self.dirs_encoded.clone())
                .expect("consistent widths")
        })
    }
}

/// Point on the ray `origin + t·dir` whose depth along `view_axis` is `depth`.
pub fn rectify_point(origin: Vec3, dir: Vec3, view_axis: Vec3, depth: f64) -> Option<Vec3> {
    let cos_theta = dir.dot(view_axis);
    if cos_theta <= MIN_COS_THETA {
        return None;
    }
    Some(origin + dir * (depth / cos_theta))
}

/// Rectified coordinates of all occupied pixels, with their pixel ids and the
/// number of pixels dropped for grazing rays.
pub fn rectify(frag: &FragmentBuffer) -> (Vec<usize>, Vec<Vec3>, usize) {
    let (o, axis) = (frag.origin(), frag.view_axis());
    let mut ids = Vec::new();
    let mut coords = Vec::new();
    let mut dropped = 0;
    for p in 0..frag.len() {
        if !frag.occupied[p] {
            continue;
        }
        match rectify_point(o, frag.ray_dir[p], axis, frag.depth[p]) {
            Some(x) => {
                ids.push(p);
                coords.push(x);
            }
            None => dropped += 1,
        }
    }
    (ids, coords, dropped)
}

/// Appends the encoding of `v` to `out`: optionally `v` itself, then for each
/// frequency `k` the three sines of `2^k·π·v` followed by the three cosines.
pub fn positional_encode_into(v: Vec3, freqs: usize, include_raw: bool, out: &mut Vec<f64>) {
    let c = v.to_array();
    if include_raw {
        out.extend_from_slice(&c);
    }
    let mut scale = PI;
    for _ in 0..freqs {
        out.extend(c.iter().map(|&x| libm::sin(scale * x)));
        out.extend(c.iter().map(|&x| libm::cos(scale * x)));
        scale *= 2.0;
    }
}

pub fn positional_encode(v: Vec3, freqs: usize, include_raw: bool) -> Vec<f64> {
    let mut out = Vec::with_capacity(encoded_width(freqs, include_raw));
    positional_encode_into(v, freqs, include_raw, &mut out);
    out
}

pub fn build_query_batch(frag: &FragmentBuffer, enc: &EncodingConfig, mode: QueryMode<'_>) -> QueryBatch {
    let (pixel_ids, coords_world, dropped) = match mode {
        QueryMode::Rectified => rectify(frag),
        QueryMode::Raw(cloud) => {
            let ids: Vec<usize> = (0..frag.len()).filter(|&p| frag.occupied[p]).collect();
            let coords = ids
                .iter()
                .map(|&p| cloud.positions()[frag.point_index[p]])
                .collect();
            (ids, coords, 0)
        }
    };
    let dirs_world: Vec<Vec3> = pixel_ids.iter().map(|&p| frag.ray_dir[p]).collect();
    let (cw, dw) = (enc.coord_width(), enc.dir_width());
    let mut coords_encoded = Vec::with_capacity(pixel_ids.len() * cw);
    let mut dirs_encoded = Vec::with_capacity(pixel_ids.len() * dw);
    for (x, d) in coords_world.iter().zip(&dirs_world) {
        positional_encode_into(enc.bbox.normalize(*x), enc.coord_freqs, enc.include_raw, &mut coords_encoded);
        positional_encode_into(*d, enc.dir_freqs, enc.include_raw, &mut dirs_encoded);
    }
    QueryBatch {
        pixel_ids,
        coords_world,
        dirs_world,
        coords_encoded,
        dirs_encoded,
        coord_width: cw,
        dir_width: dw,
        dropped,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::Camera;
    use crate::geometry::Rigid;
    use crate::raster::{rasterize, RasterConfig};

    #[test]
    fn on_axis_ray() {
        let axis = Vec3::new(0.0, 0.0, -1.0);
        let x = rectify_point(Vec3::ZERO, axis, axis, 2.0).unwrap();
        assert_eq!(x, Vec3::new(0.0, 0.0, -2.0));
    }

    #[test]
    fn oblique_ray() {
        // cos θ = 0.8, so t = 1.6 / 0.8 = 2
        let axis = Vec3::new(0.0, 0.0, -1.0);
        let d = Vec3::new(0.6, 0.0, -0.8);
        let x = rectify_point(Vec3::ZERO, d, axis, 1.6).unwrap();
        assert!((x - Vec3::new(1.2, 0.0, -1.6)).norm() < 1e-15);
    }

    #[test]
    fn grazing_ray_is_dropped() {
        let axis = Vec3::new(0.0, 0.0, -1.0);
        assert!(rectify_point(Vec3::ZERO, Vec3::new(1.0, 0.0, 0.0), axis, 1.0).is_none());
    }

    #[test]
    fn encoding_examples() {
        let e = positional_encode(Vec3::ZERO, 2, true);
        assert_eq!(e, [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let e = positional_encode(Vec3::new(0.5, 0.5, 0.5), 2, true);
        let expect = [0.5, 0.5, 0.5, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, -1.0, -1.0, -1.0];
        for (a, b) in e.iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(positional_encode(Vec3::ZERO, 10, true).len(), 63);
        assert_eq!(encoded_width(4, true), 27);
        assert_eq!(encoded_width(0, false), 0);
    }

    #[test]
    fn encoding_is_injective_on_a_grid() {
        let mut seen = alloc::collections::BTreeSet::new();
        for i in 0..2000 {
            let x = -1.0 + i as f64 / 1000.0;
            let e = positional_encode(Vec3::new(x, 0.0, 0.0), 10, true);
            let key: Vec<u64> = e.iter().map(|v| v.to_bits()).collect();
            assert!(seen.insert(key));
        }
    }

    #[test]
    fn unoccupied_and_fully_occupied() {
        let cam = Camera::new(4.0, 4.0, 2.0, 2.0, 4, 4, Rigid::IDENTITY).unwrap();
        let enc = EncodingConfig::new(Aabb::new(Vec3::new(-1.0, -1.0, -3.0), Vec3::new(1.0, 1.0, -1.0)));
        let frag = rasterize(&PointCloud::default(), &cam, &RasterConfig::default());
        assert!(build_query_batch(&frag, &enc, QueryMode::Rectified).is_empty());
        // one point just in front of the camera covers every pixel
        let cloud = PointCloud::new(vec![Vec3::new(0.0, 0.0, -0.5)], None).unwrap();
        let frag = rasterize(&cloud, &cam, &RasterConfig::new(1.0, 4));
        let b = build_query_batch(&frag, &enc, QueryMode::Rectified);
        assert_eq!(b.pixel_ids, (0..16).collect::<Vec<_>>());
        assert_eq!(b.coords_encoded.len(), 16 * 63);
        assert_eq!(b.dirs_encoded.len(), 16 * 27);
        // every pixel gets its own coordinate
        for i in 0..16 {
            for j in 0..i {
                assert_ne!(b.coords_world[i], b.coords_world[j]);
            }
        }
        let raw = build_query_batch(&frag, &enc, QueryMode::Raw(&cloud));
        assert!(raw.coords_world.iter().all(|&x| x == cloud.positions()[0]));
    }
}
