use proptest::prelude::*;
use radmap_core::adam::{AdamConfig, AdamState};
use radmap_core::metrics;
use radmap_core::raster::{rasterize, rasterize_bruteforce};
use radmap_core::sampling::{positional_encode, rectify};
use radmap_core::{Camera, Image, ModelConfig, Pipeline, PointCloud, RasterConfig, Tape, Tensor, Vec3};

fn cloud_from(coords: &[(f64, f64, f64)]) -> PointCloud {
    PointCloud::new(coords.iter().map(|&(x, y, z)| Vec3::new(x, y, z)).collect(), None).unwrap()
}

fn orbit(azimuth: f64, elevation: f64, size: usize) -> Camera {
    let eye = Vec3::new(
        2.5 * elevation.cos() * azimuth.cos(),
        2.5 * elevation.sin(),
        2.5 * elevation.cos() * azimuth.sin(),
    );
    let pose = Camera::look_at(eye, Vec3::ZERO, Vec3::new(0.0, 1.0, 0.0));
    Camera::from_fov(0.8, size, size, pose).unwrap()
}

fn points() -> impl Strategy<Value = Vec<(f64, f64, f64)>> {
    prop::collection::vec((-0.8..0.8f64, -0.8..0.8f64, -0.8..0.8f64), 1..300)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn fast_raster_equals_bruteforce(
        pts in points(),
        az in 0.0..6.28f64,
        el in -1.2..1.2f64,
        tau in 1e-3..5e-2f64,
        tile in 1usize..20,
    ) {
        let cloud = cloud_from(&pts);
        let cam = orbit(az, el, 24);
        let cfg = RasterConfig::new(tau, tile);
        let fast = rasterize(&cloud, &cam, &cfg);
        let slow = rasterize_bruteforce(&cloud, &cam, &cfg);
        prop_assert_eq!(&fast.occupied, &slow.occupied);
        for p in 0..fast.len() {
            if fast.occupied[p] {
                prop_assert_eq!(fast.point_index[p], slow.point_index[p]);
                prop_assert!((fast.depth[p] - slow.depth[p]).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn winner_is_within_tau_of_its_ray(pts in points(), az in 0.0..6.28f64, tau in 1e-3..5e-2f64) {
        let cloud = cloud_from(&pts);
        let cam = orbit(az, 0.3, 16);
        let frag = rasterize(&cloud, &cam, &RasterConfig::new(tau, 8));
        for row in 0..16 {
            for col in 0..16 {
                let p = row * 16 + col;
                if !frag.occupied[p] {
                    continue;
                }
                let (o, d) = cam.pixel_ray(col, row);
                let v = cloud.positions()[frag.point_index[p]] - o;
                let perp = (v - d * v.dot(d)).norm();
                prop_assert!(perp < tau + 1e-12);
                prop_assert!((cam.depth(cloud.positions()[frag.point_index[p]]) - frag.depth[p]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rectified_points_lie_on_the_ray_at_the_winning_depth(pts in points(), az in 0.0..6.28f64, el in -1.2..1.2f64) {
        let cloud = cloud_from(&pts);
        let cam = orbit(az, el, 20);
        let frag = rasterize(&cloud, &cam, &RasterConfig::new(0.04, 8));
        let (ids, coords, _) = rectify(&frag);
        for (&p, &x) in ids.iter().zip(&coords) {
            let (o, d) = cam.pixel_ray(p % 20, p / 20);
            let v = x - o;
            prop_assert!((v - d * v.dot(d)).norm() < 1e-9);
            prop_assert!((cam.depth(x) - frag.depth[p]).abs() < 1e-9);
        }
    }

    #[test]
    fn linear_matches_naive_product(
        (b, i, o) in (1usize..6, 1usize..6, 1usize..6),
        seed in any::<u64>(),
    ) {
        let val = |k: usize| (((seed.wrapping_add(k as u64 * 2654435761)) % 2001) as f64 - 1000.0) / 500.0;
        let x: Vec<f64> = (0..b * i).map(val).collect();
        let w: Vec<f64> = (0..i * o).map(|k| val(k + 97)).collect();
        let bias: Vec<f64> = (0..o).map(|k| val(k + 331)).collect();
        let mut tape = Tape::new();
        let xv = tape.constant(Tensor::new(&[b, i], x.clone()).unwrap());
        let wv = tape.constant(Tensor::new(&[i, o], w.clone()).unwrap());
        let bv = tape.constant(Tensor::new(&[o], bias.clone()).unwrap());
        let y = tape.linear(xv, wv, bv).unwrap();
        for r in 0..b {
            for c in 0..o {
                let want: f64 = bias[c] + (0..i).map(|k| x[r * i + k] * w[k * o + c]).sum::<f64>();
                prop_assert!((tape.value(y).data()[r * o + c] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn encoding_pairs_have_unit_norm(x in -1.0..1.0f64, y in -1.0..1.0f64, z in -1.0..1.0f64, freqs in 0usize..8) {
        let e = positional_encode(Vec3::new(x, y, z), freqs, true);
        prop_assert_eq!(e.len(), 3 + 6 * freqs);
        prop_assert_eq!(&e[..3], &[x, y, z]);
        for k in 0..freqs {
            let base = 3 + 6 * k;
            for c in 0..3 {
                let (s, co) = (e[base + c], e[base + 3 + c]);
                prop_assert!((s * s + co * co - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn downsample_keeps_every_kth(n in 1usize..200, k in 1usize..15) {
        let pts: Vec<(f64, f64, f64)> = (0..n).map(|i| (i as f64, 0.0, 0.0)).collect();
        let d = cloud_from(&pts).downsample(k);
        prop_assert_eq!(d.len(), n.div_ceil(k));
        for (j, p) in d.positions().iter().enumerate() {
            prop_assert_eq!(p.x, (j * k) as f64);
        }
    }

    #[test]
    fn psnr_of_a_constant_offset(v in 0.0..0.5f64, delta in 1e-3..0.5f64) {
        let a = Image::filled(7, 5, [v; 3]);
        let b = Image::filled(7, 5, [v + delta; 3]);
        let want = -10.0 * (delta * delta).log10();
        prop_assert!((metrics::psnr(&a, &b).unwrap() - want).abs() < 1e-9);
        prop_assert!((metrics::psnr(&b, &a).unwrap() - want).abs() < 1e-9);
    }
}

#[test]
fn mean_square_gradient() {
    let x = vec![0.5, -1.5, 2.0, 0.25];
    let mut tape = Tape::new();
    let xv = tape.leaf(Tensor::new(&[4], x.clone()).unwrap(), true);
    let sq = tape.mul(xv, xv).unwrap();
    let m = tape.mean(sq);
    tape.backward(m).unwrap();
    let g = tape.grad(xv).unwrap();
    for (gi, xi) in g.iter().zip(&x) {
        assert!((gi - 2.0 * xi / 4.0).abs() < 1e-15);
    }
}

#[test]
fn first_adam_step_moves_by_lr() {
    let mut params = vec![Tensor::new(&[3], vec![1.0, 2.0, 3.0]).unwrap()];
    let mut adam = AdamState::new(AdamConfig::default(), &params);
    adam.step(&mut params, &[vec![0.3, -2.0, 0.0]], 0.01);
    let p = params[0].data();
    assert!((p[0] - 0.99).abs() < 1e-7);
    assert!((p[1] - 2.01).abs() < 1e-7);
    assert_eq!(p[2], 3.0);
}

#[test]
fn rendering_is_deterministic() {
    let cloud = cloud_from(&[(0.0, 0.0, 0.0), (0.1, 0.05, -0.1), (-0.2, 0.1, 0.1)]);
    let bbox = radmap_core::Aabb::from_points(cloud.positions()).unwrap().inflated(0.5);
    let cfg = ModelConfig {
        tau: 0.05,
        ..ModelConfig::desk()
    };
    let a = Pipeline::new(cfg, bbox, 7).unwrap();
    let b = Pipeline::new(cfg, bbox, 7).unwrap();
    let cam = orbit(0.4, 0.2, 32);
    let ia = a.render(&cloud, &cam).unwrap();
    let ib = b.render(&cloud, &cam).unwrap();
    assert_eq!(ia.data, ib.data);
    assert!(ia.data.iter().all(|v| (0.0..=1.0).contains(v)));
}
