use std::path::Path;

use proptest::prelude::*;
use radmap::checkpoint::{self, CheckpointError};
use radmap::error::Error;
use radmap::ply::{self, PlyFormat};
use radmap::png_io;
use radmap::transforms::{self, Frame};
use radmap_core::{Camera, Image, PointCloud, Tensor, Vec3};

fn f32_exact() -> impl Strategy<Value = f64> {
    (-1.0e4..1.0e4f32).prop_map(|v| v as f64)
}

fn byte_level() -> impl Strategy<Value = f64> {
    any::<u8>().prop_map(|b| b as f64 / 255.0)
}

fn cloud() -> impl Strategy<Value = PointCloud> {
    prop::collection::vec(
        ((f32_exact(), f32_exact(), f32_exact()), (byte_level(), byte_level(), byte_level())),
        1..60,
    )
    .prop_map(|pts| {
        let (pos, col): (Vec<_>, Vec<_>) = pts
            .into_iter()
            .map(|((x, y, z), (r, g, b))| (Vec3::new(x, y, z), [r, g, b]))
            .unzip();
        PointCloud::new(pos, Some(col)).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn ply_round_trips_in_both_encodings(c in cloud(), binary in any::<bool>()) {
        let format = if binary { PlyFormat::BinaryLittleEndian } else { PlyFormat::Ascii };
        let back = ply::parse_ply(&ply::encode_ply(&c, format)).unwrap();
        prop_assert_eq!(back, c);
    }

    #[test]
    fn png_round_trips_byte_levels(w in 1usize..12, h in 1usize..12, seed in any::<u64>()) {
        let mut img = Image::new(w, h);
        for (i, v) in img.data.iter_mut().enumerate() {
            *v = ((seed >> (i % 56)) as u8 ^ i as u8) as f64 / 255.0;
        }
        let back = png_io::decode_png(&png_io::encode_png(&img).unwrap()).unwrap();
        prop_assert_eq!(back, img);
    }

    #[test]
    fn checkpoint_round_trips(
        tensors in prop::collection::vec(
            (prop::collection::vec(1usize..4, 1..4), "[a-z.]{1,12}", any::<u32>()),
            0..6,
        ),
    ) {
        let entries: Vec<(String, Tensor)> = tensors
            .into_iter()
            .map(|(shape, name, seed)| {
                let n: usize = shape.iter().product();
                let data = (0..n).map(|i| ((seed as usize + 31 * i) % 997) as f32 as f64 / 7.0).map(|v| v as f32 as f64).collect();
                (name, Tensor::new(&shape, data).unwrap())
            })
            .collect();
        let bytes = checkpoint::encode(&entries).unwrap();
        let payload: usize = entries
            .iter()
            .map(|(n, t)| 2 + n.len() + 1 + 8 * t.ndim() + 4 * t.len())
            .sum();
        prop_assert_eq!(bytes.len(), checkpoint::HEADER_LEN + payload);
        prop_assert_eq!(checkpoint::decode(&bytes).unwrap(), entries);
    }
}

#[test]
fn checkpoint_truncation_is_reported() {
    let entries = vec![("w".to_string(), Tensor::new(&[2, 3], vec![1.0; 6]).unwrap())];
    let bytes = checkpoint::encode(&entries).unwrap();
    for cut in [3, checkpoint::HEADER_LEN + 1, bytes.len() - 1] {
        assert!(checkpoint::decode(&bytes[..cut]).is_err(), "cut at {cut}");
    }
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(checkpoint::decode(&bad), Err(CheckpointError::Magic(_))));
    let mut long = bytes;
    long.push(0);
    assert!(checkpoint::decode(&long).is_err());
}

#[test]
fn corrupt_files_are_format_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x");
    std::fs::write(&path, b"not an image").unwrap();
    assert!(matches!(png_io::load_png(&path), Err(Error::Format(_))));
    assert!(matches!(ply::load_ply(&path), Err(Error::Format(_))));
    assert!(matches!(checkpoint::load(&path), Err(Error::Format(_))));
    assert!(matches!(ply::load_ply(&dir.path().join("missing.ply")), Err(Error::Io { .. })));
}

#[test]
fn transforms_round_trip_three_frames() {
    let dir = tempfile::tempdir().unwrap();
    let frames: Vec<Frame> = (0..3)
        .map(|i| {
            let a = i as f64 * 2.0;
            let eye = Vec3::new(3.0 * a.cos(), 0.5, 3.0 * a.sin());
            let pose = Camera::look_at(eye, Vec3::ZERO, Vec3::new(0.0, 1.0, 0.0));
            Frame {
                file_path: format!("./test/r_{i}"),
                camera: Camera::from_fov(0.69, 40, 30, pose).unwrap(),
            }
        })
        .collect();
    let path = dir.path().join("transforms_test.json");
    transforms::save_transforms(&frames, &path).unwrap();
    let back = transforms::load_transforms(&path).unwrap();
    assert_eq!(back.len(), 3);
    for (a, b) in frames.iter().zip(&back) {
        assert_eq!(a.file_path, b.file_path);
        let (ca, cb) = (&a.camera, &b.camera);
        assert_eq!((ca.width, ca.height), (cb.width, cb.height));
        assert!((ca.fx - cb.fx).abs() < 1e-9 && (ca.cy - cb.cy).abs() < 1e-12);
        assert!((ca.position() - cb.position()).norm() < 1e-12);
        assert!((ca.view_axis() - cb.view_axis()).norm() < 1e-12);
    }
    assert_eq!(back[1].image_path(Path::new("/d")), Path::new("/d/./test/r_1.png"));
}
