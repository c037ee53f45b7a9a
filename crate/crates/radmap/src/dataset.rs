//! Scene directories: a point cloud, per-split camera files, ground-truth
//! PNGs and a manifest with the content hash of every file.
//!
//! ```text
//! manifest.json
//! cloud.ply
//! transforms_train.json   train/r_000.png ...
//! transforms_test.json    test/r_001.png ...
//! ```

use std::path::{Path, PathBuf};

use radmap_core::scene::{Dataset, SceneSpec, View};
use radmap_core::{Aabb, PointCloud, Vec3};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{self, Error, Result};
use crate::ply::{self, PlyFormat};
use crate::png_io;
use crate::transforms::{self, Frame};

pub const MANIFEST: &str = "manifest.json";
pub const CLOUD: &str = "cloud.ply";
pub const TRAIN_CAMERAS: &str = "transforms_train.json";
pub const TEST_CAMERAS: &str = "transforms_test.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxJson {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl From<Aabb> for BoxJson {
    fn from(b: Aabb) -> Self {
        BoxJson {
            min: b.min.to_array(),
            max: b.max.to_array(),
        }
    }
}

impl From<&BoxJson> for Aabb {
    fn from(b: &BoxJson) -> Self {
        Aabb::new(Vec3::from_array(b.min), Vec3::from_array(b.max))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    /// Query-normalization box of the scene.
    pub bbox: BoxJson,
    /// Free-form description of how the scene was made.
    #[serde(default)]
    pub scene: serde_json::Value,
    pub files: Vec<FileEntry>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes `bytes` under `root` and records it.
struct Writer<'a> {
    root: &'a Path,
    files: Vec<FileEntry>,
}

impl Writer<'_> {
    fn put(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        error::write(&path, bytes)?;
        self.files.push(FileEntry {
            path: rel.to_string(),
            sha256: sha256_hex(bytes),
            bytes: bytes.len() as u64,
        });
        Ok(())
    }
}

fn frame_name(split: &str, index: usize) -> String {
    format!("{split}/r_{index:03}")
}

/// Writes a generated scene. Everything written is a pure function of the
/// inputs, so reruns produce identical bytes.
pub fn write_scene(
    root: &Path,
    cloud: &PointCloud,
    dataset: &Dataset,
    description: serde_json::Value,
) -> Result<Manifest> {
    std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let mut w = Writer {
        root,
        files: Vec::new(),
    };
    w.put(CLOUD, &ply::encode_ply(cloud, PlyFormat::BinaryLittleEndian))?;
    for (split, ids, cams) in [
        ("train", &dataset.train, TRAIN_CAMERAS),
        ("test", &dataset.test, TEST_CAMERAS),
    ] {
        let mut frames = Vec::with_capacity(ids.len());
        for &i in ids.iter() {
            let v = &dataset.views[i];
            let name = frame_name(split, i);
            w.put(&format!("{name}.png"), &png_io::encode_png(&v.image)?)?;
            frames.push(Frame {
                file_path: name,
                camera: v.camera,
            });
        }
        if !frames.is_empty() {
            w.put(cams, transforms::encode_transforms(&frames)?.as_bytes())?;
        }
    }
    let manifest = Manifest {
        version: 1,
        bbox: dataset.bbox.into(),
        scene: description,
        files: w.files,
    };
    let text = serde_json::to_string_pretty(&manifest).expect("plain JSON") + "\n";
    error::write(&root.join(MANIFEST), text.as_bytes())?;
    Ok(manifest)
}

pub fn read_manifest(root: &Path) -> Result<Manifest> {
    let path = root.join(MANIFEST);
    let bytes = error::read(&path)?;
    serde_json::from_slice(&bytes).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

/// Checks every listed file against its recorded hash.
pub fn verify(root: &Path, manifest: &Manifest) -> Result<()> {
    for f in &manifest.files {
        let bytes = error::read(&root.join(&f.path))?;
        if sha256_hex(&bytes) != f.sha256 {
            return Err(Error::Format(format!("{}: content hash does not match the manifest", f.path)));
        }
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct SceneDir {
    pub root: PathBuf,
    pub manifest: Manifest,
    pub cloud: PointCloud,
    /// Training views first, then test views.
    pub dataset: Dataset,
    pub frames: Vec<Frame>,
}

/// Loads and verifies a scene directory.
pub fn load_scene(root: &Path) -> Result<SceneDir> {
    let manifest = read_manifest(root)?;
    verify(root, &manifest)?;
    let cloud = ply::load_ply(&root.join(CLOUD))?;
    let mut views = Vec::new();
    let mut frames = Vec::new();
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (cams, split) in [(TRAIN_CAMERAS, &mut train), (TEST_CAMERAS, &mut test)] {
        let path = root.join(cams);
        if !path.exists() {
            continue;
        }
        for f in transforms::load_transforms(&path)? {
            let image = png_io::load_png(&f.image_path(root))?;
            split.push(views.len());
            views.push(View { camera: f.camera, image });
            frames.push(f);
        }
    }
    if train.is_empty() {
        return Err(Error::Format(format!("{}: scene has no training views", root.display())));
    }
    let dataset = Dataset::new(views, train, test, (&manifest.bbox).into()).map_err(|e| Error::Format(e.to_string()))?;
    Ok(SceneDir {
        root: root.to_path_buf(),
        manifest,
        cloud,
        dataset,
        frames,
    })
}

/// JSON description of a synthetic scene for the manifest.
pub fn describe_spec(spec: &SceneSpec, n_views: usize) -> serde_json::Value {
    use radmap_core::scene::{Primitive, Radiance};
    let primitive = match spec.primitive {
        Primitive::Sphere { center, radius } => {
            serde_json::json!({"kind": "sphere", "center": center.to_array(), "radius": radius})
        }
        Primitive::Plane { center, half_extent } => {
            serde_json::json!({"kind": "plane", "center": center.to_array(), "half_extent": half_extent})
        }
        Primitive::TexturedCube { center, half_extent } => {
            serde_json::json!({"kind": "textured-cube", "center": center.to_array(), "half_extent": half_extent})
        }
    };
    let radiance = match spec.radiance {
        Radiance::Constant(c) => serde_json::json!({"kind": "constant", "color": c}),
        Radiance::Checker { cell, a, b } => serde_json::json!({"kind": "checker", "cell": cell, "a": a, "b": b}),
    };
    serde_json::json!({
        "primitive": primitive,
        "radiance": radiance,
        "points": spec.point_count,
        "noise_sigma": spec.noise_sigma,
        "seed": spec.seed,
        "width": spec.width,
        "height": spec.height,
        "fov_x": spec.fov_x,
        "camera_distance": spec.camera_distance,
        "background": spec.background,
        "views": n_views,
        "test_views": spec.test_views,
    })
}
