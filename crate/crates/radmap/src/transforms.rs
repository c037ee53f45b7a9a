//! Camera lists in the `transforms_*.json` layout: a global horizontal field
//! of view `camera_angle_x` and per-frame camera-to-world matrices, cameras
//! looking down their local −z axis with +y up.
//!
//! Image extents come from optional top-level `w`/`h` keys or, failing
//! that, from the PNG each frame points at.

use std::path::{Path, PathBuf};

use radmap_core::{Camera, Rigid};
use serde_json::{json, Value};

use crate::error::{self, Error, Result};
use crate::png_io;

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    /// As written in the file, usually without extension.
    pub file_path: String,
    pub camera: Camera,
}

impl Frame {
    /// Image file of this frame relative to `dir`, adding `.png` when the
    /// path has no extension.
    pub fn image_path(&self, dir: &Path) -> PathBuf {
        let p = dir.join(&self.file_path);
        if p.extension().is_none() {
            p.with_extension("png")
        } else {
            p
        }
    }
}

fn schema(key: &str, context: &str) -> Error {
    Error::Format(format!("transforms: missing or invalid key '{key}'{context}"))
}

fn matrix(v: &Value, i: usize) -> Result<[[f64; 4]; 4]> {
    let ctx = format!(" in frame {i}");
    let rows = v
        .get("transform_matrix")
        .and_then(Value::as_array)
        .filter(|r| r.len() == 4)
        .ok_or_else(|| schema("transform_matrix", &ctx))?;
    let mut m = [[0.0; 4]; 4];
    for (r, row) in rows.iter().enumerate() {
        let row = row
            .as_array()
            .filter(|c| c.len() == 4)
            .ok_or_else(|| schema("transform_matrix", &ctx))?;
        for (c, x) in row.iter().enumerate() {
            m[r][c] = x.as_f64().ok_or_else(|| schema("transform_matrix", &ctx))?;
        }
    }
    Ok(m)
}

/// Parses the document; `dir` resolves frame images when the extents are
/// not given inline.
pub fn parse_transforms(text: &str, dir: &Path) -> Result<Vec<Frame>> {
    let doc: Value = serde_json::from_str(text).map_err(|e| Error::Format(format!("transforms: {e}")))?;
    let fov = doc
        .get("camera_angle_x")
        .and_then(Value::as_f64)
        .ok_or_else(|| schema("camera_angle_x", ""))?;
    let frames = doc
        .get("frames")
        .and_then(Value::as_array)
        .ok_or_else(|| schema("frames", ""))?;
    let inline = match (doc.get("w"), doc.get("h")) {
        (Some(w), Some(h)) => {
            let dim = |v: &Value, k: &str| v.as_u64().map(|x| x as usize).ok_or_else(|| schema(k, ""));
            Some((dim(w, "w")?, dim(h, "h")?))
        }
        _ => None,
    };
    let mut out = Vec::with_capacity(frames.len());
    for (i, f) in frames.iter().enumerate() {
        let file_path = f
            .get("file_path")
            .and_then(Value::as_str)
            .ok_or_else(|| schema("file_path", &format!(" in frame {i}")))?
            .to_string();
        let m = matrix(f, i)?;
        let (w, h) = match inline {
            Some(s) => s,
            None => {
                let probe = Frame {
                    file_path: file_path.clone(),
                    camera: Camera::from_fov(1.0, 1, 1, Rigid::IDENTITY).expect("unit camera"),
                };
                let img = probe.image_path(dir);
                if !img.exists() {
                    return Err(schema("w", &format!(" (and frame image {} not found)", img.display())));
                }
                png_io::png_size(&img)?
            }
        };
        let camera = Camera::from_fov(fov, w, h, Rigid::from_matrix4(&m))
            .map_err(|e| Error::Format(format!("transforms: frame {i}: {e}")))?;
        out.push(Frame { file_path, camera });
    }
    Ok(out)
}

pub fn load_transforms(path: &Path) -> Result<Vec<Frame>> {
    let text = String::from_utf8(error::read(path)?)
        .map_err(|_| Error::Format(format!("{}: not UTF-8", path.display())))?;
    let dir = path.parent().unwrap_or(Path::new("."));
    parse_transforms(&text, dir).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        e => e,
    })
}

/// All frames must share one field of view and one image size.
pub fn encode_transforms(frames: &[Frame]) -> Result<String> {
    let Some(first) = frames.first() else {
        return Err(Error::Validation("no frames to write".into()));
    };
    let c0 = &first.camera;
    let fov = 2.0 * (0.5 * c0.width as f64 / c0.fx).atan();
    for f in frames {
        let c = &f.camera;
        if (c.width, c.height) != (c0.width, c0.height) || c.fx != c0.fx || c.fy != c.fx {
            return Err(Error::Validation("frames differ in intrinsics".into()));
        }
    }
    let list: Vec<Value> = frames
        .iter()
        .map(|f| {
            json!({
                "file_path": f.file_path,
                "transform_matrix": f.camera.cam_to_world.to_matrix4(),
            })
        })
        .collect();
    let doc = json!({
        "camera_angle_x": fov,
        "w": c0.width,
        "h": c0.height,
        "frames": list,
    });
    Ok(serde_json::to_string_pretty(&doc).expect("plain JSON") + "\n")
}

pub fn save_transforms(frames: &[Frame], path: &Path) -> Result<()> {
    error::write(path, encode_transforms(frames)?.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use radmap_core::Vec3;

    #[test]
    fn right_angle_fov_gives_focal_400() {
        let doc = r#"{"camera_angle_x": 1.5707963267948966, "w": 800, "h": 800,
            "frames": [{"file_path": "a", "transform_matrix": [[1,0,0,0],[0,1,0,0],[0,0,1,0],[0,0,0,1]]}]}"#;
        let f = parse_transforms(doc, Path::new(".")).unwrap();
        let c = &f[0].camera;
        assert!((c.fx - 400.0).abs() < 1e-9 && (c.fy - 400.0).abs() < 1e-9);
        assert_eq!((c.cx, c.cy), (400.0, 400.0));
        assert_eq!(c.position(), Vec3::ZERO);
        assert_eq!(c.view_axis(), Vec3::new(0.0, 0.0, -1.0));
    }

    #[test]
    fn missing_keys_are_named() {
        let err = |doc: &str| parse_transforms(doc, Path::new(".")).unwrap_err().to_string();
        assert!(err(r#"{"frames": []}"#).contains("camera_angle_x"));
        assert!(err(r#"{"camera_angle_x": 1}"#).contains("'frames'"));
        assert!(err(r#"{"camera_angle_x": 1, "w": 4, "h": 4, "frames": [{"file_path": "x"}]}"#).contains("transform_matrix"));
        assert!(err(r#"{"camera_angle_x": 1, "w": 4, "h": 4, "frames": [{"transform_matrix": []}]}"#).contains("file_path"));
        assert!(err(r#"{"camera_angle_x": 1, "frames": [{"file_path": "nowhere", "transform_matrix": [[1,0,0,0],[0,1,0,0],[0,0,1,0],[0,0,0,1]]}]}"#).contains("'w'"));
    }
}
