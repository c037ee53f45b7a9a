//! Pinhole cameras.
//!
//! Camera space follows the usual graphics convention: `+x` right, `+y` up,
//! the camera looks down `-z`. Image rows grow downwards with pixel centres
//! at integer + 0.5.

use crate::geometry::{Rigid, Vec3};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CameraError {
    #[error("focal lengths must be positive, got fx={fx}, fy={fy}")]
    Focal { fx: f64, fy: f64 },
    #[error("principal point ({cx}, {cy}) outside the {width}×{height} image")]
    PrincipalPoint {
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
    },
    #[error("image extents must be positive")]
    EmptyImage,
    #[error("pose rotation is not a proper rotation (orthonormality error {ortho:e}, det {det})")]
    Rotation { ortho: f64, det: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub cam_to_world: Rigid,
}

impl Camera {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
        cam_to_world: Rigid,
    ) -> Result<Self, CameraError> {
        let cam = Camera {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            cam_to_world,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Intrinsics from a horizontal field of view, principal point centred.
    pub fn from_fov(
        fov_x: f64,
        width: usize,
        height: usize,
        cam_to_world: Rigid,
    ) -> Result<Self, CameraError> {
        let f = 0.5 * width as f64 / libm::tan(0.5 * fov_x);
        Camera::new(
            f,
            f,
            width as f64 / 2.0,
            height as f64 / 2.0,
            width,
            height,
            cam_to_world,
        )
    }

    /// Pose at `eye` looking at `target`; `up` only fixes the roll.
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3) -> Rigid {
        let back = (eye - target).normalized();
        let right = up.cross(back).normalized();
        let true_up = back.cross(right);
        Rigid {
            rotation: [
                [right.x, true_up.x, back.x],
                [right.y, true_up.y, back.y],
                [right.z, true_up.z, back.z],
            ],
            translation: eye,
        }
    }

    pub fn validate(&self) -> Result<(), CameraError> {
        if self.width == 0 || self.height == 0 {
            return Err(CameraError::EmptyImage);
        }
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(CameraError::Focal {
                fx: self.fx,
                fy: self.fy,
            });
        }
        if !(0.0..self.width as f64).contains(&self.cx) || !(0.0..self.height as f64).contains(&self.cy) {
            return Err(CameraError::PrincipalPoint {
                cx: self.cx,
                cy: self.cy,
                width: self.width,
                height: self.height,
            });
        }
        let ortho = self.cam_to_world.orthonormality_error();
        let det = self.cam_to_world.determinant();
        if !(ortho < 1e-6 && (det - 1.0).abs() < 1e-6) {
            return Err(CameraError::Rotation { ortho, det });
        }
        Ok(())
    }

    pub fn position(&self) -> Vec3 {
        self.cam_to_world.translation
    }

    /// Unit world-space direction the camera looks along.
    pub fn view_axis(&self) -> Vec3 {
        -self.cam_to_world.column(2)
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn world_to_camera(&self, p: Vec3) -> Vec3 {
        self.cam_to_world.apply_inverse(p)
    }

    /// Camera-space depth along the viewing axis (positive in front).
    pub fn depth(&self, p: Vec3) -> f64 {
        -self.world_to_camera(p).z
    }

    /// Unnormalized camera-space direction through the centre of pixel
    /// (`col`, `row`); its depth component is exactly 1.
    pub fn pixel_dir_camera(&self, col: usize, row: usize) -> Vec3 {
        Vec3::new(
            (col as f64 + 0.5 - self.cx) / self.fx,
            -(row as f64 + 0.5 - self.cy) / self.fy,
            -1.0,
        )
    }

    /// World-space ray through the centre of pixel (`col`, `row`): the camera
    /// position and a unit direction.
    pub fn pixel_ray(&self, col: usize, row: usize) -> (Vec3, Vec3) {
        let d = self.cam_to_world.rotate(self.pixel_dir_camera(col, row)).normalized();
        (self.position(), d)
    }

    /// Continuous pixel coordinates (column, row) of the projection of a
    /// camera-space point with positive depth.
    pub fn project_camera(&self, pc: Vec3) -> (f64, f64) {
        let depth = -pc.z;
        (
            self.cx + self.fx * pc.x / depth,
            self.cy - self.fy * pc.y / depth,
        )
    }

    /// Same pose, intrinsics and extents scaled by `s`.
    pub fn scaled(&self, s: f64) -> Result<Camera, CameraError> {
        let width = libm::round(self.width as f64 * s) as usize;
        let height = libm::round(self.height as f64 * s) as usize;
        Camera::new(
            self.fx * s,
            self.fy * s,
            self.cx * s,
            self.cy * s,
            width,
            height,
            self.cam_to_world,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn principal_pixel_looks_along_axis() {
        let pose = Camera::look_at(Vec3::new(3.0, 1.0, 2.0), Vec3::ZERO, Vec3::new(0.0, 0.0, 1.0));
        let cam = Camera::new(50.0, 50.0, 16.5, 16.5, 33, 33, pose).unwrap();
        let (o, d) = cam.pixel_ray(16, 16);
        assert_eq!(o, cam.position());
        assert!((d - cam.view_axis()).norm() < 1e-12);
        assert!((cam.view_axis() - (Vec3::ZERO - o).normalized()).norm() < 1e-12);
    }

    #[test]
    fn identity_single_pixel() {
        let cam = Camera::new(1.0, 1.0, 0.5, 0.5, 1, 1, Rigid::IDENTITY).unwrap();
        let (_, d) = cam.pixel_ray(0, 0);
        assert!((d - Vec3::new(0.0, 0.0, -1.0)).norm() < 1e-15);
    }

    #[test]
    fn rays_point_forward() {
        let pose = Camera::look_at(Vec3::new(-1.0, 4.0, 0.5), Vec3::new(0.2, 0.1, 0.0), Vec3::new(0.0, 0.0, 1.0));
        let cam = Camera::from_fov(1.2, 17, 9, pose).unwrap();
        for row in 0..9 {
            for col in 0..17 {
                let (_, d) = cam.pixel_ray(col, row);
                assert!(cam.cam_to_world.rotate_inverse(d).z < 0.0);
                assert!((d.norm() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn projection_inverts_pixel_ray() {
        let pose = Camera::look_at(Vec3::new(2.0, -3.0, 1.0), Vec3::ZERO, Vec3::new(0.0, 0.0, 1.0));
        let cam = Camera::from_fov(0.8, 40, 30, pose).unwrap();
        let (o, d) = cam.pixel_ray(7, 21);
        let pc = cam.world_to_camera(o + d * 3.0);
        let (u, v) = cam.project_camera(pc);
        assert!((u - 7.5).abs() < 1e-9 && (v - 21.5).abs() < 1e-9);
    }

    #[test]
    fn invalid_cameras_rejected() {
        assert!(Camera::new(0.0, 1.0, 0.5, 0.5, 1, 1, Rigid::IDENTITY).is_err());
        assert!(Camera::new(1.0, 1.0, 1.0, 0.5, 1, 1, Rigid::IDENTITY).is_err());
        let mut bad = Rigid::IDENTITY;
        bad.rotation[0][0] = -1.0;
        assert!(matches!(
            Camera::new(1.0, 1.0, 0.5, 0.5, 1, 1, bad),
            Err(CameraError::Rotation { .. })
        ));
    }
}
