use nalgebra::Matrix4;
use serde::{Deserialize, Serialize};

use super::{Mat3, SplatError, Vec3};

/// Pinhole camera, OpenCV convention: x right, y down, z forward.
/// Pixel `(i, j)` is sampled at its center `(i + 0.5, j + 0.5)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Camera {
    pub world_to_camera: Matrix4<f64>,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

/// JSON form shared by `cameras.json` entries and render requests.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct CameraRecord {
    pub world_to_camera: Vec<f64>,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Camera {
    pub fn new(
        world_to_camera: Matrix4<f64>,
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: u32,
        height: u32,
    ) -> Result<Self, SplatError> {
        let cam = Self { world_to_camera, fx, fy, cx, cy, width, height };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<(), SplatError> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(SplatError::Camera(format!("focal lengths must be positive ({}, {})", self.fx, self.fy)));
        }
        if !self.world_to_camera.iter().all(|v| v.is_finite()) {
            return Err(SplatError::Camera("non-finite extrinsics".into()));
        }
        let r = self.rotation();
        let err = (r.transpose() * r - Mat3::identity()).amax();
        if err > 1e-9 {
            return Err(SplatError::Camera(format!("rotation block not orthonormal (error {err:e})")));
        }
        let last = self.world_to_camera.row(3);
        if last[0] != 0.0 || last[1] != 0.0 || last[2] != 0.0 || last[3] != 1.0 {
            return Err(SplatError::Camera("last row must be [0 0 0 1]".into()));
        }
        Ok(())
    }

    /// Camera looking from `eye` at `target`; `up` is the world up direction.
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3, fx: f64, width: u32, height: u32) -> Self {
        let forward = (target - eye).normalize();
        let right = forward.cross(&up).normalize();
        let down = forward.cross(&right);
        let r = Mat3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let t = -(r * eye);
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&t);
        Self {
            world_to_camera: m,
            fx,
            fy: fx,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            width,
            height,
        }
    }

    pub fn rotation(&self) -> Mat3 {
        self.world_to_camera.fixed_view::<3, 3>(0, 0).into_owned()
    }

    pub fn translation(&self) -> Vec3 {
        self.world_to_camera.fixed_view::<3, 1>(0, 3).into_owned()
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vec3 {
        -(self.rotation().transpose() * self.translation())
    }

    pub fn to_camera(&self, p: &Vec3) -> Vec3 {
        self.rotation() * p + self.translation()
    }

    pub fn to_record(&self) -> CameraRecord {
        let mut m = Vec::with_capacity(16);
        for i in 0..4 {
            for j in 0..4 {
                m.push(self.world_to_camera[(i, j)]);
            }
        }
        CameraRecord {
            world_to_camera: m,
            fx: self.fx,
            fy: self.fy,
            cx: self.cx,
            cy: self.cy,
            width: self.width,
            height: self.height,
        }
    }

    pub fn from_record(rec: &CameraRecord) -> Result<Self, SplatError> {
        if rec.world_to_camera.len() != 16 {
            return Err(SplatError::Camera(format!(
                "world_to_camera needs 16 numbers, got {}",
                rec.world_to_camera.len()
            )));
        }
        Self::new(
            Matrix4::from_row_slice(&rec.world_to_camera),
            rec.fx,
            rec.fy,
            rec.cx,
            rec.cy,
            rec.width,
            rec.height,
        )
    }
}
