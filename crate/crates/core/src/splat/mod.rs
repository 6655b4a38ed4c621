//! Value types and math for 3D Gaussians: covariance, density, activations,
//! spherical-harmonic color, pinhole cameras and EWA projection.

mod camera;
pub(crate) mod project;
pub mod sh;

pub use camera::{Camera, CameraRecord};
pub use project::{project, project_in_frame, Gaussian2D, LOW_PASS, NEAR_PLANE};

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SplatError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("{0} SH coefficients per channel; expected 1, 4 or 9")]
    ShCount(usize),
    #[error("invalid camera: {0}")]
    Camera(String),
}

/// Number of scalar parameters of a Gaussian that are not SH coefficients:
/// position (3), rotation (4), log-scale (3), opacity logit (1).
pub const FIXED_PARAMS: usize = 11;

/// One splat. Rotation is a quaternion `(w, x, y, z)` stored unnormalized and
/// normalized at every use site.
#[derive(Clone, Debug, PartialEq)]
pub struct Gaussian3D {
    pub position: Vec3,
    pub rotation: [f64; 4],
    pub log_scale: Vec3,
    pub opacity_logit: f64,
    pub sh: Vec<Vec3>,
}

impl Gaussian3D {
    /// Isotropic, identity-rotated Gaussian with a constant color.
    pub fn isotropic(position: Vec3, sigma: f64, opacity: f64, rgb: Vec3, sh_degree: usize) -> Self {
        let mut sh = vec![Vec3::zeros(); sh::coeff_count(sh_degree)];
        sh[0] = sh::rgb_to_dc(rgb);
        Self {
            position,
            rotation: [1.0, 0.0, 0.0, 0.0],
            log_scale: Vec3::repeat(sigma.ln()),
            opacity_logit: logit(opacity),
            sh,
        }
    }

    pub fn scale(&self) -> Vec3 {
        self.log_scale.map(f64::exp)
    }

    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_logit)
    }

    pub fn rotation_matrix(&self) -> Mat3 {
        quat_to_matrix(&normalize_quat(&self.rotation))
    }

    pub fn covariance(&self) -> Mat3 {
        let m = self.rotation_matrix() * Mat3::from_diagonal(&self.scale());
        m * m.transpose()
    }

    pub fn param_count(&self) -> usize {
        FIXED_PARAMS + 3 * self.sh.len()
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().all(|v| v.is_finite())
            && self.rotation.iter().all(|v| v.is_finite())
            && self.log_scale.iter().all(|v| v.is_finite())
            && self.opacity_logit.is_finite()
            && self.sh.iter().all(|c| c.iter().all(|v| v.is_finite()))
    }

    /// Writes parameters in the canonical flat order
    /// `[position, rotation, log_scale, opacity_logit, sh...]`.
    pub fn write_params(&self, out: &mut [f64]) {
        out[0..3].copy_from_slice(self.position.as_slice());
        out[3..7].copy_from_slice(&self.rotation);
        out[7..10].copy_from_slice(self.log_scale.as_slice());
        out[10] = self.opacity_logit;
        for (k, c) in self.sh.iter().enumerate() {
            out[FIXED_PARAMS + 3 * k..FIXED_PARAMS + 3 * k + 3].copy_from_slice(c.as_slice());
        }
    }

    pub fn read_params(&mut self, p: &[f64]) {
        self.position = Vec3::new(p[0], p[1], p[2]);
        self.rotation = [p[3], p[4], p[5], p[6]];
        self.log_scale = Vec3::new(p[7], p[8], p[9]);
        self.opacity_logit = p[10];
        for (k, c) in self.sh.iter_mut().enumerate() {
            let o = FIXED_PARAMS + 3 * k;
            *c = Vec3::new(p[o], p[o + 1], p[o + 2]);
        }
    }

    pub fn params(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.param_count()];
        self.write_params(&mut out);
        out
    }
}

/// Gradient with the same layout as [`Gaussian3D`].
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianGrad {
    pub position: Vec3,
    pub rotation: [f64; 4],
    pub log_scale: Vec3,
    pub opacity_logit: f64,
    pub sh: Vec<Vec3>,
}

impl GaussianGrad {
    pub fn zeros(n_sh: usize) -> Self {
        Self {
            position: Vec3::zeros(),
            rotation: [0.0; 4],
            log_scale: Vec3::zeros(),
            opacity_logit: 0.0,
            sh: vec![Vec3::zeros(); n_sh],
        }
    }

    pub fn add_assign(&mut self, other: &GaussianGrad) {
        self.position += other.position;
        for k in 0..4 {
            self.rotation[k] += other.rotation[k];
        }
        self.log_scale += other.log_scale;
        self.opacity_logit += other.opacity_logit;
        for (a, b) in self.sh.iter_mut().zip(&other.sh) {
            *a += b;
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(FIXED_PARAMS + 3 * self.sh.len());
        out.extend_from_slice(self.position.as_slice());
        out.extend_from_slice(&self.rotation);
        out.extend_from_slice(self.log_scale.as_slice());
        out.push(self.opacity_logit);
        for c in &self.sh {
            out.extend_from_slice(c.as_slice());
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.flat().iter().all(|v| v.is_finite())
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

pub fn normalize_quat(q: &[f64; 4]) -> [f64; 4] {
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    [q[0] / n, q[1] / n, q[2] / n, q[3] / n]
}

/// Rotation matrix of a unit quaternion `(w, x, y, z)`.
pub fn quat_to_matrix(q: &[f64; 4]) -> Mat3 {
    let [w, x, y, z] = *q;
    Mat3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Unit quaternion `(w, x, y, z)` of a rotation matrix.
pub fn matrix_to_quat(r: &Mat3) -> [f64; 4] {
    let rot = nalgebra::Rotation3::from_matrix_unchecked(*r);
    let q = nalgebra::UnitQuaternion::from_rotation_matrix(&rot);
    [q.w, q.i, q.j, q.k]
}

/// Hamilton product `a ⊗ b`.
pub fn quat_mul(a: &[f64; 4], b: &[f64; 4]) -> [f64; 4] {
    let [aw, ax, ay, az] = *a;
    let [bw, bx, by, bz] = *b;
    [
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ]
}

/// Pulls a gradient w.r.t. the rotation matrix back to the unnormalized quaternion.
pub fn quat_matrix_backward(q: &[f64; 4], d_r: &Mat3) -> [f64; 4] {
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    let [w, x, y, z] = [q[0] / n, q[1] / n, q[2] / n, q[3] / n];
    let g = |i: usize, j: usize| d_r[(i, j)];
    let dw = 2.0 * (-z * g(0, 1) + y * g(0, 2) + z * g(1, 0) - x * g(1, 2) - y * g(2, 0) + x * g(2, 1));
    let dx = 2.0
        * (y * g(0, 1) + z * g(0, 2) + y * g(1, 0) - 2.0 * x * g(1, 1) - w * g(1, 2) + z * g(2, 0)
            + w * g(2, 1)
            - 2.0 * x * g(2, 2));
    let dy = 2.0
        * (-2.0 * y * g(0, 0) + x * g(0, 1) + w * g(0, 2) + x * g(1, 0) + z * g(1, 2) - w * g(2, 0)
            + z * g(2, 1)
            - 2.0 * y * g(2, 2));
    let dz = 2.0
        * (-2.0 * z * g(0, 0) - w * g(0, 1) + x * g(0, 2) + w * g(1, 0) - 2.0 * z * g(1, 1)
            + y * g(1, 2)
            + x * g(2, 0)
            + y * g(2, 1));
    // d q = (I - q̂ q̂ᵀ) d q̂ / |q|
    let dot = w * dw + x * dx + y * dy + z * dz;
    [
        (dw - w * dot) / n,
        (dx - x * dot) / n,
        (dy - y * dot) / n,
        (dz - z * dot) / n,
    ]
}

/// `R diag(s)² Rᵀ` for a (possibly unnormalized) quaternion and positive scales.
pub fn covariance3d(rotation: &[f64; 4], scale: &Vec3) -> Result<Mat3, SplatError> {
    if !rotation.iter().chain(scale.iter()).all(|v| v.is_finite()) {
        return Err(SplatError::InvalidParameter("non-finite rotation or scale".into()));
    }
    if scale.iter().any(|&s| s <= 0.0) {
        return Err(SplatError::InvalidParameter(format!("scale must be positive, got {scale:?}")));
    }
    let norm = rotation.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(SplatError::InvalidParameter("zero quaternion".into()));
    }
    let m = quat_to_matrix(&normalize_quat(rotation)) * Mat3::from_diagonal(scale);
    Ok(m * m.transpose())
}

/// Unnormalized Gaussian density `exp(-½ (x-µ)ᵀ Σ⁻¹ (x-µ))`.
pub fn eval_density(g: &Gaussian3D, x: &Vec3) -> f64 {
    let local = g.rotation_matrix().transpose() * (x - g.position);
    let s = g.scale();
    let m: f64 = (0..3).map(|k| (local[k] / s[k]).powi(2)).sum();
    (-0.5 * m).exp()
}
