use nalgebra::{Matrix2, Matrix2x3, Vector2};

use super::{
    quat_matrix_backward, quat_to_matrix, normalize_quat, sh, sigmoid, Camera, Gaussian3D, GaussianGrad,
    Mat3, SplatError, Vec3,
};

/// Screen-space low-pass floor added to every projected covariance (px²).
pub const LOW_PASS: f64 = 0.3;
/// Centers closer than this (camera-space z, meters) are culled.
pub const NEAR_PLANE: f64 = 0.01;

#[derive(Clone, Debug, PartialEq)]
pub struct Gaussian2D {
    pub mean2d: Vector2<f64>,
    pub cov2d: Matrix2<f64>,
    pub color: Vec3,
    pub alpha: f64,
    pub depth: f64,
}

impl Gaussian2D {
    /// Inverse covariance as `(a, b, c)` for `[[a, b], [b, c]]`.
    pub fn conic(&self) -> [f64; 3] {
        let (a, b, c) = (self.cov2d[(0, 0)], self.cov2d[(0, 1)], self.cov2d[(1, 1)]);
        let det = a * c - b * b;
        [c / det, -b / det, a / det]
    }
}

/// Projects with SH evaluated in the Gaussian's own (world) frame.
pub fn project(g: &Gaussian3D, cam: &Camera) -> Result<Option<Gaussian2D>, SplatError> {
    project_in_frame(g, cam, &Mat3::identity())
}

/// Projects `g`; the SH view direction is rotated into `sh_frame` (an
/// instance rotation) before evaluation. `None` means culled behind the
/// near plane.
pub fn project_in_frame(g: &Gaussian3D, cam: &Camera, sh_frame: &Mat3) -> Result<Option<Gaussian2D>, SplatError> {
    if !g.is_finite() {
        return Err(SplatError::InvalidParameter("non-finite Gaussian".into()));
    }
    if sh::degree_for_count(g.sh.len()).is_none() {
        return Err(SplatError::ShCount(g.sh.len()));
    }
    Ok(forward(g, cam, sh_frame).map(|f| f.g2))
}

/// Intermediates of the forward projection, kept for the backward pass.
pub(crate) struct ProjectForward {
    pub g2: Gaussian2D,
    pub t: Vec3,
    pub j: Matrix2x3<f64>,
    pub w: Mat3,
    pub view: Mat3,
    pub rot: Mat3,
    pub scale: Vec3,
    pub dir_unnorm: Vec3,
    pub dir_local: Vec3,
    pub raw_color: Vec3,
}

pub(crate) fn forward(g: &Gaussian3D, cam: &Camera, sh_frame: &Mat3) -> Option<ProjectForward> {
    let w = cam.rotation();
    let t = w * g.position + cam.translation();
    if t.z <= NEAR_PLANE {
        return None;
    }
    let (x, y, z) = (t.x, t.y, t.z);
    let j = Matrix2x3::new(cam.fx / z, 0.0, -cam.fx * x / (z * z), 0.0, cam.fy / z, -cam.fy * y / (z * z));
    let rot = quat_to_matrix(&normalize_quat(&g.rotation));
    let scale = g.scale();
    let m = rot * Mat3::from_diagonal(&scale);
    let sigma = m * m.transpose();
    let view = w * sigma * w.transpose();
    let mut cov2d = j * view * j.transpose();
    cov2d[(0, 0)] += LOW_PASS;
    cov2d[(1, 1)] += LOW_PASS;
    // symmetrize against rounding
    let off = 0.5 * (cov2d[(0, 1)] + cov2d[(1, 0)]);
    cov2d[(0, 1)] = off;
    cov2d[(1, 0)] = off;
    let mean2d = Vector2::new(cam.fx * x / z + cam.cx, cam.fy * y / z + cam.cy);

    let dir_unnorm = g.position - cam.center();
    let dir_local = sh_frame.transpose() * dir_unnorm.normalize();
    let raw_color = sh::raw_color(&g.sh, &dir_local);
    let g2 = Gaussian2D {
        mean2d,
        cov2d,
        color: raw_color.map(|c| c.clamp(0.0, 1.0)),
        alpha: sigmoid(g.opacity_logit),
        depth: z,
    };
    Some(ProjectForward { g2, t, j, w, view, rot, scale, dir_unnorm, dir_local, raw_color })
}

/// Gradients w.r.t. the screen-space quantities of one projected Gaussian.
#[derive(Clone, Copy, Debug, Default)]
pub(crate) struct ScreenGrad {
    pub mean2d: [f64; 2],
    /// w.r.t. conic entries `(a, b, c)` of `[[a, b], [b, c]]`
    pub conic: [f64; 3],
    pub alpha: f64,
    pub color: [f64; 3],
}

impl ScreenGrad {
    pub fn add(&mut self, o: &ScreenGrad) {
        for k in 0..2 {
            self.mean2d[k] += o.mean2d[k];
        }
        for k in 0..3 {
            self.conic[k] += o.conic[k];
            self.color[k] += o.color[k];
        }
        self.alpha += o.alpha;
    }
}

/// Chains screen-space gradients back to the 3D parameters of `g`.
pub(crate) fn backward(g: &Gaussian3D, cam: &Camera, sh_frame: &Mat3, f: &ProjectForward, sg: &ScreenGrad) -> GaussianGrad {
    let mut out = GaussianGrad::zeros(g.sh.len());

    // opacity
    let a = f.g2.alpha;
    out.opacity_logit = sg.alpha * a * (1.0 - a);

    // color -> SH coefficients and view direction
    let dcolor = Vec3::from_fn(|k, _| if (0.0..=1.0).contains(&f.raw_color[k]) { sg.color[k] } else { 0.0 });
    let n = g.sh.len();
    let basis = sh::basis(n, &f.dir_local);
    for k in 0..n {
        out.sh[k] = dcolor * basis[k];
    }
    let mut d_position = Vec3::zeros();
    if n > 1 {
        let grads = sh::basis_grad(n, &f.dir_local);
        let mut d_dir_local = Vec3::zeros();
        for k in 1..n {
            d_dir_local += grads[k] * g.sh[k].dot(&dcolor);
        }
        let d_dir = sh_frame * d_dir_local;
        let len = f.dir_unnorm.norm();
        let dir = f.dir_unnorm / len;
        d_position += (d_dir - dir * dir.dot(&d_dir)) / len;
    }

    // conic -> 2D covariance: dΣ2 = -M G M with G the symmetric conic gradient
    let conic = f.g2.conic();
    let mm = Matrix2::new(conic[0], conic[1], conic[1], conic[2]);
    let gc = Matrix2::new(sg.conic[0], 0.5 * sg.conic[1], 0.5 * sg.conic[1], sg.conic[2]);
    let d_cov2d = -(mm * gc * mm);

    // cov2d = J V Jᵀ + εI
    let d_view = f.j.transpose() * d_cov2d * f.j;
    let d_j = 2.0 * d_cov2d * f.j * f.view;
    let d_sigma = f.w.transpose() * d_view * f.w;

    // camera-space center through J and the pinhole mean
    let (x, y, z) = (f.t.x, f.t.y, f.t.z);
    let (fx, fy) = (cam.fx, cam.fy);
    let z2 = z * z;
    let z3 = z2 * z;
    let mut d_t = Vec3::new(
        d_j[(0, 2)] * (-fx / z2),
        d_j[(1, 2)] * (-fy / z2),
        d_j[(0, 0)] * (-fx / z2) + d_j[(0, 2)] * (2.0 * fx * x / z3) + d_j[(1, 1)] * (-fy / z2)
            + d_j[(1, 2)] * (2.0 * fy * y / z3),
    );
    d_t += Vec3::new(
        sg.mean2d[0] * fx / z,
        sg.mean2d[1] * fy / z,
        -sg.mean2d[0] * fx * x / z2 - sg.mean2d[1] * fy * y / z2,
    );
    d_position += f.w.transpose() * d_t;
    out.position = d_position;

    // Σ = M Mᵀ, M = R diag(s)
    let m = f.rot * Mat3::from_diagonal(&f.scale);
    let d_m = 2.0 * d_sigma * m;
    let d_rot = d_m * Mat3::from_diagonal(&f.scale);
    for k in 0..3 {
        let ds = (0..3).map(|i| f.rot[(i, k)] * d_m[(i, k)]).sum::<f64>();
        out.log_scale[k] = ds * f.scale[k];
    }
    out.rotation = quat_matrix_backward(&g.rotation, &d_rot);
    out
}
