//! Real spherical harmonics up to degree 2, in the basis ordering and sign
//! convention used by splat renderers (Condon–Shortley phase).

use super::{SplatError, Vec3};

pub const SH_C0: f64 = 0.282_094_791_773_878_14;
pub const SH_C1: f64 = 0.488_602_511_902_919_9;
pub const SH_C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];

pub const MAX_DEGREE: usize = 2;

pub const fn coeff_count(degree: usize) -> usize {
    (degree + 1) * (degree + 1)
}

pub fn degree_for_count(count: usize) -> Option<usize> {
    (0..=MAX_DEGREE).find(|&d| coeff_count(d) == count)
}

pub fn rgb_to_dc(rgb: Vec3) -> Vec3 {
    rgb.map(|c| (c - 0.5) / SH_C0)
}

pub fn dc_to_rgb(dc: Vec3) -> Vec3 {
    dc.map(|c| c * SH_C0 + 0.5)
}

/// Basis values `Y_k(dir)` for the first `count` coefficients.
pub fn basis(count: usize, dir: &Vec3) -> [f64; 9] {
    let (x, y, z) = (dir.x, dir.y, dir.z);
    let mut out = [0.0; 9];
    out[0] = SH_C0;
    if count > 1 {
        out[1] = -SH_C1 * y;
        out[2] = SH_C1 * z;
        out[3] = -SH_C1 * x;
    }
    if count > 4 {
        out[4] = SH_C2[0] * x * y;
        out[5] = SH_C2[1] * y * z;
        out[6] = SH_C2[2] * (2.0 * z * z - x * x - y * y);
        out[7] = SH_C2[3] * x * z;
        out[8] = SH_C2[4] * (x * x - y * y);
    }
    out
}

/// Gradients `∂Y_k/∂dir` of [`basis`].
pub fn basis_grad(count: usize, dir: &Vec3) -> [Vec3; 9] {
    let (x, y, z) = (dir.x, dir.y, dir.z);
    let mut out = [Vec3::zeros(); 9];
    if count > 1 {
        out[1] = Vec3::new(0.0, -SH_C1, 0.0);
        out[2] = Vec3::new(0.0, 0.0, SH_C1);
        out[3] = Vec3::new(-SH_C1, 0.0, 0.0);
    }
    if count > 4 {
        out[4] = SH_C2[0] * Vec3::new(y, x, 0.0);
        out[5] = SH_C2[1] * Vec3::new(0.0, z, y);
        out[6] = SH_C2[2] * Vec3::new(-2.0 * x, -2.0 * y, 4.0 * z);
        out[7] = SH_C2[3] * Vec3::new(z, 0.0, x);
        out[8] = SH_C2[4] * Vec3::new(2.0 * x, -2.0 * y, 0.0);
    }
    out
}

/// Unclamped color `0.5 + Σ_k Y_k(dir) c_k`.
pub fn raw_color(sh: &[Vec3], dir: &Vec3) -> Vec3 {
    let b = basis(sh.len(), dir);
    sh.iter()
        .zip(b.iter())
        .fold(Vec3::repeat(0.5), |acc, (c, y)| acc + c * *y)
}

/// View-dependent color, clamped to `[0, 1]`.
pub fn sh_color(sh: &[Vec3], dir: &Vec3) -> Result<Vec3, SplatError> {
    if degree_for_count(sh.len()).is_none() {
        return Err(SplatError::ShCount(sh.len()));
    }
    Ok(raw_color(sh, dir).map(|c| c.clamp(0.0, 1.0)))
}

/// Coefficients re-expressed in the world frame: for SH stored in `frame`
/// (evaluated at `frameᵀ d`), returns `c′` with `Σ c′_k Y_k(d) = Σ c_k Y_k(frameᵀ d)`.
pub fn rotate(sh: &[Vec3], frame: &super::Mat3) -> Vec<Vec3> {
    let n = sh.len();
    if n <= 1 {
        return sh.to_vec();
    }
    // Fit on 26 well-spread directions; exact because rotations preserve
    // each band.
    let mut dirs = Vec::new();
    for i in -1i32..=1 {
        for j in -1i32..=1 {
            for k in -1i32..=1 {
                if (i, j, k) != (0, 0, 0) {
                    dirs.push(Vec3::new(i as f64, j as f64, k as f64).normalize());
                }
            }
        }
    }
    let a = nalgebra::DMatrix::from_fn(dirs.len(), n, |r, c| basis(n, &dirs[r])[c]);
    let svd = a.clone().svd(true, true);
    let mut out = vec![Vec3::zeros(); n];
    for ch in 0..3 {
        let b = nalgebra::DVector::from_fn(dirs.len(), |r, _| {
            let local = frame.transpose() * dirs[r];
            let y = basis(n, &local);
            (0..n).map(|k| y[k] * sh[k][ch]).sum::<f64>()
        });
        let x = svd.solve(&b, 1e-12).expect("full SVD");
        for k in 0..n {
            out[k][ch] = x[k];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn factorial(n: u32) -> f64 {
        (1..=n).map(f64::from).product()
    }

    /// Associated Legendre P_l^m(x) with Condon–Shortley phase, l ≤ 2.
    fn legendre(l: u32, m: u32, x: f64) -> f64 {
        let s = (1.0 - x * x).sqrt();
        match (l, m) {
            (0, 0) => 1.0,
            (1, 0) => x,
            (1, 1) => -s,
            (2, 0) => 0.5 * (3.0 * x * x - 1.0),
            (2, 1) => -3.0 * x * s,
            (2, 2) => 3.0 * (1.0 - x * x),
            _ => unreachable!(),
        }
    }

    /// Real SH from spherical angles, ordered by (l, m) with m = -l..l.
    fn real_sh_table(dir: &Vec3) -> Vec<f64> {
        let theta = dir.z.clamp(-1.0, 1.0).acos();
        let phi = dir.y.atan2(dir.x);
        let mut out = Vec::new();
        for l in 0..=2u32 {
            for m in -(l as i32)..=(l as i32) {
                let am = m.unsigned_abs();
                let k = ((2 * l + 1) as f64 / (4.0 * PI) * factorial(l - am) / factorial(l + am)).sqrt();
                let p = legendre(l, am, theta.cos());
                let v = match m.cmp(&0) {
                    std::cmp::Ordering::Equal => k * p,
                    std::cmp::Ordering::Greater => 2f64.sqrt() * k * (m as f64 * phi).cos() * p,
                    std::cmp::Ordering::Less => 2f64.sqrt() * k * (am as f64 * phi).sin() * p,
                };
                out.push(v);
            }
        }
        out
    }

    #[test]
    fn dc_only_is_mid_gray_and_view_independent() {
        let sh = vec![Vec3::zeros()];
        let a = sh_color(&sh, &Vec3::new(0.0, 0.0, 1.0)).unwrap();
        assert_eq!(a, Vec3::repeat(0.5));
        let sh = vec![Vec3::new(0.3, -0.2, 0.9)];
        let d1 = Vec3::new(1.0, 2.0, -0.5).normalize();
        let d2 = Vec3::new(-0.3, 0.1, 0.9).normalize();
        assert_eq!(sh_color(&sh, &d1).unwrap(), sh_color(&sh, &d2).unwrap());
    }

    #[test]
    fn basis_matches_legendre_table() {
        for dir in [
            Vec3::new(0.3, -0.5, 0.81),
            Vec3::new(-0.9, 0.1, -0.2),
            Vec3::new(0.0, 0.6, -0.8),
        ] {
            let d = dir.normalize();
            let table = real_sh_table(&d);
            let b = basis(9, &d);
            for k in 0..9 {
                assert!((b[k] - table[k]).abs() < 1e-12, "k={k}: {} vs {}", b[k], table[k]);
            }
        }
    }

    #[test]
    fn degree_two_color_matches_table() {
        let sh: Vec<Vec3> = (0..9)
            .map(|k| Vec3::new(0.05 * k as f64, -0.03 * k as f64, 0.02))
            .collect();
        let d = Vec3::new(0.2, 0.7, -0.4).normalize();
        let table = real_sh_table(&d);
        let mut expected = Vec3::repeat(0.5);
        for k in 0..9 {
            expected += sh[k] * table[k];
        }
        let got = sh_color(&sh, &d).unwrap();
        assert!((got - expected.map(|c| c.clamp(0.0, 1.0))).amax() < 1e-12);
    }

    #[test]
    fn basis_grad_matches_finite_differences() {
        let d = Vec3::new(0.3, -0.4, 0.5);
        let g = basis_grad(9, &d);
        for axis in 0..3 {
            let mut p = d;
            let mut m = d;
            p[axis] += 1e-6;
            m[axis] -= 1e-6;
            let (bp, bm) = (basis(9, &p), basis(9, &m));
            for k in 0..9 {
                let fd = (bp[k] - bm[k]) / 2e-6;
                assert!((fd - g[k][axis]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn wrong_coefficient_count_is_shape_error() {
        let sh = vec![Vec3::zeros(); 5];
        assert!(matches!(sh_color(&sh, &Vec3::z()), Err(SplatError::ShCount(5))));
    }

    #[test]
    fn rotated_coefficients_match_rotated_query() {
        let r = nalgebra::Rotation3::from_euler_angles(0.3, -1.1, 2.0).into_inner();
        let sh: Vec<Vec3> = (0..9).map(|k| Vec3::new(0.1 * k as f64, -0.05 * k as f64, 0.2)).collect();
        let world = rotate(&sh, &r);
        for d in [Vec3::new(0.2, -0.7, 0.4), Vec3::new(-1.0, 0.1, 0.3), Vec3::z()] {
            let d = d.normalize();
            let a = raw_color(&sh, &(r.transpose() * d));
            let b = raw_color(&world, &d);
            assert!((a - b).amax() < 1e-12, "{a} vs {b}");
        }
    }
}
