//! Photometric loss `L1 + λ·(1 − SSIM)` with its analytic image gradient,
//! plus PSNR and SSIM metrics. Images are row-major `H × W × 3` in `[0, 1]`.

use super::TrainError;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let half = (SSIM_WINDOW / 2) as f64;
    for (k, v) in w.iter_mut().enumerate() {
        let d = k as f64 - half;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.map(|v| v / s)
}

/// Separable Gaussian blur of one `h × w` plane, zero padded, same size.
fn blur(plane: &[f64], w: usize, h: usize, kernel: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as isize;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, kv) in kernel.iter().enumerate() {
                let xx = x as isize + k as isize - r;
                if xx >= 0 && (xx as usize) < w {
                    acc += kv * plane[y * w + xx as usize];
                }
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, kv) in kernel.iter().enumerate() {
                let yy = y as isize + k as isize - r;
                if yy >= 0 && (yy as usize) < h {
                    acc += kv * tmp[yy as usize * w + x];
                }
            }
            out[y * w + x] = acc;
        }
    }
    out
}

fn check_dims(a: &[f64], b: &[f64], w: usize, h: usize) -> Result<(), TrainError> {
    if a.len() != w * h * 3 || b.len() != w * h * 3 {
        return Err(TrainError::Shape(format!(
            "images of {} and {} values for {w}×{h}×3",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

fn channel(img: &[f64], c: usize) -> Vec<f64> {
    img.iter().skip(c).step_by(3).copied().collect()
}

/// Mean SSIM over pixels and channels, and optionally `∂SSIM/∂a`.
fn ssim_impl(a: &[f64], b: &[f64], w: usize, h: usize, want_grad: bool) -> (f64, Option<Vec<f64>>) {
    let kernel = window();
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let n = (w * h * 3) as f64;
    let mut total = 0.0;
    let mut grad = want_grad.then(|| vec![0.0; a.len()]);
    for c in 0..3 {
        let x = channel(a, c);
        let y = channel(b, c);
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
        let (mx, my) = (blur(&x, w, h, &kernel), blur(&y, w, h, &kernel));
        let (exx, eyy, exy) = (blur(&xx, w, h, &kernel), blur(&yy, w, h, &kernel), blur(&xy, w, h, &kernel));
        let mut d_mx = vec![0.0; w * h];
        let mut d_exx = vec![0.0; w * h];
        let mut d_exy = vec![0.0; w * h];
        for p in 0..w * h {
            let a1 = 2.0 * mx[p] * my[p] + c1;
            let a2 = 2.0 * (exy[p] - mx[p] * my[p]) + c2;
            let b1 = mx[p] * mx[p] + my[p] * my[p] + c1;
            let b2 = (exx[p] - mx[p] * mx[p]) + (eyy[p] - my[p] * my[p]) + c2;
            let s = a1 * a2 / (b1 * b2);
            total += s;
            if want_grad {
                d_mx[p] = s * (2.0 * my[p] / a1 - 2.0 * my[p] / a2 - 2.0 * mx[p] / b1 + 2.0 * mx[p] / b2) / n;
                d_exx[p] = -s / b2 / n;
                d_exy[p] = 2.0 * s / a2 / n;
            }
        }
        if let Some(g) = grad.as_mut() {
            // the zero-padded symmetric blur is self-adjoint
            let (gm, gxx, gxy) = (blur(&d_mx, w, h, &kernel), blur(&d_exx, w, h, &kernel), blur(&d_exy, w, h, &kernel));
            for p in 0..w * h {
                g[3 * p + c] = gm[p] + 2.0 * x[p] * gxx[p] + y[p] * gxy[p];
            }
        }
    }
    (total / n, grad)
}

/// Mean SSIM (11×11 Gaussian window, σ = 1.5, K₁ = 0.01, K₂ = 0.03, L = 1).
pub fn ssim(a: &[f64], b: &[f64], w: usize, h: usize) -> Result<f64, TrainError> {
    check_dims(a, b, w, h)?;
    Ok(ssim_impl(a, b, w, h, false).0)
}

/// `10 log₁₀(1 / MSE)`; identical images give `+∞`.
pub fn psnr(a: &[f64], b: &[f64]) -> Result<f64, TrainError> {
    if a.len() != b.len() || a.is_empty() {
        return Err(TrainError::Shape(format!("images of {} and {} values", a.len(), b.len())));
    }
    let mse = a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>() / a.len() as f64;
    Ok(if mse == 0.0 { f64::INFINITY } else { 10.0 * (1.0 / mse).log10() })
}

/// `L1 + λ (1 − SSIM)` and its gradient w.r.t. `rendered`.
pub fn loss(rendered: &[f64], target: &[f64], w: usize, h: usize, lambda_ssim: f64) -> Result<(f64, Vec<f64>), TrainError> {
    check_dims(rendered, target, w, h)?;
    let n = rendered.len() as f64;
    let l1 = rendered.iter().zip(target).map(|(p, q)| (p - q).abs()).sum::<f64>() / n;
    let mut grad: Vec<f64> = rendered
        .iter()
        .zip(target)
        .map(|(p, q)| {
            let d = p - q;
            if d > 0.0 {
                1.0 / n
            } else if d < 0.0 {
                -1.0 / n
            } else {
                0.0
            }
        })
        .collect();
    if lambda_ssim == 0.0 {
        return Ok((l1, grad));
    }
    let (s, d_ssim) = ssim_impl(rendered, target, w, h, true);
    for (g, d) in grad.iter_mut().zip(d_ssim.unwrap()) {
        *g -= lambda_ssim * d;
    }
    Ok((l1 + lambda_ssim * (1.0 - s), grad))
}
