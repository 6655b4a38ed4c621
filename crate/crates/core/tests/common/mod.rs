#![allow(dead_code)]
pub mod city_audit;
pub mod oracles;

use nalgebra::{Matrix4, UnitQuaternion};
use procsplat::assembly::Scene;
use procsplat::render::{render, render_backward, RenderConfig, RenderOutput};
use procsplat::splat::{sh, Camera, Gaussian3D, Vec3};
use rand::Rng;

pub fn camera16() -> Camera {
    Camera::new(Matrix4::identity(), 18.0, 18.0, 8.0, 8.0, 16, 16).unwrap()
}

/// A random Gaussian in front of `camera16`, colors kept away from the clamp.
pub fn random_gaussian(rng: &mut impl Rng, sh_degree: usize) -> Gaussian3D {
    let z = rng.gen_range(2.0..4.0);
    let q = UnitQuaternion::from_euler_angles(rng.gen_range(-3.0..3.0), rng.gen_range(-1.5..1.5), rng.gen_range(-3.0..3.0));
    let n = sh::coeff_count(sh_degree);
    let mut coeffs = vec![Vec3::zeros(); n];
    coeffs[0] = sh::rgb_to_dc(Vec3::from_fn(|_, _| rng.gen_range(0.25..0.75)));
    for c in coeffs.iter_mut().skip(1) {
        *c = Vec3::from_fn(|_, _| rng.gen_range(-0.15..0.15));
    }
    Gaussian3D {
        position: Vec3::new(rng.gen_range(-0.35..0.35) * z, rng.gen_range(-0.35..0.35) * z, z),
        rotation: [q.w, q.i, q.j, q.k].map(|v| v * rng.gen_range(0.8..1.2)),
        log_scale: Vec3::from_fn(|_, _| rng.gen_range(0.04f64..0.25).ln()),
        opacity_logit: rng.gen_range(-1.5..1.0),
        sh: coeffs,
    }
}

pub fn weighted_loss(out: &RenderOutput, weights: &[f64]) -> f64 {
    out.color.iter().zip(weights).map(|(c, w)| c * w).sum()
}

pub struct GradCheck {
    pub checked: usize,
    pub excluded: usize,
    pub max_rel: f64,
    pub worst: String,
}

/// Central differences of `Σ w·C` for every parameter of every Gaussian.
/// Parameters whose ±h renders change the set of composited splats (a splat
/// crossing the 1/255 contribution cut or a depth-order swap) are excluded.
pub fn check_scene_gradients(scene: &Scene, cam: &Camera, weights: &[f64], step: f64, floor: f64) -> GradCheck {
    let config = RenderConfig::default();
    let out = render(scene, cam, &config).unwrap();
    let grads = render_backward(scene, cam, &out, weights).unwrap();
    let mut report = GradCheck { checked: 0, excluded: 0, max_rel: 0.0, worst: String::new() };
    for (i, g) in scene.gaussians.iter().enumerate() {
        let analytic = grads.grads[i].flat();
        let base = g.params();
        for (k, a) in analytic.iter().enumerate() {
            let eval = |delta: f64| {
                let mut p = base.clone();
                p[k] += delta;
                let mut gs = scene.gaussians.clone();
                gs[i].read_params(&p);
                render(&scene.with_gaussians(gs), cam, &config).unwrap()
            };
            let (plus, minus) = (eval(step), eval(-step));
            if plus.contributors != out.contributors || minus.contributors != out.contributors || plus.tiles != out.tiles || minus.tiles != out.tiles {
                report.excluded += 1;
                continue;
            }
            let numeric = (weighted_loss(&plus, weights) - weighted_loss(&minus, weights)) / (2.0 * step);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            report.checked += 1;
            if rel > report.max_rel {
                report.max_rel = rel;
                report.worst = format!("gaussian {i} param {k}: analytic {a:e} numeric {numeric:e}");
            }
        }
    }
    report
}
