//! A hand-built three-asset building (corner, window, pillar) with orbit
//! cameras, rendered into a dataset by the forward renderer.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::assembly::{assemble, BaseAsset, Scene, VarianceAsset};
use crate::city::AssetLibrary;
use crate::grammar::{expand, parse, AssetSpec, InstantiationList, Manifest, ProceduralCode};
use crate::render::{render, RenderConfig};
use crate::splat::{sh, Camera, Gaussian3D, Vec3};
use crate::train::{Dataset, Split, View};

pub const CODE: &str = "building Synth {\n  level G x 3 { C_E W1 P1 W1 C_E }\n}\n";

pub fn manifest() -> Manifest {
    Manifest::new(vec![
        AssetSpec::new("C_E", [0.6, 0.6, 3.0], [0.3, 0.3, 1.5]),
        AssetSpec::new("W1", [1.5, 0.3, 3.0], [0.75, 0.15, 1.5]),
        AssetSpec::new("P1", [0.5, 0.3, 3.0], [0.25, 0.15, 1.5]),
    ])
    .expect("valid manifest")
}

pub fn code() -> ProceduralCode {
    parse(CODE).expect("valid code")
}

/// Flattened disk of Gaussians lying on the plane `y = y0`, one per grid
/// cell, colored by `paint(u, v)` with `(u, v)` in local `(x, z)`.
fn panel(spec: &AssetSpec, y0: f64, step: f64, sh_degree: usize, paint: impl Fn(f64, f64) -> Vec3) -> Vec<Gaussian3D> {
    let (lo, hi) = (spec.box_min(), spec.box_max());
    let nx = ((hi.x - lo.x) / step).round() as usize;
    let nz = ((hi.z - lo.z) / step).round() as usize;
    let n_sh = sh::coeff_count(sh_degree);
    let mut out = Vec::with_capacity(nx * nz);
    for i in 0..nx {
        for k in 0..nz {
            let u = lo.x + (i as f64 + 0.5) * step;
            let v = lo.z + (k as f64 + 0.5) * step;
            let mut g = Gaussian3D::isotropic(Vec3::new(u, y0, v), step * 0.6, 0.95, paint(u - lo.x, v - lo.z), 0);
            g.log_scale.y = (0.02f64).ln();
            g.sh.resize(n_sh, Vec3::zeros());
            out.push(g);
        }
    }
    out
}

fn rgb(r: f64, g: f64, b: f64) -> Vec3 {
    Vec3::new(r, g, b)
}

/// Target appearance of every asset.
pub fn target_assets(sh_degree: usize) -> Vec<BaseAsset> {
    let m = manifest();
    let step = 0.1;
    let stone = rgb(0.78, 0.72, 0.6);
    let corner = m.get("C_E").unwrap().clone();
    let window = m.get("W1").unwrap().clone();
    let pillar = m.get("P1").unwrap().clone();
    let mut corner_g = panel(&corner, 0.05, step, sh_degree, |u, v| {
        if (v % 1.0) < 0.15 {
            rgb(0.45, 0.4, 0.35)
        } else if u < 0.1 {
            rgb(0.6, 0.55, 0.45)
        } else {
            stone
        }
    });
    // the side face of the corner, so the building edge reads from both sides
    let side = AssetSpec::new("side", [0.6, 0.6, 3.0], [0.3, 0.3, 1.5]);
    for mut g in panel(&side, 0.0, step, sh_degree, |u, v| if (v % 1.0) < 0.15 { rgb(0.45, 0.4, 0.35) } else { stone * (0.9 + 0.1 * u) }) {
        // rotate the panel onto the plane x = 0.05
        g.position = Vec3::new(0.05, 0.6 - g.position.x, g.position.z);
        g.log_scale = Vec3::new(g.log_scale.y, g.log_scale.x, g.log_scale.z);
        corner_g.push(g);
    }
    let window_g = panel(&window, 0.05, step, sh_degree, |u, v| {
        let glass = (0.25..1.25).contains(&u) && (0.8..2.4).contains(&v);
        let sill = (0.15..1.35).contains(&u) && (0.6..0.8).contains(&v);
        if glass {
            let t = (v - 0.8) / 1.6;
            rgb(0.15 + 0.1 * t, 0.3 + 0.15 * t, 0.55 + 0.2 * t)
        } else if sill {
            rgb(0.92, 0.92, 0.9)
        } else {
            stone
        }
    });
    let pillar_g = panel(&pillar, 0.05, step, sh_degree, |_, v| {
        if (v % 0.3) < 0.06 {
            rgb(0.55, 0.3, 0.22)
        } else {
            rgb(0.72, 0.38, 0.28)
        }
    });
    vec![
        BaseAsset { spec: corner, gaussians: corner_g },
        BaseAsset { spec: window, gaussians: window_g },
        BaseAsset { spec: pillar, gaussians: pillar_g },
    ]
}

pub fn instantiations() -> InstantiationList {
    let code = code();
    let m = manifest();
    let dims = crate::train::code_dims(&code, &m).expect("feasible");
    expand(&code, &m, dims).expect("feasible")
}

pub fn target_scene(sh_degree: usize) -> Scene {
    assemble(&instantiations(), &target_assets(sh_degree), &[]).expect("consistent")
}

/// Building codes over the synthetic assets that stretch to any footprint.
pub const CITY_CODES: &str = "building Row {\n  level G x 2 { C_E (W1 P1)* C_E }\n}\n\
building Tower {\n  level G { C_E (W1)* C_E }\n  level U x 3 { C_E (P1 W1)* P1 C_E }\n}\n";

/// Street furniture: a lamp post and a bin, each a single-instance asset.
pub fn decoration_assets(sh_degree: usize) -> Vec<BaseAsset> {
    let mut lamp = Vec::new();
    for k in 0..6 {
        let z = 0.25 + 0.5 * k as f64;
        lamp.push(Gaussian3D::isotropic(Vec3::new(0.15, 0.15, z), 0.05, 0.9, rgb(0.2, 0.2, 0.22), sh_degree));
    }
    lamp.push(Gaussian3D::isotropic(Vec3::new(0.15, 0.15, 2.9), 0.1, 0.95, rgb(1.0, 0.95, 0.7), sh_degree));
    let bin = vec![
        Gaussian3D::isotropic(Vec3::new(0.3, 0.3, 0.3), 0.2, 0.9, rgb(0.2, 0.45, 0.25), sh_degree),
        Gaussian3D::isotropic(Vec3::new(0.3, 0.3, 0.7), 0.2, 0.9, rgb(0.2, 0.45, 0.25), sh_degree),
    ];
    vec![
        BaseAsset { spec: AssetSpec::new("lamp", [0.3, 0.3, 3.0], [0.15, 0.15, 0.0]), gaussians: lamp },
        BaseAsset { spec: AssetSpec::new("bin", [0.6, 0.6, 1.0], [0.3, 0.3, 0.0]), gaussians: bin },
    ]
}

/// The synthetic building assets plus decorations, each building asset with
/// a pool of three weathering variance assets, and [`CITY_CODES`].
pub fn city_library() -> AssetLibrary {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut bases = target_assets(1);
    let mut pools: Vec<Vec<VarianceAsset>> = Vec::new();
    for b in &bases {
        let (lo, hi) = (b.spec.box_min(), b.spec.box_max());
        let pool = (0..3)
            .map(|k| {
                let gaussians = (0..8)
                    .map(|_| {
                        let p = Vec3::new(rng.gen_range(lo.x..hi.x), 0.04, rng.gen_range(lo.z..hi.z));
                        let tint = rng.gen_range(0.2..0.5);
                        Gaussian3D::isotropic(p, 0.08, 0.6, rgb(tint, tint * 0.9, tint * 0.8), 1)
                    })
                    .collect();
                VarianceAsset { owner_asset_id: b.spec.id.clone(), instance_index: k, gaussians }
            })
            .collect();
        pools.push(pool);
    }
    for d in decoration_assets(1) {
        bases.push(d);
        pools.push(Vec::new());
    }
    let codes = crate::grammar::parse_all(CITY_CODES).expect("valid codes");
    AssetLibrary::new(bases, pools, codes).expect("consistent library")
}

/// Orbit cameras around the building: `n_train` evenly spaced training
/// azimuths, `n_test` azimuths halfway between some of them.
pub fn cameras(n_train: usize, n_test: usize, size: u32) -> Vec<(Camera, Split)> {
    let m = manifest();
    let dims = crate::train::code_dims(&code(), &m).expect("feasible");
    let center = Vec3::new(dims[0] / 2.0, dims[1] / 2.0, dims[2] / 2.0);
    let radius = 11.0;
    let fx = size as f64 * 0.9;
    let eye = |az: f64, el: f64| center + radius * Vec3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin());
    let mut out = Vec::new();
    for k in 0..n_train {
        let az = 2.0 * PI * k as f64 / n_train as f64;
        let el = [0.15, 0.35, 0.55][k % 3];
        out.push((Camera::look_at(eye(az, el), center, Vec3::z(), fx, size, size), Split::Train));
    }
    for k in 0..n_test {
        let az = 2.0 * PI * (k as f64 + 0.37) / n_test as f64;
        out.push((Camera::look_at(eye(az, 0.3), center, Vec3::z(), fx, size, size), Split::Test));
    }
    out
}

/// Renders the target building into a dataset.
pub fn dataset(n_train: usize, n_test: usize, size: u32) -> Dataset {
    let scene = target_scene(1);
    let views = cameras(n_train, n_test, size)
        .into_iter()
        .enumerate()
        .map(|(k, (camera, split))| {
            let out = render(&scene, &camera, &RenderConfig::default()).expect("valid camera");
            View { camera, image: out.color, split, name: format!("view_{k:03}.png") }
        })
        .collect();
    Dataset::new(views).expect("consistent sizes")
}
