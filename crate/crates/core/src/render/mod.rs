//! CPU tile-based splatting: front-to-back alpha compositing of projected
//! Gaussians and its analytic adjoint.

use rayon::prelude::*;
use thiserror::Error;

use crate::assembly::{BaseAsset, Scene, Source, VarianceAsset};
use crate::splat::project::{self, ProjectForward, ScreenGrad};
use crate::splat::{quat_mul, sh, Camera, GaussianGrad, SplatError, Vec3};

/// Contributions below this are skipped, and footprints are bounded by it.
pub const MIN_CONTRIBUTION: f64 = 1.0 / 255.0;
/// Compositing stops once transmittance falls below this.
pub const MIN_TRANSMITTANCE: f64 = 1e-4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RenderError {
    #[error("invalid render config: {0}")]
    Config(String),
    #[error("backward called with a scene or camera that does not match the forward pass")]
    Mismatch,
    #[error(transparent)]
    Splat(#[from] SplatError),
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderConfig {
    pub tile_size: u32,
    pub background: Vec3,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self { tile_size: 16, background: Vec3::zeros() }
    }
}

/// Rendered image plus everything the backward pass needs.
pub struct RenderOutput {
    pub width: u32,
    pub height: u32,
    /// Row-major `H × W × 3`.
    pub color: Vec<f64>,
    /// Row-major `H × W`.
    pub alpha: Vec<f64>,
    /// Per tile, visible scene indices sorted front to back.
    pub tiles: Vec<Vec<u32>>,
    /// Per pixel, the number of splats that were composited.
    pub contributors: Vec<u32>,
    tile_size: u32,
    tiles_x: u32,
    background: Vec3,
    projected: Vec<Option<ProjectForward>>,
    fingerprint: u64,
    camera: Camera,
}

impl RenderOutput {
    pub fn pixel(&self, x: u32, y: u32) -> Vec3 {
        let o = 3 * (y * self.width + x) as usize;
        Vec3::new(self.color[o], self.color[o + 1], self.color[o + 2])
    }

    /// Number of scene entries that survived culling.
    pub fn visible_count(&self) -> usize {
        self.projected.iter().filter(|p| p.is_some()).count()
    }

    pub fn to_rgb8(&self) -> image::RgbImage {
        let bytes = self.color.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
        image::RgbImage::from_raw(self.width, self.height, bytes).expect("buffer size")
    }
}

/// Per-entry gradients of a scalar loss, plus screen-space mean gradients
/// (pixels) used by densification.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneGradients {
    pub grads: Vec<GaussianGrad>,
    pub mean2d: Vec<[f64; 2]>,
    pub visible: Vec<bool>,
}

/// Gradients in asset space: one list per base asset and per variance asset.
#[derive(Clone, Debug, PartialEq)]
pub struct AssetGradients {
    pub base: Vec<Vec<GaussianGrad>>,
    pub variance: Vec<Vec<GaussianGrad>>,
}

/// Pixel-space half extents of the region where `α·G′ ≥ 1/255`.
fn footprint(p: &ProjectForward) -> Option<[f64; 2]> {
    let a = p.g2.alpha;
    if a < MIN_CONTRIBUTION {
        return None;
    }
    let r2 = 2.0 * (a / MIN_CONTRIBUTION).ln();
    Some([(r2 * p.g2.cov2d[(0, 0)]).sqrt(), (r2 * p.g2.cov2d[(1, 1)]).sqrt()])
}

/// Inclusive pixel range whose centers fall within `[m - h, m + h]`.
fn pixel_range(m: f64, h: f64, n: u32) -> Option<(u32, u32)> {
    let lo = (m - h - 0.5).ceil().max(0.0);
    let hi = (m + h - 0.5).floor().min(n as f64 - 1.0);
    (lo <= hi).then_some((lo as u32, hi as u32))
}

struct Splat {
    mean: [f64; 2],
    conic: [f64; 3],
    color: [f64; 3],
    alpha: f64,
    /// Exponents below this cannot reach `MIN_CONTRIBUTION` (with slack).
    min_power: f64,
    /// Footprint half extents (with slack); zero contribution outside.
    half: [f64; 2],
}

impl Splat {
    fn new(p: &ProjectForward) -> Self {
        Self {
            mean: [p.g2.mean2d.x, p.g2.mean2d.y],
            conic: p.g2.conic(),
            color: [p.g2.color.x, p.g2.color.y, p.g2.color.z],
            alpha: p.g2.alpha,
            min_power: (MIN_CONTRIBUTION / p.g2.alpha).ln() - 1e-9,
            half: footprint(p).map_or([-1.0; 2], |[hx, hy]| [hx + 1e-6, hy + 1e-6]),
        }
    }

    /// `(σ, Gaussian falloff, dx, dy)` at a pixel center, or `None` when
    /// `σ < MIN_CONTRIBUTION`.
    #[inline]
    fn eval(&self, px: f64, py: f64) -> Option<(f64, f64, f64, f64)> {
        let dx = px - self.mean[0];
        let dy = py - self.mean[1];
        if dx.abs() > self.half[0] {
            return None;
        }
        let [a, b, c] = self.conic;
        let power = -0.5 * (a * dx * dx + c * dy * dy) - b * dx * dy;
        if power < self.min_power {
            return None;
        }
        let g = power.exp();
        let sigma = self.alpha * g;
        (sigma >= MIN_CONTRIBUTION).then_some((sigma, g, dx, dy))
    }
}

/// Tile entries whose footprint spans the pixel row at `py`, in tile order,
/// with their position in the tile list.
fn row_entries<'a>(list: &[u32], splats: &'a [Option<Splat>], py: f64, out: &mut Vec<(usize, &'a Splat)>) {
    out.clear();
    for (k, &i) in list.iter().enumerate() {
        let s = splats[i as usize].as_ref().unwrap();
        if (py - s.mean[1]).abs() <= s.half[1] {
            out.push((k, s));
        }
    }
}

fn check_config(cam: &Camera, config: &RenderConfig) -> Result<(), RenderError> {
    if cam.width == 0 || cam.height == 0 {
        return Err(RenderError::Config(format!("image size {}×{}", cam.width, cam.height)));
    }
    if config.tile_size == 0 {
        return Err(RenderError::Config("tile size must be positive".into()));
    }
    Ok(())
}

/// Renders `scene` from `cam`. Each pixel composites
/// `C = Σ c_i σ_i Π_{j<i} (1 − σ_j) + T·background` with `σ_i = α_i G′_i`
/// over Gaussians sorted by camera depth (ties by scene index).
pub fn render(scene: &Scene, cam: &Camera, config: &RenderConfig) -> Result<RenderOutput, RenderError> {
    check_config(cam, config)?;
    for g in &scene.gaussians {
        if !g.is_finite() {
            return Err(SplatError::InvalidParameter("non-finite Gaussian in scene".into()).into());
        }
        if sh::degree_for_count(g.sh.len()).is_none() {
            return Err(SplatError::ShCount(g.sh.len()).into());
        }
    }
    let (w, h, ts) = (cam.width, cam.height, config.tile_size);
    let tiles_x = w.div_ceil(ts);
    let tiles_y = h.div_ceil(ts);

    let projected: Vec<Option<ProjectForward>> = scene
        .gaussians
        .par_iter()
        .enumerate()
        .map(|(i, g)| project::forward(g, cam, scene.sh_frame(i)))
        .collect();

    let mut order: Vec<(f64, u32)> = projected
        .iter()
        .enumerate()
        .filter_map(|(i, p)| p.as_ref().map(|p| (p.g2.depth, i as u32)))
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let mut tiles: Vec<Vec<u32>> = vec![Vec::new(); (tiles_x * tiles_y) as usize];
    for &(_, i) in &order {
        let p = projected[i as usize].as_ref().unwrap();
        let Some([hx, hy]) = footprint(p) else { continue };
        let (Some((x0, x1)), Some((y0, y1))) =
            (pixel_range(p.g2.mean2d.x, hx, w), pixel_range(p.g2.mean2d.y, hy, h))
        else {
            continue;
        };
        for ty in y0 / ts..=y1 / ts {
            for tx in x0 / ts..=x1 / ts {
                tiles[(ty * tiles_x + tx) as usize].push(i);
            }
        }
    }

    let splats: Vec<Option<Splat>> = projected.iter().map(|p| p.as_ref().map(Splat::new)).collect();
    let bg = config.background;
    let tile_pixels: Vec<Vec<(u32, u32, [f64; 4])>> = tiles
        .par_iter()
        .enumerate()
        .map(|(t, list)| {
            let (tx, ty) = (t as u32 % tiles_x, t as u32 / tiles_x);
            let mut out = Vec::with_capacity((ts * ts) as usize);
            let mut row = Vec::new();
            for y in ty * ts..((ty + 1) * ts).min(h) {
                row_entries(list, &splats, y as f64 + 0.5, &mut row);
                for x in tx * ts..((tx + 1) * ts).min(w) {
                    let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                    let mut t_acc = 1.0;
                    let mut c = [0.0; 3];
                    let mut n = 0;
                    for &(_, s) in &row {
                        let Some((sigma, ..)) = s.eval(px, py) else { continue };
                        for k in 0..3 {
                            c[k] += t_acc * sigma * s.color[k];
                        }
                        n += 1;
                        t_acc *= 1.0 - sigma;
                        if t_acc < MIN_TRANSMITTANCE {
                            break;
                        }
                    }
                    out.push((y * w + x, n, [c[0] + t_acc * bg.x, c[1] + t_acc * bg.y, c[2] + t_acc * bg.z, 1.0 - t_acc]));
                }
            }
            out
        })
        .collect();

    let mut color = vec![0.0; (3 * w * h) as usize];
    let mut alpha = vec![0.0; (w * h) as usize];
    let mut contributors = vec![0; (w * h) as usize];
    for (o, n, px) in tile_pixels.into_iter().flatten() {
        let o = o as usize;
        color[3 * o..3 * o + 3].copy_from_slice(&px[..3]);
        alpha[o] = px[3];
        contributors[o] = n;
    }
    Ok(RenderOutput {
        width: w,
        height: h,
        color,
        alpha,
        tiles,
        contributors,
        tile_size: ts,
        tiles_x,
        background: bg,
        projected,
        fingerprint: scene.fingerprint(),
        camera: cam.clone(),
    })
}

/// Gradients of a loss w.r.t. every scene parameter given `d_color`
/// (`dL/dC`, same layout as [`RenderOutput::color`]).
pub fn render_backward(
    scene: &Scene,
    cam: &Camera,
    out: &RenderOutput,
    d_color: &[f64],
) -> Result<SceneGradients, RenderError> {
    if scene.len() != out.projected.len() || scene.fingerprint() != out.fingerprint || *cam != out.camera {
        return Err(RenderError::Mismatch);
    }
    if d_color.len() != out.color.len() {
        return Err(RenderError::Config(format!("gradient has {} values, image has {}", d_color.len(), out.color.len())));
    }
    let (w, h, ts) = (out.width, out.height, out.tile_size);
    let splats: Vec<Option<Splat>> = out.projected.iter().map(|p| p.as_ref().map(Splat::new)).collect();
    let bg = out.background;

    // tile-private screen-space gradients, indexed like the tile list
    let tile_grads: Vec<Vec<ScreenGrad>> = out
        .tiles
        .par_iter()
        .enumerate()
        .map(|(t, list)| {
            let mut grads = vec![ScreenGrad::default(); list.len()];
            if list.is_empty() {
                return grads;
            }
            let (tx, ty) = (t as u32 % out.tiles_x, t as u32 / out.tiles_x);
            // (position in tile list, σ, falloff, dx, dy, transmittance before)
            let mut chain: Vec<(usize, f64, f64, f64, f64, f64)> = Vec::new();
            let mut row = Vec::new();
            for y in ty * ts..((ty + 1) * ts).min(h) {
                row_entries(list, &splats, y as f64 + 0.5, &mut row);
                for x in tx * ts..((tx + 1) * ts).min(w) {
                    let o = 3 * (y * w + x) as usize;
                    let dc = [d_color[o], d_color[o + 1], d_color[o + 2]];
                    if dc == [0.0; 3] {
                        continue;
                    }
                    let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                    chain.clear();
                    let mut t_acc = 1.0;
                    for &(k, s) in &row {
                        let Some((sigma, g, dx, dy)) = s.eval(px, py) else { continue };
                        chain.push((k, sigma, g, dx, dy, t_acc));
                        t_acc *= 1.0 - sigma;
                        if t_acc < MIN_TRANSMITTANCE {
                            break;
                        }
                    }
                    // color seen behind each splat, starting from the background
                    let mut behind = [bg.x, bg.y, bg.z];
                    for &(k, sigma, g, dx, dy, t_before) in chain.iter().rev() {
                        let s = splats[list[k] as usize].as_ref().unwrap();
                        let mut d_sigma = 0.0;
                        let gr = &mut grads[k];
                        for c in 0..3 {
                            gr.color[c] += t_before * sigma * dc[c];
                            d_sigma += t_before * (s.color[c] - behind[c]) * dc[c];
                            behind[c] = sigma * s.color[c] + (1.0 - sigma) * behind[c];
                        }
                        gr.alpha += d_sigma * g;
                        let d_power = d_sigma * sigma;
                        let [a, b, c] = s.conic;
                        gr.conic[0] += -0.5 * dx * dx * d_power;
                        gr.conic[1] += -dx * dy * d_power;
                        gr.conic[2] += -0.5 * dy * dy * d_power;
                        gr.mean2d[0] += (a * dx + b * dy) * d_power;
                        gr.mean2d[1] += (b * dx + c * dy) * d_power;
                    }
                }
            }
            grads
        })
        .collect();

    let mut screen = vec![ScreenGrad::default(); scene.len()];
    for (list, grads) in out.tiles.iter().zip(&tile_grads) {
        for (&i, g) in list.iter().zip(grads) {
            screen[i as usize].add(g);
        }
    }
    let n_sh = |i: usize| scene.gaussians[i].sh.len();
    let grads: Vec<GaussianGrad> = (0..scene.len())
        .into_par_iter()
        .map(|i| match &out.projected[i] {
            Some(p) => project::backward(&scene.gaussians[i], cam, scene.sh_frame(i), p, &screen[i]),
            None => GaussianGrad::zeros(n_sh(i)),
        })
        .collect();
    Ok(SceneGradients {
        grads,
        mean2d: screen.iter().map(|s| s.mean2d).collect(),
        visible: out.projected.iter().map(Option::is_some).collect(),
    })
}

/// Pulls scene gradients back through each entry's instance transform and
/// sums them into the shared base assets and the per-instance variance assets.
pub fn accumulate_shared(
    grads: &SceneGradients,
    scene: &Scene,
    bases: &[BaseAsset],
    variances: &[VarianceAsset],
) -> AssetGradients {
    let zeros = |gs: &[crate::splat::Gaussian3D]| gs.iter().map(|g| GaussianGrad::zeros(g.sh.len())).collect::<Vec<_>>();
    let mut out = AssetGradients {
        base: bases.iter().map(|b| zeros(&b.gaussians)).collect(),
        variance: variances.iter().map(|v| zeros(&v.gaussians)).collect(),
    };
    accumulate_shared_into(grads, scene, &mut out.base, &mut out.variance);
    out
}

/// [`accumulate_shared`] adding into caller-owned, correctly sized buffers.
pub fn accumulate_shared_into(
    grads: &SceneGradients,
    scene: &Scene,
    base: &mut [Vec<GaussianGrad>],
    variance: &mut [Vec<GaussianGrad>],
) {
    for (g, p) in grads.grads.iter().zip(&scene.provenance) {
        let t = &scene.instances[p.instance];
        let q = scene.instance_quat(p.instance);
        // µ′ = R (S ⊙ µ) + T  →  dµ = S ⊙ (Rᵀ dµ′);  q′ = q_R ⊗ q  →  dq = q̄_R ⊗ dq′
        let pulled = GaussianGrad {
            position: (t.rotation.transpose() * g.position).component_mul(&t.scale),
            rotation: quat_mul(&[q[0], -q[1], -q[2], -q[3]], &g.rotation),
            log_scale: g.log_scale,
            opacity_logit: g.opacity_logit,
            sh: g.sh.clone(),
        };
        let slot = match p.source {
            Source::Base => &mut base[p.asset][p.local],
            Source::Variance(v) => &mut variance[v][p.local],
        };
        slot.add_assign(&pulled);
    }
}
