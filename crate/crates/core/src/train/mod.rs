//! Fitting base and variance assets (or a flat, provenance-free baseline)
//! to posed images.

mod control;
mod dataset;
pub mod loss;

pub use control::{
    bbox_clamp, densify_and_prune, exceeds_soft_box, reset_opacity, three_sigma_half_extent, ClampReport, DensifyParams,
    DensifyReport, SPLIT_SCALE_DIVISOR,
};
pub use dataset::{Dataset, Split, View, CAMERAS_FILE};
pub use loss::{loss, psnr, ssim};

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assembly::{assemble, init_assets, AssemblyError, BaseAsset, Checkpoint, Scene, Source, VarianceAsset};
use crate::grammar::{
    expand, natural_dims, serialize, AssetSpec, GrammarError, InstanceTransform, Instantiation, InstantiationList,
    Manifest, ProceduralCode,
};
use crate::render::{accumulate_shared_into, render, render_backward, RenderConfig, RenderError, SceneGradients};
use crate::splat::{sh, Gaussian3D, GaussianGrad, Vec3, FIXED_PARAMS};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("image shape mismatch: {0}")]
    Shape(String),
    #[error("dataset error: {0}")]
    Dataset(String),
    #[error(transparent)]
    Grammar(#[from] GrammarError),
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error("non-finite {what} at iteration {iteration} (view `{view}`)")]
    NonFinite { iteration: usize, view: String, what: String, snapshot: Box<Checkpoint> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearningRates {
    /// Initial position rate, multiplied by the camera extent.
    pub position: f64,
    /// Position rate reached (log-linearly) at the last iteration.
    pub position_final: f64,
    pub sh_dc: f64,
    pub sh_rest: f64,
    pub opacity: f64,
    pub scale: f64,
    pub rotation: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self {
            position: 1.6e-4,
            position_final: 1.6e-6,
            sh_dc: 2.5e-3,
            sh_rest: 2.5e-3 / 20.0,
            opacity: 5e-2,
            scale: 5e-3,
            rotation: 1e-3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub iterations: usize,
    pub densify_from: usize,
    pub densify_until: usize,
    pub densify_every: usize,
    /// 0 disables opacity resets.
    pub opacity_reset_every: usize,
    pub clamp_every: usize,
    /// Disables the bounding-box clamp entirely (flat baselines never clamp).
    pub bbox_clamp: bool,
    pub lambda_ssim: f64,
    pub soft_margin_m: f64,
    #[serde(rename = "N_init", alias = "n_init")]
    pub n_init: usize,
    /// Gaussians per variance asset; 0 disables variance assets.
    pub variance_points: usize,
    pub sh_degree: usize,
    pub lr: LearningRates,
    pub densify_grad_threshold: f64,
    /// Split/clone size boundary as a fraction of the camera extent.
    pub percent_dense: f64,
    pub prune_opacity: f64,
    /// Test-split evaluation period; the last iteration is always evaluated.
    /// 0 evaluates only at the end.
    pub eval_every: usize,
    pub background: [f64; 3],
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 30_000,
            densify_from: 500,
            densify_until: 15_000,
            densify_every: 100,
            opacity_reset_every: 3000,
            clamp_every: 100,
            bbox_clamp: true,
            lambda_ssim: 0.2,
            soft_margin_m: 0.2,
            n_init: 10_000,
            variance_points: 50,
            sh_degree: 1,
            lr: LearningRates::default(),
            densify_grad_threshold: 2e-4,
            percent_dense: 0.01,
            prune_opacity: 0.005,
            eval_every: 1000,
            background: [0.0; 3],
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let fail = |m: &str| Err(TrainError::Config(m.into()));
        if self.clamp_every < 1 {
            return fail("clamp_every must be ≥ 1");
        }
        if !(0.0..=1.0).contains(&self.lambda_ssim) {
            return fail("lambda_ssim must lie in [0, 1]");
        }
        if !(self.soft_margin_m >= 0.0) {
            return fail("soft_margin_m must be ≥ 0");
        }
        if self.densify_every < 1 {
            return fail("densify_every must be ≥ 1");
        }
        if self.sh_degree > 2 {
            return fail("sh_degree must be 0, 1 or 2");
        }
        let lr = &self.lr;
        if [lr.position, lr.position_final, lr.sh_dc, lr.sh_rest, lr.opacity, lr.scale, lr.rotation]
            .iter()
            .any(|v| !(v.is_finite() && *v >= 0.0))
        {
            return fail("learning rates must be finite and non-negative");
        }
        if lr.position > 0.0 && lr.position_final <= 0.0 {
            return fail("position_final must be positive when position is");
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, TrainError> {
        let c: Self = serde_json::from_str(text).map_err(|e| TrainError::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }
}

/// One line of the metrics log. Clamp counts are `null` on iterations
/// where the clamp is not scheduled.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub iter: usize,
    pub loss: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub psnr: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ssim: Option<f64>,
    pub n_gaussians: usize,
    pub clamp_scale_count: Option<usize>,
    pub clamp_pos_count: Option<usize>,
}

pub fn write_metrics(out: &mut impl Write, records: &[MetricRecord]) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut *out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Result of a fit: the stored model, the exact scene it renders, and the log.
#[derive(Clone, Debug)]
pub struct Fitted {
    pub checkpoint: Checkpoint,
    pub scene: Scene,
    pub metrics: Vec<MetricRecord>,
    /// Mean test PSNR/SSIM before the first step (absent without test views).
    pub initial_eval: Option<(f64, f64)>,
    pub final_eval: Option<(f64, f64)>,
}

enum Model {
    Shared {
        manifest: Manifest,
        list: InstantiationList,
        code: Option<String>,
        bases: Vec<BaseAsset>,
        variances: Vec<VarianceAsset>,
    },
    Flat {
        frames: Vec<InstanceTransform>,
        sets: Vec<Vec<Gaussian3D>>,
    },
}

impl Model {
    fn n_sets(&self) -> usize {
        match self {
            Model::Shared { bases, variances, .. } => bases.len() + variances.len(),
            Model::Flat { sets, .. } => sets.len(),
        }
    }

    fn set(&self, k: usize) -> &Vec<Gaussian3D> {
        match self {
            Model::Shared { bases, variances, .. } => {
                if k < bases.len() {
                    &bases[k].gaussians
                } else {
                    &variances[k - bases.len()].gaussians
                }
            }
            Model::Flat { sets, .. } => &sets[k],
        }
    }

    fn set_mut(&mut self, k: usize) -> &mut Vec<Gaussian3D> {
        match self {
            Model::Shared { bases, variances, .. } => {
                let nb = bases.len();
                if k < nb {
                    &mut bases[k].gaussians
                } else {
                    &mut variances[k - nb].gaussians
                }
            }
            Model::Flat { sets, .. } => &mut sets[k],
        }
    }

    fn clamp_spec(&self, k: usize) -> Option<AssetSpec> {
        match self {
            Model::Shared { manifest, bases, variances, .. } => {
                if k < bases.len() {
                    Some(bases[k].spec.clone())
                } else {
                    manifest.get(&variances[k - bases.len()].owner_asset_id).cloned()
                }
            }
            Model::Flat { .. } => None,
        }
    }

    fn set_index(&self, source: Source, asset: usize) -> usize {
        match (self, source) {
            (Model::Shared { bases, .. }, Source::Variance(v)) => bases.len() + v,
            _ => asset,
        }
    }

    fn gaussian_count(&self) -> usize {
        (0..self.n_sets()).map(|k| self.set(k).len()).sum()
    }

    fn scene(&self) -> Result<Scene, TrainError> {
        Ok(match self {
            Model::Shared { list, bases, variances, .. } => assemble(list, bases, variances)?,
            Model::Flat { frames, sets } => Scene::from_sets(sets, frames),
        })
    }

    fn pull_back(&self, grads: &SceneGradients, scene: &Scene) -> Vec<Vec<GaussianGrad>> {
        let mut out: Vec<Vec<GaussianGrad>> =
            (0..self.n_sets()).map(|k| self.set(k).iter().map(|g| GaussianGrad::zeros(g.sh.len())).collect()).collect();
        match self {
            Model::Shared { bases, .. } => {
                let (b, v) = out.split_at_mut(bases.len());
                accumulate_shared_into(grads, scene, b, v);
            }
            Model::Flat { .. } => {
                for (g, p) in grads.grads.iter().zip(&scene.provenance) {
                    out[p.asset][p.local].add_assign(g);
                }
            }
        }
        out
    }

    fn checkpoint(&self, sh_degree: usize) -> Checkpoint {
        match self {
            Model::Shared { manifest, list, code, bases, variances } => Checkpoint {
                manifest: manifest.clone(),
                instantiations: list.clone(),
                code: code.clone(),
                sh_degree,
                bases: bases.clone(),
                variances: variances.clone(),
            },
            Model::Flat { frames, sets } => flat_checkpoint(sets, frames, sh_degree),
        }
    }
}

/// Id of the single asset holding a flat model.
pub const FLAT_ASSET_ID: &str = "scene";

/// Packs independent world-space sets into a single-asset checkpoint with
/// SH re-expressed in the world frame.
fn flat_checkpoint(sets: &[Vec<Gaussian3D>], frames: &[InstanceTransform], sh_degree: usize) -> Checkpoint {
    let mut gaussians = Vec::new();
    for (set, frame) in sets.iter().zip(frames) {
        for g in set {
            let mut w = g.clone();
            w.sh = sh::rotate(&g.sh, &frame.rotation);
            gaussians.push(w);
        }
    }
    let (mut lo, mut hi) = (Vec3::repeat(-0.5), Vec3::repeat(0.5));
    if !gaussians.is_empty() {
        lo = Vec3::repeat(f64::INFINITY);
        hi = Vec3::repeat(f64::NEG_INFINITY);
        for g in &gaussians {
            lo = lo.inf(&g.position);
            hi = hi.sup(&g.position);
        }
        lo.add_scalar_mut(-1e-3);
        hi.add_scalar_mut(1e-3);
    }
    let ext = hi - lo;
    let mid = (hi + lo) / 2.0;
    let spec = AssetSpec::new(FLAT_ASSET_ID, [ext.x, ext.y, ext.z], [mid.x, mid.y, mid.z]);
    Checkpoint {
        manifest: Manifest::new(vec![spec.clone()]).expect("valid single asset"),
        instantiations: InstantiationList {
            entries: vec![Instantiation {
                asset_id: FLAT_ASSET_ID.into(),
                transform: InstanceTransform::identity(),
                variance_index: 0,
            }],
        },
        code: None,
        sh_degree,
        bases: vec![BaseAsset { spec, gaussians }],
        variances: Vec::new(),
    }
}

/// `1.1 ×` the largest distance of a camera center from their mean.
pub fn camera_extent(views: &[&View]) -> f64 {
    if views.is_empty() {
        return 1.0;
    }
    let centers: Vec<Vec3> = views.iter().map(|v| v.camera.center()).collect();
    let mean = centers.iter().sum::<Vec3>() / centers.len() as f64;
    let r = centers.iter().map(|c| (c - mean).norm()).fold(0.0, f64::max) * 1.1;
    if r > 1e-9 {
        r
    } else {
        1.0
    }
}

fn lr_table(config: &TrainConfig, iteration: usize, extent: f64, n_sh: usize) -> Vec<f64> {
    let lr = &config.lr;
    let pos = if lr.position > 0.0 {
        let t = if config.iterations > 1 { (iteration - 1) as f64 / (config.iterations - 1) as f64 } else { 0.0 };
        (lr.position.ln() * (1.0 - t) + lr.position_final.ln() * t).exp() * extent
    } else {
        0.0
    };
    let mut table = vec![pos, pos, pos, lr.rotation, lr.rotation, lr.rotation, lr.rotation, lr.scale, lr.scale, lr.scale, lr.opacity];
    table.extend([lr.sh_dc; 3]);
    table.extend(std::iter::repeat(lr.sh_rest).take(3 * (n_sh - 1)));
    table
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-15;

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    fn new(len: usize) -> Self {
        Self { m: vec![0.0; len], v: vec![0.0; len] }
    }

    fn step(&mut self, set: &mut [Gaussian3D], grads: &[GaussianGrad], lr: &[f64], t: usize) {
        let p = lr.len();
        let bc1 = 1.0 - ADAM_BETA1.powi(t as i32);
        let bc2 = 1.0 - ADAM_BETA2.powi(t as i32);
        let mut params = vec![0.0; p];
        for (i, (g, d)) in set.iter_mut().zip(grads).enumerate() {
            g.write_params(&mut params);
            for (k, dv) in d.flat().into_iter().enumerate() {
                let o = i * p + k;
                self.m[o] = ADAM_BETA1 * self.m[o] + (1.0 - ADAM_BETA1) * dv;
                self.v[o] = ADAM_BETA2 * self.v[o] + (1.0 - ADAM_BETA2) * dv * dv;
                params[k] -= lr[k] * (self.m[o] / bc1) / ((self.v[o] / bc2).sqrt() + ADAM_EPS);
            }
            g.read_params(&params);
        }
    }

    fn remap(&mut self, lineage: &[Option<usize>], p: usize) {
        let mut m = vec![0.0; lineage.len() * p];
        let mut v = vec![0.0; lineage.len() * p];
        for (i, l) in lineage.iter().enumerate() {
            if let Some(j) = l {
                m[i * p..(i + 1) * p].copy_from_slice(&self.m[j * p..(j + 1) * p]);
                v[i * p..(i + 1) * p].copy_from_slice(&self.v[j * p..(j + 1) * p]);
            }
        }
        self.m = m;
        self.v = v;
    }

    fn zero_slot(&mut self, i: usize, p: usize, k: usize) {
        self.m[i * p + k] = 0.0;
        self.v[i * p + k] = 0.0;
    }
}

fn evaluate(scene: &Scene, views: &[&View], rc: &RenderConfig) -> Result<Option<(f64, f64)>, TrainError> {
    if views.is_empty() {
        return Ok(None);
    }
    let (mut p, mut s) = (0.0, 0.0);
    for v in views {
        let out = render(scene, &v.camera, rc)?;
        p += psnr(&out.color, &v.image)?;
        s += ssim(&out.color, &v.image, v.camera.width as usize, v.camera.height as usize)?;
    }
    Ok(Some((p / views.len() as f64, s / views.len() as f64)))
}

fn run(
    model: &mut Model,
    data: &Dataset,
    config: &TrainConfig,
    observer: &mut dyn FnMut(&MetricRecord),
) -> Result<(Vec<MetricRecord>, Option<(f64, f64)>, Option<(f64, f64)>), TrainError> {
    config.validate()?;
    let train = data.train_views();
    if train.is_empty() {
        return Err(TrainError::Dataset("no training views".into()));
    }
    let test = data.test_views();
    let extent = camera_extent(&train);
    let rc = RenderConfig { background: Vec3::from(config.background), ..Default::default() };
    let n_sh = sh::coeff_count(config.sh_degree);
    let p = FIXED_PARAMS + 3 * n_sh;
    for k in 0..model.n_sets() {
        if model.set(k).iter().any(|g| g.sh.len() != n_sh) {
            return Err(TrainError::Config(format!("model SH does not match sh_degree {}", config.sh_degree)));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut adam: Vec<Adam> = (0..model.n_sets()).map(|k| Adam::new(model.set(k).len() * p)).collect();
    let fresh_stats = |model: &Model| -> Vec<(Vec<f64>, Vec<u32>)> {
        (0..model.n_sets()).map(|k| (vec![0.0; model.set(k).len()], vec![0; model.set(k).len()])).collect()
    };
    let mut stats = fresh_stats(model);
    let densify = DensifyParams {
        grad_threshold: config.densify_grad_threshold,
        size_threshold: config.percent_dense * extent,
        prune_opacity: config.prune_opacity,
    };

    let initial = evaluate(&model.scene()?, &test, &rc)?;
    let mut last_eval = initial;
    let mut metrics = Vec::with_capacity(config.iterations);
    let mut order: Vec<usize> = Vec::new();
    for t in 1..=config.iterations {
        if order.is_empty() {
            order = (0..train.len()).collect();
            order.shuffle(&mut rng);
            order.reverse();
        }
        let view = train[order.pop().unwrap()];
        let cam = &view.camera;
        let scene = model.scene()?;
        let out = render(&scene, cam, &rc)?;
        let (l, d_img) = loss(&out.color, &view.image, cam.width as usize, cam.height as usize, config.lambda_ssim)?;
        let non_finite = |what: &str, model: &Model| TrainError::NonFinite {
            iteration: t,
            view: view.name.clone(),
            what: what.into(),
            snapshot: Box::new(model.checkpoint(config.sh_degree)),
        };
        if !l.is_finite() {
            return Err(non_finite("loss", model));
        }
        let sg = render_backward(&scene, cam, &out, &d_img)?;
        let grads = model.pull_back(&sg, &scene);
        if grads.iter().flatten().any(|g| !g.is_finite()) {
            return Err(non_finite("gradient", model));
        }

        if t <= config.densify_until {
            let (hw, hh) = (cam.width as f64 / 2.0, cam.height as f64 / 2.0);
            for (i, prov) in scene.provenance.iter().enumerate() {
                if sg.visible[i] {
                    let [gx, gy] = sg.mean2d[i];
                    let s = model.set_index(prov.source, prov.asset);
                    stats[s].0[prov.local] += ((gx * hw).powi(2) + (gy * hh).powi(2)).sqrt();
                    stats[s].1[prov.local] += 1;
                }
            }
        }

        let lr = lr_table(config, t, extent, n_sh);
        for (k, opt) in adam.iter_mut().enumerate() {
            opt.step(model.set_mut(k), &grads[k], &lr, t);
        }

        if t <= config.densify_until {
            if t > config.densify_from && t % config.densify_every == 0 {
                for (k, opt) in adam.iter_mut().enumerate() {
                    let mean: Vec<f64> =
                        stats[k].0.iter().zip(&stats[k].1).map(|(a, &n)| if n > 0 { a / n as f64 } else { 0.0 }).collect();
                    let (_, lineage) = densify_and_prune(model.set_mut(k), &mean, &densify, &mut rng);
                    opt.remap(&lineage, p);
                }
                stats = fresh_stats(model);
            }
            if config.opacity_reset_every > 0 && t % config.opacity_reset_every == 0 {
                for (k, opt) in adam.iter_mut().enumerate() {
                    for i in reset_opacity(model.set_mut(k), 0.01) {
                        opt.zero_slot(i, p, 10);
                    }
                }
            }
        }

        let clamp = if config.bbox_clamp && t % config.clamp_every == 0 {
            let mut report = ClampReport::default();
            for k in 0..model.n_sets() {
                if let Some(spec) = model.clamp_spec(k) {
                    report.add(bbox_clamp(model.set_mut(k), &spec, config.soft_margin_m));
                }
            }
            Some(report)
        } else {
            None
        };

        let eval = if t == config.iterations || (config.eval_every > 0 && t % config.eval_every == 0) {
            let e = evaluate(&model.scene()?, &test, &rc)?;
            last_eval = e;
            e
        } else {
            None
        };
        let record = MetricRecord {
            iter: t,
            loss: l,
            psnr: eval.map(|e| e.0),
            ssim: eval.map(|e| e.1),
            n_gaussians: model.gaussian_count(),
            clamp_scale_count: clamp.map(|c| c.scale),
            clamp_pos_count: clamp.map(|c| c.position),
        };
        observer(&record);
        metrics.push(record);
    }
    Ok((metrics, initial, last_eval))
}

/// The building's dimensions: the code's `dims`, or its minimum footprint
/// at the written level counts.
pub fn code_dims(code: &ProceduralCode, manifest: &Manifest) -> Result<[f64; 3], GrammarError> {
    match code.dims {
        Some(d) => Ok(d),
        None => natural_dims(code, manifest),
    }
}

/// Uniformly initialized base assets (and variance assets when
/// `variance_points > 0`), seeded from `config.seed`.
pub fn initial_assets(
    list: &InstantiationList,
    manifest: &Manifest,
    config: &TrainConfig,
) -> Result<(Vec<BaseAsset>, Vec<VarianceAsset>), TrainError> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let variance = (config.variance_points > 0).then_some(config.variance_points);
    Ok(init_assets(manifest, list, config.n_init, variance, config.sh_degree, &mut rng)?)
}

/// Expands `code`, initializes assets and fits them to `dataset`.
pub fn train(dataset: &Dataset, code: &ProceduralCode, manifest: &Manifest, config: &TrainConfig) -> Result<Fitted, TrainError> {
    train_observed(dataset, code, manifest, config, &mut |_| {})
}

pub fn train_observed(
    dataset: &Dataset,
    code: &ProceduralCode,
    manifest: &Manifest,
    config: &TrainConfig,
    observer: &mut dyn FnMut(&MetricRecord),
) -> Result<Fitted, TrainError> {
    config.validate()?;
    let list = expand(code, manifest, code_dims(code, manifest)?)?;
    let (bases, variances) = initial_assets(&list, manifest, config)?;
    train_from(dataset, manifest, list, Some(serialize(code)), bases, variances, config, observer)
}

/// Fits given initial assets placed by `list`. Every instance renders from
/// the same shared parameters; gradients are summed back into them.
#[allow(clippy::too_many_arguments)]
pub fn train_from(
    dataset: &Dataset,
    manifest: &Manifest,
    list: InstantiationList,
    code: Option<String>,
    bases: Vec<BaseAsset>,
    variances: Vec<VarianceAsset>,
    config: &TrainConfig,
    observer: &mut dyn FnMut(&MetricRecord),
) -> Result<Fitted, TrainError> {
    let mut model = Model::Shared { manifest: manifest.clone(), list, code, bases, variances };
    let (metrics, initial_eval, final_eval) = run(&mut model, dataset, config, observer)?;
    Ok(Fitted {
        checkpoint: model.checkpoint(config.sh_degree),
        scene: model.scene()?,
        metrics,
        initial_eval,
        final_eval,
    })
}

/// Fits every Gaussian of `init` independently (no sharing, no clamp). Entries
/// are grouped by instance so SH stays in each instance's frame.
pub fn fit_baseline(dataset: &Dataset, init: &Scene, config: &TrainConfig) -> Result<Fitted, TrainError> {
    fit_baseline_observed(dataset, init, config, &mut |_| {})
}

pub fn fit_baseline_observed(
    dataset: &Dataset,
    init: &Scene,
    config: &TrainConfig,
    observer: &mut dyn FnMut(&MetricRecord),
) -> Result<Fitted, TrainError> {
    let mut slot = vec![usize::MAX; init.instances.len()];
    let mut frames = Vec::new();
    let mut sets: Vec<Vec<Gaussian3D>> = Vec::new();
    for (g, p) in init.gaussians.iter().zip(&init.provenance) {
        if slot[p.instance] == usize::MAX {
            slot[p.instance] = sets.len();
            sets.push(Vec::new());
            frames.push(init.instances[p.instance].clone());
        }
        sets[slot[p.instance]].push(g.clone());
    }
    let config = TrainConfig { bbox_clamp: false, ..config.clone() };
    let mut model = Model::Flat { frames, sets };
    let (metrics, initial_eval, final_eval) = run(&mut model, dataset, &config, observer)?;
    Ok(Fitted {
        checkpoint: model.checkpoint(config.sh_degree),
        scene: model.scene()?,
        metrics,
        initial_eval,
        final_eval,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_defaults_and_validation() {
        let c = TrainConfig::default();
        assert_eq!((c.iterations, c.densify_until, c.clamp_every, c.n_init), (30_000, 15_000, 100, 10_000));
        assert_eq!((c.lambda_ssim, c.soft_margin_m), (0.2, 0.2));
        assert!(c.validate().is_ok());
        assert!(TrainConfig { clamp_every: 0, ..c.clone() }.validate().is_err());
        assert!(TrainConfig { lambda_ssim: 1.5, ..c.clone() }.validate().is_err());
        assert!(TrainConfig { soft_margin_m: -0.1, ..c.clone() }.validate().is_err());
        let parsed = TrainConfig::from_json(r#"{"iterations": 5, "N_init": 300, "lr": {"opacity": 0.01}}"#).unwrap();
        assert_eq!((parsed.iterations, parsed.n_init, parsed.lr.opacity, parsed.lr.scale), (5, 300, 0.01, 5e-3));
        assert!(TrainConfig::from_json(r#"{"iterations": 5, "bogus": 1}"#).is_err());
    }

    #[test]
    fn position_rate_decays_log_linearly() {
        let c = TrainConfig { iterations: 101, ..Default::default() };
        let first = lr_table(&c, 1, 2.0, 4);
        let mid = lr_table(&c, 51, 2.0, 4);
        let last = lr_table(&c, 101, 2.0, 4);
        assert!((first[0] - 3.2e-4).abs() < 1e-15);
        assert!((last[0] - 3.2e-6).abs() < 1e-15);
        assert!((mid[0] - 3.2e-5).abs() < 1e-15);
        assert_eq!(first.len(), FIXED_PARAMS + 12);
        assert_eq!(first[11], 2.5e-3);
        assert_eq!(first[14], 2.5e-3 / 20.0);
    }

    #[test]
    fn metric_record_json_shape() {
        let r = MetricRecord {
            iter: 100,
            loss: 0.5,
            psnr: None,
            ssim: None,
            n_gaussians: 7,
            clamp_scale_count: Some(1),
            clamp_pos_count: Some(0),
        };
        let s = serde_json::to_string(&r).unwrap();
        assert_eq!(s, r#"{"iter":100,"loss":0.5,"n_gaussians":7,"clamp_scale_count":1,"clamp_pos_count":0}"#);
        let off = MetricRecord { clamp_scale_count: None, clamp_pos_count: None, ..r };
        assert!(serde_json::to_string(&off).unwrap().contains(r#""clamp_scale_count":null"#));
    }
}
