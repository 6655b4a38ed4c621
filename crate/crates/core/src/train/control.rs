//! Adaptive density control and the bounding-box clamp.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::grammar::AssetSpec;
use crate::splat::{logit, Gaussian3D, Vec3};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ClampReport {
    pub scale: usize,
    pub position: usize,
}

impl ClampReport {
    pub fn add(&mut self, other: ClampReport) {
        self.scale += other.scale;
        self.position += other.position;
    }
}

/// Half extents of the 3σ axis-aligned box of a Gaussian: `3·sqrt(Σ_kk)`.
pub fn three_sigma_half_extent(g: &Gaussian3D) -> Vec3 {
    let cov = g.covariance();
    Vec3::from_fn(|k, _| 3.0 * cov[(k, k)].max(0.0).sqrt())
}

/// Whether the 3σ box of `g` leaves `[lo − margin, hi + margin]`.
pub fn exceeds_soft_box(g: &Gaussian3D, spec: &AssetSpec, soft_margin: f64) -> bool {
    let half = three_sigma_half_extent(g);
    let (lo, hi) = (spec.box_min(), spec.box_max());
    (0..3).any(|k| g.position[k] - half[k] < lo[k] - soft_margin || g.position[k] + half[k] > hi[k] + soft_margin)
}

/// Clamp Scale then Clamp Position on asset-local Gaussians. A Gaussian whose
/// 3σ box leaves the soft box has all scales halved (once per call); any
/// center outside the hard box is clamped onto it component-wise.
pub fn bbox_clamp(gaussians: &mut [Gaussian3D], spec: &AssetSpec, soft_margin: f64) -> ClampReport {
    let (lo, hi) = (spec.box_min(), spec.box_max());
    let mut report = ClampReport::default();
    for g in gaussians {
        if exceeds_soft_box(g, spec, soft_margin) {
            g.log_scale.add_scalar_mut(-std::f64::consts::LN_2);
            report.scale += 1;
        }
        let clamped = Vec3::from_fn(|k, _| g.position[k].clamp(lo[k], hi[k]));
        if clamped != g.position {
            g.position = clamped;
            report.position += 1;
        }
    }
    report
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DensifyParams {
    /// Threshold on the mean NDC-space positional gradient norm.
    pub grad_threshold: f64,
    /// Largest scale (m) still treated as "small" (cloned rather than split).
    pub size_threshold: f64,
    /// Activated opacity below which Gaussians are removed.
    pub prune_opacity: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct DensifyReport {
    pub cloned: usize,
    pub split: usize,
    pub pruned: usize,
}

/// Split children divide their scale by this factor.
pub const SPLIT_SCALE_DIVISOR: f64 = 1.6;

/// Clones small high-gradient Gaussians, splits large ones into two children
/// drawn from the parent's distribution, then prunes near-transparent ones.
/// Returns, per output Gaussian, the input index whose optimizer state it
/// inherits (`None` for new Gaussians).
pub fn densify_and_prune(
    gaussians: &mut Vec<Gaussian3D>,
    mean_grads: &[f64],
    params: &DensifyParams,
    rng: &mut impl Rng,
) -> (DensifyReport, Vec<Option<usize>>) {
    assert_eq!(gaussians.len(), mean_grads.len());
    let mut report = DensifyReport::default();
    let mut out: Vec<(Gaussian3D, Option<usize>)> = Vec::with_capacity(gaussians.len());
    let mut clones = Vec::new();
    let mut children = Vec::new();
    for (i, g) in gaussians.iter().enumerate() {
        let hot = mean_grads[i] >= params.grad_threshold;
        let big = g.scale().max() > params.size_threshold;
        if hot && !big {
            clones.push(g.clone());
            report.cloned += 1;
            out.push((g.clone(), Some(i)));
        } else if hot && big {
            report.split += 1;
            let r = g.rotation_matrix();
            let s = g.scale();
            for _ in 0..2 {
                let z = Vec3::from_fn(|k, _| s[k] * rng.sample::<f64, _>(StandardNormal));
                let mut c = g.clone();
                c.position = g.position + r * z;
                c.log_scale = g.log_scale.add_scalar(-SPLIT_SCALE_DIVISOR.ln());
                children.push(c);
            }
        } else {
            out.push((g.clone(), Some(i)));
        }
    }
    out.extend(clones.into_iter().chain(children).map(|g| (g, None)));
    let before = out.len();
    out.retain(|(g, _)| g.opacity() >= params.prune_opacity);
    report.pruned = before - out.len();
    let lineage = out.iter().map(|(_, l)| *l).collect();
    *gaussians = out.into_iter().map(|(g, _)| g).collect();
    (report, lineage)
}

/// Caps every opacity at `value`; returns the indices that changed.
pub fn reset_opacity(gaussians: &mut [Gaussian3D], value: f64) -> Vec<usize> {
    let cap = logit(value);
    let mut changed = Vec::new();
    for (i, g) in gaussians.iter_mut().enumerate() {
        if g.opacity_logit > cap {
            g.opacity_logit = cap;
            changed.push(i);
        }
    }
    changed
}
