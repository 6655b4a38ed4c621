//! Base and variance asset initialization, instance transforms applied to
//! Gaussians, and assembly of render-ready scenes.

mod checkpoint;
mod ply;

pub use checkpoint::{Checkpoint, CHECKPOINT_MANIFEST};
pub use ply::{read_ply, write_ply};

use std::collections::HashMap;

use rand::Rng;
use thiserror::Error;

use crate::grammar::{AssetSpec, InstanceTransform, InstantiationList, Manifest};
use crate::splat::{logit, matrix_to_quat, quat_mul, sh, Gaussian3D, Vec3};

/// Initial opacity of base-asset Gaussians.
pub const BASE_OPACITY: f64 = 0.1;
/// Initial opacity of variance-asset Gaussians (starts near-transparent).
pub const VARIANCE_OPACITY: f64 = 0.02;
/// Lower bound on initial Gaussian scale (m).
pub const MIN_INIT_SCALE: f64 = 1e-4;

#[derive(Debug, Error)]
pub enum AssemblyError {
    #[error("point budget {budget} is smaller than the asset count {assets}")]
    Budget { budget: usize, assets: usize },
    #[error("instantiation references unknown asset `{0}`")]
    DanglingAsset(String),
    #[error("{0}")]
    Invalid(String),
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed {what}: {message}")]
    Format { what: String, message: String },
}

#[derive(Clone, Debug, PartialEq)]
pub struct BaseAsset {
    pub spec: AssetSpec,
    pub gaussians: Vec<Gaussian3D>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VarianceAsset {
    pub owner_asset_id: String,
    pub instance_index: usize,
    pub gaussians: Vec<Gaussian3D>,
}

impl BaseAsset {
    /// Whether every center lies in the local box (inclusive).
    pub fn contains_centers(&self) -> bool {
        let (lo, hi) = (self.spec.box_min(), self.spec.box_max());
        self.gaussians.iter().all(|g| (0..3).all(|k| g.position[k] >= lo[k] && g.position[k] <= hi[k]))
    }
}

/// Splits a budget of `n` Gaussians across assets in proportion to their
/// box volumes: largest remainder, ties to the lower index, at least one per
/// asset. Every count stays within one of its quota; when that and the floor
/// of one cannot both hold, assets with quotas below one may get nothing.
pub fn allocate_points(specs: &[AssetSpec], n: usize) -> Result<Vec<usize>, AssemblyError> {
    if n < specs.len() || specs.is_empty() {
        return Err(AssemblyError::Budget { budget: n, assets: specs.len() });
    }
    let total: f64 = specs.iter().map(AssetSpec::volume).sum();
    let quotas: Vec<f64> = specs.iter().map(|s| n as f64 * s.volume() / total).collect();
    let floored = largest_remainder(&quotas, n, 1);
    if floored.iter().zip(&quotas).all(|(&c, q)| (c as f64 - q).abs() <= 1.0) {
        return Ok(floored);
    }
    let mut counts = largest_remainder(&quotas, n, 0);
    let mut empty: Vec<usize> = (0..counts.len()).filter(|&k| counts[k] == 0).collect();
    empty.sort_by(|&a, &b| quotas[b].total_cmp(&quotas[a]));
    for k in empty {
        let donor = (0..counts.len())
            .filter(|&d| counts[d] >= 2 && counts[d] as f64 >= quotas[d])
            .max_by(|&a, &b| (counts[a] as f64 - quotas[a]).total_cmp(&(counts[b] as f64 - quotas[b])));
        if let Some(d) = donor {
            counts[d] -= 1;
            counts[k] = 1;
        }
    }
    Ok(counts)
}

fn largest_remainder(quotas: &[f64], n: usize, floor: usize) -> Vec<usize> {
    let mut counts: Vec<usize> = quotas.iter().map(|q| (q.floor() as usize).max(floor)).collect();
    let remainder = |counts: &[usize], k: usize| quotas[k] - counts[k] as f64;
    let mut assigned: usize = counts.iter().sum();

    // stable sort keeps the lower index first on equal remainders
    let mut order: Vec<usize> = (0..quotas.len()).collect();
    order.sort_by(|&a, &b| remainder(&counts, b).total_cmp(&remainder(&counts, a)));
    for &k in order.iter().cycle() {
        if assigned >= n {
            break;
        }
        counts[k] += 1;
        assigned += 1;
    }
    // The floor can overshoot the budget; take the excess from the assets
    // furthest above their quota.
    while assigned > n {
        let k = (0..quotas.len())
            .filter(|&k| counts[k] > floor)
            .min_by(|&a, &b| remainder(&counts, a).total_cmp(&remainder(&counts, b)))
            .expect("n >= asset count leaves a reducible asset");
        counts[k] -= 1;
        assigned -= 1;
    }
    counts
}

/// Distance from each point to its nearest neighbour (sort-and-sweep on x).
pub fn nearest_neighbor_distances(points: &[Vec3]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| points[a].x.total_cmp(&points[b].x));
    let mut best = vec![f64::INFINITY; points.len()];
    // right neighbours
    for (rank, &i) in order.iter().enumerate() {
        for &j in &order[rank + 1..] {
            let dx = points[j].x - points[i].x;
            if dx * dx >= best[i] {
                break;
            }
            let d2 = (points[j] - points[i]).norm_squared();
            best[i] = best[i].min(d2);
            best[j] = best[j].min(d2);
        }
    }
    // left neighbours
    for (rank, &i) in order.iter().enumerate().rev() {
        for &j in order[..rank].iter().rev() {
            let dx = points[i].x - points[j].x;
            if dx * dx >= best[i] {
                break;
            }
            let d2 = (points[j] - points[i]).norm_squared();
            best[i] = best[i].min(d2);
        }
    }
    best.into_iter().map(f64::sqrt).collect()
}

fn gaussians_at(points: &[Vec3], spec: &AssetSpec, opacity: f64, sh_degree: usize) -> Vec<Gaussian3D> {
    let max_scale = spec.extent().norm() / 4.0;
    let nn = nearest_neighbor_distances(points);
    points
        .iter()
        .zip(nn)
        .map(|(p, d)| Gaussian3D {
            position: *p,
            rotation: [1.0, 0.0, 0.0, 0.0],
            log_scale: Vec3::repeat(d.clamp(MIN_INIT_SCALE, max_scale).ln()),
            opacity_logit: logit(opacity),
            sh: vec![Vec3::zeros(); sh::coeff_count(sh_degree)],
        })
        .collect()
}

fn uniform_points(spec: &AssetSpec, count: usize, rng: &mut impl Rng) -> Vec<Vec3> {
    let (lo, hi) = (spec.box_min(), spec.box_max());
    (0..count)
        .map(|_| Vec3::from_fn(|k, _| lo[k] + (hi[k] - lo[k]) * rng.gen::<f64>()))
        .collect()
}

/// `count` Gaussians uniform in the local box, mid-gray, opacity 0.1, scales
/// from nearest-neighbour spacing.
pub fn init_base_asset(spec: &AssetSpec, count: usize, sh_degree: usize, rng: &mut impl Rng) -> BaseAsset {
    let points = uniform_points(spec, count, rng);
    BaseAsset { spec: spec.clone(), gaussians: gaussians_at(&points, spec, BASE_OPACITY, sh_degree) }
}

/// One near-transparent variance asset per instantiation of `spec`.
pub fn init_variance_assets(
    spec: &AssetSpec,
    list: &InstantiationList,
    count: usize,
    sh_degree: usize,
    rng: &mut impl Rng,
) -> Vec<VarianceAsset> {
    list.entries
        .iter()
        .filter(|e| e.asset_id == spec.id)
        .map(|e| {
            let points = uniform_points(spec, count, rng);
            VarianceAsset {
                owner_asset_id: spec.id.clone(),
                instance_index: e.variance_index,
                gaussians: gaussians_at(&points, spec, VARIANCE_OPACITY, sh_degree),
            }
        })
        .collect()
}

/// Seeds a base asset from reconstructed points: points inside each
/// instance's box are pulled back to the local frame, concatenated, and
/// strided down by the instance count. Returns `true` in the second slot
/// when no point survived and the asset fell back to uniform init.
pub fn init_from_points(
    spec: &AssetSpec,
    transforms: &[InstanceTransform],
    points: &[Vec3],
    sh_degree: usize,
    rng: &mut impl Rng,
) -> (BaseAsset, bool) {
    let (lo, hi) = (spec.box_min(), spec.box_max());
    let mut local = Vec::new();
    for t in transforms {
        for p in points {
            let q = t.apply_inverse(p);
            if (0..3).all(|k| q[k] >= lo[k] && q[k] <= hi[k]) {
                local.push(q);
            }
        }
    }
    let stride = transforms.len().max(1);
    let kept: Vec<Vec3> = local.into_iter().step_by(stride).collect();
    if kept.is_empty() {
        log::warn!("no reconstructed points fall inside asset `{}`; using uniform init", spec.id);
        return (init_base_asset(spec, 1000, sh_degree, rng), true);
    }
    (BaseAsset { spec: spec.clone(), gaussians: gaussians_at(&kept, spec, BASE_OPACITY, sh_degree) }, false)
}

/// Applies an instance transform to a Gaussian: `µ′ = R (S ⊙ µ) + T`,
/// `q′ = q_R ⊗ q`, `s′ = S ⊙ s`. Opacity and SH are carried unchanged.
pub fn instantiate(g: &Gaussian3D, t: &InstanceTransform) -> Gaussian3D {
    instantiate_with(g, t, &matrix_to_quat(&t.rotation))
}

fn instantiate_with(g: &Gaussian3D, t: &InstanceTransform, q_inst: &[f64; 4]) -> Gaussian3D {
    Gaussian3D {
        position: t.apply(&g.position),
        rotation: quat_mul(q_inst, &g.rotation),
        log_scale: g.log_scale + t.scale.map(f64::ln),
        opacity_logit: g.opacity_logit,
        sh: g.sh.clone(),
    }
}

/// Axis-aligned world box of an asset's local box under `t`.
pub fn world_bbox(spec: &AssetSpec, t: &InstanceTransform) -> (Vec3, Vec3) {
    let (lo, hi) = (spec.box_min(), spec.box_max());
    let mut min = Vec3::repeat(f64::INFINITY);
    let mut max = Vec3::repeat(f64::NEG_INFINITY);
    for c in 0..8 {
        let corner = Vec3::new(
            if c & 1 == 0 { lo.x } else { hi.x },
            if c & 2 == 0 { lo.y } else { hi.y },
            if c & 4 == 0 { lo.z } else { hi.z },
        );
        let w = t.apply(&corner);
        min = min.inf(&w);
        max = max.sup(&w);
    }
    (min, max)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Source {
    Base,
    /// Index into the variance slice passed to [`assemble`].
    Variance(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Provenance {
    pub source: Source,
    /// Index into the base slice passed to [`assemble`].
    pub asset: usize,
    /// Index of the instantiation entry.
    pub instance: usize,
    /// Index within the base or variance Gaussian list.
    pub local: usize,
}

/// Render-ready world-space Gaussians. Each entry knows where it came from
/// and which instance frame its SH is evaluated in.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub gaussians: Vec<Gaussian3D>,
    pub provenance: Vec<Provenance>,
    pub instances: Vec<InstanceTransform>,
    instance_quats: Vec<[f64; 4]>,
}

impl Scene {
    /// A scene of free-standing world Gaussians under one identity instance.
    pub fn from_gaussians(gaussians: Vec<Gaussian3D>) -> Self {
        let provenance = (0..gaussians.len())
            .map(|k| Provenance { source: Source::Base, asset: 0, instance: 0, local: k })
            .collect();
        Self {
            gaussians,
            provenance,
            instances: vec![InstanceTransform::identity()],
            instance_quats: vec![[1.0, 0.0, 0.0, 0.0]],
        }
    }

    /// Independent world-space Gaussian sets; set `k` evaluates SH in
    /// `frames[k]` and is tagged as asset `k`, instance `k`.
    pub fn from_sets(sets: &[Vec<Gaussian3D>], frames: &[InstanceTransform]) -> Self {
        assert_eq!(sets.len(), frames.len());
        let mut gaussians = Vec::with_capacity(sets.iter().map(Vec::len).sum());
        let mut provenance = Vec::with_capacity(gaussians.capacity());
        for (k, set) in sets.iter().enumerate() {
            gaussians.extend(set.iter().cloned());
            provenance.extend((0..set.len()).map(|l| Provenance { source: Source::Base, asset: k, instance: k, local: l }));
        }
        Self {
            gaussians,
            provenance,
            instances: frames.to_vec(),
            instance_quats: frames.iter().map(|t| matrix_to_quat(&t.rotation)).collect(),
        }
    }

    pub fn empty() -> Self {
        Self::from_gaussians(Vec::new())
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    /// Rotation of the frame the entry's SH coefficients live in.
    pub fn sh_frame(&self, entry: usize) -> &crate::splat::Mat3 {
        &self.instances[self.provenance[entry].instance].rotation
    }

    pub fn instance_quat(&self, instance: usize) -> &[f64; 4] {
        &self.instance_quats[instance]
    }

    /// Replaces entry parameters in place, keeping provenance and frames.
    pub fn with_gaussians(&self, gaussians: Vec<Gaussian3D>) -> Self {
        assert_eq!(gaussians.len(), self.gaussians.len());
        Self { gaussians, ..self.clone() }
    }

    /// Appends `other`, re-indexing its instances.
    pub fn extend(&mut self, other: Scene) {
        let offset = self.instances.len();
        self.gaussians.extend(other.gaussians);
        self.provenance.extend(other.provenance.into_iter().map(|p| Provenance { instance: p.instance + offset, ..p }));
        self.instances.extend(other.instances);
        self.instance_quats.extend(other.instance_quats);
    }

    /// Order-sensitive fingerprint used to match a backward call to its forward.
    pub fn fingerprint(&self) -> u64 {
        // FNV-1a over 64-bit words
        let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ self.gaussians.len() as u64;
        let mut mix = |v: f64| h = (h ^ v.to_bits()).wrapping_mul(0x0000_0100_0000_01b3);
        for g in &self.gaussians {
            g.position.iter().chain(g.log_scale.iter()).chain(g.rotation.iter()).for_each(|&v| mix(v));
            mix(g.opacity_logit);
        }
        h
    }
}

/// Places every instantiation's base Gaussians (and its variance asset, if
/// one matches `(asset_id, variance_index)`) in world space. Entries are
/// ordered asset-major, instance-minor, base before variance, local index last.
pub fn assemble(
    list: &InstantiationList,
    bases: &[BaseAsset],
    variances: &[VarianceAsset],
) -> Result<Scene, AssemblyError> {
    let asset_index: HashMap<&str, usize> = bases.iter().enumerate().map(|(k, b)| (b.spec.id.as_str(), k)).collect();
    let variance_index: HashMap<(&str, usize), usize> = variances
        .iter()
        .enumerate()
        .map(|(k, v)| ((v.owner_asset_id.as_str(), v.instance_index), k))
        .collect();
    let mut per_asset: Vec<Vec<usize>> = vec![Vec::new(); bases.len()];
    for (i, e) in list.entries.iter().enumerate() {
        let a = *asset_index.get(e.asset_id.as_str()).ok_or_else(|| AssemblyError::DanglingAsset(e.asset_id.clone()))?;
        per_asset[a].push(i);
    }
    let instances: Vec<InstanceTransform> = list.entries.iter().map(|e| e.transform.clone()).collect();
    let instance_quats: Vec<[f64; 4]> = instances.iter().map(|t| matrix_to_quat(&t.rotation)).collect();

    let mut gaussians = Vec::new();
    let mut provenance = Vec::new();
    for (a, entries) in per_asset.iter().enumerate() {
        for &i in entries {
            let t = &instances[i];
            let q = &instance_quats[i];
            for (l, g) in bases[a].gaussians.iter().enumerate() {
                gaussians.push(instantiate_with(g, t, q));
                provenance.push(Provenance { source: Source::Base, asset: a, instance: i, local: l });
            }
            let e = &list.entries[i];
            if let Some(&v) = variance_index.get(&(e.asset_id.as_str(), e.variance_index)) {
                for (l, g) in variances[v].gaussians.iter().enumerate() {
                    gaussians.push(instantiate_with(g, t, q));
                    provenance.push(Provenance { source: Source::Variance(v), asset: a, instance: i, local: l });
                }
            }
        }
    }
    Ok(Scene { gaussians, provenance, instances, instance_quats })
}

/// Recovers asset-local Gaussians from a scene by inverting each entry's
/// instance transform. For every base and variance Gaussian the first scene
/// entry referencing it wins.
pub fn disassemble(scene: &Scene, bases: &[BaseAsset], variances: &[VarianceAsset]) -> (Vec<BaseAsset>, Vec<VarianceAsset>) {
    let mut out_b: Vec<BaseAsset> = bases.to_vec();
    let mut out_v: Vec<VarianceAsset> = variances.to_vec();
    let mut seen_b: Vec<Vec<bool>> = bases.iter().map(|b| vec![false; b.gaussians.len()]).collect();
    let mut seen_v: Vec<Vec<bool>> = variances.iter().map(|v| vec![false; v.gaussians.len()]).collect();
    for (g, p) in scene.gaussians.iter().zip(&scene.provenance) {
        let (slot, seen) = match p.source {
            Source::Base => (&mut out_b[p.asset].gaussians[p.local], &mut seen_b[p.asset][p.local]),
            Source::Variance(v) => (&mut out_v[v].gaussians[p.local], &mut seen_v[v][p.local]),
        };
        if *seen {
            continue;
        }
        *seen = true;
        let t = &scene.instances[p.instance];
        let q = scene.instance_quats[p.instance];
        let conj = [q[0], -q[1], -q[2], -q[3]];
        *slot = Gaussian3D {
            position: t.apply_inverse(&g.position),
            rotation: quat_mul(&conj, &g.rotation),
            log_scale: g.log_scale - t.scale.map(f64::ln),
            opacity_logit: g.opacity_logit,
            sh: g.sh.clone(),
        };
    }
    (out_b, out_v)
}

/// Uniform random base assets for every manifest entry under a total budget.
pub fn init_assets(
    manifest: &Manifest,
    list: &InstantiationList,
    n_total: usize,
    variance_count: Option<usize>,
    sh_degree: usize,
    rng: &mut impl Rng,
) -> Result<(Vec<BaseAsset>, Vec<VarianceAsset>), AssemblyError> {
    let counts = allocate_points(manifest.assets(), n_total)?;
    let bases: Vec<BaseAsset> =
        manifest.assets().iter().zip(&counts).map(|(s, &c)| init_base_asset(s, c, sh_degree, rng)).collect();
    let mut variances = Vec::new();
    if let Some(count) = variance_count {
        for spec in manifest.assets() {
            variances.extend(init_variance_assets(spec, list, count, sh_degree, rng));
        }
    }
    Ok((bases, variances))
}
