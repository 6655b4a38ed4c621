use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::layout::{generate_layout, CityConfig, CityLayout, LayoutInput};
use super::CityError;
use crate::assembly::{assemble, BaseAsset, Checkpoint, Scene, VarianceAsset, CHECKPOINT_MANIFEST};
use crate::grammar::{
    expand, facade_min_length, parse_all, serialize, serialize_all, InstanceTransform, Instantiation, InstantiationList, Manifest,
    ProceduralCode,
};
use crate::splat::{sh, Mat3, Vec3};

/// Base assets, per-base pools of variance assets (possibly from several
/// source buildings) and the building codes that use them.
#[derive(Clone, Debug, PartialEq)]
pub struct AssetLibrary {
    pub manifest: Manifest,
    pub bases: Vec<BaseAsset>,
    /// `pools[k]` holds variance assets owned by `bases[k]`.
    pub pools: Vec<Vec<VarianceAsset>>,
    pub codes: Vec<ProceduralCode>,
}

fn pad_sh(gs: &mut [crate::splat::Gaussian3D], n: usize) {
    for g in gs {
        g.sh.resize(n, Vec3::zeros());
    }
}

impl AssetLibrary {
    pub fn new(
        mut bases: Vec<BaseAsset>,
        mut pools: Vec<Vec<VarianceAsset>>,
        codes: Vec<ProceduralCode>,
    ) -> Result<Self, CityError> {
        let manifest = Manifest::new(bases.iter().map(|b| b.spec.clone()).collect())?;
        if pools.len() != bases.len() {
            return Err(CityError::Library(format!("{} pools for {} base assets", pools.len(), bases.len())));
        }
        for (b, pool) in bases.iter().zip(&pools) {
            if let Some(v) = pool.iter().find(|v| v.owner_asset_id != b.spec.id) {
                return Err(CityError::Library(format!(
                    "pool of `{}` holds a variance asset owned by `{}`",
                    b.spec.id, v.owner_asset_id
                )));
            }
        }
        // mixed SH degrees are padded to the largest
        let n = bases
            .iter()
            .flat_map(|b| &b.gaussians)
            .chain(pools.iter().flatten().flat_map(|v| &v.gaussians))
            .map(|g| g.sh.len())
            .max()
            .unwrap_or(1);
        for b in &mut bases {
            pad_sh(&mut b.gaussians, n);
        }
        for v in pools.iter_mut().flatten() {
            pad_sh(&mut v.gaussians, n);
        }
        Ok(Self { manifest, bases, pools, codes })
    }

    /// Merges fitted checkpoints. The first checkpoint defining an asset id
    /// or a building id wins; every variance asset joins its owner's pool.
    pub fn from_checkpoints(checkpoints: &[Checkpoint]) -> Result<Self, CityError> {
        let mut bases: Vec<BaseAsset> = Vec::new();
        let mut pools: Vec<Vec<VarianceAsset>> = Vec::new();
        let mut codes: Vec<ProceduralCode> = Vec::new();
        for ck in checkpoints {
            for b in &ck.bases {
                if !bases.iter().any(|x| x.spec.id == b.spec.id) {
                    bases.push(b.clone());
                    pools.push(Vec::new());
                }
            }
            for v in &ck.variances {
                let k = bases.iter().position(|b| b.spec.id == v.owner_asset_id).ok_or_else(|| {
                    CityError::Library(format!("variance asset owned by unknown `{}`", v.owner_asset_id))
                })?;
                pools[k].push(v.clone());
            }
            if let Some(text) = &ck.code {
                for c in parse_all(text)? {
                    if !codes.iter().any(|x| x.building_id == c.building_id) {
                        codes.push(c);
                    }
                }
            }
        }
        Self::new(bases, pools, codes)
    }

    /// A checkpoint directory, or a directory of checkpoint directories
    /// (read in name order).
    pub fn load(dir: &Path) -> Result<Self, CityError> {
        if dir.join(CHECKPOINT_MANIFEST).is_file() {
            return Self::from_checkpoints(&[Checkpoint::load(dir)?]);
        }
        let mut subdirs: Vec<_> = std::fs::read_dir(dir)
            .map_err(|e| CityError::Library(format!("{}: {e}", dir.display())))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.join(CHECKPOINT_MANIFEST).is_file())
            .collect();
        subdirs.sort();
        if subdirs.is_empty() {
            return Err(CityError::Library(format!("{} holds no checkpoints", dir.display())));
        }
        let cks = subdirs.iter().map(|p| Checkpoint::load(p)).collect::<Result<Vec<_>, _>>()?;
        Self::from_checkpoints(&cks)
    }

    pub fn pool(&self, asset_id: &str) -> &[VarianceAsset] {
        self.manifest.index_of(asset_id).map(|k| self.pools[k].as_slice()).unwrap_or(&[])
    }

    pub fn code(&self, building_id: &str) -> Option<&ProceduralCode> {
        self.codes.iter().find(|c| c.building_id == building_id)
    }

    /// The library as one checkpoint with no instantiations; pool members
    /// are numbered per asset so each gets its own file.
    pub fn to_checkpoint(&self) -> Checkpoint {
        let variances = self
            .pools
            .iter()
            .flat_map(|pool| pool.iter().enumerate().map(|(k, v)| VarianceAsset { instance_index: k, ..v.clone() }))
            .collect();
        library_checkpoint(self, InstantiationList { entries: Vec::new() }, variances, serialize_all(&self.codes))
    }

    pub fn sh_degree(&self) -> usize {
        self.bases.first().and_then(|b| b.gaussians.first()).and_then(|g| sh::degree_for_count(g.sh.len())).unwrap_or(0)
    }
}

fn yaw(angle: f64) -> Mat3 {
    let (s, c) = angle.sin_cos();
    Mat3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Instantiations of `code` at `dims` moved by `outer`, and one variance
/// asset per instance drawn uniformly (seeded) from its base's pool.
fn building_parts(
    code: &ProceduralCode,
    dims: [f64; 3],
    outer: &InstanceTransform,
    library: &AssetLibrary,
    seed: u64,
) -> Result<(InstantiationList, Vec<VarianceAsset>), CityError> {
    let list = expand(code, &library.manifest, dims)?.transformed(outer);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut variances = Vec::new();
    for e in &list.entries {
        let pool = library.pool(&e.asset_id);
        if !pool.is_empty() {
            let mut v = pool[rng.gen_range(0..pool.len())].clone();
            v.instance_index = e.variance_index;
            variances.push(v);
        }
    }
    Ok((list, variances))
}

fn library_checkpoint(library: &AssetLibrary, list: InstantiationList, variances: Vec<VarianceAsset>, code: String) -> Checkpoint {
    Checkpoint {
        manifest: library.manifest.clone(),
        instantiations: list,
        code: Some(code),
        sh_degree: library.sh_degree(),
        bases: library.bases.clone(),
        variances,
    }
}

/// Expands `code`, moves it by `outer` and gives every instance a variance
/// asset drawn from its base's pool.
pub fn place_building(
    code: &ProceduralCode,
    dims: [f64; 3],
    outer: &InstanceTransform,
    library: &AssetLibrary,
    seed: u64,
) -> Result<Scene, CityError> {
    let (list, variances) = building_parts(code, dims, outer, library, seed)?;
    Ok(assemble(&list, &library.bases, &variances)?)
}

pub fn generate_building(
    code: &ProceduralCode,
    dims: [f64; 3],
    library: &AssetLibrary,
    seed: u64,
) -> Result<Scene, CityError> {
    place_building(code, dims, &InstanceTransform::identity(), library, seed)
}

/// [`generate_building`] as a storable checkpoint over the library's assets.
pub fn building_checkpoint(
    code: &ProceduralCode,
    dims: [f64; 3],
    library: &AssetLibrary,
    seed: u64,
) -> Result<Checkpoint, CityError> {
    let (list, variances) = building_parts(code, dims, &InstanceTransform::identity(), library, seed)?;
    Ok(library_checkpoint(library, list, variances, serialize(code)))
}

fn draw_seed(placement_seed: u64, seed: u64) -> u64 {
    placement_seed ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

/// Builds every placement and decoration of `layout`. Placement heights are
/// raised to the shortest stack their code allows; the adjusted layout is
/// returned with the checkpoint.
pub fn city_from_layout(
    mut layout: CityLayout,
    library: &AssetLibrary,
    seed: u64,
) -> Result<(CityLayout, Checkpoint), CityError> {
    let mut used: Vec<&ProceduralCode> = Vec::new();
    for p in &mut layout.placements {
        let code = library.code(&p.code).ok_or_else(|| CityError::Library(format!("unknown building code `{}`", p.code)))?;
        // a code cannot stack below its shortest level sequence
        p.height = p.height.max(facade_min_length(code, &library.manifest)?[2]);
        if !used.iter().any(|c| c.building_id == code.building_id) {
            used.push(code);
        }
    }
    if let Some(d) = layout.decorations.iter().find(|d| library.manifest.get(&d.kind).is_none()) {
        return Err(CityError::Library(format!("decoration `{}` is not a library asset", d.kind)));
    }

    let parts: Vec<(InstantiationList, Vec<VarianceAsset>)> = layout
        .placements
        .par_iter()
        .map(|p| {
            let code = library.code(&p.code).expect("checked above");
            let fp = &p.footprint;
            let outer = InstanceTransform {
                rotation: yaw(fp.angle),
                translation: Vec3::new(fp.origin[0], fp.origin[1], 0.0),
                scale: Vec3::repeat(1.0),
            };
            building_parts(code, [fp.size[0], fp.size[1], p.height], &outer, library, draw_seed(p.seed, seed))
        })
        .collect::<Result<_, _>>()?;

    // variance indices restart in every building; renumber them per asset
    let mut offsets = vec![0usize; library.bases.len()];
    let mut entries = Vec::new();
    let mut variances = Vec::new();
    for (list, vs) in parts {
        let base = offsets.clone();
        let shift = |id: &str, k: usize| k + base[library.manifest.index_of(id).expect("expanded from the manifest")];
        for v in vs {
            let instance_index = shift(&v.owner_asset_id, v.instance_index);
            variances.push(VarianceAsset { instance_index, ..v });
        }
        for mut e in list.entries {
            let a = library.manifest.index_of(&e.asset_id).expect("expanded from the manifest");
            e.variance_index = shift(&e.asset_id, e.variance_index);
            offsets[a] = offsets[a].max(e.variance_index + 1);
            entries.push(e);
        }
    }
    for d in &layout.decorations {
        let a = library.manifest.index_of(&d.kind).expect("checked above");
        entries.push(Instantiation {
            asset_id: d.kind.clone(),
            transform: InstanceTransform {
                rotation: yaw(d.rotation),
                translation: Vec3::new(d.position[0], d.position[1], 0.0),
                scale: Vec3::repeat(1.0),
            },
            variance_index: offsets[a],
        });
        offsets[a] += 1;
    }
    let code = serialize_all(&used.into_iter().cloned().collect::<Vec<_>>());
    Ok((layout, library_checkpoint(library, InstantiationList { entries }, variances, code)))
}

fn city_config(library: &AssetLibrary, config: &CityConfig) -> Result<CityConfig, CityError> {
    let mut config = config.clone();
    if config.codes.is_empty() {
        config.codes = library.codes.iter().map(|c| c.building_id.clone()).collect();
    }
    if config.codes.is_empty() {
        return Err(CityError::Library("the library has no building codes".into()));
    }
    if let Some(c) = config.codes.iter().find(|c| library.code(c).is_none()) {
        return Err(CityError::Library(format!("unknown building code `{c}`")));
    }
    if let Some(k) = config.decoration_kinds.iter().find(|k| library.manifest.get(k).is_none()) {
        return Err(CityError::Library(format!("decoration `{k}` is not a library asset")));
    }
    Ok(config)
}

/// Layout for `input` with building codes defaulting to the whole library.
pub fn generate_city_layout(
    input: &LayoutInput,
    library: &AssetLibrary,
    config: &CityConfig,
    seed: u64,
) -> Result<CityLayout, CityError> {
    generate_layout(input, &city_config(library, config)?, seed)
}

/// Layout plus a checkpoint holding every placed building and decoration.
pub fn generate_city_checkpoint(
    input: &LayoutInput,
    library: &AssetLibrary,
    config: &CityConfig,
    seed: u64,
) -> Result<(CityLayout, Checkpoint), CityError> {
    city_from_layout(generate_city_layout(input, library, config, seed)?, library, seed)
}

/// Layout plus the union of every placed building and decoration.
pub fn generate_city(
    input: &LayoutInput,
    library: &AssetLibrary,
    config: &CityConfig,
    seed: u64,
) -> Result<(CityLayout, Scene), CityError> {
    let (layout, checkpoint) = generate_city_checkpoint(input, library, config, seed)?;
    Ok((layout, checkpoint.scene()?))
}
