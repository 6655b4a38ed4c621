use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::{GrammarError, ProceduralCode};
use crate::splat::{Mat3, Vec3};

/// Shared geometry unit: bounding extent and pivot in the asset's local frame.
/// The local box is `pivot ± extent / 2`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssetSpec {
    pub id: String,
    pub extent: [f64; 3],
    pub pivot: [f64; 3],
}

impl AssetSpec {
    pub fn new(id: &str, extent: [f64; 3], pivot: [f64; 3]) -> Self {
        Self { id: id.to_string(), extent, pivot }
    }

    pub fn extent(&self) -> Vec3 {
        Vec3::from(self.extent)
    }

    pub fn volume(&self) -> f64 {
        self.extent.iter().product()
    }

    pub fn box_min(&self) -> Vec3 {
        Vec3::from(self.pivot) - self.extent() / 2.0
    }

    pub fn box_max(&self) -> Vec3 {
        Vec3::from(self.pivot) + self.extent() / 2.0
    }

    pub fn validate(&self) -> Result<(), GrammarError> {
        let ok_id = self.id.chars().next().is_some_and(|c| c.is_ascii_alphabetic() || c == '_')
            && self.id.chars().all(|c| c.is_ascii_alphanumeric() || c == '_');
        if !ok_id {
            return Err(GrammarError::Manifest(format!("invalid asset id `{}`", self.id)));
        }
        if !self.extent.iter().all(|&e| e > 0.0 && e.is_finite()) || !self.pivot.iter().all(|p| p.is_finite()) {
            return Err(GrammarError::Manifest(format!("asset `{}` needs positive finite extent", self.id)));
        }
        Ok(())
    }
}

/// Validated asset list with id lookup.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Manifest {
    assets: Vec<AssetSpec>,
    index: HashMap<String, usize>,
}

impl Manifest {
    pub fn new(assets: Vec<AssetSpec>) -> Result<Self, GrammarError> {
        let mut index = HashMap::new();
        for (k, a) in assets.iter().enumerate() {
            a.validate()?;
            if index.insert(a.id.clone(), k).is_some() {
                return Err(GrammarError::Manifest(format!("duplicate asset id `{}`", a.id)));
            }
        }
        Ok(Self { assets, index })
    }

    pub fn assets(&self) -> &[AssetSpec] {
        &self.assets
    }

    pub fn len(&self) -> usize {
        self.assets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assets.is_empty()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn get(&self, id: &str) -> Option<&AssetSpec> {
        self.index_of(id).map(|k| &self.assets[k])
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.assets).unwrap()
    }
}

/// Parses the JSON manifest: `[{id, extent: [x,y,z], pivot: [x,y,z]}, ...]`.
pub fn parse_manifest(json: &str) -> Result<Manifest, GrammarError> {
    let assets: Vec<AssetSpec> =
        serde_json::from_str(json).map_err(|e| GrammarError::Manifest(e.to_string()))?;
    Manifest::new(assets)
}

/// Checks every token against the manifest, reporting all unknown ids at once.
pub fn resolve<'c>(code: &'c ProceduralCode, manifest: &Manifest) -> Result<&'c ProceduralCode, GrammarError> {
    let mut seen = HashSet::new();
    let unknown: Vec<String> = code
        .asset_ids()
        .into_iter()
        .filter(|(id, _)| manifest.index_of(id).is_none())
        .filter(|(id, _)| seen.insert(*id))
        .map(|(id, _)| id.to_string())
        .collect();
    if unknown.is_empty() {
        Ok(code)
    } else {
        Err(GrammarError::UnknownAssets(unknown))
    }
}

/// Placement of one asset instance: `x_world = R · (S ⊙ x_local) + T`.
#[derive(Clone, Debug, PartialEq)]
pub struct InstanceTransform {
    pub rotation: Mat3,
    pub translation: Vec3,
    pub scale: Vec3,
}

impl Default for InstanceTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl InstanceTransform {
    pub fn identity() -> Self {
        Self { rotation: Mat3::identity(), translation: Vec3::zeros(), scale: Vec3::repeat(1.0) }
    }

    pub fn translation(t: Vec3) -> Self {
        Self { translation: t, ..Self::identity() }
    }

    pub fn new(rotation: Mat3, translation: Vec3, scale: Vec3) -> Result<Self, GrammarError> {
        let t = Self { rotation, translation, scale };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<(), GrammarError> {
        let r = &self.rotation;
        let orth = (r.transpose() * r - Mat3::identity()).amax();
        if !(orth <= 1e-9 && (r.determinant() - 1.0).abs() <= 1e-9) {
            return Err(GrammarError::Invalid(format!("rotation is not proper orthonormal (error {orth:e})")));
        }
        if !self.scale.iter().all(|&s| s > 0.0 && s.is_finite()) || !self.translation.iter().all(|t| t.is_finite()) {
            return Err(GrammarError::Invalid("scale must be positive and translation finite".into()));
        }
        Ok(())
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * p.component_mul(&self.scale) + self.translation
    }

    pub fn apply_inverse(&self, p: &Vec3) -> Vec3 {
        (self.rotation.transpose() * (p - self.translation)).component_div(&self.scale)
    }

    /// `self ∘ inner` for rigid or uniformly-scaled transforms (exact for the
    /// affine map whenever `inner.scale` is uniform or `self.scale` is uniform
    /// along the axes `inner.rotation` mixes).
    pub fn compose(&self, inner: &InstanceTransform) -> InstanceTransform {
        InstanceTransform {
            rotation: self.rotation * inner.rotation,
            translation: self.apply(&inner.translation),
            scale: self.scale.component_mul(&inner.scale),
        }
    }
}

#[derive(Deserialize)]
struct ImportRecord {
    asset_id: String,
    #[serde(rename = "R")]
    r: Vec<f64>,
    #[serde(rename = "T")]
    t: Vec<f64>,
    #[serde(rename = "S")]
    s: Vec<f64>,
}

/// Reads annotated instantiations: `[{asset_id, R: 9 row-major, T: 3, S: 3}, ...]`.
/// Variance indices are assigned per asset in file order.
pub fn parse_instantiation_import(json: &str, manifest: &Manifest) -> Result<super::InstantiationList, GrammarError> {
    let records: Vec<ImportRecord> = serde_json::from_str(json).map_err(|e| GrammarError::Invalid(e.to_string()))?;
    let mut counters: HashMap<String, usize> = HashMap::new();
    let mut entries = Vec::with_capacity(records.len());
    let mut unknown = Vec::new();
    for rec in records {
        if manifest.index_of(&rec.asset_id).is_none() {
            if !unknown.contains(&rec.asset_id) {
                unknown.push(rec.asset_id.clone());
            }
            continue;
        }
        if rec.r.len() != 9 || rec.t.len() != 3 || rec.s.len() != 3 {
            return Err(GrammarError::Invalid(format!("instance of `{}` needs R[9], T[3], S[3]", rec.asset_id)));
        }
        let transform = InstanceTransform::new(
            Mat3::from_row_slice(&rec.r),
            Vec3::from_row_slice(&rec.t),
            Vec3::from_row_slice(&rec.s),
        )?;
        let counter = counters.entry(rec.asset_id.clone()).or_insert(0);
        entries.push(super::Instantiation { asset_id: rec.asset_id, transform, variance_index: *counter });
        *counter += 1;
    }
    if !unknown.is_empty() {
        return Err(GrammarError::UnknownAssets(unknown));
    }
    Ok(super::InstantiationList { entries })
}
