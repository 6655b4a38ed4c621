use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ply, AssemblyError, BaseAsset, VarianceAsset};
use crate::grammar::{AssetSpec, InstanceTransform, Instantiation, InstantiationList, Manifest};
use crate::splat::{sh, Mat3, Vec3};

pub const CHECKPOINT_MANIFEST: &str = "manifest.json";

/// A fitted model: assets, their instantiations and the code they came from.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub manifest: Manifest,
    pub instantiations: InstantiationList,
    pub code: Option<String>,
    pub sh_degree: usize,
    pub bases: Vec<BaseAsset>,
    pub variances: Vec<VarianceAsset>,
}

#[derive(Serialize, Deserialize)]
struct InstanceRecord {
    asset_id: String,
    #[serde(rename = "R")]
    r: Vec<f64>,
    #[serde(rename = "T")]
    t: Vec<f64>,
    #[serde(rename = "S")]
    s: Vec<f64>,
    variance_index: usize,
}

#[derive(Serialize, Deserialize)]
struct VarianceRecord {
    asset_id: String,
    instance_index: usize,
    file: String,
}

#[derive(Serialize, Deserialize)]
struct BaseRecord {
    asset_id: String,
    file: String,
}

#[derive(Serialize, Deserialize)]
struct ManifestFile {
    assets: Vec<AssetSpec>,
    instantiations: Vec<InstanceRecord>,
    code: Option<String>,
    sh_degree: usize,
    bases: Vec<BaseRecord>,
    variances: Vec<VarianceRecord>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> AssemblyError + '_ {
    move |source| AssemblyError::Io { path: path.display().to_string(), source }
}

/// Writes `bytes` next to `path` and renames it into place.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), AssemblyError> {
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

impl Checkpoint {
    /// Stored scalar parameter count over all base and variance Gaussians.
    pub fn param_count(&self) -> usize {
        let per = crate::splat::FIXED_PARAMS + 3 * sh::coeff_count(self.sh_degree);
        let n: usize = self.bases.iter().map(|b| b.gaussians.len()).sum::<usize>()
            + self.variances.iter().map(|v| v.gaussians.len()).sum::<usize>();
        n * per
    }

    pub fn gaussian_count(&self) -> usize {
        self.param_count() / (crate::splat::FIXED_PARAMS + 3 * sh::coeff_count(self.sh_degree))
    }

    pub fn scene(&self) -> Result<super::Scene, AssemblyError> {
        super::assemble(&self.instantiations, &self.bases, &self.variances)
    }

    /// Writes `manifest.json` and one PLY per asset into `dir`. Every file is
    /// written to a temporary name and renamed; the manifest goes last.
    pub fn save(&self, dir: &Path) -> Result<(), AssemblyError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let n_sh = sh::coeff_count(self.sh_degree);
        let mut bases = Vec::new();
        for b in &self.bases {
            let file = format!("base_{}.ply", b.spec.id);
            let mut buf = Vec::new();
            ply::write_ply(&mut buf, &b.gaussians, n_sh).map_err(io_err(dir))?;
            write_atomic(&dir.join(&file), &buf)?;
            bases.push(BaseRecord { asset_id: b.spec.id.clone(), file });
        }
        let mut variances = Vec::new();
        for v in &self.variances {
            let file = format!("variance_{}_{}.ply", v.owner_asset_id, v.instance_index);
            let mut buf = Vec::new();
            ply::write_ply(&mut buf, &v.gaussians, n_sh).map_err(io_err(dir))?;
            write_atomic(&dir.join(&file), &buf)?;
            variances.push(VarianceRecord { asset_id: v.owner_asset_id.clone(), instance_index: v.instance_index, file });
        }
        let instantiations = self
            .instantiations
            .entries
            .iter()
            .map(|e| InstanceRecord {
                asset_id: e.asset_id.clone(),
                r: e.transform.rotation.transpose().as_slice().to_vec(),
                t: e.transform.translation.as_slice().to_vec(),
                s: e.transform.scale.as_slice().to_vec(),
                variance_index: e.variance_index,
            })
            .collect();
        let file = ManifestFile {
            assets: self.manifest.assets().to_vec(),
            instantiations,
            code: self.code.clone(),
            sh_degree: self.sh_degree,
            bases,
            variances,
        };
        let json = serde_json::to_string_pretty(&file).expect("serializable");
        write_atomic(&dir.join(CHECKPOINT_MANIFEST), json.as_bytes())
    }

    pub fn load(dir: &Path) -> Result<Self, AssemblyError> {
        let mpath = dir.join(CHECKPOINT_MANIFEST);
        let text = fs::read_to_string(&mpath).map_err(io_err(&mpath))?;
        let file: ManifestFile = serde_json::from_str(&text)
            .map_err(|e| AssemblyError::Format { what: mpath.display().to_string(), message: e.to_string() })?;
        let manifest = Manifest::new(file.assets).map_err(|e| AssemblyError::Invalid(e.to_string()))?;
        let read = |name: &str| -> Result<Vec<crate::splat::Gaussian3D>, AssemblyError> {
            let path: PathBuf = dir.join(name);
            let f = fs::File::open(&path).map_err(io_err(&path))?;
            let (gs, n_sh) = ply::read_ply(&mut BufReader::new(f))?;
            if n_sh != sh::coeff_count(file.sh_degree) {
                return Err(AssemblyError::Format { what: name.into(), message: format!("{n_sh} SH coefficients, expected degree {}", file.sh_degree) });
            }
            Ok(gs)
        };
        let mut bases = Vec::new();
        for b in &file.bases {
            let spec = manifest.get(&b.asset_id).ok_or_else(|| AssemblyError::DanglingAsset(b.asset_id.clone()))?;
            bases.push(BaseAsset { spec: spec.clone(), gaussians: read(&b.file)? });
        }
        let mut variances = Vec::new();
        for v in &file.variances {
            variances.push(VarianceAsset { owner_asset_id: v.asset_id.clone(), instance_index: v.instance_index, gaussians: read(&v.file)? });
        }
        let mut entries = Vec::new();
        for r in file.instantiations {
            if r.r.len() != 9 || r.t.len() != 3 || r.s.len() != 3 {
                return Err(AssemblyError::Format { what: "instantiation".into(), message: "needs R[9], T[3], S[3]".into() });
            }
            let transform = InstanceTransform::new(Mat3::from_row_slice(&r.r), Vec3::from_row_slice(&r.t), Vec3::from_row_slice(&r.s))
                .map_err(|e| AssemblyError::Invalid(e.to_string()))?;
            entries.push(Instantiation { asset_id: r.asset_id, transform, variance_index: r.variance_index });
        }
        Ok(Self {
            manifest,
            instantiations: InstantiationList { entries },
            code: file.code,
            sh_degree: file.sh_degree,
            bases,
            variances,
        })
    }
}
