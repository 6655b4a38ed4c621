//! Command implementations behind the `procsplat` binary, and the local HTTP
//! service used by the studio.

pub mod server;

use std::fs;
use std::io::{BufWriter, Cursor};
use std::path::Path;

use procsplat::assembly::{write_ply, AssemblyError, Checkpoint, Scene};
use procsplat::city::{building_checkpoint, generate_city_checkpoint, AssetLibrary, CityConfig, CityError, LayoutInput};
use procsplat::grammar::{parse, parse_manifest, GrammarError, ProceduralCode};
use procsplat::render::{render, RenderConfig, RenderError};
use procsplat::splat::{sh, Camera, CameraRecord, SplatError};
use procsplat::train::{code_dims, train, write_metrics, Dataset, TrainConfig, TrainError};
use thiserror::Error;

pub const METRICS_FILE: &str = "metrics.ndjson";
pub const LAYOUT_OUT_FILE: &str = "layout_out.json";
pub const SNAPSHOT_DIR: &str = "snapshot";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {message}")]
    Json { path: String, message: String },
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Grammar(#[from] GrammarError),
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Splat(#[from] SplatError),
    #[error(transparent)]
    City(#[from] CityError),
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|source| CliError::Io { path: path.display().to_string(), source })
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| CliError::Io { path: dir.display().to_string(), source })?;
    }
    fs::write(path, bytes).map_err(|source| CliError::Io { path: path.display().to_string(), source })
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    serde_json::from_str(&read_text(path)?).map_err(|e| CliError::Json { path: path.display().to_string(), message: e.to_string() })
}

/// Renders `scene` and encodes it as an 8-bit RGB PNG.
pub fn render_png(scene: &Scene, camera: &Camera) -> Result<Vec<u8>, CliError> {
    let out = render(scene, camera, &RenderConfig::default())?;
    let mut bytes = Vec::new();
    out.to_rgb8()
        .write_to(&mut Cursor::new(&mut bytes), image::ImageFormat::Png)
        .map_err(|e| CliError::Usage(format!("png encoding: {e}")))?;
    Ok(bytes)
}

pub fn load_camera(path: &Path) -> Result<Camera, CliError> {
    let rec: CameraRecord = read_json(path)?;
    Ok(Camera::from_record(&rec)?)
}

/// Fits `code` to the dataset and writes the checkpoint and metrics log into
/// `out`. A non-finite loss leaves the last good state in `out/snapshot`.
pub fn fit(dataset: &Path, code: &Path, manifest: &Path, config: Option<&Path>, seed: Option<u64>, out: &Path) -> Result<Checkpoint, CliError> {
    let data = Dataset::load(dataset)?;
    let code = parse(&read_text(code)?)?;
    let manifest = parse_manifest(&read_text(manifest)?)?;
    let mut config = match config {
        Some(p) => TrainConfig::from_json(&read_text(p)?)?,
        None => TrainConfig::default(),
    };
    if let Some(s) = seed {
        config.seed = s;
    }
    let fitted = match train(&data, &code, &manifest, &config) {
        Ok(f) => f,
        Err(TrainError::NonFinite { iteration, view, what, snapshot }) => {
            snapshot.save(&out.join(SNAPSHOT_DIR))?;
            return Err(TrainError::NonFinite { iteration, view, what, snapshot }.into());
        }
        Err(e) => return Err(e.into()),
    };
    fitted.checkpoint.save(out)?;
    let mut log = Vec::new();
    write_metrics(&mut log, &fitted.metrics).expect("in-memory write");
    write_bytes(&out.join(METRICS_FILE), &log)?;
    Ok(fitted.checkpoint)
}

pub fn render_checkpoint(checkpoint: &Path, camera: &Path, out: &Path) -> Result<(), CliError> {
    let scene = Checkpoint::load(checkpoint)?.scene()?;
    write_bytes(out, &render_png(&scene, &load_camera(camera)?)?)
}

fn dims_or_natural(code: &ProceduralCode, library: &AssetLibrary, dims: Option<[f64; 3]>) -> Result<[f64; 3], CliError> {
    match dims {
        Some(d) => Ok(d),
        None => Ok(code_dims(code, &library.manifest)?),
    }
}

/// Assembles procedural code against a library into a checkpoint in `out`.
pub fn assemble_code(library: &Path, code: &Path, dims: Option<[f64; 3]>, seed: u64, out: &Path) -> Result<Checkpoint, CliError> {
    let library = AssetLibrary::load(library)?;
    let code = parse(&read_text(code)?)?;
    let dims = dims_or_natural(&code, &library, dims)?;
    let ck = building_checkpoint(&code, dims, &library, seed)?;
    ck.save(out)?;
    Ok(ck)
}

/// A building from the library's own code for `building`.
pub fn generate_building(library: &Path, building: &str, dims: Option<[f64; 3]>, seed: u64, out: &Path) -> Result<Checkpoint, CliError> {
    let library = AssetLibrary::load(library)?;
    let code = library.code(building).ok_or_else(|| CliError::Usage(format!("no building `{building}` in the library")))?;
    let dims = dims_or_natural(code, &library, dims)?;
    let ck = building_checkpoint(code, dims, &library, seed)?;
    ck.save(out)?;
    Ok(ck)
}

/// Writes the city checkpoint and `layout_out.json` into `out`.
pub fn generate_city(layout: &Path, library: &Path, config: Option<&Path>, seed: u64, out: &Path) -> Result<Checkpoint, CliError> {
    let input: LayoutInput = read_json(layout)?;
    let library = AssetLibrary::load(library)?;
    let config: CityConfig = match config {
        Some(p) => read_json(p)?,
        None => CityConfig::default(),
    };
    let (layout, ck) = generate_city_checkpoint(&input, &library, &config, seed)?;
    ck.save(out)?;
    let json = serde_json::to_string_pretty(&layout).expect("serializable");
    write_bytes(&out.join(LAYOUT_OUT_FILE), json.as_bytes())?;
    Ok(ck)
}

/// Flattens a checkpoint into one world-space PLY. SH coefficients are
/// rotated out of their instance frames.
pub fn export_ply(checkpoint: &Path, out: &Path) -> Result<(), CliError> {
    let ck = Checkpoint::load(checkpoint)?;
    let scene = ck.scene()?;
    let gaussians: Vec<_> = scene
        .gaussians
        .iter()
        .enumerate()
        .map(|(k, g)| {
            let mut g = g.clone();
            g.sh = sh::rotate(&g.sh, scene.sh_frame(k));
            g
        })
        .collect();
    let mut buf = BufWriter::new(Vec::new());
    write_ply(&mut buf, &gaussians, sh::coeff_count(ck.sh_degree)).map_err(|source| CliError::Io { path: out.display().to_string(), source })?;
    write_bytes(out, &buf.into_inner().expect("in-memory buffer"))
}

/// Caps the global rayon pool at `PROCSPLAT_THREADS` when set.
pub fn configure_threads() -> Result<(), CliError> {
    if let Ok(v) = std::env::var("PROCSPLAT_THREADS") {
        let n: usize = v.parse().ok().filter(|&n| n > 0).ok_or_else(|| CliError::Usage(format!("PROCSPLAT_THREADS must be a positive integer, got `{v}`")))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| CliError::Usage(e.to_string()))?;
    }
    Ok(())
}
