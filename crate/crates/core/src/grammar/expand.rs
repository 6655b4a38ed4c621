use std::collections::HashMap;

use super::{resolve, GrammarError, InstanceTransform, Item, Level, Manifest, ProceduralCode};
use crate::splat::{Mat3, Vec3};

/// Residual widths below this are treated as an exact fit.
const FIT_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct Instantiation {
    pub asset_id: String,
    pub transform: InstanceTransform,
    pub variance_index: usize,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct InstantiationList {
    pub entries: Vec<Instantiation>,
}

impl InstantiationList {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Number of instances per asset id.
    pub fn counts(&self) -> HashMap<&str, usize> {
        let mut out = HashMap::new();
        for e in &self.entries {
            *out.entry(e.asset_id.as_str()).or_insert(0) += 1;
        }
        out
    }

    /// Applies `outer` to every instance (e.g. building-local to world).
    pub fn transformed(&self, outer: &InstanceTransform) -> InstantiationList {
        InstantiationList {
            entries: self
                .entries
                .iter()
                .map(|e| Instantiation { transform: outer.compose(&e.transform), ..e.clone() })
                .collect(),
        }
    }
}

/// One facade after flattening: fixed runs around at most one repeat unit.
struct FacadePlan<'a> {
    before: Vec<(&'a str, bool)>,
    unit: Option<Vec<(&'a str, bool)>>,
    after: Vec<(&'a str, bool)>,
}

fn flatten<'a>(items: &'a [Item], out: &mut Vec<(&'a str, bool)>) -> Result<(), String> {
    for item in items {
        match item {
            Item::Token { asset_id, scalable, .. } => out.push((asset_id, *scalable)),
            Item::Group { items, repeatable: false, .. } => flatten(items, out)?,
            Item::Group { repeatable: true, .. } => return Err("nested repeatable group".into()),
        }
    }
    Ok(())
}

fn plan(items: &[Item]) -> Result<FacadePlan<'_>, String> {
    let mut p = FacadePlan { before: Vec::new(), unit: None, after: Vec::new() };
    for item in items {
        match item {
            Item::Group { items, repeatable: true, .. } => {
                if p.unit.is_some() {
                    return Err("more than one repeatable group competes for the free width".into());
                }
                let mut unit = Vec::new();
                flatten(items, &mut unit)?;
                p.unit = Some(unit);
            }
            other => {
                let target = if p.unit.is_some() { &mut p.after } else { &mut p.before };
                flatten(std::slice::from_ref(other), target)?;
            }
        }
    }
    Ok(p)
}

fn width(manifest: &Manifest, id: &str) -> f64 {
    manifest.get(id).expect("resolved").extent[0]
}

fn level_height(level: &Level, manifest: &Manifest) -> f64 {
    let mut h: f64 = 0.0;
    for f in &level.facades {
        for item in &f.items {
            item.for_each_token(&mut |id, _| h = h.max(manifest.get(id).expect("resolved").extent[2]));
        }
    }
    h
}

fn four_facades(level: &Level) -> Result<[usize; 4], GrammarError> {
    match level.facades.len() {
        1 => Ok([0, 0, 0, 0]),
        2 => Ok([0, 1, 0, 1]),
        4 => Ok([0, 1, 2, 3]),
        n => Err(GrammarError::Invalid(format!(
            "level {} has {n} facades; expected 1, 2 or 4",
            level.id
        ))),
    }
}

/// Facade frames: origin on the footprint, run direction, rotation about z.
fn facade_frame(side: usize, length: f64, width: f64) -> (Vec3, Vec3, Mat3) {
    match side {
        0 => (Vec3::zeros(), Vec3::x(), Mat3::identity()),
        1 => (Vec3::new(length, 0.0, 0.0), Vec3::y(), Mat3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0)),
        2 => (Vec3::new(length, width, 0.0), -Vec3::x(), Mat3::new(-1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, 1.0)),
        _ => (Vec3::new(0.0, width, 0.0), -Vec3::y(), Mat3::new(0.0, 1.0, 0.0, -1.0, 0.0, 0.0, 0.0, 0.0, 1.0)),
    }
}

/// Per-token widths along one facade of the given length: `(asset_id, x scale)`.
fn layout_facade<'a>(
    p: &FacadePlan<'a>,
    manifest: &Manifest,
    length: f64,
) -> Result<Vec<(&'a str, f64)>, String> {
    let sum = |run: &[(&str, bool)]| run.iter().map(|(id, _)| width(manifest, id)).sum::<f64>();
    let fixed = sum(&p.before) + sum(&p.after);
    let free = length - fixed;
    if free < -FIT_TOL {
        return Err(format!("needs at least {fixed} m but the facade is {length} m"));
    }
    let (repeats, unit_width) = match &p.unit {
        Some(unit) => {
            let w = sum(unit);
            (((free / w) + FIT_TOL).floor().max(0.0) as usize, w)
        }
        None => (0, 0.0),
    };
    let residual = free - repeats as f64 * unit_width;

    let mut seq: Vec<(&str, bool, bool)> = Vec::new();
    seq.extend(p.before.iter().map(|&(id, s)| (id, s, false)));
    if let Some(unit) = &p.unit {
        for _ in 0..repeats {
            seq.extend(unit.iter().map(|&(id, s)| (id, s, true)));
        }
    }
    seq.extend(p.after.iter().map(|&(id, s)| (id, s, false)));

    let mut scales = vec![1.0; seq.len()];
    if residual.abs() > FIT_TOL {
        let scalable: f64 = seq.iter().filter(|t| t.1).map(|t| width(manifest, t.0)).sum();
        if scalable > 0.0 {
            let factor = (scalable + residual) / scalable;
            for (s, t) in scales.iter_mut().zip(&seq) {
                if t.1 {
                    *s = factor;
                }
            }
        } else if repeats > 0 {
            let grouped = repeats as f64 * unit_width;
            let factor = (grouped + residual) / grouped;
            for (s, t) in scales.iter_mut().zip(&seq) {
                if t.2 {
                    *s = factor;
                }
            }
        } else {
            return Err(format!(
                "{residual} m of width left over and no repeatable group or scalable asset to absorb it"
            ));
        }
    }
    Ok(seq.into_iter().zip(scales).map(|(t, s)| (t.0, s)).collect())
}

/// Final repeat count of every level for the requested height.
fn level_counts(code: &ProceduralCode, heights: &[f64], target: f64) -> Result<Vec<usize>, GrammarError> {
    let mut counts: Vec<usize> = code.levels.iter().map(|l| l.repeat_count).collect();
    let natural: f64 = heights.iter().zip(&counts).map(|(h, &c)| h * c as f64).sum();
    if (target - natural).abs() <= 1e-6 {
        return Ok(counts);
    }
    // The level with the largest repeat count (lowest index on ties) is elastic.
    let elastic = (0..counts.len()).fold(0, |best, k| if counts[k] > counts[best] { k } else { best });
    let h = heights[elastic];
    let new = if target > natural {
        counts[elastic] + ((target - natural) / h + FIT_TOL).floor() as usize
    } else {
        let drop = ((natural - target) / h - FIT_TOL).ceil() as usize;
        counts[elastic].checked_sub(drop).filter(|&c| c >= 1).ok_or_else(|| GrammarError::Infeasible {
            building: code.building_id.clone(),
            level: code.levels[elastic].id.clone(),
            facade: 0,
            message: format!("height {target} m is below the minimum stacked height"),
        })?
    };
    counts[elastic] = new;
    Ok(counts)
}

/// Smallest `(length, width, height)` the code can be expanded to.
pub fn facade_min_length(code: &ProceduralCode, manifest: &Manifest) -> Result<[f64; 3], GrammarError> {
    resolve(code, manifest)?;
    let mut dims = [0.0f64; 3];
    let mut heights = Vec::new();
    for level in &code.levels {
        let sides = four_facades(level)?;
        for (side, &f) in sides.iter().enumerate() {
            let p = plan(&level.facades[f].items).map_err(|m| ambiguous(code, level, side, m))?;
            let fixed: f64 = p.before.iter().chain(&p.after).map(|(id, _)| width(manifest, id)).sum();
            dims[side % 2] = dims[side % 2].max(fixed);
        }
        heights.push(level_height(level, manifest));
    }
    let counts: Vec<usize> = code.levels.iter().map(|l| l.repeat_count).collect();
    let elastic = (0..counts.len()).fold(0, |best, k| if counts[k] > counts[best] { k } else { best });
    dims[2] = heights
        .iter()
        .zip(&counts)
        .enumerate()
        .map(|(k, (h, &c))| h * if k == elastic { 1.0 } else { c as f64 })
        .sum();
    Ok(dims)
}

/// Minimum footprint with every level stacked at its written repeat count.
pub fn natural_dims(code: &ProceduralCode, manifest: &Manifest) -> Result<[f64; 3], GrammarError> {
    let [l, w, _] = facade_min_length(code, manifest)?;
    let h = code.levels.iter().map(|level| level_height(level, manifest) * level.repeat_count as f64).sum();
    Ok([l, w, h])
}

fn ambiguous(code: &ProceduralCode, level: &Level, side: usize, message: String) -> GrammarError {
    GrammarError::Ambiguous { building: code.building_id.clone(), level: level.id.clone(), facade: side, message }
}

/// Places assets for a building of footprint `dims[0] × dims[1]` and height
/// `dims[2]`. The footprint spans `[0, L] × [0, W]` with levels stacked from
/// `z = 0`. Each asset's local box is laid with its min corner at the facade
/// cursor, its local x along the facade and local y pointing inward.
pub fn expand(code: &ProceduralCode, manifest: &Manifest, dims: [f64; 3]) -> Result<InstantiationList, GrammarError> {
    resolve(code, manifest)?;
    if !dims.iter().all(|d| d.is_finite() && *d > 0.0) {
        return Err(GrammarError::Invalid(format!("dims must be positive, got {dims:?}")));
    }
    let [length, width_y, height] = dims;
    let heights: Vec<f64> = code.levels.iter().map(|l| level_height(l, manifest)).collect();
    let counts = level_counts(code, &heights, height)?;

    // Plan every facade once; errors name the offending facade.
    let mut layouts: Vec<[Vec<(&str, f64)>; 4]> = Vec::with_capacity(code.levels.len());
    for level in &code.levels {
        let sides = four_facades(level)?;
        let mut per_side: [Vec<(&str, f64)>; 4] = Default::default();
        for side in 0..4 {
            let p = plan(&level.facades[sides[side]].items).map_err(|m| ambiguous(code, level, side, m))?;
            let len = if side % 2 == 0 { length } else { width_y };
            per_side[side] = layout_facade(&p, manifest, len).map_err(|message| GrammarError::Infeasible {
                building: code.building_id.clone(),
                level: level.id.clone(),
                facade: side,
                message,
            })?;
        }
        layouts.push(per_side);
    }

    let mut counters: HashMap<&str, usize> = HashMap::new();
    let mut entries = Vec::new();
    let mut z = 0.0;
    for (k, level_layout) in layouts.iter().enumerate() {
        for _ in 0..counts[k] {
            for (side, tokens) in level_layout.iter().enumerate() {
                let (origin, dir, rot) = facade_frame(side, length, width_y);
                let mut cursor = 0.0;
                for &(id, sx) in tokens {
                    let spec = manifest.get(id).expect("resolved");
                    let scale = Vec3::new(sx, 1.0, 1.0);
                    let corner = spec.box_min().component_mul(&scale);
                    let translation = origin + dir * cursor + Vec3::new(0.0, 0.0, z) - rot * corner;
                    let counter = counters.entry(id).or_insert(0);
                    entries.push(Instantiation {
                        asset_id: id.to_string(),
                        transform: InstanceTransform { rotation: rot, translation, scale },
                        variance_index: *counter,
                    });
                    *counter += 1;
                    cursor += spec.extent[0] * sx;
                }
            }
            z += heights[k];
        }
    }
    Ok(InstantiationList { entries })
}
