use geo::{Area, BooleanOps, Centroid, Contains, Coord, Intersects, LineString, MultiPolygon, Polygon};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use super::CityError;

/// Ground-plane point in meters.
pub type Point = [f64; 2];

fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1]]
}

fn dot(a: Point, b: Point) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

fn cross(a: Point, b: Point) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

fn axpy(p: Point, s: f64, d: Point) -> Point {
    [p[0] + s * d[0], p[1] + s * d[1]]
}

fn coord(p: Point) -> Coord<f64> {
    Coord { x: p[0], y: p[1] }
}

fn ring(points: &[Point]) -> LineString<f64> {
    LineString::from(points.iter().map(|&p| coord(p)).collect::<Vec<_>>())
}

fn points(ls: &LineString<f64>) -> Vec<Point> {
    let mut out: Vec<Point> = ls.coords().map(|c| [c.x, c.y]).collect();
    if out.len() > 1 && out.first() == out.last() {
        out.pop();
    }
    out
}

/// Straight road center line with its full width.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Road {
    pub a: Point,
    pub b: Point,
    pub width: f64,
}

impl Road {
    pub fn length(&self) -> f64 {
        let d = sub(self.b, self.a);
        dot(d, d).sqrt()
    }

    pub fn direction(&self) -> Point {
        let d = sub(self.b, self.a);
        let l = self.length();
        [d[0] / l, d[1] / l]
    }

    /// Left normal of the direction.
    pub fn normal(&self) -> Point {
        let d = self.direction();
        [-d[1], d[0]]
    }

    /// The road surface: the center line swept by half the width on each side.
    pub fn polygon(&self) -> Polygon<f64> {
        let n = self.normal();
        let h = self.width / 2.0;
        let pts = [axpy(self.a, -h, n), axpy(self.b, -h, n), axpy(self.b, h, n), axpy(self.a, h, n)];
        Polygon::new(ring(&pts), vec![])
    }

    fn validate(&self) -> Result<(), CityError> {
        let finite = self.a.iter().chain(&self.b).all(|v| v.is_finite());
        if !finite || !(self.width > 0.0 && self.width.is_finite()) || !(self.length() > 0.0) {
            return Err(CityError::Geometry(format!("road {:?}→{:?} (width {}) is degenerate", self.a, self.b, self.width)));
        }
        Ok(())
    }
}

/// What the layout canvas submits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayoutInput {
    pub boundary: Vec<Point>,
    #[serde(default)]
    pub primary_roads: Vec<Road>,
}

/// Regional characteristics of a block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionProfile {
    pub name: String,
    /// Footprint extent along the road axis.
    pub width: [f64; 2],
    /// Footprint extent perpendicular to the road axis.
    pub depth: [f64; 2],
    pub height: [f64; 2],
    /// Probability a feasible footprint is built on.
    pub density: f64,
    #[serde(default)]
    pub max_buildings: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CityConfig {
    pub secondary_interval: f64,
    pub secondary_width: f64,
    /// Minimum clearance of a footprint from block edges and secondary roads.
    pub setback: f64,
    /// Gap between neighboring footprints; at least `setback`.
    pub spacing: f64,
    /// Scan step when a candidate footprint does not fit.
    pub packing_step: f64,
    pub profiles: Vec<RegionProfile>,
    /// Building codes to draw from; empty means every code in the library.
    pub codes: Vec<String>,
    pub decoration_kinds: Vec<String>,
    /// Mean distance between decorations along a road.
    pub decoration_spacing: f64,
    /// Distance of decorations from the road edge.
    pub decoration_offset: f64,
}

impl Default for CityConfig {
    fn default() -> Self {
        Self {
            secondary_interval: 40.0,
            secondary_width: 6.0,
            setback: 2.0,
            spacing: 3.0,
            packing_step: 1.0,
            profiles: vec![
                RegionProfile {
                    name: "downtown".into(),
                    width: [10.0, 18.0],
                    depth: [8.0, 14.0],
                    height: [9.0, 15.0],
                    density: 1.0,
                    max_buildings: None,
                },
                RegionProfile {
                    name: "residential".into(),
                    width: [6.0, 10.0],
                    depth: [6.0, 9.0],
                    height: [3.0, 6.0],
                    density: 0.7,
                    max_buildings: None,
                },
            ],
            codes: Vec::new(),
            decoration_kinds: Vec::new(),
            decoration_spacing: 10.0,
            decoration_offset: 1.0,
        }
    }
}

impl CityConfig {
    pub fn validate(&self) -> Result<(), CityError> {
        let pos = |v: f64| v > 0.0 && v.is_finite();
        if !pos(self.secondary_interval) || !pos(self.secondary_width) || !pos(self.packing_step) || !pos(self.decoration_spacing) {
            return Err(CityError::Config("intervals, widths and steps must be positive".into()));
        }
        if !(self.setback >= 0.0 && self.spacing >= self.setback && self.decoration_offset >= 0.0) {
            return Err(CityError::Config("need 0 ≤ setback ≤ spacing and a non-negative decoration offset".into()));
        }
        if self.profiles.is_empty() {
            return Err(CityError::Config("at least one region profile is required".into()));
        }
        for p in &self.profiles {
            let ok = |r: [f64; 2]| r[0] > 0.0 && r[0] <= r[1] && r[1].is_finite();
            if !ok(p.width) || !ok(p.depth) || !ok(p.height) || !(p.density > 0.0 && p.density <= 1.0) {
                return Err(CityError::Config(format!("profile `{}` has an empty range or bad density", p.name)));
            }
        }
        Ok(())
    }
}

/// Rectangle with `size[0]` along `angle` and `size[1]` to its left, from `origin`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Footprint {
    pub origin: Point,
    pub angle: f64,
    pub size: [f64; 2],
}

impl Footprint {
    pub fn axes(&self) -> (Point, Point) {
        let (s, c) = self.angle.sin_cos();
        ([c, s], [-s, c])
    }

    pub fn corners(&self) -> [Point; 4] {
        self.inflated_corners(0.0)
    }

    fn inflated_corners(&self, m: f64) -> [Point; 4] {
        let (u, v) = self.axes();
        let o = axpy(axpy(self.origin, -m, u), -m, v);
        let (w, d) = (self.size[0] + 2.0 * m, self.size[1] + 2.0 * m);
        [o, axpy(o, w, u), axpy(axpy(o, w, u), d, v), axpy(o, d, v)]
    }

    pub fn polygon(&self) -> Polygon<f64> {
        Polygon::new(ring(&self.corners()), vec![])
    }

    /// The footprint grown by `m` on every side (square corners).
    pub fn inflated(&self, m: f64) -> Polygon<f64> {
        Polygon::new(ring(&self.inflated_corners(m)), vec![])
    }

    /// Closed containment in the footprint's own frame.
    pub fn contains_point(&self, p: Point) -> bool {
        let (u, v) = self.axes();
        let r = sub(p, self.origin);
        let (a, b) = (dot(r, u), dot(r, v));
        (0.0..=self.size[0]).contains(&a) && (0.0..=self.size[1]).contains(&b)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub footprint: Footprint,
    pub height: f64,
    pub code: String,
    pub seed: u64,
    pub block: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Decoration {
    pub kind: String,
    pub position: Point,
    /// Yaw in radians; the decoration's local +y faces the road.
    pub rotation: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub exterior: Vec<Point>,
    #[serde(default)]
    pub holes: Vec<Vec<Point>>,
    pub profile: String,
}

impl Block {
    pub fn polygon(&self) -> Polygon<f64> {
        Polygon::new(ring(&self.exterior), self.holes.iter().map(|h| ring(h)).collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CityLayout {
    pub boundary: Vec<Point>,
    pub primary_roads: Vec<Road>,
    pub blocks: Vec<Block>,
    pub secondary_roads: Vec<Road>,
    pub placements: Vec<Placement>,
    pub decorations: Vec<Decoration>,
}

fn segments_intersect(p1: Point, p2: Point, q1: Point, q2: Point) -> bool {
    let d1 = cross(sub(p2, p1), sub(q1, p1));
    let d2 = cross(sub(p2, p1), sub(q2, p1));
    let d3 = cross(sub(q2, q1), sub(p1, q1));
    let d4 = cross(sub(q2, q1), sub(p2, q1));
    if ((d1 > 0.0) != (d2 > 0.0)) && d1 != 0.0 && d2 != 0.0 && ((d3 > 0.0) != (d4 > 0.0)) && d3 != 0.0 && d4 != 0.0 {
        return true;
    }
    let on = |a: Point, b: Point, p: Point, d: f64| {
        d == 0.0 && p[0] >= a[0].min(b[0]) && p[0] <= a[0].max(b[0]) && p[1] >= a[1].min(b[1]) && p[1] <= a[1].max(b[1])
    };
    on(p1, p2, q1, d1) || on(p1, p2, q2, d2) || on(q1, q2, p1, d3) || on(q1, q2, p2, d4)
}

/// Validates a boundary ring and returns it without a closing duplicate.
fn boundary_ring(boundary: &[Point]) -> Result<Vec<Point>, CityError> {
    let mut pts = boundary.to_vec();
    if pts.len() > 1 && pts.first() == pts.last() {
        pts.pop();
    }
    if pts.len() < 3 || !pts.iter().flatten().all(|v| v.is_finite()) {
        return Err(CityError::Geometry("boundary needs at least 3 finite vertices".into()));
    }
    let n = pts.len();
    for i in 0..n {
        for j in i + 1..n {
            let adjacent = j == i + 1 || (i == 0 && j == n - 1);
            if !adjacent && segments_intersect(pts[i], pts[(i + 1) % n], pts[j], pts[(j + 1) % n]) {
                return Err(CityError::Geometry(format!("boundary edges {i} and {j} intersect")));
            }
        }
    }
    if Polygon::new(ring(&pts), vec![]).unsigned_area() <= 0.0 {
        return Err(CityError::Geometry("boundary has zero area".into()));
    }
    Ok(pts)
}

pub fn boundary_polygon(boundary: &[Point]) -> Result<Polygon<f64>, CityError> {
    Ok(Polygon::new(ring(&boundary_ring(boundary)?), vec![]))
}

/// Splits the boundary interior along the primary roads. Blocks are the
/// boundary minus the union of road surfaces.
pub fn partition_blocks(boundary: &[Point], primary_roads: &[Road]) -> Result<Vec<Polygon<f64>>, CityError> {
    let poly = boundary_polygon(boundary)?;
    let mut roads = MultiPolygon::<f64>(Vec::new());
    for r in primary_roads {
        r.validate()?;
        roads = roads.union(&r.polygon());
    }
    let total = poly.unsigned_area();
    Ok(poly.difference(&roads).0.into_iter().filter(|b| b.unsigned_area() > 1e-12 * total).collect())
}

/// Longest exterior edge of `block` that runs along a road side:
/// `(start, end, road index, inward normal)`.
fn frontage(block: &Polygon<f64>, roads: &[Road]) -> Option<(Point, Point, usize, Point)> {
    let pts = points(block.exterior());
    let mut best: Option<(Point, Point, usize, Point)> = None;
    let mut best_len = 0.0;
    for i in 0..pts.len() {
        let (p, q) = (pts[i], pts[(i + 1) % pts.len()]);
        let e = sub(q, p);
        let len = dot(e, e).sqrt();
        if len <= best_len {
            continue;
        }
        for (k, r) in roads.iter().enumerate() {
            let (d, n) = (r.direction(), r.normal());
            let tol = 1e-6 * (1.0 + r.length());
            let (sp, sq) = (dot(sub(p, r.a), n), dot(sub(q, r.a), n));
            let along = |x: Point| (-tol..=r.length() + tol).contains(&dot(sub(x, r.a), d));
            let side = (sp.abs() - r.width / 2.0).abs() <= tol && (sq.abs() - r.width / 2.0).abs() <= tol && sp * sq > 0.0;
            if cross(d, e).abs() <= 1e-9 * len && side && along(p) && along(q) {
                let s = sp.signum();
                best = Some((p, q, k, [n[0] * s, n[1] * s]));
                best_len = len;
                break;
            }
        }
    }
    best
}

/// Nearest positive distance along `dir` from `origin` to any ring of `poly`.
fn ray_exit(poly: &Polygon<f64>, origin: Point, dir: Point) -> Option<f64> {
    let mut best: Option<f64> = None;
    for ls in std::iter::once(poly.exterior()).chain(poly.interiors()) {
        let pts = points(ls);
        for i in 0..pts.len() {
            let (c, f) = (pts[i], pts[(i + 1) % pts.len()]);
            let e = sub(f, c);
            let den = cross(dir, e);
            if den.abs() < 1e-15 {
                continue;
            }
            let w = sub(c, origin);
            let t = cross(w, e) / den;
            let s = cross(w, dir) / den;
            if t > 1e-9 && (-1e-12..=1.0 + 1e-12).contains(&s) && best.is_none_or(|b| t < b) {
                best = Some(t);
            }
        }
    }
    best
}

/// Perpendicular roads branching from each block's longest road frontage,
/// one every `secondary_interval` meters, running until they leave the block.
pub fn generate_secondary_roads(
    blocks: &[Polygon<f64>],
    primary_roads: &[Road],
    config: &CityConfig,
    seed: u64,
) -> Vec<Road> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let mut out = Vec::new();
    for block in blocks {
        let Some((p, q, _, inward)) = frontage(block, primary_roads) else { continue };
        let e = sub(q, p);
        let len = dot(e, e).sqrt();
        let count = (len / config.secondary_interval + 1e-9).floor() as usize;
        if count == 0 {
            continue;
        }
        let unit = [e[0] / len, e[1] / len];
        let span = len - (count - 1) as f64 * config.secondary_interval;
        let offset = span * rng.gen_range(0.25..0.75);
        for j in 0..count {
            let start = axpy(p, offset + j as f64 * config.secondary_interval, unit);
            let probe = axpy(start, 1e-6, inward);
            if !block.contains(&coord(probe)) {
                continue;
            }
            if let Some(t) = ray_exit(block, start, inward) {
                out.push(Road { a: start, b: axpy(start, t, inward), width: config.secondary_width });
            }
        }
    }
    out
}

fn sample(rng: &mut ChaCha8Rng, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.gen_range(r[0]..=r[1])
    }
}

/// Road-aligned footprints packed greedily in strips across the block, each
/// kept `setback` away from the block edge and from `obstacles`.
pub fn place_buildings(
    block: &Polygon<f64>,
    axis: f64,
    obstacles: &[Polygon<f64>],
    profile: &RegionProfile,
    config: &CityConfig,
    seed: u64,
) -> Vec<Footprint> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (s, c) = axis.sin_cos();
    let (u, v) = ([c, s], [-s, c]);
    let pts = points(block.exterior());
    if pts.is_empty() || block.unsigned_area() <= 0.0 {
        return Vec::new();
    }
    let m = config.setback;
    let fits = |fp: &Footprint| {
        let grown = fp.inflated(m);
        block.contains(&grown) && !obstacles.iter().any(|o| o.intersects(&grown))
    };
    let from_uv = |a: f64, b: f64| [a * u[0] + b * v[0], a * u[1] + b * v[1]];
    let limit = profile.max_buildings.unwrap_or(usize::MAX);
    let mut out = Vec::new();
    if limit == 0 {
        return out;
    }

    if limit == 1 {
        let Some(center) = block.centroid() else { return out };
        let cp = [center.x(), center.y()];
        let (cu, cv) = (dot(cp, u), dot(cp, v));
        let (mut w, mut d) = (sample(&mut rng, profile.width), sample(&mut rng, profile.depth));
        for _ in 0..40 {
            let fp = Footprint { origin: from_uv(cu - w / 2.0, cv - d / 2.0), angle: axis, size: [w, d] };
            if fits(&fp) {
                out.push(fp);
                break;
            }
            w *= 0.9;
            d *= 0.9;
        }
        return out;
    }

    let us = pts.iter().map(|&p| dot(p, u));
    let vs = pts.iter().map(|&p| dot(p, v));
    let (u0, u1) = us.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
    let (v0, v1) = vs.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
    let mut b = v0 + m;
    'strips: while b < v1 {
        let d = sample(&mut rng, profile.depth);
        if b + d + m > v1 {
            break;
        }
        let mut a = u0 + m;
        while a < u1 {
            let w = sample(&mut rng, profile.width);
            if a + w + m > u1 {
                break;
            }
            let fp = Footprint { origin: from_uv(a, b), angle: axis, size: [w, d] };
            if fits(&fp) {
                if rng.gen::<f64>() < profile.density {
                    out.push(fp);
                    if out.len() >= limit {
                        break 'strips;
                    }
                }
                a += w + config.spacing;
            } else {
                a += config.packing_step;
            }
        }
        b += d + config.spacing;
    }
    out
}

/// Street furniture dropped along both road edges as a Poisson process with
/// mean gap `decoration_spacing`. Points inside footprints or outside the
/// boundary are discarded.
pub fn place_decorations(
    roads: &[Road],
    footprints: &[Footprint],
    boundary: &Polygon<f64>,
    config: &CityConfig,
    seed: u64,
) -> Vec<Decoration> {
    let mut out = Vec::new();
    if config.decoration_kinds.is_empty() {
        return out;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(3);
    let gap = Exp::new(1.0 / config.decoration_spacing).expect("positive rate");
    for r in roads {
        let (d, n) = (r.direction(), r.normal());
        let mut t = gap.sample(&mut rng);
        while t < r.length() {
            let side = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            let pos = axpy(axpy(r.a, t, d), side * (r.width / 2.0 + config.decoration_offset), n);
            let kind = config.decoration_kinds[rng.gen_range(0..config.decoration_kinds.len())].clone();
            if boundary.contains(&coord(pos)) && !footprints.iter().any(|f| f.contains_point(pos)) {
                // local +y is turned to face the road
                let face = [-side * n[0], -side * n[1]];
                out.push(Decoration { kind, position: pos, rotation: face[1].atan2(face[0]) - std::f64::consts::FRAC_PI_2 });
            }
            t += gap.sample(&mut rng);
        }
    }
    out
}

/// Road axis a block's buildings align to: its frontage road, or its longest
/// edge when no road touches it.
fn block_axis(block: &Polygon<f64>, roads: &[Road]) -> f64 {
    if let Some((_, _, k, _)) = frontage(block, roads) {
        let d = roads[k].direction();
        return d[1].atan2(d[0]);
    }
    let pts = points(block.exterior());
    let mut best = (0.0, 0.0);
    for i in 0..pts.len() {
        let e = sub(pts[(i + 1) % pts.len()], pts[i]);
        let l = dot(e, e);
        if l > best.0 {
            best = (l, e[1].atan2(e[0]));
        }
    }
    best.1
}

/// Blocks, secondary roads, building placements and decorations for one seed.
/// Blocks depend only on the input; everything else is drawn from `seed`.
pub fn generate_layout(input: &LayoutInput, config: &CityConfig, seed: u64) -> Result<CityLayout, CityError> {
    config.validate()?;
    let boundary = boundary_ring(&input.boundary)?;
    let boundary_poly = Polygon::new(ring(&boundary), vec![]);
    let blocks = partition_blocks(&boundary, &input.primary_roads)?;
    let secondary = generate_secondary_roads(&blocks, &input.primary_roads, config, seed);
    let obstacles: Vec<Polygon<f64>> = secondary.iter().map(Road::polygon).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2);
    let mut out_blocks = Vec::with_capacity(blocks.len());
    let mut placements = Vec::new();
    for (k, block) in blocks.iter().enumerate() {
        let profile = &config.profiles[rng.gen_range(0..config.profiles.len())];
        let axis = block_axis(block, &input.primary_roads);
        for fp in place_buildings(block, axis, &obstacles, profile, config, rng.gen()) {
            let height = sample(&mut rng, profile.height);
            let code = if config.codes.is_empty() {
                String::new()
            } else {
                config.codes[rng.gen_range(0..config.codes.len())].clone()
            };
            placements.push(Placement { footprint: fp, height, code, seed: rng.gen(), block: k });
        }
        out_blocks.push(Block {
            exterior: points(block.exterior()),
            holes: block.interiors().iter().map(points).collect(),
            profile: profile.name.clone(),
        });
    }
    let roads: Vec<Road> = input.primary_roads.iter().chain(&secondary).cloned().collect();
    let footprints: Vec<Footprint> = placements.iter().map(|p| p.footprint.clone()).collect();
    let decorations = place_decorations(&roads, &footprints, &boundary_poly, config, seed);
    Ok(CityLayout {
        boundary,
        primary_roads: input.primary_roads.clone(),
        blocks: out_blocks,
        secondary_roads: secondary,
        placements,
        decorations,
    })
}
