//! Independent geometry for auditing city layouts: shoelace areas,
//! Sutherland–Hodgman clipping and segment distances.

use procsplat::city::{CityConfig, CityLayout, Footprint, LayoutInput, Point, Road};

pub struct Fixture {
    pub name: &'static str,
    pub input: LayoutInput,
    /// Convex pieces whose union is the boundary.
    pub pieces: Vec<Vec<Point>>,
}

fn road(a: Point, b: Point, width: f64) -> Road {
    Road { a, b, width }
}

fn fixture(name: &'static str, boundary: Vec<Point>, roads: Vec<Road>, pieces: Option<Vec<Vec<Point>>>) -> Fixture {
    let pieces = pieces.unwrap_or_else(|| vec![boundary.clone()]);
    Fixture { name, input: LayoutInput { boundary, primary_roads: roads }, pieces }
}

pub fn fixtures() -> Vec<Fixture> {
    let hexagon: Vec<Point> = (0..6)
        .map(|k| {
            let a = k as f64 * std::f64::consts::PI / 3.0 + 0.2;
            [150.0 + 140.0 * a.cos(), 150.0 + 120.0 * a.sin()]
        })
        .collect();
    let diamond = vec![[150.0, 0.0], [300.0, 150.0], [150.0, 300.0], [0.0, 150.0]];
    vec![
        fixture(
            "square-cross",
            vec![[0.0, 0.0], [200.0, 0.0], [200.0, 200.0], [0.0, 200.0]],
            vec![road([-10.0, 100.0], [210.0, 100.0], 10.0), road([90.0, -10.0], [90.0, 210.0], 8.0)],
            None,
        ),
        fixture(
            "strip",
            vec![[0.0, 0.0], [320.0, 0.0], [320.0, 140.0], [0.0, 140.0]],
            vec![road([-5.0, 70.0], [325.0, 70.0], 12.0)],
            None,
        ),
        fixture(
            "hexagon-three-roads",
            hexagon,
            vec![
                road([0.0, 120.0], [300.0, 180.0], 10.0),
                road([100.0, 0.0], [130.0, 300.0], 8.0),
                road([300.0, 60.0], [60.0, 300.0], 9.0),
            ],
            None,
        ),
        fixture(
            "diamond",
            diamond,
            vec![road([0.0, 0.0], [300.0, 300.0], 10.0), road([300.0, 0.0], [0.0, 300.0], 10.0)],
            None,
        ),
        fixture(
            "l-shape",
            vec![[0.0, 0.0], [240.0, 0.0], [240.0, 100.0], [100.0, 100.0], [100.0, 220.0], [0.0, 220.0]],
            vec![road([-10.0, 50.0], [250.0, 50.0], 10.0), road([50.0, -10.0], [50.0, 230.0], 8.0)],
            Some(vec![
                vec![[0.0, 0.0], [240.0, 0.0], [240.0, 100.0], [0.0, 100.0]],
                vec![[0.0, 100.0], [100.0, 100.0], [100.0, 220.0], [0.0, 220.0]],
            ]),
        ),
    ]
}

pub fn audit_config() -> CityConfig {
    CityConfig { decoration_kinds: vec!["lamp".into(), "bin".into()], ..Default::default() }
}

fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1]]
}

fn cross(a: Point, b: Point) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

fn dot(a: Point, b: Point) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

pub fn shoelace(poly: &[Point]) -> f64 {
    let n = poly.len();
    (0..n).map(|i| cross(poly[i], poly[(i + 1) % n])).sum::<f64>() / 2.0
}

fn ccw(mut poly: Vec<Point>) -> Vec<Point> {
    if shoelace(&poly) < 0.0 {
        poly.reverse();
    }
    poly
}

/// Sutherland–Hodgman: `subject` clipped by the convex `clip`.
pub fn clip_convex(subject: &[Point], clip: &[Point]) -> Vec<Point> {
    let clip = ccw(clip.to_vec());
    let mut out = subject.to_vec();
    for i in 0..clip.len() {
        let (a, b) = (clip[i], clip[(i + 1) % clip.len()]);
        let inside = |p: Point| cross(sub(b, a), sub(p, a)) >= 0.0;
        let input = std::mem::take(&mut out);
        for j in 0..input.len() {
            let (p, q) = (input[j], input[(j + 1) % input.len()]);
            let (ip, iq) = (inside(p), inside(q));
            if ip {
                out.push(p);
            }
            if ip != iq {
                let d = sub(q, p);
                let t = cross(sub(b, a), sub(a, p)) / cross(sub(b, a), d);
                out.push([p[0] + t * d[0], p[1] + t * d[1]]);
            }
        }
        if out.is_empty() {
            break;
        }
    }
    out
}

fn road_rect(r: &Road) -> Vec<Point> {
    let d = sub(r.b, r.a);
    let l = dot(d, d).sqrt();
    let n = [-d[1] / l * r.width / 2.0, d[0] / l * r.width / 2.0];
    vec![
        [r.a[0] - n[0], r.a[1] - n[1]],
        [r.b[0] - n[0], r.b[1] - n[1]],
        [r.b[0] + n[0], r.b[1] + n[1]],
        [r.a[0] + n[0], r.a[1] + n[1]],
    ]
}

/// Area of the union of road surfaces inside the boundary, by
/// inclusion–exclusion over convex intersections.
pub fn road_area_oracle(fx: &Fixture) -> f64 {
    let rects: Vec<Vec<Point>> = fx.input.primary_roads.iter().map(road_rect).collect();
    let mut total = 0.0;
    for piece in &fx.pieces {
        for mask in 1u32..(1 << rects.len()) {
            let mut poly = piece.clone();
            for (k, r) in rects.iter().enumerate() {
                if mask & (1 << k) != 0 {
                    poly = clip_convex(&poly, r);
                }
            }
            let sign = if mask.count_ones() % 2 == 1 { 1.0 } else { -1.0 };
            if poly.len() >= 3 {
                total += sign * shoelace(&poly).abs();
            }
        }
    }
    total
}

pub fn segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let d = sub(b, a);
    let t = (dot(sub(p, a), d) / dot(d, d)).clamp(0.0, 1.0);
    let c = [a[0] + t * d[0], a[1] + t * d[1]];
    dot(sub(p, c), sub(p, c)).sqrt()
}

fn segments_cross(p1: Point, p2: Point, q1: Point, q2: Point) -> bool {
    let d1 = cross(sub(p2, p1), sub(q1, p1));
    let d2 = cross(sub(p2, p1), sub(q2, p1));
    let d3 = cross(sub(q2, q1), sub(p1, q1));
    let d4 = cross(sub(q2, q1), sub(p2, q1));
    d1 * d2 < 0.0 && d3 * d4 < 0.0
}

fn seg_seg_distance(a: Point, b: Point, c: Point, d: Point) -> f64 {
    if segments_cross(a, b, c, d) {
        return 0.0;
    }
    segment_distance(a, c, d).min(segment_distance(b, c, d)).min(segment_distance(c, a, b)).min(segment_distance(d, a, b))
}

pub fn point_in_ring(p: Point, ring: &[Point]) -> bool {
    let mut inside = false;
    let n = ring.len();
    for i in 0..n {
        let (a, b) = (ring[i], ring[(i + 1) % n]);
        if (a[1] > p[1]) != (b[1] > p[1]) && p[0] < a[0] + (p[1] - a[1]) / (b[1] - a[1]) * (b[0] - a[0]) {
            inside = !inside;
        }
    }
    inside
}

fn edges(ring: &[Point]) -> impl Iterator<Item = (Point, Point)> + '_ {
    (0..ring.len()).map(move |i| (ring[i], ring[(i + 1) % ring.len()]))
}

fn rect_distance(a: &Footprint, b: &Footprint) -> f64 {
    let (ca, cb) = (a.corners(), b.corners());
    if ca.iter().any(|&p| point_in_ring(p, &cb)) || cb.iter().any(|&p| point_in_ring(p, &ca)) {
        return 0.0;
    }
    let mut best = f64::INFINITY;
    for (p, q) in edges(&ca) {
        for (r, s) in edges(&cb) {
            best = best.min(seg_seg_distance(p, q, r, s));
        }
    }
    best
}

pub struct Audit {
    pub area_rel: f64,
    pub failures: Vec<String>,
    pub max_dot: f64,
}

/// Checks every layout invariant; failures are collected, not panicked on.
pub fn audit(fx: &Fixture, layout: &CityLayout, config: &CityConfig) -> Audit {
    let mut failures = Vec::new();
    let boundary_area = shoelace(&fx.input.boundary).abs();
    let blocks_area: f64 = layout
        .blocks
        .iter()
        .map(|b| shoelace(&b.exterior).abs() - b.holes.iter().map(|h| shoelace(h).abs()).sum::<f64>())
        .sum();
    let area_rel = ((blocks_area + road_area_oracle(fx)) - boundary_area).abs() / boundary_area;

    let rings: Vec<&Vec<Point>> = layout.blocks.iter().map(|b| &b.exterior).collect();
    for (k, b) in layout.blocks.iter().enumerate() {
        for &p in &b.exterior {
            let on_boundary = edges(&fx.input.boundary).any(|(a, c)| segment_distance(p, a, c) < 1e-6);
            if !on_boundary && !point_in_ring(p, &fx.input.boundary) {
                failures.push(format!("block {k} vertex {p:?} outside the boundary"));
            }
        }
    }

    let m = config.setback;
    for (i, pl) in layout.placements.iter().enumerate() {
        let ring = rings[pl.block];
        let corners = pl.footprint.corners();
        if !corners.iter().all(|&c| point_in_ring(c, ring)) {
            failures.push(format!("footprint {i} leaves block {}", pl.block));
        }
        let clearance = edges(ring)
            .flat_map(|(a, b)| edges(&corners).map(move |(p, q)| seg_seg_distance(a, b, p, q)))
            .fold(f64::INFINITY, f64::min);
        if clearance < m - 1e-9 {
            failures.push(format!("footprint {i} is {clearance} m from its block edge"));
        }
        for (k, other) in rings.iter().enumerate() {
            if k != pl.block && corners.iter().any(|&c| point_in_ring(c, other)) {
                failures.push(format!("footprint {i} reaches into block {k}"));
            }
        }
        for s in &layout.secondary_roads {
            let rect = road_rect(s);
            let d = edges(&rect)
                .flat_map(|(a, b)| edges(&corners).map(move |(p, q)| seg_seg_distance(a, b, p, q)))
                .fold(f64::INFINITY, f64::min);
            if d < m - 1e-9 || corners.iter().any(|&c| point_in_ring(c, &rect)) {
                failures.push(format!("footprint {i} is {d} m from a secondary road"));
            }
        }
        for (j, q) in layout.placements.iter().enumerate().skip(i + 1) {
            let d = rect_distance(&pl.footprint, &q.footprint);
            if d < m - 1e-9 {
                failures.push(format!("footprints {i} and {j} are {d} m apart"));
            }
        }
    }

    let mut max_dot: f64 = 0.0;
    for (i, s) in layout.secondary_roads.iter().enumerate() {
        let sd = sub(s.b, s.a);
        let sl = dot(sd, sd).sqrt();
        let parent = fx.input.primary_roads.iter().find(|r| {
            let d = sub(r.b, r.a);
            let l = dot(d, d).sqrt();
            (cross(d, sub(s.a, r.a)).abs() / l - r.width / 2.0).abs() < 1e-6
        });
        match parent {
            Some(r) => {
                let d = sub(r.b, r.a);
                max_dot = max_dot.max((dot(d, sd) / (sl * dot(d, d).sqrt())).abs());
            }
            None => failures.push(format!("secondary road {i} does not start on a primary road")),
        }
        let on_edge = |p: Point| {
            layout.blocks.iter().any(|b| {
                edges(&b.exterior).chain(b.holes.iter().flat_map(|h| edges(h))).any(|(a, c)| segment_distance(p, a, c) < 1e-6)
            })
        };
        if !on_edge(s.a) || !on_edge(s.b) {
            failures.push(format!("secondary road {i} has an endpoint off every block edge"));
        }
    }

    for (i, d) in layout.decorations.iter().enumerate() {
        if layout.placements.iter().any(|p| p.footprint.contains_point(d.position)) {
            failures.push(format!("decoration {i} sits inside a footprint"));
        }
    }
    Audit { area_rel, failures, max_dot }
}
