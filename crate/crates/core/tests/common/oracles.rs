use nalgebra::{Matrix3, Matrix4, UnitQuaternion, Vector4};
use procsplat::assembly::{assemble, instantiate, BaseAsset, Scene, Source, VarianceAsset};
use procsplat::grammar::{AssetSpec, InstanceTransform, Instantiation, InstantiationList, Item, Level, Manifest, ProceduralCode, RawLevel, Span};
use procsplat::render::{accumulate_shared, render, render_backward, RenderConfig};
use procsplat::splat::{Camera, Gaussian3D, Mat3, Vec3};
use rand::Rng;

use super::random_gaussian;

pub fn random_rotation(rng: &mut impl Rng) -> Mat3 {
    UnitQuaternion::from_euler_angles(rng.gen_range(-3.1..3.1), rng.gen_range(-1.5..1.5), rng.gen_range(-3.1..3.1))
        .to_rotation_matrix()
        .into_inner()
}

pub fn random_transform(rng: &mut impl Rng, rigid: bool) -> InstanceTransform {
    let scale = if rigid { Vec3::repeat(1.0) } else { Vec3::from_fn(|_, _| rng.gen_range(0.5..2.0)) };
    InstanceTransform {
        rotation: random_rotation(rng),
        translation: Vec3::from_fn(|_, _| rng.gen_range(-5.0..5.0)),
        scale,
    }
}

/// Homogeneous matrix `[R·diag(S) | T]`.
pub fn affine(t: &InstanceTransform) -> Matrix4<f64> {
    let mut m = Matrix4::identity();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&(t.rotation * Matrix3::from_diagonal(&t.scale)));
    m.fixed_view_mut::<3, 1>(0, 3).copy_from(&t.translation);
    m
}

/// `exp(-½ dᵀ Σ⁻¹ d)`.
/// `Σ = R diag(s²) Rᵀ` with `R` from nalgebra's normalized quaternion.
pub fn covariance_oracle(g: &Gaussian3D) -> Matrix3<f64> {
    let [w, i, j, k] = g.rotation;
    let r = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(w, i, j, k)).to_rotation_matrix().into_inner();
    r * Matrix3::from_diagonal(&g.log_scale.map(|l| (2.0 * l).exp())) * r.transpose()
}

pub fn density_oracle(g: &Gaussian3D, x: &Vec3) -> f64 {
    let cov = covariance_oracle(g);
    let d = x - g.position;
    (-0.5 * d.dot(&(cov.try_inverse().unwrap() * d))).exp()
}

pub struct Eq5Report {
    pub identity_exact: bool,
    pub density_err: f64,
    pub compose_err: f64,
}

/// Identity fixpoint, rigid density consistency and position composition
/// against the homogeneous-matrix product, over `n` random transforms.
pub fn eq5_contract(rng: &mut impl Rng, n: usize) -> Eq5Report {
    let mut report = Eq5Report { identity_exact: true, density_err: 0.0, compose_err: 0.0 };
    for _ in 0..n {
        let deg = rng.gen_range(0..=2);
        let g = random_gaussian(rng, deg);
        report.identity_exact &= instantiate(&g, &InstanceTransform::identity()) == g;

        let t = random_transform(rng, true);
        let moved = instantiate(&g, &t);
        for _ in 0..4 {
            let x = g.position + Vec3::from_fn(|_, _| rng.gen_range(-0.3..0.3));
            let y = t.apply(&x);
            report.density_err = report.density_err.max((density_oracle(&moved, &y) - density_oracle(&g, &x)).abs());
            report.density_err = report.density_err.max((procsplat::splat::eval_density(&moved, &y) - density_oracle(&g, &x)).abs());
        }

        let outer = random_transform(rng, true);
        let rigid = rng.gen_bool(0.5);
        let inner = random_transform(rng, rigid);
        let inner = InstanceTransform { scale: Vec3::repeat(inner.scale.x), ..inner };
        let composed = instantiate(&instantiate(&g, &inner), &outer);
        let h = affine(&outer) * affine(&inner) * Vector4::new(g.position.x, g.position.y, g.position.z, 1.0);
        report.compose_err = report.compose_err.max((composed.position - h.xyz()).amax());
        report.compose_err = report.compose_err.max((instantiate(&g, &outer.compose(&inner)).position - h.xyz()).amax());
    }
    report
}

fn local_gaussians(rng: &mut impl Rng, n: usize, deg: usize) -> Vec<Gaussian3D> {
    (0..n)
        .map(|_| {
            let mut g = random_gaussian(rng, deg);
            g.position = Vec3::from_fn(|_, _| rng.gen_range(-0.3..0.3));
            g.log_scale = Vec3::from_fn(|_, _| rng.gen_range(0.03f64..0.12).ln());
            g
        })
        .collect()
}

/// One shared asset with `k` instances in front of `camera16`, plus variance
/// assets on about half of them.
pub fn shared_fixture(rng: &mut impl Rng, k: usize) -> (Vec<BaseAsset>, Vec<VarianceAsset>, Scene) {
    let deg = rng.gen_range(0..=2);
    let spec = AssetSpec::new("A", [0.6, 0.6, 0.6], [0.3, 0.3, 0.3]);
    let n = rng.gen_range(1..=6);
    let bases = vec![BaseAsset { spec, gaussians: local_gaussians(rng, n, deg) }];
    let entries: Vec<Instantiation> = (0..k)
        .map(|i| Instantiation {
            asset_id: "A".into(),
            transform: InstanceTransform {
                rotation: random_rotation(rng),
                translation: Vec3::new(rng.gen_range(-0.6..0.6), rng.gen_range(-0.6..0.6), rng.gen_range(2.5..3.5)),
                scale: Vec3::repeat(rng.gen_range(0.8..1.25)),
            },
            variance_index: i,
        })
        .collect();
    let mut variances = Vec::new();
    for i in 0..k {
        if rng.gen_bool(0.5) {
            variances.push(VarianceAsset { owner_asset_id: "A".into(), instance_index: i, gaussians: local_gaussians(rng, 2, deg) });
        }
    }
    let scene = assemble(&InstantiationList { entries }, &bases, &variances).unwrap();
    (bases, variances, scene)
}

/// Largest absolute difference between `accumulate_shared` and the sum over
/// duplicated copies of `Jᵀ·g`, where the Jacobian of the (affine) instancing
/// map is read off as unit-step differences of `instantiate`.
pub fn shared_gradient_error(bases: &[BaseAsset], variances: &[VarianceAsset], scene: &Scene, cam: &Camera, rng: &mut impl Rng) -> f64 {
    let out = render(scene, cam, &RenderConfig::default()).unwrap();
    let weights: Vec<f64> = (0..out.color.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let grads = render_backward(scene, cam, &out, &weights).unwrap();
    let shared = accumulate_shared(&grads, scene, bases, variances);

    let mut base_oracle: Vec<Vec<Vec<f64>>> = bases.iter().map(|b| b.gaussians.iter().map(|g| vec![0.0; g.params().len()]).collect()).collect();
    let mut var_oracle: Vec<Vec<Vec<f64>>> = variances.iter().map(|v| v.gaussians.iter().map(|g| vec![0.0; g.params().len()]).collect()).collect();
    for (entry, p) in scene.provenance.iter().enumerate() {
        let (g, slot) = match p.source {
            Source::Base => (&bases[p.asset].gaussians[p.local], &mut base_oracle[p.asset][p.local]),
            Source::Variance(v) => (&variances[v].gaussians[p.local], &mut var_oracle[v][p.local]),
        };
        let t = &scene.instances[p.instance];
        let y0 = instantiate(g, t).params();
        let dy = grads.grads[entry].flat();
        let x0 = g.params();
        for k in 0..x0.len() {
            let mut x = x0.clone();
            x[k] += 1.0;
            let mut gk = g.clone();
            gk.read_params(&x);
            let col: Vec<f64> = instantiate(&gk, t).params().iter().zip(&y0).map(|(a, b)| a - b).collect();
            slot[k] += col.iter().zip(&dy).map(|(c, d)| c * d).sum::<f64>();
        }
    }
    let mut err: f64 = 0.0;
    for (got, want) in shared.base.iter().chain(&shared.variance).zip(base_oracle.iter().chain(&var_oracle)) {
        for (a, b) in got.iter().zip(want) {
            for (x, y) in a.flat().iter().zip(b) {
                err = err.max((x - y).abs());
            }
        }
    }
    err
}

/// Assets for regularizer fixtures: every motif below is 2 m wide.
pub fn regularizer_manifest() -> Manifest {
    Manifest::new(vec![
        AssetSpec::new("C", [1.0, 0.5, 3.0], [0.0, 0.0, 0.0]),
        AssetSpec::new("W", [1.5, 0.3, 3.0], [0.2, 0.1, 1.5]),
        AssetSpec::new("P", [0.5, 0.3, 3.0], [0.25, 0.0, 1.5]),
        AssetSpec::new("D", [2.0, 0.3, 3.2], [1.0, 0.1, 0.0]),
    ])
    .unwrap()
}

const MOTIFS: [&[&str]; 4] = [&["W", "P"], &["P", "W"], &["D"], &["P", "P", "P", "P"]];

/// `C m₁ … mₙ C` with motifs drawn from a small palette; `repeat` fills the
/// facade with one motif.
pub fn regularizer_facade(rng: &mut impl Rng, n: usize, repeat: bool) -> Vec<String> {
    let fixed = MOTIFS[rng.gen_range(0..MOTIFS.len())];
    let mut seq = vec!["C".to_string()];
    for _ in 0..n {
        let m = if repeat { fixed } else { MOTIFS[rng.gen_range(0..MOTIFS.len())] };
        seq.extend(m.iter().map(|s| s.to_string()));
    }
    seq.push("C".into());
    seq
}

/// Raw levels whose facades agree in width per side: two facades (front/back
/// and sides), `n_front` and `n_side` motifs each.
pub fn regularizer_fixture(rng: &mut impl Rng) -> Vec<RawLevel> {
    let (n_front, n_side) = (rng.gen_range(0..6), rng.gen_range(0..4));
    let levels = rng.gen_range(1..=4);
    let mut raw: Vec<RawLevel> = Vec::new();
    for _ in 0..levels {
        if !raw.is_empty() && rng.gen_bool(0.3) {
            raw.push(raw.last().unwrap().clone());
            continue;
        }
        let (rf, rs) = (rng.gen_bool(0.6), rng.gen_bool(0.6));
        let facades = vec![regularizer_facade(rng, n_front, rf), regularizer_facade(rng, n_side, rs)];
        raw.push(RawLevel { facades });
    }
    raw
}

pub fn appendix_fixture() -> Vec<RawLevel> {
    vec![RawLevel::new(vec!["C_E P1 W1 P1 W1 P1 W1 C_E".split(' ').collect()])]
}

pub fn appendix_manifest() -> Manifest {
    Manifest::new(vec![
        AssetSpec::new("C_E", [1.0, 0.5, 3.0], [0.0, 0.0, 0.0]),
        AssetSpec::new("W1", [1.7, 0.3, 3.0], [0.1, 0.0, 0.2]),
        AssetSpec::new("P1", [0.3, 0.3, 3.0], [0.0, 0.0, 1.5]),
    ])
    .unwrap()
}

/// Largest gap between each facade's run of placed widths and its target
/// length. Consecutive entries sharing a rotation form one facade.
pub fn facade_width_error(list: &InstantiationList, manifest: &Manifest, dims: [f64; 3]) -> (f64, usize) {
    let mut err: f64 = 0.0;
    let mut runs = 0;
    let mut k = 0;
    while k < list.entries.len() {
        let rot = list.entries[k].transform.rotation;
        let mut sum = 0.0;
        while k < list.entries.len() && list.entries[k].transform.rotation == rot {
            let e = &list.entries[k];
            sum += manifest.get(&e.asset_id).unwrap().extent[0] * e.transform.scale.x;
            k += 1;
        }
        // the run direction is the rotated local x axis
        let along = rot * Vec3::x();
        let target = if along.x.abs() > 0.5 { dims[0] } else { dims[1] };
        err = err.max((sum - target).abs());
        runs += 1;
    }
    (err, runs)
}

/// Identifiers the parser treats as names (keywords and the repeat marker
/// `x` excluded).
pub fn ident(rng: &mut impl Rng) -> String {
    const HEAD: &[u8] = b"ABCDEFGHIJKLMNOPQRSTUVWYZ_";
    const TAIL: &[u8] = b"abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789_";
    let mut s = String::new();
    s.push(HEAD[rng.gen_range(0..HEAD.len())] as char);
    for _ in 0..rng.gen_range(0..6) {
        s.push(TAIL[rng.gen_range(0..TAIL.len())] as char);
    }
    s
}

fn random_item(rng: &mut impl Rng, depth: usize) -> Item {
    if depth > 0 && rng.gen_bool(0.25) {
        let n = rng.gen_range(1..=3);
        Item::Group { items: (0..n).map(|_| random_item(rng, depth - 1)).collect(), repeatable: rng.gen_bool(0.5), span: Span::default() }
    } else {
        Item::Token { asset_id: ident(rng), scalable: rng.gen_bool(0.2), span: Span::default() }
    }
}

/// A syntactically valid AST (not necessarily expandable).
pub fn random_code(rng: &mut impl Rng) -> ProceduralCode {
    let dims = rng.gen_bool(0.3).then(|| [0; 3].map(|_| rng.gen_range(0.1..100.0) * if rng.gen_bool(0.2) { 1e-3 } else { 1.0 }));
    let levels = (0..rng.gen_range(1..=4))
        .map(|_| Level {
            id: ident(rng),
            repeat_count: if rng.gen_bool(0.5) { 1 } else { rng.gen_range(1..20) },
            facades: (0..[1, 2, 4][rng.gen_range(0..3)])
                .map(|_| procsplat::grammar::Facade {
                    items: (0..rng.gen_range(1..=6)).map(|_| random_item(rng, 2)).collect(),
                    span: Span::default(),
                })
                .collect(),
            span: Span::default(),
        })
        .collect();
    ProceduralCode { building_id: ident(rng), dims, levels, span: Span::default() }
}
