//! Binary little-endian PLY in the common splat layout: `x y z`,
//! `rot_0..3` (w first), `scale_0..2` (log), `opacity` (logit), `f_dc_0..2`,
//! `f_rest_*` channel-major.

use std::io::{BufRead, Write};

use super::AssemblyError;
use crate::splat::{sh, Gaussian3D, Vec3};

fn format_err(message: impl Into<String>) -> AssemblyError {
    AssemblyError::Format { what: "PLY".into(), message: message.into() }
}

fn property_names(n_sh: usize) -> Vec<String> {
    let mut names: Vec<String> = ["x", "y", "z", "rot_0", "rot_1", "rot_2", "rot_3", "scale_0", "scale_1", "scale_2", "opacity"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    names.extend((0..3).map(|c| format!("f_dc_{c}")));
    names.extend((0..3 * (n_sh - 1)).map(|k| format!("f_rest_{k}")));
    names
}

fn to_row(g: &Gaussian3D) -> Vec<f64> {
    let n = g.sh.len();
    let mut row = Vec::with_capacity(11 + 3 * n);
    row.extend_from_slice(g.position.as_slice());
    row.extend_from_slice(&g.rotation);
    row.extend_from_slice(g.log_scale.as_slice());
    row.push(g.opacity_logit);
    row.extend_from_slice(g.sh[0].as_slice());
    for c in 0..3 {
        for k in 1..n {
            row.push(g.sh[k][c]);
        }
    }
    row
}

fn from_row(row: &[f64], n_sh: usize) -> Gaussian3D {
    let mut coeffs = vec![Vec3::new(row[11], row[12], row[13]); n_sh];
    for c in 0..3 {
        for k in 1..n_sh {
            coeffs[k][c] = row[14 + c * (n_sh - 1) + (k - 1)];
        }
    }
    Gaussian3D {
        position: Vec3::new(row[0], row[1], row[2]),
        rotation: [row[3], row[4], row[5], row[6]],
        log_scale: Vec3::new(row[7], row[8], row[9]),
        opacity_logit: row[10],
        sh: coeffs,
    }
}

/// Writes Gaussians as float32 properties. All Gaussians must share an SH
/// count; an empty list is written with `sh_count` coefficients.
pub fn write_ply(out: &mut impl Write, gaussians: &[Gaussian3D], sh_count: usize) -> std::io::Result<()> {
    let names = property_names(sh_count);
    writeln!(out, "ply\nformat binary_little_endian 1.0\nelement vertex {}", gaussians.len())?;
    for n in &names {
        writeln!(out, "property float {n}")?;
    }
    writeln!(out, "end_header")?;
    let mut buf = Vec::with_capacity(gaussians.len() * names.len() * 4);
    for g in gaussians {
        assert_eq!(g.sh.len(), sh_count, "mixed SH counts in one PLY");
        for v in to_row(g) {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out.write_all(&buf)
}

/// Reads a binary little-endian splat PLY (float or double properties, any order).
pub fn read_ply(input: &mut impl BufRead) -> Result<(Vec<Gaussian3D>, usize), AssemblyError> {
    let mut line = String::new();
    let mut next_line = |input: &mut dyn BufRead| -> Result<String, AssemblyError> {
        line.clear();
        let n = input.read_line(&mut line).map_err(|e| format_err(e.to_string()))?;
        if n == 0 {
            return Err(format_err("unexpected end of header"));
        }
        Ok(line.trim_end().to_string())
    };
    if next_line(input)? != "ply" {
        return Err(format_err("missing `ply` magic"));
    }
    let mut count = None;
    let mut props: Vec<(String, usize)> = Vec::new();
    loop {
        let l = next_line(input)?;
        let parts: Vec<&str> = l.split_whitespace().collect();
        match parts.as_slice() {
            ["format", "binary_little_endian", _] => {}
            ["format", other, ..] => return Err(format_err(format!("unsupported format `{other}`"))),
            ["comment", ..] | ["obj_info", ..] => {}
            ["element", "vertex", n] => count = Some(n.parse::<usize>().map_err(|_| format_err("bad vertex count"))?),
            ["element", other, ..] => return Err(format_err(format!("unexpected element `{other}`"))),
            ["property", ty, name] => {
                let size = match *ty {
                    "float" | "float32" => 4,
                    "double" | "float64" => 8,
                    other => return Err(format_err(format!("unsupported property type `{other}`"))),
                };
                props.push((name.to_string(), size));
            }
            ["end_header"] => break,
            _ => return Err(format_err(format!("unrecognized header line `{l}`"))),
        }
    }
    let count = count.ok_or_else(|| format_err("no vertex element"))?;
    let n_rest = props.iter().filter(|(n, _)| n.starts_with("f_rest_")).count();
    let n_sh = 1 + n_rest / 3;
    if n_rest % 3 != 0 || sh::degree_for_count(n_sh).is_none() {
        return Err(format_err(format!("{n_rest} f_rest properties do not form an SH degree ≤ 2")));
    }
    let expected = property_names(n_sh);
    let slots: Vec<usize> = expected
        .iter()
        .map(|name| props.iter().position(|(p, _)| p == name).ok_or_else(|| format_err(format!("missing property `{name}`"))))
        .collect::<Result<_, _>>()?;
    let stride: usize = props.iter().map(|p| p.1).sum();
    let mut data = vec![0u8; stride * count];
    input.read_exact(&mut data).map_err(|e| format_err(format!("truncated body: {e}")))?;
    let offsets: Vec<usize> = props.iter().scan(0, |acc, p| {
        let o = *acc;
        *acc += p.1;
        Some(o)
    }).collect();

    let mut out = Vec::with_capacity(count);
    let mut row = vec![0.0; expected.len()];
    for v in 0..count {
        let rec = &data[v * stride..(v + 1) * stride];
        for (k, &slot) in slots.iter().enumerate() {
            let o = offsets[slot];
            row[k] = if props[slot].1 == 4 {
                f32::from_le_bytes(rec[o..o + 4].try_into().unwrap()) as f64
            } else {
                f64::from_le_bytes(rec[o..o + 8].try_into().unwrap())
            };
        }
        out.push(from_row(&row, n_sh));
    }
    Ok((out, n_sh))
}
