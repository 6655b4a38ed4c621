use std::fmt::Write;

use super::{Item, ProceduralCode};

fn write_item(out: &mut String, item: &Item) {
    match item {
        Item::Token { asset_id, scalable, .. } => {
            out.push_str(asset_id);
            if *scalable {
                out.push('*');
            }
        }
        Item::Group { items, repeatable, .. } => {
            out.push('(');
            for (k, i) in items.iter().enumerate() {
                if k > 0 {
                    out.push(' ');
                }
                write_item(out, i);
            }
            out.push(')');
            if *repeatable {
                out.push('*');
            }
        }
    }
}

/// Canonical text form. `parse(serialize(c)) == c` for every valid AST.
pub fn serialize(code: &ProceduralCode) -> String {
    let mut out = String::new();
    writeln!(out, "building {} {{", code.building_id).unwrap();
    if let Some([l, w, h]) = code.dims {
        // `{:?}` keeps a decimal point and prints the shortest round-tripping form
        writeln!(out, "  dims {l:?} {w:?} {h:?}").unwrap();
    }
    for level in &code.levels {
        write!(out, "  level {}", level.id).unwrap();
        if level.repeat_count != 1 {
            write!(out, " x {}", level.repeat_count).unwrap();
        }
        out.push_str(" { ");
        for (f, facade) in level.facades.iter().enumerate() {
            if f > 0 {
                out.push_str(" | ");
            }
            for (k, item) in facade.items.iter().enumerate() {
                if k > 0 {
                    out.push(' ');
                }
                write_item(&mut out, item);
            }
        }
        out.push_str(" }\n");
    }
    out.push_str("}\n");
    out
}

pub fn serialize_all(codes: &[ProceduralCode]) -> String {
    codes.iter().map(serialize).collect::<Vec<_>>().join("\n")
}
