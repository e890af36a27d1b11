//! Extended-XYZ frames: atom count, a `key=value` comment line, one row per
//! atom. Supported per-atom columns are `species:S:1`, `pos:R:3` and
//! optionally `forces:R:3`. Comment keys other than `Properties` and
//! `energy` are kept verbatim.

use nalgebra::Vector3;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::structure::{atomic_number, element_symbol, AtomicConfiguration};

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

/// Splits a comment line into `key=value` pairs. Values may be double
/// quoted; the raw text (quotes included) is returned.
fn comment_pairs(text: &str, line: usize) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    let chars: Vec<char> = text.chars().collect();
    let mut k = 0;
    while k < chars.len() {
        if chars[k].is_whitespace() {
            k += 1;
            continue;
        }
        let start = k;
        let mut quoted = false;
        while k < chars.len() && (quoted || !chars[k].is_whitespace()) {
            if chars[k] == '"' {
                quoted = !quoted;
            }
            k += 1;
        }
        if quoted {
            return Err(parse_err(line, "unterminated quote in comment line"));
        }
        let token: String = chars[start..k].iter().collect();
        match token.split_once('=') {
            Some((key, value)) if !key.is_empty() => out.push((key.to_string(), value.to_string())),
            _ => return Err(parse_err(line, format!("expected key=value, found {token:?}"))),
        }
    }
    Ok(out)
}

fn unquote(v: &str) -> &str {
    v.strip_prefix('"').and_then(|s| s.strip_suffix('"')).unwrap_or(v)
}

/// Column layout from a `Properties=` descriptor: whether forces are present.
fn parse_properties(desc: &str, line: usize) -> Result<bool> {
    let parts: Vec<&str> = unquote(desc).split(':').collect();
    if parts.len() % 3 != 0 {
        return Err(parse_err(line, format!("malformed Properties descriptor {desc:?}")));
    }
    let cols: Vec<(&str, &str, &str)> = parts.chunks(3).map(|c| (c[0], c[1], c[2])).collect();
    let base = [("species", "S", "1"), ("pos", "R", "3")];
    if cols.len() < 2 || cols[..2] != base {
        return Err(parse_err(
            line,
            format!("Properties must start with species:S:1:pos:R:3, found {desc:?}"),
        ));
    }
    match &cols[2..] {
        [] => Ok(false),
        [("forces", "R", "3")] => Ok(true),
        other => Err(Error::Schema(format!(
            "line {line}: unsupported per-atom columns {other:?}"
        ))),
    }
}

fn parse_f64(tok: &str, line: usize, what: &str) -> Result<f64> {
    tok.parse::<f64>()
        .map_err(|_| parse_err(line, format!("cannot read {what} from {tok:?}")))
}

/// Parses every frame. Energies and forces are optional here; a dataset
/// that needs them checks separately.
pub fn parse_extxyz(text: &str) -> Result<Vec<AtomicConfiguration>> {
    let lines: Vec<&str> = text.lines().collect();
    let mut frames = Vec::new();
    let mut k = 0;
    while k < lines.len() {
        if lines[k].trim().is_empty() {
            k += 1;
            continue;
        }
        let count_line = k + 1;
        let n: usize = lines[k]
            .trim()
            .parse()
            .map_err(|_| parse_err(count_line, format!("expected atom count, found {:?}", lines[k])))?;
        let comment = *lines
            .get(k + 1)
            .ok_or_else(|| parse_err(count_line + 1, "missing comment line"))?;
        let comment_line = count_line + 1;
        let mut energy = None;
        let mut has_forces = None;
        let mut info = Vec::new();
        for (key, value) in comment_pairs(comment, comment_line)? {
            match key.as_str() {
                "Properties" => has_forces = Some(parse_properties(&value, comment_line)?),
                "energy" => energy = Some(parse_f64(unquote(&value), comment_line, "energy")?),
                _ => info.push((key, value)),
            }
        }
        let has_forces = has_forces
            .ok_or_else(|| parse_err(comment_line, "comment line has no Properties descriptor"))?;
        let width = if has_forces { 7 } else { 4 };
        let mut species = Vec::with_capacity(n);
        let mut positions = Vec::with_capacity(n);
        let mut forces = Vec::with_capacity(if has_forces { n } else { 0 });
        for a in 0..n {
            let ln = comment_line + 1 + a;
            let row = *lines
                .get(ln - 1)
                .ok_or_else(|| parse_err(ln, format!("expected {n} atom rows, file ended after {a}")))?;
            let toks: Vec<&str> = row.split_whitespace().collect();
            if toks.len() != width {
                return Err(parse_err(ln, format!("expected {width} fields, found {}", toks.len())));
            }
            let z = match toks[0].parse::<u32>() {
                Ok(z) => z,
                Err(_) => atomic_number(toks[0])
                    .map_err(|_| parse_err(ln, format!("unknown element {:?}", toks[0])))?,
            };
            species.push(z);
            let v = |off: usize, what: &str| -> Result<Vector3<f64>> {
                Ok(Vector3::new(
                    parse_f64(toks[off], ln, what)?,
                    parse_f64(toks[off + 1], ln, what)?,
                    parse_f64(toks[off + 2], ln, what)?,
                ))
            };
            positions.push(v(1, "position")?);
            if has_forces {
                forces.push(v(4, "force")?);
            }
        }
        frames.push(AtomicConfiguration {
            species,
            positions,
            energy,
            forces: has_forces.then_some(forces),
            info,
        });
        k += 2 + n;
    }
    Ok(frames)
}

/// Writes frames with shortest round-trip float formatting, so parsing the
/// output gives back identical values.
pub fn write_extxyz(frames: &[AtomicConfiguration]) -> Result<String> {
    let mut out = String::new();
    for f in frames {
        f.validate()?;
        let _ = writeln!(out, "{}", f.len());
        out.push_str("Properties=species:S:1:pos:R:3");
        if f.forces.is_some() {
            out.push_str(":forces:R:3");
        }
        if let Some(e) = f.energy {
            let _ = write!(out, " energy={e:?}");
        }
        for (k, v) in &f.info {
            let _ = write!(out, " {k}={v}");
        }
        out.push('\n');
        for (a, (&z, p)) in f.species.iter().zip(&f.positions).enumerate() {
            let sym = element_symbol(z)?;
            let _ = write!(out, "{sym} {:?} {:?} {:?}", p.x, p.y, p.z);
            if let Some(forces) = &f.forces {
                let g = forces[a];
                let _ = write!(out, " {:?} {:?} {:?}", g.x, g.y, g.z);
            }
            out.push('\n');
        }
    }
    Ok(out)
}
