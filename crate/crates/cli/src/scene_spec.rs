//! Scene files for controlled generation: one object per line,
//! `category attr t_x t_y s omega [k_x k_y]`, whitespace separated, `#`
//! starts a comment. `category` is an id or a shape name, `attr` is `-` or
//! a comma-separated list. Positions are normalized to [-1, 1], `s` is the
//! object size as a fraction of the canvas.

use dair_core::attention::AffinePose;
use dair_core::data::Shape;
use dair_core::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SpecLine {
    pub category: usize,
    pub attr: Vec<f64>,
    pub pose: AffinePose<f64>,
}

fn bad(line: usize, msg: impl std::fmt::Display) -> Error {
    Error::InvalidArgument(format!("scene line {line}: {msg}"))
}

pub fn parse_category(s: &str) -> Option<usize> {
    if let Ok(id) = s.parse() {
        return Some(id);
    }
    Shape::ALL.iter().find(|sh| sh.name() == s.to_ascii_lowercase()).map(|sh| *sh as usize)
}

pub fn parse_scene(text: &str) -> Result<Vec<SpecLine>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let n = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 6 && f.len() != 8 {
            return Err(bad(n, format!("expected 6 or 8 fields, found {}", f.len())));
        }
        let category = parse_category(f[0]).ok_or_else(|| bad(n, format!("unknown category {:?}", f[0])))?;
        let attr = if f[1] == "-" {
            Vec::new()
        } else {
            f[1].split(',')
                .map(|v| v.parse::<f64>().map_err(|_| bad(n, format!("bad attribute {v:?}"))))
                .collect::<Result<_>>()?
        };
        let num = |j: usize| f[j].parse::<f64>().map_err(|_| bad(n, format!("bad number {:?}", f[j])));
        let s = num(4)?;
        if !(s > 0.0 && s.is_finite()) {
            return Err(bad(n, "size must be positive"));
        }
        let (k_x, k_y) = if f.len() == 8 { (num(6)?, num(7)?) } else { (0.0, 0.0) };
        let pose = AffinePose {
            s_x: s,
            s_y: s,
            t_x: num(2)?,
            t_y: num(3)?,
            omega: num(5)?,
            k_x,
            k_y,
        };
        if !pose.is_finite() {
            return Err(bad(n, "non-finite pose"));
        }
        out.push(SpecLine { category, attr, pose });
    }
    Ok(out)
}
