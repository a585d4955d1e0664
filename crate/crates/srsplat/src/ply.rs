//! Binary little-endian PLY in the standard 3DGS vertex layout.
//!
//! Scene exports use `float` properties and never carry flags. Checkpoints
//! use `double` properties and append `flag_0..flag_{n-1}` when the cloud
//! has flag vectors.

use std::path::Path;

use srsplat_core::gaussian::{color_len, sh_basis_count};
use srsplat_core::math::Vec3;
use srsplat_core::{Gaussian, GaussianCloud};

use crate::error::{Error, Result};

const MAX_HEADER: usize = 1 << 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    fn name(self) -> &'static str {
        match self {
            Precision::F32 => "float",
            Precision::F64 => "double",
        }
    }

    fn size(self) -> usize {
        match self {
            Precision::F32 => 4,
            Precision::F64 => 8,
        }
    }
}

/// Property names in file order for `sh_degree`, with `flags` flag entries.
pub fn property_names(sh_degree: usize, flags: usize) -> Vec<String> {
    let mut names: Vec<String> = ["x", "y", "z", "nx", "ny", "nz"].iter().map(|s| s.to_string()).collect();
    names.extend((0..3).map(|c| format!("f_dc_{c}")));
    names.extend((0..3 * (sh_basis_count(sh_degree) - 1)).map(|k| format!("f_rest_{k}")));
    names.push("opacity".into());
    names.extend((0..3).map(|k| format!("scale_{k}")));
    names.extend((0..4).map(|k| format!("rot_{k}")));
    names.extend((0..flags).map(|k| format!("flag_{k}")));
    names
}

/// Values of one Gaussian in [`property_names`] order (without flags).
fn vertex_values(g: &Gaussian, degree: usize) -> Vec<f64> {
    let basis = sh_basis_count(degree);
    let mut v = Vec::with_capacity(17 + 3 * basis);
    v.extend_from_slice(&g.mean.0);
    v.extend_from_slice(&[0.0; 3]);
    v.extend_from_slice(&g.sh[..3]);
    // f_rest is channel-major: all red coefficients, then green, then blue.
    for c in 0..3 {
        for b in 1..basis {
            v.push(g.sh[b * 3 + c]);
        }
    }
    v.push(g.opacity_logit);
    v.extend_from_slice(&g.log_scale);
    v.extend_from_slice(&g.rotation);
    v
}

/// Serializes `cloud`; flags are written only when `with_flags` is set and
/// the cloud has them.
pub fn encode(cloud: &GaussianCloud, precision: Precision, with_flags: bool) -> Vec<u8> {
    let degree = cloud.sh_degree();
    let flags = if with_flags && cloud.has_flags() { cloud.param_len() } else { 0 };
    let names = property_names(degree, flags);
    let mut out = format!("ply\nformat binary_little_endian 1.0\nelement vertex {}\n", cloud.len()).into_bytes();
    for n in &names {
        out.extend_from_slice(format!("property {} {}\n", precision.name(), n).as_bytes());
    }
    out.extend_from_slice(b"end_header\n");
    out.reserve(cloud.len() * names.len() * precision.size());
    for g in cloud.iter() {
        let mut vals = vertex_values(g, degree);
        if flags > 0 {
            match &g.flags {
                Some(f) => vals.extend_from_slice(f),
                None => vals.extend(std::iter::repeat_n(0.0, flags)),
            }
        }
        for v in vals {
            match precision {
                Precision::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
                Precision::F64 => out.extend_from_slice(&v.to_le_bytes()),
            }
        }
    }
    out
}

/// Parse failure with the byte offset where it was detected.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PlyError {
    pub offset: usize,
    pub message: String,
}

fn err<T>(offset: usize, message: impl Into<String>) -> std::result::Result<T, PlyError> {
    Err(PlyError {
        offset,
        message: message.into(),
    })
}

struct Property {
    name: String,
    precision: Precision,
}

fn parse_header(bytes: &[u8]) -> std::result::Result<(usize, Vec<Property>, usize), PlyError> {
    let limit = bytes.len().min(MAX_HEADER);
    let mut pos = 0;
    let next_line = |pos: &mut usize| -> std::result::Result<(usize, String), PlyError> {
        let start = *pos;
        let Some(len) = bytes[start..limit].iter().position(|&b| b == b'\n') else {
            return err(start, "unterminated header line (missing end_header?)");
        };
        *pos = start + len + 1;
        match std::str::from_utf8(&bytes[start..start + len]) {
            Ok(s) => Ok((start, s.trim_end_matches('\r').to_string())),
            Err(_) => err(start, "header line is not valid text"),
        }
    };
    let (at, magic) = next_line(&mut pos)?;
    if magic != "ply" {
        return err(at, "missing `ply` magic");
    }
    let (at, format) = next_line(&mut pos)?;
    if format != "format binary_little_endian 1.0" {
        return err(at, format!("unsupported format line `{format}` (need binary_little_endian 1.0)"));
    }
    let mut count = None;
    let mut props: Vec<Property> = Vec::new();
    loop {
        let (at, line) = next_line(&mut pos)?;
        let words: Vec<&str> = line.split_whitespace().collect();
        match words.as_slice() {
            ["end_header"] => break,
            ["comment", ..] | ["obj_info", ..] => {}
            ["element", "vertex", n] if count.is_none() => {
                count = Some(n.parse::<usize>().or_else(|_| err(at, format!("bad vertex count `{n}`")))?);
            }
            ["element", name, ..] => return err(at, format!("unexpected element `{name}`")),
            ["property", ty, name] => {
                if count.is_none() {
                    return err(at, "property before `element vertex`");
                }
                let precision = match *ty {
                    "float" | "float32" => Precision::F32,
                    "double" | "float64" => Precision::F64,
                    _ => return err(at, format!("property `{name}` has unsupported type `{ty}`")),
                };
                if props.iter().any(|p| p.name == *name) {
                    return err(at, format!("duplicate property `{name}`"));
                }
                props.push(Property {
                    name: name.to_string(),
                    precision,
                });
            }
            _ => return err(at, format!("unrecognized header line `{line}`")),
        }
    }
    let Some(count) = count else {
        return err(pos, "header has no vertex element");
    };
    Ok((count, props, pos))
}

/// Role of each known property within a vertex record.
#[derive(Clone, Copy)]
enum Slot {
    Mean(usize),
    Normal,
    Dc(usize),
    Rest(usize),
    Opacity,
    Scale(usize),
    Rot(usize),
    Flag(usize),
}

fn indexed(name: &str, prefix: &str) -> Option<usize> {
    name.strip_prefix(prefix).and_then(|s| s.parse().ok())
}

fn slot(name: &str) -> Option<Slot> {
    Some(match name {
        "x" => Slot::Mean(0),
        "y" => Slot::Mean(1),
        "z" => Slot::Mean(2),
        "nx" | "ny" | "nz" => Slot::Normal,
        "opacity" => Slot::Opacity,
        _ => {
            if let Some(k) = indexed(name, "f_dc_") {
                if k >= 3 {
                    return None;
                }
                Slot::Dc(k)
            } else if let Some(k) = indexed(name, "f_rest_") {
                Slot::Rest(k)
            } else if let Some(k) = indexed(name, "scale_") {
                if k >= 3 {
                    return None;
                }
                Slot::Scale(k)
            } else if let Some(k) = indexed(name, "rot_") {
                if k >= 4 {
                    return None;
                }
                Slot::Rot(k)
            } else if let Some(k) = indexed(name, "flag_") {
                Slot::Flag(k)
            } else {
                return None;
            }
        }
    })
}

/// Parses a PLY byte buffer into a cloud.
pub fn decode(bytes: &[u8]) -> std::result::Result<GaussianCloud, PlyError> {
    let (count, props, body) = parse_header(bytes)?;
    let mut slots = Vec::with_capacity(props.len());
    for p in &props {
        match slot(&p.name) {
            Some(s) => slots.push(s),
            None => return err(0, format!("unknown property `{}`", p.name)),
        }
    }
    let n_rest = slots.iter().filter(|s| matches!(s, Slot::Rest(_))).count();
    let degree = match n_rest {
        0 => 0,
        9 => 1,
        24 => 2,
        n => return err(0, format!("{n} f_rest properties match no SH degree")),
    };
    let n_flags = slots.iter().filter(|s| matches!(s, Slot::Flag(_))).count();
    let stride = 11 + color_len(degree);
    if n_flags != 0 && n_flags != stride {
        return err(0, format!("{n_flags} flag properties, expected 0 or {stride}"));
    }
    let mut seen = vec![false; 14 + n_rest + n_flags];
    for s in &slots {
        let idx = match *s {
            Slot::Mean(k) => k,
            Slot::Normal => continue,
            Slot::Dc(k) => 3 + k,
            Slot::Rest(k) if k < n_rest => 6 + k,
            Slot::Opacity => 6 + n_rest,
            Slot::Scale(k) => 7 + n_rest + k,
            Slot::Rot(k) => 10 + n_rest + k,
            Slot::Flag(k) if k < n_flags => 14 + n_rest + k,
            _ => return err(0, "property indices are not contiguous"),
        };
        seen[idx] = true;
    }
    if let Some(missing) = seen.iter().position(|&s| !s) {
        return err(0, format!("required property #{missing} of the vertex layout is missing"));
    }
    let record: usize = props.iter().map(|p| p.precision.size()).sum();
    let needed = count.checked_mul(record).and_then(|n| n.checked_add(body));
    match needed {
        Some(n) if n <= bytes.len() => {
            if n < bytes.len() {
                return err(n, format!("{} trailing bytes after vertex data", bytes.len() - n));
            }
        }
        _ => {
            return err(
                bytes.len(),
                format!("truncated payload: {count} vertices of {record} bytes need more data"),
            )
        }
    }
    let basis = sh_basis_count(degree);
    let mut gaussians = Vec::with_capacity(count);
    let mut pos = body;
    for _ in 0..count {
        let mut g = Gaussian {
            mean: Vec3([0.0; 3]),
            log_scale: [0.0; 3],
            rotation: [0.0; 4],
            opacity_logit: 0.0,
            sh: vec![0.0; color_len(degree)],
            flags: (n_flags > 0).then(|| vec![0.0; n_flags]),
        };
        for (p, s) in props.iter().zip(&slots) {
            let at = pos;
            let v = match p.precision {
                Precision::F32 => {
                    let b: [u8; 4] = bytes[pos..pos + 4].try_into().expect("slice length");
                    pos += 4;
                    f32::from_le_bytes(b) as f64
                }
                Precision::F64 => {
                    let b: [u8; 8] = bytes[pos..pos + 8].try_into().expect("slice length");
                    pos += 8;
                    f64::from_le_bytes(b)
                }
            };
            if !v.is_finite() {
                return err(at, format!("non-finite value in `{}`", p.name));
            }
            match *s {
                Slot::Mean(k) => g.mean.0[k] = v,
                Slot::Normal => {}
                Slot::Dc(k) => g.sh[k] = v,
                Slot::Rest(k) => {
                    let (c, b) = (k / (basis - 1), k % (basis - 1) + 1);
                    g.sh[b * 3 + c] = v;
                }
                Slot::Opacity => g.opacity_logit = v,
                Slot::Scale(k) => g.log_scale[k] = v,
                Slot::Rot(k) => g.rotation[k] = v,
                Slot::Flag(k) => {
                    if let Some(f) = g.flags.as_mut() {
                        f[k] = v;
                    }
                }
            }
        }
        if g.rotation.iter().map(|r| r * r).sum::<f64>() < 1e-24 {
            return err(pos - record, "zero-norm rotation quaternion");
        }
        gaussians.push(g);
    }
    GaussianCloud::with_gaussians(degree, gaussians).or_else(|e| err(body, e.to_string()))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Scene export: float32, never any flag data.
pub fn export_ply(cloud: &GaussianCloud, path: &Path) -> Result<()> {
    write(path, &encode(cloud, Precision::F32, false))
}

/// Resumable checkpoint: float64 with flags when present.
pub fn write_checkpoint(cloud: &GaussianCloud, path: &Path) -> Result<()> {
    write(path, &encode(cloud, Precision::F64, true))
}

/// Reads either an export or a checkpoint.
pub fn import_ply(path: &Path) -> Result<GaussianCloud> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        offset: e.offset,
        message: e.message,
    })
}

/// Whether a PLY header declares any flag property.
pub fn has_flag_properties(bytes: &[u8]) -> bool {
    parse_header(bytes).is_ok_and(|(_, props, _)| props.iter().any(|p| p.name.starts_with("flag_")))
}
