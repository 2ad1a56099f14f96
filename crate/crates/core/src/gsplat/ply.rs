//! Binary little-endian PLY in the column layout common to Gaussian-splat
//! viewers: position, DC color coefficients, logit opacity, log scales and a
//! `(w, x, y, z)` quaternion.

use std::io::Write;
use std::path::Path;

use super::GaussianSet;
use crate::error::{Error, Result};

/// Zeroth-order spherical-harmonic basis constant.
pub const SH_C0: f64 = 0.282_094_791_773_878_14;

const COLUMNS: [&str; 14] = [
    "x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2", "opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2",
    "rot_3",
];

fn logit(p: f64) -> f64 {
    let p = p.clamp(1e-7, 1.0 - 1e-7);
    (p / (1.0 - p)).ln()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn export_ply(set: &GaussianSet, path: &Path) -> Result<()> {
    set.validate()?;
    let mut out = Vec::new();
    write!(out, "ply\nformat binary_little_endian 1.0\nelement vertex {}\n", set.len())?;
    for c in COLUMNS {
        writeln!(out, "property float {c}")?;
    }
    out.extend_from_slice(b"end_header\n");
    for i in 0..set.len() {
        let c = set.colors[i];
        let s = set.scales[i];
        let q = set.rotations[i];
        let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        let row = [
            set.means[i][0],
            set.means[i][1],
            set.means[i][2],
            (c[0] - 0.5) / SH_C0,
            (c[1] - 0.5) / SH_C0,
            (c[2] - 0.5) / SH_C0,
            logit(set.opacities[i]),
            s[0].ln(),
            s[1].ln(),
            s[2].ln(),
            q[0] / n,
            q[1] / n,
            q[2] / n,
            q[3] / n,
        ];
        for v in row {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

#[derive(Clone, Copy)]
enum Scalar {
    U8,
    I32,
    F32,
    F64,
}

impl Scalar {
    fn parse(s: &str) -> Option<Scalar> {
        Some(match s {
            "uchar" | "uint8" => Scalar::U8,
            "int" | "int32" | "uint" | "uint32" => Scalar::I32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::U8 => 1,
            Scalar::I32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }

    fn read(self, b: &[u8]) -> f64 {
        match self {
            Scalar::U8 => b[0] as f64,
            Scalar::I32 => i32::from_le_bytes(b.try_into().unwrap()) as f64,
            Scalar::F32 => f32::from_le_bytes(b.try_into().unwrap()) as f64,
            Scalar::F64 => f64::from_le_bytes(b.try_into().unwrap()),
        }
    }
}

/// Read a splat PLY. Properties are matched by name; extra properties
/// (normals, higher-order color coefficients) are ignored.
pub fn import_ply(path: &Path) -> Result<GaussianSet> {
    let data = std::fs::read(path)?;
    let end = data
        .windows(11)
        .position(|w| w == b"end_header\n")
        .ok_or_else(|| Error::schema("ply: missing end_header"))?;
    let header = std::str::from_utf8(&data[..end]).map_err(|_| Error::schema("ply: header is not utf-8"))?;
    let body = &data[end + 11..];
    let mut lines = header.lines();
    if lines.next() != Some("ply") {
        return Err(Error::schema("ply: missing magic"));
    }
    let mut count = None;
    let mut props: Vec<(String, Scalar)> = Vec::new();
    let mut in_vertex = false;
    for line in lines {
        let tok: Vec<&str> = line.split_whitespace().collect();
        match tok.as_slice() {
            ["format", fmt, _] => {
                if *fmt != "binary_little_endian" {
                    return Err(Error::schema(format!("ply: unsupported format {fmt}")));
                }
            }
            ["element", name, n] => {
                in_vertex = *name == "vertex";
                if in_vertex {
                    count = Some(n.parse::<usize>().map_err(|_| Error::schema("ply: bad vertex count"))?);
                } else if count.is_some() {
                    return Err(Error::schema("ply: elements after vertex are not supported"));
                }
            }
            ["property", "list", ..] if in_vertex => {
                return Err(Error::schema("ply: list properties on vertices are not supported"));
            }
            ["property", ty, name] if in_vertex => {
                let s = Scalar::parse(ty).ok_or_else(|| Error::schema(format!("ply: unknown type {ty}")))?;
                props.push((name.to_string(), s));
            }
            _ => {}
        }
    }
    let n = count.ok_or_else(|| Error::schema("ply: no vertex element"))?;
    let stride: usize = props.iter().map(|p| p.1.size()).sum();
    if body.len() < n * stride {
        return Err(Error::schema(format!("ply: body has {} bytes, expected {}", body.len(), n * stride)));
    }
    let mut offsets = [0usize; 14];
    let mut types = [Scalar::F32; 14];
    for (k, col) in COLUMNS.iter().enumerate() {
        let mut off = 0;
        let mut found = false;
        for (name, s) in &props {
            if name == col {
                offsets[k] = off;
                types[k] = *s;
                found = true;
                break;
            }
            off += s.size();
        }
        if !found {
            return Err(Error::schema(format!("ply: missing property {col}")));
        }
    }
    let mut set = GaussianSet::default();
    for i in 0..n {
        let row = &body[i * stride..(i + 1) * stride];
        let v: [f64; 14] = std::array::from_fn(|k| types[k].read(&row[offsets[k]..offsets[k] + types[k].size()]));
        set.push(
            [v[0], v[1], v[2]],
            [v[10], v[11], v[12], v[13]],
            [v[7].exp(), v[8].exp(), v[9].exp()],
            sigmoid(v[6]),
            [v[3] * SH_C0 + 0.5, v[4] * SH_C0 + 0.5, v[5] * SH_C0 + 0.5],
        );
    }
    set.validate()?;
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn random_set(n: usize, seed: u64) -> GaussianSet {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut g = GaussianSet::default();
        for _ in 0..n {
            let q: [f64; 4] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
            let qn = q.iter().map(|v| v * v).sum::<f64>().sqrt();
            g.push(
                std::array::from_fn(|_| rng.random_range(-1.0..1.0)),
                q.map(|v| v / qn),
                std::array::from_fn(|_| rng.random_range(0.01..0.3)),
                rng.random_range(0.05..0.95),
                std::array::from_fn(|_| rng.random_range(0.0..1.0)),
            );
        }
        g
    }

    #[test]
    fn round_trip_within_f32_precision() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.ply");
        let g = random_set(50, 3);
        export_ply(&g, &p).unwrap();
        let back = import_ply(&p).unwrap();
        assert_eq!(back.len(), 50);
        for i in 0..50 {
            for k in 0..3 {
                assert!((back.means[i][k] - g.means[i][k]).abs() < 1e-6);
                assert!((back.scales[i][k] / g.scales[i][k] - 1.0).abs() < 1e-5);
                assert!((back.colors[i][k] - g.colors[i][k]).abs() < 1e-6);
            }
            for k in 0..4 {
                assert!((back.rotations[i][k] - g.rotations[i][k]).abs() < 1e-6);
            }
            assert!((back.opacities[i] - g.opacities[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn header_lists_columns_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.ply");
        export_ply(&random_set(2, 1), &p).unwrap();
        let data = std::fs::read(&p).unwrap();
        let text = String::from_utf8_lossy(&data[..400]);
        let names: Vec<&str> = text
            .lines()
            .filter_map(|l| l.strip_prefix("property float "))
            .collect();
        assert_eq!(names, COLUMNS);
        assert!(text.contains("element vertex 2"));
    }

    #[test]
    fn import_tolerates_extra_properties() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.ply");
        let mut out = b"ply\nformat binary_little_endian 1.0\ncomment extra columns\nelement vertex 1\nproperty float nx\n".to_vec();
        for c in COLUMNS {
            out.extend_from_slice(format!("property float {c}\n").as_bytes());
        }
        out.extend_from_slice(b"property uchar extra\nend_header\n");
        let row: [f32; 15] = [9.0, 1.0, 2.0, 3.0, 0.0, 0.0, 0.0, 0.0, -1.0, -1.0, -1.0, 1.0, 0.0, 0.0, 0.0];
        for v in row {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.push(7);
        std::fs::write(&p, out).unwrap();
        let g = import_ply(&p).unwrap();
        assert_eq!(g.means[0], [1.0, 2.0, 3.0]);
        assert_eq!(g.opacities[0], 0.5);
        assert_eq!(g.colors[0], [0.5; 3]);
    }

    #[test]
    fn ascii_and_truncated_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.ply");
        std::fs::write(&p, "ply\nformat ascii 1.0\nelement vertex 0\nend_header\n").unwrap();
        assert_eq!(import_ply(&p).unwrap_err().exit_code(), 2);
        export_ply(&random_set(3, 2), &p).unwrap();
        let d = std::fs::read(&p).unwrap();
        std::fs::write(&p, &d[..d.len() - 4]).unwrap();
        assert_eq!(import_ply(&p).unwrap_err().exit_code(), 2);
    }
}
