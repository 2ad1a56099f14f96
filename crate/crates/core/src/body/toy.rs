//! Procedural capsule human with the standard 24-joint tree.
//!
//! Every part is a tube of vertex rings between two cap vertices. Skinning
//! weights are dyadic so the rest pose reproduces the template bit-exactly.

use std::f64::consts::PI;

use nalgebra::Vector3;

use super::{BodyModel, PartInfo, JOINT_NAMES, NUM_BETAS, NUM_JOINTS};

pub const TOY_PARENTS: [i32; NUM_JOINTS] = [
    -1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19, 20, 21,
];

const JOINTS: [[f64; 3]; NUM_JOINTS] = [
    [0.0, 0.0, 0.0],
    [0.1, -0.05, 0.0],
    [-0.1, -0.05, 0.0],
    [0.0, 0.1, 0.0],
    [0.1, -0.45, 0.0],
    [-0.1, -0.45, 0.0],
    [0.0, 0.22, 0.0],
    [0.1, -0.85, 0.0],
    [-0.1, -0.85, 0.0],
    [0.0, 0.34, 0.0],
    [0.1, -0.9, -0.06],
    [-0.1, -0.9, -0.06],
    [0.0, 0.48, 0.0],
    [0.04, 0.46, 0.0],
    [-0.04, 0.46, 0.0],
    [0.0, 0.58, 0.0],
    [0.18, 0.46, 0.0],
    [-0.18, 0.46, 0.0],
    [0.45, 0.46, 0.0],
    [-0.45, 0.46, 0.0],
    [0.7, 0.46, 0.0],
    [-0.7, 0.46, 0.0],
    [0.76, 0.46, 0.0],
    [-0.76, 0.46, 0.0],
];

struct Segment {
    start: [f64; 3],
    end: [f64; 3],
    radius: f64,
    rings: usize,
    per_ring: usize,
    rounded: bool,
}

fn segment(j: usize) -> Segment {
    let s = |end: [f64; 3], radius: f64, rings: usize| Segment {
        start: JOINTS[j],
        end,
        radius,
        rings,
        per_ring: 8,
        rounded: false,
    };
    match j {
        0 => Segment {
            start: [0.0, -0.1, 0.0],
            end: [0.0, 0.1, 0.0],
            radius: 0.13,
            rings: 4,
            per_ring: 8,
            rounded: false,
        },
        1 | 2 => s(JOINTS[j + 3], 0.07, 3),
        3 => s(JOINTS[6], 0.13, 4),
        4 | 5 => s(JOINTS[j + 3], 0.05, 3),
        6 => s(JOINTS[9], 0.14, 4),
        7 | 8 => s(JOINTS[j + 3], 0.045, 2),
        9 => s([0.0, 0.46, 0.0], 0.14, 4),
        10 | 11 => {
            let x = JOINTS[j][0];
            s([x, -0.9, -0.18], 0.04, 2)
        }
        12 => s(JOINTS[15], 0.05, 3),
        13 | 14 => {
            let side = if j == 13 { 1.0 } else { -1.0 };
            s([0.18 * side, 0.46, 0.0], 0.06, 2)
        }
        15 => Segment {
            start: JOINTS[15],
            end: [0.0, 0.82, 0.0],
            radius: 0.11,
            rings: 5,
            per_ring: 10,
            rounded: true,
        },
        16..=21 => {
            let radius = [0.045, 0.04, 0.035][(j - 16) / 2];
            s(JOINTS[j + 2], radius, if j < 20 { 3 } else { 2 })
        }
        22 | 23 => s([0.86 * JOINTS[j][0].signum(), 0.46, 0.0], 0.035, 2),
        _ => unreachable!(),
    }
}

fn f32_round(x: f64) -> f64 {
    x as f32 as f64
}

/// Per-vertex data collected while building the tubes.
struct Vert {
    pos: Vector3<f64>,
    part: usize,
    /// Unit radial direction from the part axis (zero on caps).
    radial: Vector3<f64>,
    /// Position along the part axis in `[0, 1]`.
    along: f64,
    first_ring: bool,
}

pub fn toy_capsule_human() -> BodyModel {
    let mut verts: Vec<Vert> = Vec::new();
    let mut faces: Vec<[u32; 3]> = Vec::new();
    let mut cap_index = [(0usize, 0usize); NUM_JOINTS];

    for j in 0..NUM_JOINTS {
        let seg = segment(j);
        let a = Vector3::from(seg.start);
        let b = Vector3::from(seg.end);
        let axis = (b - a).normalize();
        let reference = if axis.z.abs() < 0.9 { Vector3::z() } else { Vector3::x() };
        let u = axis.cross(&reference).normalize();
        let v = axis.cross(&u);

        let base = verts.len();
        verts.push(Vert {
            pos: a,
            part: j,
            radial: Vector3::zeros(),
            along: 0.0,
            first_ring: true,
        });
        for r in 0..seg.rings {
            let t = (r as f64 + 0.5) / seg.rings as f64;
            let radius = if seg.rounded {
                seg.radius * (PI * t).sin().sqrt()
            } else {
                seg.radius
            };
            let c = a + (b - a) * t;
            for k in 0..seg.per_ring {
                let phi = 2.0 * PI * k as f64 / seg.per_ring as f64;
                let dir = u * phi.cos() + v * phi.sin();
                verts.push(Vert {
                    pos: c + dir * radius,
                    part: j,
                    radial: dir,
                    along: t,
                    first_ring: r == 0,
                });
            }
        }
        let end = verts.len();
        verts.push(Vert {
            pos: b,
            part: j,
            radial: Vector3::zeros(),
            along: 1.0,
            first_ring: false,
        });
        cap_index[j] = (base, end);

        let m = seg.per_ring;
        let ring = |r: usize, k: usize| (base + 1 + r * m + k % m) as u32;
        for k in 0..m {
            faces.push([base as u32, ring(0, k + 1), ring(0, k)]);
        }
        for r in 0..seg.rings - 1 {
            for k in 0..m {
                faces.push([ring(r, k), ring(r, k + 1), ring(r + 1, k + 1)]);
                faces.push([ring(r, k), ring(r + 1, k + 1), ring(r + 1, k)]);
            }
        }
        let last = seg.rings - 1;
        for k in 0..m {
            faces.push([end as u32, ring(last, k), ring(last, k + 1)]);
        }
    }

    let nv = verts.len();
    let template: Vec<[f64; 3]> = verts
        .iter()
        .map(|v| [f32_round(v.pos.x), f32_round(v.pos.y), f32_round(v.pos.z)])
        .collect();

    let mut weights = vec![0.0; nv * NUM_JOINTS];
    for (i, v) in verts.iter().enumerate() {
        let row = &mut weights[i * NUM_JOINTS..(i + 1) * NUM_JOINTS];
        let parent = TOY_PARENTS[v.part];
        if parent >= 0 && v.first_ring && v.along > 0.0 {
            row[v.part] = 0.75;
            row[parent as usize] = 0.25;
        } else {
            row[v.part] = 1.0;
        }
    }

    let mut regressor = vec![0.0; NUM_JOINTS * nv];
    for j in 0..NUM_JOINTS {
        let (s, e) = cap_index[j];
        if j == 0 {
            regressor[j * nv + s] = 0.5;
            regressor[j * nv + e] = 0.5;
        } else {
            regressor[j * nv + s] = 1.0;
        }
    }

    let mut shape_dirs = vec![0.0; nv * 3 * NUM_BETAS];
    for (i, v) in verts.iter().enumerate() {
        let p = v.pos;
        let leg = matches!(v.part, 1 | 2 | 4 | 5 | 7 | 8 | 10 | 11);
        let arm = matches!(v.part, 13 | 14 | 16..=23);
        let torso = matches!(v.part, 0 | 3 | 6 | 9);
        let fields: [Vector3<f64>; NUM_BETAS] = [
            p * 0.05,
            Vector3::new(0.0, p.y * 0.06, 0.0),
            v.radial * 0.012,
            if leg { Vector3::new(0.0, (p.y + 0.05) * 0.08, 0.0) } else { Vector3::zeros() },
            if arm { Vector3::new(p.x * 0.06, 0.0, 0.0) } else { Vector3::zeros() },
            if arm || matches!(v.part, 9) { Vector3::new(p.x.signum() * 0.02 * p.x.abs().min(0.18) / 0.18, 0.0, 0.0) } else { Vector3::zeros() },
            if torso { Vector3::new(0.0, 0.0, v.radial.z.min(0.0) * 0.025) } else { Vector3::zeros() },
            if v.part == 15 { (p - Vector3::new(0.0, 0.58, 0.0)) * 0.08 } else { Vector3::zeros() },
            if leg || v.part == 0 { Vector3::new(p.x * 0.1, 0.0, 0.0) } else { Vector3::zeros() },
            if leg || arm { v.radial * 0.008 * (1.0 - v.along) } else { Vector3::zeros() },
        ];
        for (k, f) in fields.iter().enumerate() {
            for axis in 0..3 {
                shape_dirs[(i * 3 + axis) * NUM_BETAS + k] = f32_round(f[axis]);
            }
        }
    }

    let labels: Vec<u8> = verts.iter().map(|v| v.part as u8 + 1).collect();
    let parts = (0..NUM_JOINTS)
        .map(|j| PartInfo {
            id: j as u8 + 1,
            name: JOINT_NAMES[j].to_string(),
            vertex_count: labels.iter().filter(|&&l| l as usize == j + 1).count() as u32,
        })
        .collect();

    BodyModel {
        template,
        faces,
        shape_dirs,
        weights,
        regressor,
        parents: TOY_PARENTS.to_vec(),
        labels,
        parts,
    }
}
