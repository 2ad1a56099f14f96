//! Parametric body model: shape blend shapes, joint regression, forward
//! kinematics over the joint tree and linear blend skinning.
//!
//! Pose-dependent corrective blend shapes are not modelled.

mod format;
mod toy;

pub use format::{load_body_model, save_body_model, BODY_MAGIC, BODY_VERSION};
pub use toy::toy_capsule_human;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NUM_JOINTS: usize = 24;
pub const NUM_BETAS: usize = 10;

/// Joint names in kinematic order; part id = joint index + 1.
pub const JOINT_NAMES: [&str; NUM_JOINTS] = [
    "pelvis",
    "left_hip",
    "right_hip",
    "spine1",
    "left_knee",
    "right_knee",
    "spine2",
    "left_ankle",
    "right_ankle",
    "spine3",
    "left_foot",
    "right_foot",
    "neck",
    "left_collar",
    "right_collar",
    "head",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
    "left_hand",
    "right_hand",
];

/// Entry of the part table stored with a model.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PartInfo {
    pub id: u8,
    pub name: String,
    pub vertex_count: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BodyModel {
    pub template: Vec<[f64; 3]>,
    pub faces: Vec<[u32; 3]>,
    /// `V × 3 × 10`, index `(v * 3 + axis) * 10 + k`.
    pub shape_dirs: Vec<f64>,
    /// `V × J` skinning weights.
    pub weights: Vec<f64>,
    /// `J × V` joint regressor.
    pub regressor: Vec<f64>,
    /// Parent joint per joint, `-1` for the root.
    pub parents: Vec<i32>,
    /// Part id (1..=24) per vertex.
    pub labels: Vec<u8>,
    pub parts: Vec<PartInfo>,
}

/// Posed mesh with the topology and labels of its source model.
#[derive(Clone, Debug, PartialEq)]
pub struct BodyMesh {
    pub vertices: Vec<[f64; 3]>,
    pub faces: Vec<[u32; 3]>,
    pub labels: Vec<u8>,
}

/// Shape and pose coefficients, as read from a body-parameter file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BodyParams {
    pub beta: [f64; NUM_BETAS],
    pub theta: Vec<[f64; 3]>,
}

impl Default for BodyParams {
    fn default() -> Self {
        Self {
            beta: [0.0; NUM_BETAS],
            theta: vec![[0.0; 3]; NUM_JOINTS],
        }
    }
}

impl BodyParams {
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let p: BodyParams = serde_json::from_str(&text)
            .map_err(|e| Error::schema(format!("body params {}: {e}", path.display())))?;
        if p.theta.len() != NUM_JOINTS {
            return Err(Error::schema(format!(
                "body params: theta has {} joints, expected {NUM_JOINTS}",
                p.theta.len()
            )));
        }
        if p.beta.iter().chain(p.theta.iter().flatten()).any(|v| !v.is_finite()) {
            return Err(Error::invariant("body_params", "non-finite coefficient"));
        }
        Ok(p)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::schema(e.to_string()))?;
        std::fs::write(path, text)?;
        Ok(())
    }
}

impl BodyModel {
    pub fn num_vertices(&self) -> usize {
        self.template.len()
    }

    pub fn num_joints(&self) -> usize {
        self.parents.len()
    }

    /// Check every structural invariant; the error names the offending field
    /// and row.
    pub fn validate(&self) -> Result<()> {
        let v = self.num_vertices();
        let j = self.num_joints();
        if v == 0 {
            return Err(Error::invariant("template", "no vertices"));
        }
        if j != NUM_JOINTS {
            return Err(Error::invariant("parents", format!("expected {NUM_JOINTS} joints, found {j}")));
        }
        if let Some(i) = self.template.iter().position(|p| p.iter().any(|x| !x.is_finite())) {
            return Err(Error::invariant("template", format!("vertex {i} is not finite")));
        }
        if self.shape_dirs.len() != v * 3 * NUM_BETAS {
            return Err(Error::invariant("shape_dirs", "wrong length"));
        }
        if self.weights.len() != v * j {
            return Err(Error::invariant("weights", "wrong length"));
        }
        if self.regressor.len() != j * v {
            return Err(Error::invariant("regressor", "wrong length"));
        }
        if self.labels.len() != v {
            return Err(Error::invariant("labels", "wrong length"));
        }
        for (row, w) in self.weights.chunks_exact(j).enumerate() {
            if w.iter().any(|x| !(*x >= 0.0)) {
                return Err(Error::invariant("weights", format!("row {row} has a negative or NaN weight")));
            }
            let s: f64 = w.iter().sum();
            if (s - 1.0).abs() > 1e-5 {
                return Err(Error::invariant("weights", format!("row {row} sums to {s}, expected 1")));
            }
        }
        if self.parents[0] != -1 {
            return Err(Error::invariant("parents", "joint 0 must be the root (parent -1)"));
        }
        for (k, &p) in self.parents.iter().enumerate().skip(1) {
            if p < 0 || p as usize >= k {
                return Err(Error::invariant(
                    "parents",
                    format!("joint {k} has parent {p}; parents must precede children"),
                ));
            }
        }
        for (fi, f) in self.faces.iter().enumerate() {
            if f.iter().any(|&i| i as usize >= v) {
                return Err(Error::invariant("faces", format!("face {fi} indexes past vertex count {v}")));
            }
        }
        if let Some(i) = self.labels.iter().position(|&l| l == 0 || l > 24) {
            return Err(Error::invariant("labels", format!("vertex {i} has label {}", self.labels[i])));
        }
        let mut hist = [0u32; 25];
        for &l in &self.labels {
            hist[l as usize] += 1;
        }
        let mut seen = [false; 25];
        for p in &self.parts {
            if p.id == 0 || p.id > 24 || seen[p.id as usize] {
                return Err(Error::invariant("parts", format!("bad or duplicate part id {}", p.id)));
            }
            seen[p.id as usize] = true;
            if hist[p.id as usize] != p.vertex_count {
                return Err(Error::invariant(
                    "parts",
                    format!(
                        "part {} ({}) lists {} vertices, labels contain {}",
                        p.id, p.name, p.vertex_count, hist[p.id as usize]
                    ),
                ));
            }
        }
        if let Some(l) = (1..=24).find(|&l| hist[l] > 0 && !seen[l]) {
            return Err(Error::invariant("labels", format!("label {l} missing from part table")));
        }
        Ok(())
    }

    /// Part id of vertex `idx`.
    pub fn vertex_part(&self, idx: usize) -> Result<u8> {
        self.labels.get(idx).copied().ok_or_else(|| {
            Error::config(format!("vertex index {idx} out of range (V = {})", self.num_vertices()))
        })
    }

    pub fn part_id(&self, name: &str) -> Option<u8> {
        self.parts.iter().find(|p| p.name == name).map(|p| p.id)
    }

    /// Template deformed by the shape blend shapes.
    pub fn shaped(&self, beta: &[f64; NUM_BETAS]) -> Vec<Vector3<f64>> {
        self.template
            .iter()
            .enumerate()
            .map(|(vi, t)| {
                let mut p = Vector3::from(*t);
                for axis in 0..3 {
                    let dirs = &self.shape_dirs[(vi * 3 + axis) * NUM_BETAS..(vi * 3 + axis + 1) * NUM_BETAS];
                    let off: f64 = dirs.iter().zip(beta).map(|(d, b)| d * b).sum();
                    p[axis] += off;
                }
                p
            })
            .collect()
    }

    /// Joint locations regressed from a vertex set.
    pub fn regress_joints(&self, verts: &[Vector3<f64>]) -> Vec<Vector3<f64>> {
        let v = self.num_vertices();
        (0..self.num_joints())
            .map(|j| {
                let row = &self.regressor[j * v..(j + 1) * v];
                row.iter()
                    .zip(verts)
                    .filter(|(w, _)| **w != 0.0)
                    .fold(Vector3::zeros(), |acc, (w, p)| acc + p * *w)
            })
            .collect()
    }
}

/// Rodrigues' formula; second-order series for angles below 1e-8.
pub fn axis_angle_to_matrix(aa: &[f64; 3]) -> Matrix3<f64> {
    let w = Vector3::from(*aa);
    let angle = w.norm();
    let kx = w.cross_matrix();
    if angle < 1e-8 {
        return Matrix3::identity() + kx + 0.5 * kx * kx;
    }
    let k = kx / angle;
    Matrix3::identity() + angle.sin() * k + (1.0 - angle.cos()) * k * k
}

/// Affine map `x -> m x + c`.
#[derive(Clone, Copy, Debug)]
struct Affine {
    m: Matrix3<f64>,
    c: Vector3<f64>,
}

/// Per-joint skinning transforms: each joint rotates its subtree about its
/// own rest location, composed from the root outwards.
fn skinning_transforms(model: &BodyModel, joints: &[Vector3<f64>], theta: &[[f64; 3]]) -> Vec<Affine> {
    let mut out: Vec<Affine> = Vec::with_capacity(joints.len());
    for (j, jp) in joints.iter().enumerate() {
        let r = axis_angle_to_matrix(&theta[j]);
        let local = Affine {
            m: r,
            c: jp - r * jp,
        };
        let global = match model.parents[j] {
            p if p < 0 => local,
            p => {
                let parent = out[p as usize];
                Affine {
                    m: parent.m * local.m,
                    c: parent.m * local.c + parent.c,
                }
            }
        };
        out.push(global);
    }
    out
}

/// Pose the model: blend shapes, joint regression, forward kinematics, LBS.
pub fn pose_body(model: &BodyModel, beta: &[f64; NUM_BETAS], theta: &[[f64; 3]]) -> BodyMesh {
    assert_eq!(theta.len(), model.num_joints(), "theta must have one axis-angle per joint");
    let shaped = model.shaped(beta);
    let joints = model.regress_joints(&shaped);
    let transforms = skinning_transforms(model, &joints, theta);
    let nj = model.num_joints();
    let vertices = shaped
        .iter()
        .enumerate()
        .map(|(vi, p)| {
            let w = &model.weights[vi * nj..(vi + 1) * nj];
            let mut m = Matrix3::zeros();
            let mut c = Vector3::zeros();
            for (wj, a) in w.iter().zip(&transforms) {
                if *wj != 0.0 {
                    m += a.m * *wj;
                    c += a.c * *wj;
                }
            }
            let q = m * p + c;
            [q.x, q.y, q.z]
        })
        .collect();
    BodyMesh {
        vertices,
        faces: model.faces.clone(),
        labels: model.labels.clone(),
    }
}

impl BodyMesh {
    /// Center of the axis-aligned bounding box and the largest vertex
    /// distance from it.
    pub fn bounding_sphere(&self) -> (Vector3<f64>, f64) {
        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        for v in &self.vertices {
            let p = Vector3::from(*v);
            lo = lo.inf(&p);
            hi = hi.sup(&p);
        }
        let c = (lo + hi) / 2.0;
        let r = self
            .vertices
            .iter()
            .map(|v| (Vector3::from(*v) - c).norm())
            .fold(0.0, f64::max);
        (c, r)
    }

    /// Translate and scale so the mesh sits in the unit sphere at `center`.
    pub fn normalized(&self, center: &Vector3<f64>, radius: f64) -> BodyMesh {
        BodyMesh {
            vertices: self
                .vertices
                .iter()
                .map(|v| {
                    let p = (Vector3::from(*v) - center) / radius;
                    [p.x, p.y, p.z]
                })
                .collect(),
            faces: self.faces.clone(),
            labels: self.labels.clone(),
        }
    }
}
