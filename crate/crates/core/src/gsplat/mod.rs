//! Anisotropic 3D Gaussians: tile-based differentiable rendering, a
//! brute-force reference renderer, and PLY interchange.

mod ply;
mod render;
pub mod oracle;

pub use ply::{export_ply, import_ply, SH_C0};
pub use render::{render, render_backward, GaussianGrads, RenderOutput, ALPHA_MIN, DILATION, NEAR_CLIP, TILE, T_MIN};

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};

use crate::error::{Error, Result};

/// Unordered set of Gaussians in world space.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GaussianSet {
    pub means: Vec<[f64; 3]>,
    /// Quaternions `(w, x, y, z)`; normalized on use.
    pub rotations: Vec<[f64; 4]>,
    pub scales: Vec<[f64; 3]>,
    pub opacities: Vec<f64>,
    pub colors: Vec<[f64; 3]>,
}

impl GaussianSet {
    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }

    pub fn push(&mut self, mean: [f64; 3], rotation: [f64; 4], scale: [f64; 3], opacity: f64, color: [f64; 3]) {
        self.means.push(mean);
        self.rotations.push(rotation);
        self.scales.push(scale);
        self.opacities.push(opacity);
        self.colors.push(color);
    }

    pub fn extend(&mut self, other: &GaussianSet) {
        self.means.extend_from_slice(&other.means);
        self.rotations.extend_from_slice(&other.rotations);
        self.scales.extend_from_slice(&other.scales);
        self.opacities.extend_from_slice(&other.opacities);
        self.colors.extend_from_slice(&other.colors);
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if self.rotations.len() != n || self.scales.len() != n || self.opacities.len() != n || self.colors.len() != n {
            return Err(Error::invariant("gaussians", "attribute arrays differ in length"));
        }
        for i in 0..n {
            let finite = self.means[i].iter().chain(&self.rotations[i]).chain(&self.scales[i]).chain(&self.colors[i]).all(|v| v.is_finite())
                && self.opacities[i].is_finite();
            if !finite {
                return Err(Error::numeric(format!("gaussian {i} has a non-finite attribute")));
            }
            if self.scales[i].iter().any(|&s| s <= 0.0) {
                return Err(Error::invariant("scales", format!("gaussian {i} has a non-positive scale")));
            }
            if !(0.0..=1.0).contains(&self.opacities[i]) {
                return Err(Error::invariant("opacities", format!("gaussian {i} opacity {} outside [0, 1]", self.opacities[i])));
            }
            let q = self.rotations[i];
            if q.iter().map(|v| v * v).sum::<f64>() < 1e-24 {
                return Err(Error::invariant("rotations", format!("gaussian {i} has a zero quaternion")));
            }
        }
        Ok(())
    }
}

/// Rotation matrix of the normalized quaternion `(w, x, y, z)`.
pub fn rotation_matrix(q: &[f64; 4]) -> Matrix3<f64> {
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    let (w, x, y, z) = (q[0] / n, q[1] / n, q[2] / n, q[3] / n);
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// `R(q̂) diag(s)² R(q̂)ᵀ`.
pub fn covariance_from(q: &[f64; 4], s: &[f64; 3]) -> Matrix3<f64> {
    let m = rotation_matrix(q) * Matrix3::from_diagonal(&Vector3::from(*s));
    m * m.transpose()
}

/// Same covariance through nalgebra's quaternion type; used as an
/// independent reference.
pub fn covariance_reference(q: &[f64; 4], s: &[f64; 3]) -> Matrix3<f64> {
    let uq = UnitQuaternion::from_quaternion(Quaternion::new(q[0], q[1], q[2], q[3]));
    let r = uq.to_rotation_matrix().into_inner();
    let d = Matrix3::from_diagonal(&Vector3::new(s[0] * s[0], s[1] * s[1], s[2] * s[2]));
    r * d * r.transpose()
}
