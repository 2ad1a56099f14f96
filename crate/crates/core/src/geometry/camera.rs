use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Depth below which a camera-space point counts as behind the camera.
pub const MIN_DEPTH: f64 = 1e-6;

/// Pinhole camera with OpenCV axes (x right, y down, z forward).
///
/// Pixel coordinates are measured at pixel centers with the origin at the
/// top-left pixel: pixel `(col, row)` has its center at `(u, v) = (col, row)`
/// and covers `[col - 0.5, col + 0.5)`.
#[derive(Clone, Debug, PartialEq)]
pub struct CameraView {
    pub k: Matrix3<f64>,
    pub r: Matrix3<f64>,
    pub t: Vector3<f64>,
    pub width: u32,
    pub height: u32,
}

/// Intrinsics without the extrinsic part, used to stamp out camera rigs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Intrinsics {
    /// Square pixels, principal point at `(width/2, height/2)`, focal length
    /// given as a multiple of the image width.
    pub fn centered(width: u32, height: u32, focal_ratio: f64) -> Self {
        let f = focal_ratio * width as f64;
        Self {
            fx: f,
            fy: f,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            width,
            height,
        }
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }
}

impl CameraView {
    pub fn new(
        k: Matrix3<f64>,
        r: Matrix3<f64>,
        t: Vector3<f64>,
        width: u32,
        height: u32,
    ) -> Result<Self> {
        let cam = Self {
            k,
            r,
            t,
            width,
            height,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::invariant("camera.size", "width and height must be > 0"));
        }
        let k = &self.k;
        if !(k[(0, 0)] > 0.0 && k[(1, 1)] > 0.0) {
            return Err(Error::invariant("camera.K", "focal entries must be positive"));
        }
        if k[(0, 1)] != 0.0 || k[(1, 0)] != 0.0 || k[(2, 0)] != 0.0 || k[(2, 1)] != 0.0 || k[(2, 2)] != 1.0 {
            return Err(Error::invariant(
                "camera.K",
                "expected zero skew and last row (0, 0, 1)",
            ));
        }
        if self.k.iter().chain(self.r.iter()).chain(self.t.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invariant("camera", "non-finite entry"));
        }
        let dev = (self.r * self.r.transpose() - Matrix3::identity()).abs().max();
        if dev > 1e-6 {
            return Err(Error::invariant(
                "camera.R",
                format!("not orthonormal (max |R R^T - I| = {dev:e})"),
            ));
        }
        if self.r.determinant() < 0.0 {
            return Err(Error::invariant("camera.R", "reflection (det < 0)"));
        }
        Ok(())
    }

    /// Camera looking from `eye` at `target`. `up` is a world-space hint.
    pub fn look_at(
        eye: Vector3<f64>,
        target: Vector3<f64>,
        up: Vector3<f64>,
        intr: &Intrinsics,
    ) -> Result<Self> {
        let forward = (target - eye)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::config("look_at: eye coincides with target"))?;
        let mut right = forward.cross(&up);
        if right.norm() < 1e-9 {
            // up is parallel to the viewing direction
            right = forward.cross(&Vector3::new(0.0, 0.0, 1.0));
        }
        let right = right.normalize();
        let down = forward.cross(&right);
        let r = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let t = -(r * eye);
        Self::new(intr.matrix(), r, t, intr.width, intr.height)
    }

    pub fn fx(&self) -> f64 {
        self.k[(0, 0)]
    }
    pub fn fy(&self) -> f64 {
        self.k[(1, 1)]
    }
    pub fn cx(&self) -> f64 {
        self.k[(0, 2)]
    }
    pub fn cy(&self) -> f64 {
        self.k[(1, 2)]
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        -(self.r.transpose() * self.t)
    }

    pub fn to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.r * p + self.t
    }

    /// Same camera re-expressed on a `width × height` pixel grid covering the
    /// same field of view.
    pub fn resized(&self, width: u32, height: u32) -> Self {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let sx = width as f64 / self.width as f64;
        let sy = height as f64 / self.height as f64;
        let mut k = self.k;
        k[(0, 0)] *= sx;
        k[(1, 1)] *= sy;
        k[(0, 2)] = (k[(0, 2)] + 0.5) * sx - 0.5;
        k[(1, 2)] = (k[(1, 2)] + 0.5) * sy - 0.5;
        Self {
            k,
            r: self.r,
            t: self.t,
            width,
            height,
        }
    }

    /// World-space unit direction of the ray through pixel coordinate `(u, v)`.
    pub fn ray_direction(&self, u: f64, v: f64) -> Vector3<f64> {
        let x = (u - self.cx()) / self.fx();
        let y = (v - self.cy()) / self.fy();
        (self.r.transpose() * Vector3::new(x, y, 1.0)).normalize()
    }
}
