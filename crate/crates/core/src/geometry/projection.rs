use nalgebra::{Matrix3, Vector3};

use super::camera::{CameraView, MIN_DEPTH};
use crate::error::{Error, Result};

/// One projected point. `valid` is false behind the camera or off the image.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
    pub valid: bool,
}

pub fn project_point(p: &Vector3<f64>, cam: &CameraView) -> Projection {
    let pc = cam.to_camera(p);
    let depth = pc.z;
    if depth <= MIN_DEPTH {
        return Projection {
            u: f64::NAN,
            v: f64::NAN,
            depth,
            valid: false,
        };
    }
    let h = cam.k * pc;
    let u = h.x / h.z;
    let v = h.y / h.z;
    let valid = u >= 0.0 && u < cam.width as f64 && v >= 0.0 && v < cam.height as f64;
    Projection { u, v, depth, valid }
}

pub fn project_points(points: &[[f64; 3]], cam: &CameraView) -> Vec<Projection> {
    points
        .iter()
        .map(|p| project_point(&Vector3::from(*p), cam))
        .collect()
}

/// Per-pixel Plücker coordinates: unit direction `d` and moment `o × d`.
#[derive(Clone, Debug, PartialEq)]
pub struct RayMap {
    pub height: usize,
    pub width: usize,
    pub origin: [f64; 3],
    /// Row-major, 6 values per cell: `(d, o × d)`.
    pub data: Vec<f64>,
}

impl RayMap {
    pub fn at(&self, row: usize, col: usize) -> &[f64] {
        let i = (row * self.width + col) * 6;
        &self.data[i..i + 6]
    }

    pub fn direction(&self, row: usize, col: usize) -> Vector3<f64> {
        let r = self.at(row, col);
        Vector3::new(r[0], r[1], r[2])
    }

    pub fn moment(&self, row: usize, col: usize) -> Vector3<f64> {
        let r = self.at(row, col);
        Vector3::new(r[3], r[4], r[5])
    }
}

/// Continuous image-pixel coordinate of the center of cell `index` when an
/// axis of `full` pixels is split into `cells` equal cells.
pub fn cell_center_pixel(index: usize, full: u32, cells: usize) -> f64 {
    let stride = full as f64 / cells as f64;
    stride * index as f64 + (stride - 1.0) / 2.0
}

/// Inverse of [`cell_center_pixel`]: continuous cell-grid coordinate of an
/// image pixel coordinate.
pub fn pixel_to_cell_coord(pixel: f64, full: u32, cells: usize) -> f64 {
    let stride = full as f64 / cells as f64;
    (pixel - (stride - 1.0) / 2.0) / stride
}

/// Plücker ray map of `cam` sampled at the centers of an `h × w` grid
/// spanning the image.
pub fn plucker_raymap(cam: &CameraView, h: usize, w: usize) -> Result<RayMap> {
    if h == 0 || w == 0 {
        return Err(Error::config("plucker_raymap: h and w must be > 0"));
    }
    let kinv: Matrix3<f64> = cam
        .k
        .try_inverse()
        .filter(|m| m.iter().all(|v| v.is_finite()))
        .ok_or_else(|| Error::config("plucker_raymap: singular intrinsics"))?;
    let rt = cam.r.transpose();
    let o = cam.center();
    let mut data = Vec::with_capacity(h * w * 6);
    for row in 0..h {
        let v = cell_center_pixel(row, cam.height, h);
        for col in 0..w {
            let u = cell_center_pixel(col, cam.width, w);
            let d = (rt * (kinv * Vector3::new(u, v, 1.0))).normalize();
            let m = o.cross(&d);
            data.extend_from_slice(&[d.x, d.y, d.z, m.x, m.y, m.z]);
        }
    }
    Ok(RayMap {
        height: h,
        width: w,
        origin: [o.x, o.y, o.z],
        data,
    })
}
