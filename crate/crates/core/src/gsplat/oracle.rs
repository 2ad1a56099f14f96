//! Brute-force reference renderer: no tiles, no bounding boxes. Every pixel
//! visits every Gaussian in depth order. It applies the same compositing
//! contract (near clip, dilation, alpha threshold, transmittance cutoff) as
//! the tiled renderer.

use nalgebra::{Matrix2x3, Matrix3, Vector2, Vector3};

use super::render::{ALPHA_MIN, DILATION, NEAR_CLIP, T_MIN};
use super::{covariance_reference, GaussianSet};
use crate::geometry::CameraView;
use crate::imaging::Image;

struct Projected {
    depth: f64,
    index: usize,
    mean: Vector2<f64>,
    inv: nalgebra::Matrix2<f64>,
}

fn project(set: &GaussianSet, cam: &CameraView) -> Vec<Projected> {
    let mut out = Vec::new();
    for i in 0..set.len() {
        let pc = cam.r * Vector3::from(set.means[i]) + cam.t;
        if pc.z <= NEAR_CLIP {
            continue;
        }
        let cov_cam: Matrix3<f64> = cam.r * covariance_reference(&set.rotations[i], &set.scales[i]) * cam.r.transpose();
        let z = pc.z;
        let j = Matrix2x3::new(
            cam.fx() / z,
            0.0,
            -cam.fx() * pc.x / (z * z),
            0.0,
            cam.fy() / z,
            -cam.fy() * pc.y / (z * z),
        );
        let mut cov2 = j * cov_cam * j.transpose();
        cov2[(0, 0)] += DILATION;
        cov2[(1, 1)] += DILATION;
        let sym = (cov2 + cov2.transpose()) * 0.5;
        let Some(inv) = sym.try_inverse() else { continue };
        let h = cam.k * pc;
        out.push(Projected {
            depth: z,
            index: i,
            mean: Vector2::new(h.x / h.z, h.y / h.z),
            inv,
        });
    }
    out.sort_by(|a, b| a.depth.total_cmp(&b.depth).then(a.index.cmp(&b.index)));
    out
}

/// Returns the image and the accumulated alpha.
pub fn render_oracle(set: &GaussianSet, cam: &CameraView, background: [f64; 3]) -> (Image, Vec<f64>) {
    let (w, h) = (cam.width as usize, cam.height as usize);
    let proj = project(set, cam);
    let mut img = Image::new(w, h);
    let mut acc = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let p = Vector2::new(x as f64, y as f64);
            let mut rgb = Vector3::zeros();
            let mut t = 1.0;
            for g in &proj {
                let d = p - g.mean;
                let alpha = set.opacities[g.index] * (-0.5 * (d.transpose() * g.inv * d)[0]).exp();
                if alpha < ALPHA_MIN {
                    continue;
                }
                rgb += Vector3::from(set.colors[g.index]) * (t * alpha);
                t *= 1.0 - alpha;
                if t < T_MIN {
                    break;
                }
            }
            rgb += Vector3::from(background) * t;
            img.set_pixel(x, y, [rgb.x, rgb.y, rgb.z]);
            acc[y * w + x] = 1.0 - t;
        }
    }
    (img, acc)
}

/// Smallest relative distance, over every pixel and every Gaussian, of the
/// raw per-pixel alpha to `ALPHA_MIN` and of the running transmittance to
/// `T_MIN`. Finite-difference checks need this to be comfortably above the
/// perturbation size, since crossing either threshold is a discontinuity.
pub fn threshold_margin(set: &GaussianSet, cam: &CameraView) -> f64 {
    let (w, h) = (cam.width as usize, cam.height as usize);
    let proj = project(set, cam);
    let mut margin = f64::INFINITY;
    for y in 0..h {
        for x in 0..w {
            let p = Vector2::new(x as f64, y as f64);
            let mut t: f64 = 1.0;
            let mut done = false;
            for g in &proj {
                let d = p - g.mean;
                let alpha = set.opacities[g.index] * (-0.5 * (d.transpose() * g.inv * d)[0]).exp();
                margin = margin.min((alpha / ALPHA_MIN - 1.0).abs());
                if done || alpha < ALPHA_MIN {
                    continue;
                }
                t *= 1.0 - alpha;
                margin = margin.min((t / T_MIN - 1.0).abs());
                done = t < T_MIN;
            }
        }
    }
    margin
}
