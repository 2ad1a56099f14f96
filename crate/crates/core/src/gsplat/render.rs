//! Tile-based front-to-back splatting with a hand-derived backward pass.
//!
//! Each Gaussian is projected with the local-affine (EWA) approximation of
//! the perspective map. The 2D covariance gets `DILATION` added on its
//! diagonal. Per pixel, `alpha = opacity * exp(-0.5 δᵀ Σ2D⁻¹ δ)`; splats with
//! `alpha < ALPHA_MIN` are skipped and compositing stops once the remaining
//! transmittance falls below `T_MIN`. Leftover transmittance shows the
//! background.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};
use rayon::prelude::*;

use super::{rotation_matrix, GaussianSet};
use crate::error::{Error, Result};
use crate::geometry::CameraView;
use crate::imaging::Image;

pub const TILE: usize = 16;
pub const ALPHA_MIN: f64 = 1.0 / 255.0;
pub const T_MIN: f64 = 1e-4;
pub const NEAR_CLIP: f64 = 0.01;
pub const DILATION: f64 = 0.3;

#[derive(Clone, Debug)]
pub struct RenderOutput {
    pub color: Image,
    /// Accumulated opacity `1 - T_final` per pixel.
    pub alpha: Vec<f64>,
}

/// Gradients with the same layout as [`GaussianSet`]. Rotation gradients are
/// taken through quaternion normalization.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianGrads {
    pub means: Vec<[f64; 3]>,
    pub rotations: Vec<[f64; 4]>,
    pub scales: Vec<[f64; 3]>,
    pub opacities: Vec<f64>,
    pub colors: Vec<[f64; 3]>,
}

impl GaussianGrads {
    pub fn zeros(n: usize) -> Self {
        Self {
            means: vec![[0.0; 3]; n],
            rotations: vec![[0.0; 4]; n],
            scales: vec![[0.0; 3]; n],
            opacities: vec![0.0; n],
            colors: vec![[0.0; 3]; n],
        }
    }

    pub fn add_assign(&mut self, other: &GaussianGrads) {
        fn add<const K: usize>(a: &mut [[f64; K]], b: &[[f64; K]]) {
            for (x, y) in a.iter_mut().zip(b) {
                for k in 0..K {
                    x[k] += y[k];
                }
            }
        }
        add(&mut self.means, &other.means);
        add(&mut self.rotations, &other.rotations);
        add(&mut self.scales, &other.scales);
        add(&mut self.colors, &other.colors);
        for (x, y) in self.opacities.iter_mut().zip(&other.opacities) {
            *x += y;
        }
    }
}

#[derive(Clone, Debug)]
struct Splat {
    index: usize,
    depth: f64,
    t: Vector3<f64>,
    mean2d: [f64; 2],
    /// Inverse 2D covariance `[[a, b], [b, c]]` as `(a, b, c)`.
    conic: [f64; 3],
    opacity: f64,
    color: [f64; 3],
    jw: Matrix2x3<f64>,
    cov3: Matrix3<f64>,
    rot: Matrix3<f64>,
    bbox: [usize; 4],
}

fn preprocess(set: &GaussianSet, cam: &CameraView) -> Vec<Splat> {
    let (w, h) = (cam.width as f64, cam.height as f64);
    let (fx, fy, cx, cy) = (cam.fx(), cam.fy(), cam.cx(), cam.cy());
    let mut splats: Vec<Splat> = (0..set.len())
        .filter_map(|i| {
            let opacity = set.opacities[i];
            if opacity < ALPHA_MIN {
                return None;
            }
            let t = cam.r * Vector3::from(set.means[i]) + cam.t;
            if t.z <= NEAR_CLIP {
                return None;
            }
            let (x, y, z) = (t.x, t.y, t.z);
            let jac = Matrix2x3::new(fx / z, 0.0, -fx * x / (z * z), 0.0, fy / z, -fy * y / (z * z));
            let jw = jac * cam.r;
            let rot = rotation_matrix(&set.rotations[i]);
            let s = set.scales[i];
            let m = rot * Matrix3::from_diagonal(&Vector3::new(s[0], s[1], s[2]));
            let cov3 = m * m.transpose();
            let c2 = jw * cov3 * jw.transpose();
            let a = c2[(0, 0)] + DILATION;
            let b = 0.5 * (c2[(0, 1)] + c2[(1, 0)]);
            let c = c2[(1, 1)] + DILATION;
            let det = a * c - b * b;
            if !(det > 0.0) || !det.is_finite() {
                return None;
            }
            let conic = [c / det, -b / det, a / det];
            let mean2d = [fx * x / z + cx, fy * y / z + cy];
            let r = (2.0 * (255.0 * opacity).ln()).max(0.0).sqrt();
            let hx = r * a.sqrt() + 1e-6;
            let hy = r * c.sqrt() + 1e-6;
            let x0 = (mean2d[0] - hx).ceil().max(0.0);
            let x1 = (mean2d[0] + hx).floor().min(w - 1.0);
            let y0 = (mean2d[1] - hy).ceil().max(0.0);
            let y1 = (mean2d[1] + hy).floor().min(h - 1.0);
            if !(x0 <= x1 && y0 <= y1) {
                return None;
            }
            Some(Splat {
                index: i,
                depth: z,
                t,
                mean2d,
                conic,
                opacity,
                color: set.colors[i],
                jw,
                cov3,
                rot,
                bbox: [x0 as usize, x1 as usize, y0 as usize, y1 as usize],
            })
        })
        .collect();
    splats.sort_by(|p, q| p.depth.total_cmp(&q.depth).then(p.index.cmp(&q.index)));
    splats
}

struct Tiles {
    nx: usize,
    ny: usize,
    lists: Vec<Vec<u32>>,
}

fn bin_tiles(splats: &[Splat], width: usize, height: usize) -> Tiles {
    let nx = width.div_ceil(TILE);
    let ny = height.div_ceil(TILE);
    let mut lists = vec![Vec::new(); nx * ny];
    for (k, s) in splats.iter().enumerate() {
        let [x0, x1, y0, y1] = s.bbox;
        for ty in y0 / TILE..=y1 / TILE {
            for tx in x0 / TILE..=x1 / TILE {
                lists[ty * nx + tx].push(k as u32);
            }
        }
    }
    Tiles { nx, ny, lists }
}

#[inline]
fn splat_alpha(s: &Splat, px: f64, py: f64) -> Option<(f64, f64, f64, f64)> {
    let dx = px - s.mean2d[0];
    let dy = py - s.mean2d[1];
    let [a, b, c] = s.conic;
    let power = -0.5 * (a * dx * dx + 2.0 * b * dx * dy + c * dy * dy);
    if power > 0.0 {
        return None;
    }
    let g = power.exp();
    let alpha = s.opacity * g;
    (alpha >= ALPHA_MIN).then_some((alpha, g, dx, dy))
}

fn tile_pixels(tx: usize, ty: usize, width: usize, height: usize) -> impl Iterator<Item = (usize, usize)> {
    let ys = ty * TILE..((ty + 1) * TILE).min(height);
    ys.flat_map(move |y| (tx * TILE..((tx + 1) * TILE).min(width)).map(move |x| (x, y)))
}

/// Render `set` from `cam` over a constant background.
pub fn render(set: &GaussianSet, cam: &CameraView, background: [f64; 3]) -> Result<RenderOutput> {
    set.validate()?;
    let (w, h) = (cam.width as usize, cam.height as usize);
    let splats = preprocess(set, cam);
    let tiles = bin_tiles(&splats, w, h);
    let results: Vec<Vec<(usize, [f64; 3], f64)>> = (0..tiles.nx * tiles.ny)
        .into_par_iter()
        .map(|ti| {
            let list = &tiles.lists[ti];
            tile_pixels(ti % tiles.nx, ti / tiles.nx, w, h)
                .map(|(x, y)| {
                    let (px, py) = (x as f64, y as f64);
                    let mut rgb = [0.0; 3];
                    let mut t = 1.0;
                    for &k in list {
                        let s = &splats[k as usize];
                        let Some((alpha, ..)) = splat_alpha(s, px, py) else {
                            continue;
                        };
                        for ch in 0..3 {
                            rgb[ch] += t * alpha * s.color[ch];
                        }
                        t *= 1.0 - alpha;
                        if t < T_MIN {
                            break;
                        }
                    }
                    for ch in 0..3 {
                        rgb[ch] += t * background[ch];
                    }
                    (y * w + x, rgb, 1.0 - t)
                })
                .collect()
        })
        .collect();
    let mut color = Image::new(w, h);
    let mut alpha = vec![0.0; w * h];
    for tile in results {
        for (i, rgb, a) in tile {
            color.data[i * 3..i * 3 + 3].copy_from_slice(&rgb);
            alpha[i] = a;
        }
    }
    if color.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("render produced a non-finite pixel"));
    }
    Ok(RenderOutput { color, alpha })
}

/// Screen-space gradient accumulators for one splat.
#[derive(Clone, Copy, Default)]
struct ScreenGrad {
    mean2d: [f64; 2],
    /// dL/dQ for entries `Q00`, each of `Q01`/`Q10`, and `Q11`.
    conic: [f64; 3],
    opacity: f64,
    color: [f64; 3],
}

fn tile_backward(
    splats: &[Splat],
    list: &[u32],
    pixels: impl Iterator<Item = (usize, usize)>,
    width: usize,
    background: [f64; 3],
    d_color: &[f64],
    d_alpha: Option<&[f64]>,
) -> Vec<ScreenGrad> {
    let mut acc = vec![ScreenGrad::default(); list.len()];
    let mut contrib: Vec<(usize, f64, f64, f64, f64, f64)> = Vec::new();
    for (x, y) in pixels {
        let i = y * width + x;
        let dc = [d_color[i * 3], d_color[i * 3 + 1], d_color[i * 3 + 2]];
        let da = d_alpha.map_or(0.0, |d| d[i]);
        if dc == [0.0; 3] && da == 0.0 {
            continue;
        }
        let (px, py) = (x as f64, y as f64);
        contrib.clear();
        let mut t = 1.0;
        for (pos, &k) in list.iter().enumerate() {
            let s = &splats[k as usize];
            let Some((alpha, g, dx, dy)) = splat_alpha(s, px, py) else {
                continue;
            };
            contrib.push((pos, alpha, g, dx, dy, t));
            t *= 1.0 - alpha;
            if t < T_MIN {
                break;
            }
        }
        // color and opacity of everything behind the current splat
        let mut behind = background;
        let mut behind_a = 0.0;
        for &(pos, alpha, g, dx, dy, t) in contrib.iter().rev() {
            let s = &splats[list[pos] as usize];
            let mut d_al = da * t * (1.0 - behind_a);
            for ch in 0..3 {
                d_al += dc[ch] * t * (s.color[ch] - behind[ch]);
            }
            let gacc = &mut acc[pos];
            for ch in 0..3 {
                gacc.color[ch] += dc[ch] * t * alpha;
                behind[ch] = alpha * s.color[ch] + (1.0 - alpha) * behind[ch];
            }
            behind_a = alpha + (1.0 - alpha) * behind_a;
            gacc.opacity += d_al * g;
            let d_power = d_al * alpha;
            let [a, b, c] = s.conic;
            gacc.mean2d[0] += d_power * (a * dx + b * dy);
            gacc.mean2d[1] += d_power * (b * dx + c * dy);
            gacc.conic[0] += d_power * (-0.5 * dx * dx);
            gacc.conic[1] += d_power * (-0.5 * dx * dy);
            gacc.conic[2] += d_power * (-0.5 * dy * dy);
        }
    }
    acc
}

/// dR(q)/dq_k for unit quaternion components `(w, x, y, z)`.
fn rotation_jacobians(q: [f64; 4]) -> [Matrix3<f64>; 4] {
    let [w, x, y, z] = q;
    [
        Matrix3::new(0.0, -2.0 * z, 2.0 * y, 2.0 * z, 0.0, -2.0 * x, -2.0 * y, 2.0 * x, 0.0),
        Matrix3::new(0.0, 2.0 * y, 2.0 * z, 2.0 * y, -4.0 * x, -2.0 * w, 2.0 * z, 2.0 * w, -4.0 * x),
        Matrix3::new(-4.0 * y, 2.0 * x, 2.0 * w, 2.0 * x, 0.0, 2.0 * z, -2.0 * w, 2.0 * z, -4.0 * y),
        Matrix3::new(-4.0 * z, -2.0 * w, 2.0 * x, 2.0 * w, -4.0 * z, 2.0 * y, 2.0 * x, 2.0 * y, 0.0),
    ]
}

fn chain_to_world(s: &Splat, g: &ScreenGrad, set: &GaussianSet, cam: &CameraView, out: &mut GaussianGrads) {
    let i = s.index;
    let (fx, fy) = (cam.fx(), cam.fy());
    let (x, y, z) = (s.t.x, s.t.y, s.t.z);

    let [qa, qb, qc] = s.conic;
    let q = Matrix2::new(qa, qb, qb, qc);
    let m_q = Matrix2::new(g.conic[0], g.conic[1], g.conic[1], g.conic[2]);
    let g_cov2 = -(q * m_q * q);
    let g_cov3 = s.jw.transpose() * g_cov2 * s.jw;
    let g_jw = 2.0 * g_cov2 * s.jw * s.cov3;
    let g_j = g_jw * cam.r.transpose();

    let z2 = z * z;
    let z3 = z2 * z;
    let dm = Vector2::new(g.mean2d[0], g.mean2d[1]);
    let mut dt = Vector3::new(
        dm.x * fx / z + g_j[(0, 2)] * (-fx / z2),
        dm.y * fy / z + g_j[(1, 2)] * (-fy / z2),
        -dm.x * fx * x / z2 - dm.y * fy * y / z2,
    );
    dt.z += g_j[(0, 0)] * (-fx / z2)
        + g_j[(0, 2)] * (2.0 * fx * x / z3)
        + g_j[(1, 1)] * (-fy / z2)
        + g_j[(1, 2)] * (2.0 * fy * y / z3);
    let dmean = cam.r.transpose() * dt;

    let sc = set.scales[i];
    let m = s.rot * Matrix3::from_diagonal(&Vector3::new(sc[0], sc[1], sc[2]));
    let g_m = (g_cov3 + g_cov3.transpose()) * m;
    let mut dscale = [0.0; 3];
    let mut g_r = Matrix3::zeros();
    for k in 0..3 {
        for r in 0..3 {
            dscale[k] += s.rot[(r, k)] * g_m[(r, k)];
            g_r[(r, k)] = g_m[(r, k)] * sc[k];
        }
    }
    let raw = set.rotations[i];
    let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
    let qn = [raw[0] / norm, raw[1] / norm, raw[2] / norm, raw[3] / norm];
    let jacs = rotation_jacobians(qn);
    let dqn: [f64; 4] = std::array::from_fn(|k| g_r.component_mul(&jacs[k]).sum());
    let radial: f64 = (0..4).map(|k| qn[k] * dqn[k]).sum();

    for k in 0..3 {
        out.means[i][k] += dmean[k];
        out.scales[i][k] += dscale[k];
        out.colors[i][k] += g.color[k];
    }
    for k in 0..4 {
        out.rotations[i][k] += (dqn[k] - qn[k] * radial) / norm;
    }
    out.opacities[i] += g.opacity;
}

/// Gradients of `sum(d_color ⊙ color) + sum(d_alpha ⊙ alpha)` with respect
/// to every Gaussian attribute.
pub fn render_backward(
    set: &GaussianSet,
    cam: &CameraView,
    background: [f64; 3],
    d_color: &[f64],
    d_alpha: Option<&[f64]>,
) -> Result<GaussianGrads> {
    set.validate()?;
    let (w, h) = (cam.width as usize, cam.height as usize);
    if d_color.len() != w * h * 3 || d_alpha.is_some_and(|d| d.len() != w * h) {
        return Err(Error::config("render_backward: upstream gradient has the wrong size"));
    }
    let splats = preprocess(set, cam);
    let tiles = bin_tiles(&splats, w, h);
    let per_tile: Vec<Vec<ScreenGrad>> = (0..tiles.nx * tiles.ny)
        .into_par_iter()
        .map(|ti| {
            let pixels = tile_pixels(ti % tiles.nx, ti / tiles.nx, w, h);
            tile_backward(&splats, &tiles.lists[ti], pixels, w, background, d_color, d_alpha)
        })
        .collect();
    let mut screen = vec![ScreenGrad::default(); splats.len()];
    for (ti, grads) in per_tile.iter().enumerate() {
        for (g, &k) in grads.iter().zip(&tiles.lists[ti]) {
            let dst = &mut screen[k as usize];
            for c in 0..2 {
                dst.mean2d[c] += g.mean2d[c];
            }
            for c in 0..3 {
                dst.conic[c] += g.conic[c];
                dst.color[c] += g.color[c];
            }
            dst.opacity += g.opacity;
        }
    }
    let mut out = GaussianGrads::zeros(set.len());
    for (s, g) in splats.iter().zip(&screen) {
        chain_to_world(s, g, set, cam, &mut out);
    }
    let finite = out.means.iter().flatten().chain(out.rotations.iter().flatten()).chain(out.scales.iter().flatten()).chain(out.colors.iter().flatten()).chain(&out.opacities).all(|v| v.is_finite());
    if !finite {
        return Err(Error::numeric("render_backward produced a non-finite gradient"));
    }
    Ok(out)
}
