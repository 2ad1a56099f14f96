//! Z-buffer triangle rasterization for foreground, part-label and flat-color
//! images of a mesh.
//!
//! Triangles are not back-face culled; the depth test alone decides
//! visibility. Triangles with a vertex at depth `<= MIN_DEPTH` or with
//! (near-)zero screen area are dropped.

use nalgebra::Vector3;

use super::camera::{CameraView, MIN_DEPTH};
use crate::body::BodyMesh;

/// Screen-space area below which a triangle is treated as degenerate.
pub const DEGENERATE_AREA: f64 = 1e-12;

pub const NUM_PARTS: u8 = 24;

/// Per-pixel visible surface: triangle id, camera depth and perspective-correct
/// barycentrics.
#[derive(Clone, Debug)]
pub struct Fragments {
    pub width: usize,
    pub height: usize,
    pub face: Vec<Option<u32>>,
    pub depth: Vec<f64>,
    pub bary: Vec<[f64; 3]>,
}

/// Label image (0 background, 1..=24 body part) plus depth (+inf background).
#[derive(Clone, Debug, PartialEq)]
pub struct PartMaskSet {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<u8>,
    pub depth: Vec<f64>,
}

impl PartMaskSet {
    /// Binary foreground mask as 0/1 floats.
    pub fn foreground(&self) -> Vec<f64> {
        self.labels.iter().map(|&l| (l != 0) as u8 as f64).collect()
    }

    pub fn part_mask(&self, part: u8) -> Vec<f64> {
        self.labels.iter().map(|&l| (l == part) as u8 as f64).collect()
    }

    /// A mask set with every pixel assigned to `part` at unit depth.
    pub fn uniform(width: usize, height: usize, part: u8) -> Self {
        Self {
            width,
            height,
            labels: vec![part; width * height],
            depth: vec![1.0; width * height],
        }
    }
}

/// Majority of the three vertex labels; three-way ties go to the lowest id.
pub fn triangle_label(a: u8, b: u8, c: u8) -> u8 {
    if a == b || a == c {
        a
    } else if b == c {
        b
    } else {
        a.min(b).min(c)
    }
}

struct ScreenTri {
    p: [(f64, f64); 3],
    z: [f64; 3],
    area: f64,
}

fn screen_triangle(
    cam: &CameraView,
    cam_space: &[Vector3<f64>],
    f: &[u32; 3],
) -> Option<ScreenTri> {
    let mut p = [(0.0, 0.0); 3];
    let mut z = [0.0; 3];
    for k in 0..3 {
        let pc = cam_space[f[k] as usize];
        if pc.z <= MIN_DEPTH {
            return None;
        }
        let h = cam.k * pc;
        p[k] = (h.x / h.z, h.y / h.z);
        z[k] = pc.z;
    }
    let area = edge(p[0], p[1], p[2]);
    if area.abs() < DEGENERATE_AREA || !area.is_finite() {
        return None;
    }
    Some(ScreenTri { p, z, area })
}

#[inline]
fn edge(a: (f64, f64), b: (f64, f64), c: (f64, f64)) -> f64 {
    (b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0)
}

/// Rasterize a triangle mesh into per-pixel fragments.
pub fn rasterize_mesh(vertices: &[[f64; 3]], faces: &[[u32; 3]], cam: &CameraView) -> Fragments {
    let (w, h) = (cam.width as usize, cam.height as usize);
    let mut frags = Fragments {
        width: w,
        height: h,
        face: vec![None; w * h],
        depth: vec![f64::INFINITY; w * h],
        bary: vec![[0.0; 3]; w * h],
    };
    let cam_space: Vec<Vector3<f64>> = vertices
        .iter()
        .map(|v| cam.to_camera(&Vector3::from(*v)))
        .collect();

    for (fi, f) in faces.iter().enumerate() {
        let Some(tri) = screen_triangle(cam, &cam_space, f) else {
            continue;
        };
        let (xs, ys): (Vec<f64>, Vec<f64>) = tri.p.iter().copied().unzip();
        let xmin = xs.iter().cloned().fold(f64::INFINITY, f64::min).ceil().max(0.0);
        let xmax = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max).floor().min(w as f64 - 1.0);
        let ymin = ys.iter().cloned().fold(f64::INFINITY, f64::min).ceil().max(0.0);
        let ymax = ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max).floor().min(h as f64 - 1.0);
        if xmin > xmax || ymin > ymax {
            continue;
        }
        for y in ymin as usize..=ymax as usize {
            for x in xmin as usize..=xmax as usize {
                let pt = (x as f64, y as f64);
                let b0 = edge(tri.p[1], tri.p[2], pt) / tri.area;
                let b1 = edge(tri.p[2], tri.p[0], pt) / tri.area;
                let b2 = edge(tri.p[0], tri.p[1], pt) / tri.area;
                if b0 < 0.0 || b1 < 0.0 || b2 < 0.0 {
                    continue;
                }
                let inv_z = b0 / tri.z[0] + b1 / tri.z[1] + b2 / tri.z[2];
                let z = 1.0 / inv_z;
                let i = y * w + x;
                if z < frags.depth[i] {
                    frags.depth[i] = z;
                    frags.face[i] = Some(fi as u32);
                    frags.bary[i] = [b0 / tri.z[0] * z, b1 / tri.z[1] * z, b2 / tri.z[2] * z];
                }
            }
        }
    }
    frags
}

fn labels_from_fragments(frags: &Fragments, faces: &[[u32; 3]], labels: &[u8]) -> PartMaskSet {
    let face_label: Vec<u8> = faces
        .iter()
        .map(|f| triangle_label(labels[f[0] as usize], labels[f[1] as usize], labels[f[2] as usize]))
        .collect();
    PartMaskSet {
        width: frags.width,
        height: frags.height,
        labels: frags
            .face
            .iter()
            .map(|f| f.map_or(0, |fi| face_label[fi as usize]))
            .collect(),
        depth: frags.depth.clone(),
    }
}

/// Part-label and depth images of `mesh` seen from `cam` at `w × h`.
pub fn rasterize_part_masks(mesh: &BodyMesh, cam: &CameraView, h: usize, w: usize) -> PartMaskSet {
    let cam = cam.resized(w as u32, h as u32);
    let frags = rasterize_mesh(&mesh.vertices, &mesh.faces, &cam);
    labels_from_fragments(&frags, &mesh.faces, &mesh.labels)
}

/// Image of the mesh with per-vertex colors interpolated across each visible
/// triangle; background pixels take `background`.
pub fn shade_vertex_colors(
    frags: &Fragments,
    faces: &[[u32; 3]],
    colors: &[[f64; 3]],
    background: [f64; 3],
) -> Vec<f64> {
    let mut img = Vec::with_capacity(frags.width * frags.height * 3);
    for (face, b) in frags.face.iter().zip(&frags.bary) {
        match face {
            None => img.extend_from_slice(&background),
            Some(fi) => {
                let f = faces[*fi as usize];
                for ch in 0..3 {
                    img.push(
                        b[0] * colors[f[0] as usize][ch]
                            + b[1] * colors[f[1] as usize][ch]
                            + b[2] * colors[f[2] as usize][ch],
                    );
                }
            }
        }
    }
    img
}

/// Exhaustive per-pixel ray cast against every triangle. Reference for the
/// z-buffer path: shares only the drop rules (near plane, degenerate area).
pub mod raycast {
    use super::*;

    pub fn part_masks(mesh: &BodyMesh, cam: &CameraView, h: usize, w: usize) -> PartMaskSet {
        let cam = cam.resized(w as u32, h as u32);
        let cam_space: Vec<Vector3<f64>> = mesh
            .vertices
            .iter()
            .map(|v| cam.to_camera(&Vector3::from(*v)))
            .collect();
        let kept: Vec<usize> = (0..mesh.faces.len())
            .filter(|&fi| screen_triangle(&cam, &cam_space, &mesh.faces[fi]).is_some())
            .collect();
        let origin = cam.center();
        let mut labels = vec![0u8; w * h];
        let mut depth = vec![f64::INFINITY; w * h];
        for y in 0..h {
            for x in 0..w {
                let dir = cam.ray_direction(x as f64, y as f64);
                let mut best = f64::INFINITY;
                let mut best_face = None;
                for &fi in &kept {
                    let f = mesh.faces[fi];
                    let a = Vector3::from(mesh.vertices[f[0] as usize]);
                    let b = Vector3::from(mesh.vertices[f[1] as usize]);
                    let c = Vector3::from(mesh.vertices[f[2] as usize]);
                    if let Some(t) = intersect(&origin, &dir, &a, &b, &c) {
                        let z = cam.to_camera(&(origin + dir * t)).z;
                        if z < best {
                            best = z;
                            best_face = Some(f);
                        }
                    }
                }
                if let Some(f) = best_face {
                    let l = &mesh.labels;
                    labels[y * w + x] =
                        triangle_label(l[f[0] as usize], l[f[1] as usize], l[f[2] as usize]);
                    depth[y * w + x] = best;
                }
            }
        }
        PartMaskSet {
            width: w,
            height: h,
            labels,
            depth,
        }
    }

    /// Möller–Trumbore without a determinant-sign cull; edges inclusive.
    fn intersect(
        o: &Vector3<f64>,
        d: &Vector3<f64>,
        a: &Vector3<f64>,
        b: &Vector3<f64>,
        c: &Vector3<f64>,
    ) -> Option<f64> {
        let e1 = b - a;
        let e2 = c - a;
        let p = d.cross(&e2);
        let det = e1.dot(&p);
        if det.abs() < 1e-300 {
            return None;
        }
        let inv = 1.0 / det;
        let s = o - a;
        let u = s.dot(&p) * inv;
        if u < 0.0 {
            return None;
        }
        let q = s.cross(&e1);
        let v = d.dot(&q) * inv;
        if v < 0.0 || u + v > 1.0 {
            return None;
        }
        let t = e2.dot(&q) * inv;
        (t > 0.0).then_some(t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Intrinsics;
    use nalgebra::Matrix3;

    fn cam64() -> CameraView {
        let intr = Intrinsics::centered(64, 64, 1.0);
        CameraView::new(intr.matrix(), Matrix3::identity(), Vector3::zeros(), 64, 64).unwrap()
    }

    fn mesh(vertices: Vec<[f64; 3]>, faces: Vec<[u32; 3]>, labels: Vec<u8>) -> BodyMesh {
        BodyMesh {
            vertices,
            faces,
            labels,
        }
    }

    #[test]
    fn label_majority_and_ties() {
        assert_eq!(triangle_label(3, 3, 7), 3);
        assert_eq!(triangle_label(7, 3, 3), 3);
        assert_eq!(triangle_label(5, 9, 5), 5);
        assert_eq!(triangle_label(9, 4, 6), 4);
    }

    #[test]
    fn single_triangle_covers_center() {
        let m = mesh(
            vec![[-1.0, -1.0, 2.0], [1.0, -1.0, 2.0], [0.0, 1.0, 2.0]],
            vec![[0, 1, 2]],
            vec![3, 3, 3],
        );
        let pm = rasterize_part_masks(&m, &cam64(), 64, 64);
        let c = 32 * 64 + 32;
        assert_eq!(pm.labels[c], 3);
        assert!((pm.depth[c] - 2.0).abs() < 1e-12);
        assert_eq!(pm.labels[63 * 64], 0);
        assert!(pm.depth[63 * 64].is_infinite());
    }

    #[test]
    fn nearer_triangle_wins() {
        let m = mesh(
            vec![
                [-1.0, -1.0, 3.0],
                [1.0, -1.0, 3.0],
                [0.0, 1.0, 3.0],
                [-1.0, -1.0, 2.0],
                [1.0, -1.0, 2.0],
                [0.0, 1.0, 2.0],
            ],
            // farther first so index order cannot decide
            vec![[0, 1, 2], [3, 4, 5]],
            vec![7, 7, 7, 5, 5, 5],
        );
        let pm = rasterize_part_masks(&m, &cam64(), 64, 64);
        assert_eq!(pm.labels[32 * 64 + 32], 5);
        assert_eq!(pm.labels[32 * 64 + 32], raycast::part_masks(&m, &cam64(), 64, 64).labels[32 * 64 + 32]);
    }

    #[test]
    fn degenerate_and_behind_camera_triangles_are_skipped() {
        let m = mesh(
            vec![
                [0.0, 0.0, 2.0],
                [0.5, 0.5, 2.0],
                [1.0, 1.0, 2.0],
                [-1.0, -1.0, -2.0],
                [1.0, -1.0, 2.0],
                [0.0, 1.0, 2.0],
            ],
            vec![[0, 1, 2], [3, 4, 5]],
            vec![1; 6],
        );
        let pm = rasterize_part_masks(&m, &cam64(), 64, 64);
        assert!(pm.labels.iter().all(|&l| l == 0));
    }

    #[test]
    fn vertex_colors_interpolate() {
        let verts = vec![[-1.0, -1.0, 2.0], [1.0, -1.0, 2.0], [0.0, 1.0, 2.0]];
        let faces = vec![[0u32, 1, 2]];
        let frags = rasterize_mesh(&verts, &faces, &cam64());
        let img = shade_vertex_colors(&frags, &faces, &[[0.5; 3]; 3], [0.0; 3]);
        let c = (32 * 64 + 32) * 3;
        assert!((img[c] - 0.5).abs() < 1e-12);
        assert_eq!(img[63 * 64 * 3], 0.0);
    }
}
