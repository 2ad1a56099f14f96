//! Cameras, projection, Plücker rays, bilinear feature sampling and mesh
//! rasterization.

mod camera;
mod projection;
pub mod raster;
mod sample;

pub use camera::{CameraView, Intrinsics, MIN_DEPTH};
pub use projection::{
    cell_center_pixel, pixel_to_cell_coord, plucker_raymap, project_point, project_points,
    Projection, RayMap,
};
pub use raster::{rasterize_mesh, rasterize_part_masks, shade_vertex_colors, Fragments, PartMaskSet, NUM_PARTS};
pub use sample::{bilinear_sample, bilinear_taps};

use std::io::{BufRead, Write};
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A camera together with its orbit pose (degrees, relative to the input view).
#[derive(Clone, Debug, PartialEq)]
pub struct OrbitCamera {
    pub camera: CameraView,
    pub elevation_deg: f64,
    pub azimuth_deg: f64,
}

/// World position of an orbit camera. Azimuth 0 sits on the -z side of the
/// target; positive elevation lifts the camera along +y.
pub fn orbit_position(elevation_deg: f64, azimuth_deg: f64, radius: f64, target: Vector3<f64>) -> Vector3<f64> {
    let (e, a) = (elevation_deg.to_radians(), azimuth_deg.to_radians());
    target + radius * Vector3::new(e.cos() * a.sin(), e.sin(), -e.cos() * a.cos())
}

/// `count` cameras evenly spaced in azimuth (`360 k / count`), all looking at
/// `target` with world +y as up.
pub fn make_orbit_cameras(
    count: usize,
    elevation_deg: f64,
    radius: f64,
    target: Vector3<f64>,
    intr: &Intrinsics,
) -> Result<Vec<OrbitCamera>> {
    if count == 0 {
        return Err(Error::config("make_orbit_cameras: count must be >= 1"));
    }
    if !(radius > 0.0) {
        return Err(Error::config("make_orbit_cameras: radius must be > 0"));
    }
    (0..count)
        .map(|k| {
            let azimuth_deg = 360.0 * k as f64 / count as f64;
            let eye = orbit_position(elevation_deg, azimuth_deg, radius, target);
            let camera = CameraView::look_at(eye, target, Vector3::new(0.0, 1.0, 0.0), intr)?;
            Ok(OrbitCamera {
                camera,
                elevation_deg,
                azimuth_deg,
            })
        })
        .collect()
}

pub const MANIFEST_HEADER: &str = "humangs-camera-manifest v1";

/// One manifest line. `k` and `r` are row-major.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub k: [f64; 9],
    pub r: [f64; 9],
    pub t: [f64; 3],
    pub width: u32,
    pub height: u32,
    pub elevation_deg: f64,
    pub azimuth_deg: f64,
}

impl From<&OrbitCamera> for ManifestRecord {
    fn from(c: &OrbitCamera) -> Self {
        let row_major = |m: &Matrix3<f64>| {
            let mut a = [0.0; 9];
            for i in 0..3 {
                for j in 0..3 {
                    a[i * 3 + j] = m[(i, j)];
                }
            }
            a
        };
        Self {
            k: row_major(&c.camera.k),
            r: row_major(&c.camera.r),
            t: [c.camera.t.x, c.camera.t.y, c.camera.t.z],
            width: c.camera.width,
            height: c.camera.height,
            elevation_deg: c.elevation_deg,
            azimuth_deg: c.azimuth_deg,
        }
    }
}

impl ManifestRecord {
    pub fn to_orbit_camera(&self) -> Result<OrbitCamera> {
        let camera = CameraView::new(
            Matrix3::from_row_slice(&self.k),
            Matrix3::from_row_slice(&self.r),
            Vector3::from(self.t),
            self.width,
            self.height,
        )?;
        Ok(OrbitCamera {
            camera,
            elevation_deg: self.elevation_deg,
            azimuth_deg: self.azimuth_deg,
        })
    }
}

/// Camera manifest: a version header line followed by one JSON record per
/// camera. Blank lines and lines starting with `#` are ignored.
pub fn write_camera_manifest(path: &Path, cams: &[OrbitCamera]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "{MANIFEST_HEADER}")?;
    for c in cams {
        let line = serde_json::to_string(&ManifestRecord::from(c))
            .map_err(|e| Error::schema(e.to_string()))?;
        writeln!(f, "{line}")?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_camera_manifest(path: &Path) -> Result<Vec<OrbitCamera>> {
    let f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut lines = f.lines();
    let header = lines
        .next()
        .transpose()?
        .ok_or_else(|| Error::schema("camera manifest: empty file"))?;
    if header.trim() != MANIFEST_HEADER {
        return Err(Error::schema(format!(
            "camera manifest: expected header `{MANIFEST_HEADER}`, found `{}`",
            header.trim()
        )));
    }
    let mut cams = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let rec: ManifestRecord = serde_json::from_str(line)
            .map_err(|e| Error::schema(format!("camera manifest line {}: {e}", i + 2)))?;
        cams.push(rec.to_orbit_camera()?);
    }
    Ok(cams)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn axis_camera() -> CameraView {
        let k = Matrix3::new(100.0, 0.0, 64.0, 0.0, 100.0, 64.0, 0.0, 0.0, 1.0);
        CameraView::new(k, Matrix3::identity(), Vector3::zeros(), 128, 128).unwrap()
    }

    fn random_camera(rng: &mut impl Rng) -> CameraView {
        let intr = Intrinsics {
            fx: rng.random_range(20.0..200.0),
            fy: rng.random_range(20.0..200.0),
            cx: rng.random_range(0.0..64.0),
            cy: rng.random_range(0.0..64.0),
            width: 64,
            height: 48,
        };
        let eye = Vector3::new(
            rng.random_range(-5.0..5.0),
            rng.random_range(-5.0..5.0),
            rng.random_range(-5.0..5.0),
        );
        let target = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 0.0);
        CameraView::look_at(eye, target, Vector3::new(0.0, 1.0, 0.0), &intr).unwrap()
    }

    #[test]
    fn projection_examples() {
        let cam = axis_camera();
        let p = project_points(&[[0.0, 0.0, 2.0], [0.5, 0.0, 2.0], [0.0, 0.0, -1.0]], &cam);
        assert_eq!((p[0].u, p[0].v, p[0].depth, p[0].valid), (64.0, 64.0, 2.0, true));
        assert_eq!((p[1].u, p[1].v, p[1].depth, p[1].valid), (89.0, 64.0, 2.0, true));
        assert!(!p[2].valid);
    }

    #[test]
    fn projection_flags_off_image() {
        let cam = axis_camera();
        let p = project_points(&[[2.0, 0.0, 2.0], [-1.3, 0.0, 2.0]], &cam);
        assert!(!p[0].valid && !p[1].valid);
    }

    #[test]
    fn rejects_bad_cameras() {
        let k = Matrix3::new(100.0, 1.0, 64.0, 0.0, 100.0, 64.0, 0.0, 0.0, 1.0);
        assert!(CameraView::new(k, Matrix3::identity(), Vector3::zeros(), 8, 8).is_err());
        let k = Matrix3::new(100.0, 0.0, 64.0, 0.0, 100.0, 64.0, 0.0, 0.0, 1.0);
        let r = Matrix3::identity() * 1.01;
        assert!(CameraView::new(k, r, Vector3::zeros(), 8, 8).is_err());
        assert!(CameraView::new(k, Matrix3::identity(), Vector3::zeros(), 0, 8).is_err());
    }

    #[test]
    fn raymap_on_axis_ray() {
        let cam = axis_camera();
        let rm = plucker_raymap(&cam, 128, 128).unwrap();
        assert_eq!(rm.at(64, 64), &[0.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn raymap_moment_invariant_along_ray() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let cam = random_camera(&mut rng);
        let rm = plucker_raymap(&cam, 48, 64).unwrap();
        let d = rm.direction(10, 20);
        let moved_center = cam.center() + 2.0 * d;
        let moved = CameraView::new(cam.k, cam.r, -(cam.r * moved_center), cam.width, cam.height).unwrap();
        let rm2 = plucker_raymap(&moved, 48, 64).unwrap();
        for (a, b) in rm.at(10, 20).iter().zip(rm2.at(10, 20)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn raymap_constraints_on_random_cameras() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let cam = random_camera(&mut rng);
            let rm = plucker_raymap(&cam, 12, 16).unwrap();
            for r in 0..12 {
                for c in 0..16 {
                    let d = rm.direction(r, c);
                    assert!((d.norm() - 1.0).abs() < 1e-6);
                    assert!(d.dot(&rm.moment(r, c)).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn raymap_rejects_singular_intrinsics() {
        let mut cam = axis_camera();
        cam.k[(0, 0)] = 0.0;
        assert!(matches!(plucker_raymap(&cam, 4, 4), Err(Error::Config(_))));
    }

    #[test]
    fn ray_and_projection_round_trip() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let cam = random_camera(&mut rng);
            let rm = plucker_raymap(&cam, cam.height as usize, cam.width as usize).unwrap();
            for _ in 0..20 {
                let row = rng.random_range(0..cam.height as usize);
                let col = rng.random_range(0..cam.width as usize);
                let depth = rng.random_range(0.1..10.0);
                let p = cam.center() + rm.direction(row, col) * depth;
                let pr = project_point(&p, &cam);
                assert!((pr.u - col as f64).abs() < 0.5 && (pr.v - row as f64).abs() < 0.5);
            }
        }
    }

    #[test]
    fn orbit_four_views_are_orthogonal() {
        let intr = Intrinsics::centered(64, 64, 1.1);
        let cams = make_orbit_cameras(4, 0.0, 2.5, Vector3::zeros(), &intr).unwrap();
        let az: Vec<f64> = cams.iter().map(|c| c.azimuth_deg).collect();
        assert_eq!(az, vec![0.0, 90.0, 180.0, 270.0]);
        for c in &cams {
            let o = c.camera.center();
            let measured = o.x.atan2(-o.z).to_degrees().rem_euclid(360.0);
            let diff = (measured - c.azimuth_deg).abs();
            assert!(diff.min(360.0 - diff) < 1e-9);
            assert!((o.norm() - 2.5).abs() < 1e-12);
            // target projects to the principal point
            let p = project_point(&Vector3::zeros(), &c.camera);
            assert!((p.u - 32.0).abs() < 1e-9 && (p.v - 32.0).abs() < 1e-9);
        }
    }

    #[test]
    fn orbit_36_evenly_spaced() {
        let intr = Intrinsics::centered(32, 32, 1.0);
        let cams = make_orbit_cameras(36, 10.0, 3.0, Vector3::new(0.0, 0.5, 0.0), &intr).unwrap();
        assert_eq!(cams.len(), 36);
        for (k, c) in cams.iter().enumerate() {
            assert!((c.azimuth_deg - 10.0 * k as f64).abs() < 1e-9);
        }
    }

    #[test]
    fn single_orbit_camera_on_negative_z() {
        let intr = Intrinsics::centered(32, 32, 1.0);
        let cams = make_orbit_cameras(1, 0.0, 2.0, Vector3::zeros(), &intr).unwrap();
        let c = &cams[0].camera;
        assert!((c.center() - Vector3::new(0.0, 0.0, -2.0)).norm() < 1e-12);
        assert!((c.r * c.r.transpose() - Matrix3::identity()).abs().max() < 1e-12);
        assert!((c.r.determinant() - 1.0).abs() < 1e-12);
        // world +y maps to image up (negative v direction)
        let up = project_point(&Vector3::new(0.0, 0.5, 0.0), c);
        assert!(up.v < 16.0);
    }

    #[test]
    fn manifest_round_trip() {
        let intr = Intrinsics::centered(32, 24, 1.0);
        let cams = make_orbit_cameras(3, 15.0, 2.0, Vector3::zeros(), &intr).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cams.txt");
        write_camera_manifest(&path, &cams).unwrap();
        let back = read_camera_manifest(&path).unwrap();
        assert_eq!(back, cams);
    }

    #[test]
    fn manifest_rejects_wrong_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cams.txt");
        std::fs::write(&path, "cameras v0\n").unwrap();
        assert!(matches!(read_camera_manifest(&path), Err(Error::Schema(_))));
    }
}
