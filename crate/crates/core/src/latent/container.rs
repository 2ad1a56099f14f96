//! Latent bundle file.
//!
//! Layout (little endian): magic, version u32, view count u32, h u32, w u32,
//! c u32, center 3×f64, radius f64; then per view: h u32, w u32, c u32,
//! is_input u8, elevation f32, azimuth f32, camera block (K 9×f64 row-major,
//! R 9×f64 row-major, t 3×f64, width u32, height u32) and `h·w·c` f32
//! features, row-major with channels last.

use std::path::Path;

use nalgebra::{Matrix3, Vector3};

use super::{FeatureMap, LatentGrid, ViewBundle};
use crate::binio::{Reader, Writer};
use crate::error::{Error, Result};
use crate::geometry::CameraView;

pub const LATENT_MAGIC: &[u8; 8] = b"HGSLATNT";
pub const LATENT_VERSION: u32 = 1;

pub(crate) fn write_camera(w: &mut Writer, cam: &CameraView) {
    for m in [&cam.k, &cam.r] {
        for r in 0..3 {
            for c in 0..3 {
                w.f64(m[(r, c)]);
            }
        }
    }
    for k in 0..3 {
        w.f64(cam.t[k]);
    }
    w.u32(cam.width);
    w.u32(cam.height);
}

pub(crate) fn read_camera(r: &mut Reader) -> Result<CameraView> {
    let mut mats = [Matrix3::zeros(); 2];
    for m in mats.iter_mut() {
        for i in 0..3 {
            for j in 0..3 {
                m[(i, j)] = r.f64()?;
            }
        }
    }
    let t = Vector3::new(r.f64()?, r.f64()?, r.f64()?);
    let width = r.u32()?;
    let height = r.u32()?;
    CameraView::new(mats[0], mats[1], t, width, height)
}

pub fn save_view_bundle(bundle: &ViewBundle, path: &Path) -> Result<()> {
    bundle.validate()?;
    let (h, w, c) = bundle.dims();
    let mut out = Writer::default();
    out.bytes(LATENT_MAGIC);
    out.u32(LATENT_VERSION);
    out.u32(bundle.views.len() as u32);
    for d in [h, w, c] {
        out.u32(d as u32);
    }
    for x in bundle.center {
        out.f64(x);
    }
    out.f64(bundle.radius);
    for v in &bundle.views {
        let f = &v.features;
        for d in [f.height, f.width, f.channels] {
            out.u32(d as u32);
        }
        out.u8(v.is_input as u8);
        out.f32(v.elevation);
        out.f32(v.azimuth);
        write_camera(&mut out, &v.camera);
        for x in &f.data {
            out.f32(*x);
        }
    }
    std::fs::write(path, out.buf)?;
    Ok(())
}

pub fn load_view_bundle(path: &Path) -> Result<ViewBundle> {
    let data = std::fs::read(path)?;
    let mut r = Reader::new(&data, "latent bundle");
    if r.take(8)? != LATENT_MAGIC {
        return Err(Error::schema("latent bundle: bad magic"));
    }
    let version = r.u32()?;
    if version != LATENT_VERSION {
        return Err(Error::schema(format!("latent bundle: unsupported version {version}")));
    }
    let n = r.u32()? as usize;
    let (h, w, c) = (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
    let center = [r.f64()?, r.f64()?, r.f64()?];
    let radius = r.f64()?;
    let mut views = Vec::with_capacity(n.min(1024));
    for i in 0..n {
        let (vh, vw, vc) = (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
        if (vh, vw, vc) != (h, w, c) {
            return Err(Error::schema(format!(
                "latent bundle view {i}: dimensions {vh}×{vw}×{vc} differ from header {h}×{w}×{c}"
            )));
        }
        let is_input = match r.u8()? {
            0 => false,
            1 => true,
            b => return Err(Error::schema(format!("latent bundle view {i}: input flag {b}"))),
        };
        let elevation = r.f32()?;
        let azimuth = r.f32()?;
        let camera = read_camera(&mut r).map_err(|e| Error::schema(format!("latent bundle view {i}: {e}")))?;
        let features = FeatureMap {
            height: vh,
            width: vw,
            channels: vc,
            data: r.f32_vec(vh * vw * vc)?,
        };
        views.push(LatentGrid {
            features,
            elevation,
            azimuth,
            camera,
            is_input,
        });
    }
    r.expect_end()?;
    let bundle = ViewBundle { views, center, radius };
    bundle.validate()?;
    Ok(bundle)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::Image;
    use crate::latent::{bundle_from_images, ViewLayout};
    use rand::{Rng, SeedableRng};

    fn layout(n: usize) -> ViewLayout {
        ViewLayout {
            n_views: n,
            latent_h: 4,
            latent_w: 6,
            elevation: 10.0,
            distance: 2.5,
            focal_ratio: 1.1,
        }
    }

    fn random_bundle(n: usize) -> ViewBundle {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(n as u64);
        let imgs: Vec<Image> = (0..n)
            .map(|_| Image::from_data(48, 32, (0..48 * 32 * 3).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap())
            .collect();
        let refs: Vec<Option<&Image>> = imgs.iter().map(Some).collect();
        bundle_from_images(&refs, &layout(n)).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.lat");
        let b = random_bundle(4);
        save_view_bundle(&b, &p).unwrap();
        let back = load_view_bundle(&p).unwrap();
        assert_eq!(back, b);
        let az: Vec<f32> = back.views.iter().map(|v| v.azimuth).collect();
        assert_eq!(az, vec![0.0, 90.0, 180.0, 270.0]);
    }

    #[test]
    fn mismatched_channels_name_the_view() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.lat");
        let b = random_bundle(4);
        save_view_bundle(&b, &p).unwrap();
        let mut data = std::fs::read(&p).unwrap();
        // header is 8 + 4*5 + 8*4 bytes; each view record is
        // 12 + 1 + 8 + 21*8 + 8 + 4*6*4*4 bytes
        let header = 8 + 20 + 32;
        let record = 12 + 1 + 8 + 168 + 8 + 4 * 6 * 4 * 4;
        let c_offset = header + 2 * record + 8;
        data[c_offset..c_offset + 4].copy_from_slice(&3u32.to_le_bytes());
        std::fs::write(&p, data).unwrap();
        let e = load_view_bundle(&p).unwrap_err();
        assert!(e.to_string().contains("view 2"), "{e}");
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn uneven_azimuths_rejected() {
        let mut b = random_bundle(4);
        b.views[2].azimuth = 200.0;
        assert!(b.validate().is_err());
        let mut b = random_bundle(4);
        b.views[0].is_input = false;
        b.views[1].is_input = true;
        assert!(b.validate().is_err());
    }
}
