//! Latent feature grids for the input and generated views, the toy encoder
//! standing in for a pretrained image encoder, view-pose schedules, and the
//! latent bundle container.

mod container;

pub use container::{load_view_bundle, save_view_bundle, LATENT_MAGIC, LATENT_VERSION};

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::geometry::{make_orbit_cameras, CameraView, Intrinsics};
use crate::imaging::Image;

pub const ENCODER_STRIDE: usize = 8;
pub const LATENT_CHANNELS: usize = 4;

/// Row-major `height × width × channels` features.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl FeatureMap {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    pub fn at(&self, row: usize, col: usize) -> &[f32] {
        let i = (row * self.width + col) * self.channels;
        &self.data[i..i + self.channels]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LatentGrid {
    pub features: FeatureMap,
    pub elevation: f32,
    pub azimuth: f32,
    pub camera: CameraView,
    pub is_input: bool,
}

impl LatentGrid {
    pub fn validate(&self) -> Result<()> {
        let f = &self.features;
        if f.height == 0 || f.width == 0 || f.channels == 0 {
            return Err(Error::invariant("latent", "h, w and c must be positive"));
        }
        if f.data.len() != f.height * f.width * f.channels {
            return Err(Error::invariant("latent", "feature length does not match h·w·c"));
        }
        if let Some(i) = f.data.iter().position(|v| !v.is_finite()) {
            return Err(Error::numeric(format!("latent feature {i} is not finite")));
        }
        if !(0.0..360.0).contains(&self.azimuth) {
            return Err(Error::invariant("azimuth", format!("{} outside [0, 360)", self.azimuth)));
        }
        self.camera.validate()
    }
}

/// Input view plus generated views sharing one scene normalization.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewBundle {
    pub views: Vec<LatentGrid>,
    pub center: [f64; 3],
    pub radius: f64,
}

impl ViewBundle {
    pub fn input(&self) -> &LatentGrid {
        self.views.iter().find(|v| v.is_input).expect("validated bundle has an input view")
    }

    pub fn input_index(&self) -> usize {
        self.views.iter().position(|v| v.is_input).expect("validated bundle has an input view")
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        let f = &self.views[0].features;
        (f.height, f.width, f.channels)
    }

    pub fn validate(&self) -> Result<()> {
        if self.views.is_empty() {
            return Err(Error::schema("view bundle has no views"));
        }
        if !(self.radius > 0.0) || self.center.iter().any(|c| !c.is_finite()) {
            return Err(Error::invariant("normalization", "radius must be positive and center finite"));
        }
        let (h, w, c) = self.dims();
        for (i, v) in self.views.iter().enumerate() {
            let f = &v.features;
            if (f.height, f.width, f.channels) != (h, w, c) {
                return Err(Error::schema(format!(
                    "view {i}: latent is {}×{}×{}, view 0 is {h}×{w}×{c}",
                    f.height, f.width, f.channels
                )));
            }
            v.validate().map_err(|e| Error::schema(format!("view {i}: {e}")))?;
        }
        let inputs = self.views.iter().filter(|v| v.is_input).count();
        if inputs != 1 {
            return Err(Error::schema(format!("view bundle marks {inputs} input views, expected 1")));
        }
        let input = self.input();
        if input.azimuth != 0.0 {
            return Err(Error::schema(format!("input view azimuth is {}, expected 0", input.azimuth)));
        }
        let mut az: Vec<f64> = self.views.iter().map(|v| v.azimuth as f64).collect();
        az.sort_by(f64::total_cmp);
        let n = az.len();
        for (k, a) in az.iter().enumerate() {
            let expect = 360.0 * k as f64 / n as f64;
            if (a - expect).abs() > 1e-3 {
                return Err(Error::schema(format!(
                    "view azimuths are not evenly spaced: expected {expect} for the {k}-th, found {a}"
                )));
            }
        }
        Ok(())
    }
}

/// 8× block encoder: per 8×8 block, mean R, G, B and the mean magnitude of
/// the luminance gradient (central differences, clamped borders).
pub fn toy_encode(image: &Image) -> Result<FeatureMap> {
    let (w, h) = (image.width, image.height);
    if w == 0 || h == 0 || w % ENCODER_STRIDE != 0 || h % ENCODER_STRIDE != 0 {
        return Err(Error::config(format!("toy_encode: image {w}×{h} is not divisible by {ENCODER_STRIDE}")));
    }
    let lum: Vec<f64> = image
        .data
        .chunks_exact(3)
        .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
        .collect();
    let y_at = |x: usize, y: usize| lum[y * w + x];
    let (lh, lw) = (h / ENCODER_STRIDE, w / ENCODER_STRIDE);
    let mut out = FeatureMap::zeros(lh, lw, LATENT_CHANNELS);
    let norm = (ENCODER_STRIDE * ENCODER_STRIDE) as f64;
    for by in 0..lh {
        for bx in 0..lw {
            let mut acc = [0.0f64; 4];
            for y in by * ENCODER_STRIDE..(by + 1) * ENCODER_STRIDE {
                for x in bx * ENCODER_STRIDE..(bx + 1) * ENCODER_STRIDE {
                    let p = image.pixel(x, y);
                    acc[0] += p[0];
                    acc[1] += p[1];
                    acc[2] += p[2];
                    let gx = (y_at((x + 1).min(w - 1), y) - y_at(x.saturating_sub(1), y)) / 2.0;
                    let gy = (y_at(x, (y + 1).min(h - 1)) - y_at(x, y.saturating_sub(1))) / 2.0;
                    acc[3] += (gx * gx + gy * gy).sqrt();
                }
            }
            let base = (by * lw + bx) * LATENT_CHANNELS;
            for k in 0..4 {
                out.data[base + k] = (acc[k] / norm) as f32;
            }
        }
    }
    Ok(out)
}

/// `(elevation, azimuth)` pairs with azimuths `360·k/n`.
pub fn view_pose_schedule(n_views: usize, elevation: f64) -> Vec<(f64, f64)> {
    (0..n_views).map(|k| (elevation, 360.0 * k as f64 / n_views as f64)).collect()
}

/// Triangle-wave guidance scale: 1 at the front, 2.5 at the back.
pub fn triangular_cfg(azimuth_deg: f64) -> f64 {
    1.0 + 1.5 * (1.0 - (azimuth_deg - 180.0).abs() / 180.0)
}

/// Orbit-view layout shared by bundles built inside this crate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ViewLayout {
    pub n_views: usize,
    pub latent_h: usize,
    pub latent_w: usize,
    pub elevation: f64,
    pub distance: f64,
    pub focal_ratio: f64,
}

impl ViewLayout {
    pub fn image_size(&self) -> (u32, u32) {
        ((self.latent_w * ENCODER_STRIDE) as u32, (self.latent_h * ENCODER_STRIDE) as u32)
    }

    pub fn cameras(&self) -> Result<Vec<crate::geometry::OrbitCamera>> {
        let (w, h) = self.image_size();
        let intr = Intrinsics::centered(w, h, self.focal_ratio);
        make_orbit_cameras(self.n_views, self.elevation, self.distance, Vector3::zeros(), &intr)
    }
}

/// Build a bundle by encoding one image per view (in azimuth order). Views
/// with no image get zero features; only their camera rays inform the model.
pub fn bundle_from_images(images: &[Option<&Image>], layout: &ViewLayout) -> Result<ViewBundle> {
    if images.len() != layout.n_views {
        return Err(Error::config(format!("{} images for {} views", images.len(), layout.n_views)));
    }
    let (w, h) = layout.image_size();
    let cams = layout.cameras()?;
    let mut views = Vec::with_capacity(layout.n_views);
    for (k, (img, oc)) in images.iter().zip(cams).enumerate() {
        let features = match img {
            Some(img) => {
                if (img.width, img.height) != (w as usize, h as usize) {
                    return Err(Error::config(format!(
                        "view {k}: image is {}×{}, layout expects {w}×{h}",
                        img.width, img.height
                    )));
                }
                toy_encode(img)?
            }
            None => FeatureMap::zeros(layout.latent_h, layout.latent_w, LATENT_CHANNELS),
        };
        views.push(LatentGrid {
            features,
            elevation: oc.elevation_deg as f32,
            azimuth: oc.azimuth_deg as f32,
            camera: oc.camera,
            is_input: k == 0,
        });
    }
    let bundle = ViewBundle {
        views,
        center: [0.0; 3],
        radius: 1.0,
    };
    bundle.validate()?;
    Ok(bundle)
}
