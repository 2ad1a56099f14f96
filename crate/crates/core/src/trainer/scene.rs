//! Seeded synthetic training scenes rendered with the mesh rasterizer.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::body::{pose_body, BodyMesh, BodyModel, BodyParams, NUM_BETAS, NUM_JOINTS};
use crate::error::{Error, Result};
use crate::geometry::{
    orbit_position, rasterize_mesh, rasterize_part_masks, shade_vertex_colors, CameraView, Intrinsics,
};
use crate::imaging::Image;
use crate::latent::{bundle_from_images, ViewBundle, ViewLayout};
use crate::objectives::{SupervisionSet, SupervisionView};

const HEAD_PART: u8 = 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneConfig {
    /// Side of the square supervision and held-out images.
    pub image_size: u32,
    pub elevation: f64,
    pub distance: f64,
    pub focal_ratio: f64,
    pub full_views: usize,
    pub head_views: usize,
    pub heldout_views: usize,
    pub color_noise: f64,
    pub beta_range: f64,
    pub pose_range: f64,
    pub background: [f64; 3],
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            image_size: 64,
            elevation: 0.0,
            distance: 2.5,
            focal_ratio: 1.1,
            full_views: 8,
            head_views: 4,
            heldout_views: 4,
            color_noise: 0.05,
            beta_range: 1.0,
            pose_range: 0.15,
            background: [0.0; 3],
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.image_size == 0 || self.full_views == 0 {
            return Err(Error::config("scene: image_size and full_views must be positive"));
        }
        if !(self.distance > 1.0 && self.focal_ratio > 0.0) {
            return Err(Error::config("scene: distance must exceed the unit body radius"));
        }
        if !(self.color_noise >= 0.0 && self.beta_range >= 0.0 && self.pose_range >= 0.0) {
            return Err(Error::config("scene: noise and sampling ranges must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct HeldoutView {
    pub camera: CameraView,
    pub azimuth: f64,
    pub image: Image,
}

#[derive(Clone, Debug)]
pub struct SyntheticScene {
    pub params: BodyParams,
    /// Posed mesh in body-model coordinates.
    pub mesh: BodyMesh,
    pub colors: Vec<[f64; 3]>,
    /// Input latents; the bundle's center and radius normalize `mesh`.
    pub bundle: ViewBundle,
    pub supervision: SupervisionSet,
    /// Cameras of `supervision`, by level.
    pub cameras: Vec<Vec<CameraView>>,
    pub heldout: Vec<HeldoutView>,
}

fn hsv(h: f64, s: f64, v: f64) -> [f64; 3] {
    let i = (h * 6.0).floor();
    let f = h * 6.0 - i;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - f * s), v * (1.0 - (1.0 - f) * s));
    match i as i64 % 6 {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

/// Fixed color per part id.
pub fn part_color(part: u8) -> [f64; 3] {
    hsv((part as f64 * 0.618_033_988_749_895).fract(), 0.65, 0.9)
}

fn render_mesh(mesh: &BodyMesh, colors: &[[f64; 3]], cam: &CameraView, bg: [f64; 3]) -> Image {
    let frags = rasterize_mesh(&mesh.vertices, &mesh.faces, cam);
    let data = shade_vertex_colors(&frags, &mesh.faces, colors, bg);
    Image::from_data(cam.width as usize, cam.height as usize, data).expect("shaded image size")
}

fn supervision_view(mesh: &BodyMesh, colors: &[[f64; 3]], cam: &CameraView, bg: [f64; 3], is_input: bool) -> SupervisionView {
    let parts = rasterize_part_masks(mesh, cam, cam.height as usize, cam.width as usize);
    SupervisionView {
        target: render_mesh(mesh, colors, cam, bg),
        mask: parts.foreground(),
        parts,
        is_input,
    }
}

fn orbit_camera(elev: f64, azim: f64, dist: f64, target: Vector3<f64>, intr: &Intrinsics) -> Result<CameraView> {
    CameraView::look_at(orbit_position(elev, azim, dist, target), target, Vector3::y(), intr)
}

pub fn sample_params(rng: &mut impl Rng, cfg: &SceneConfig) -> BodyParams {
    let beta: [f64; NUM_BETAS] = std::array::from_fn(|_| {
        if cfg.beta_range > 0.0 {
            rng.random_range(-cfg.beta_range..=cfg.beta_range)
        } else {
            0.0
        }
    });
    let theta = (0..NUM_JOINTS)
        .map(|j| {
            if j == 0 || cfg.pose_range == 0.0 {
                [0.0; 3]
            } else {
                std::array::from_fn(|_| rng.random_range(-cfg.pose_range..=cfg.pose_range))
            }
        })
        .collect();
    BodyParams { beta, theta }
}

/// Deterministic scene for `seed`: sampled shape and pose, palette colors
/// with per-vertex noise.
pub fn generate_scene(seed: u64, body: &BodyModel, cfg: &SceneConfig, layout: &ViewLayout) -> Result<SyntheticScene> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = sample_params(&mut rng, cfg);
    scene_from_params(params, &mut rng, body, cfg, layout)
}

pub fn scene_from_params(
    params: BodyParams,
    rng: &mut impl Rng,
    body: &BodyModel,
    cfg: &SceneConfig,
    layout: &ViewLayout,
) -> Result<SyntheticScene> {
    cfg.validate()?;
    let mesh = pose_body(body, &params.beta, &params.theta);
    let colors: Vec<[f64; 3]> = mesh
        .labels
        .iter()
        .map(|&l| {
            let c = part_color(l);
            std::array::from_fn(|k| {
                let n = if cfg.color_noise > 0.0 {
                    rng.random_range(-cfg.color_noise..=cfg.color_noise)
                } else {
                    0.0
                };
                (c[k] + n).clamp(0.0, 1.0)
            })
        })
        .collect();
    let (center, radius) = mesh.bounding_sphere();
    let norm = mesh.normalized(&center, radius);
    let bg = cfg.background;

    let inputs: Vec<Image> = layout
        .cameras()?
        .iter()
        .map(|oc| render_mesh(&norm, &colors, &oc.camera, bg))
        .collect();
    let refs: Vec<Option<&Image>> = inputs.iter().map(Some).collect();
    let mut bundle = bundle_from_images(&refs, layout)?;
    bundle.center = [center.x, center.y, center.z];
    bundle.radius = radius;

    let size = cfg.image_size;
    let intr = Intrinsics::centered(size, size, cfg.focal_ratio);
    let mut full_cams = Vec::new();
    let mut full = Vec::new();
    for k in 0..cfg.full_views {
        let az = 360.0 * k as f64 / cfg.full_views as f64;
        let cam = orbit_camera(cfg.elevation, az, cfg.distance, Vector3::zeros(), &intr)?;
        full.push(supervision_view(&norm, &colors, &cam, bg, k == 0));
        full_cams.push(cam);
    }
    let mut levels = vec![full];
    let mut cameras = vec![full_cams];

    let head: Vec<Vector3<f64>> = norm
        .vertices
        .iter()
        .zip(&norm.labels)
        .filter(|(_, &l)| l == HEAD_PART)
        .map(|(v, _)| Vector3::from(*v))
        .collect();
    if cfg.head_views > 0 && !head.is_empty() {
        let hc = head.iter().sum::<Vector3<f64>>() / head.len() as f64;
        let hr = head.iter().map(|v| (v - hc).norm()).fold(0.0, f64::max).max(1e-3);
        let dist = 3.5 * hr * cfg.focal_ratio;
        let mut hv = Vec::new();
        let mut hcams = Vec::new();
        for k in 0..cfg.head_views {
            let az = 360.0 * k as f64 / cfg.head_views as f64;
            let cam = orbit_camera(cfg.elevation, az, dist, hc, &intr)?;
            hv.push(supervision_view(&norm, &colors, &cam, bg, false));
            hcams.push(cam);
        }
        levels.push(hv);
        cameras.push(hcams);
    }

    let mut heldout = Vec::new();
    for k in 0..cfg.heldout_views {
        let az = 360.0 * (k as f64 + 0.25) / cfg.heldout_views as f64;
        let camera = orbit_camera(cfg.elevation, az, cfg.distance, Vector3::zeros(), &intr)?;
        heldout.push(HeldoutView {
            image: render_mesh(&norm, &colors, &camera, bg),
            camera,
            azimuth: az,
        });
    }

    Ok(SyntheticScene {
        params,
        mesh,
        colors,
        bundle,
        supervision: SupervisionSet { levels },
        cameras,
        heldout,
    })
}
