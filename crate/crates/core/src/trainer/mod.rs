//! Optimizer, schedule, synthetic scenes, the training loop and evaluation.

mod optim;
mod scene;

pub use optim::{clip_grad_norm, cosine_warmup_lr, AdamW, AdamWConfig};
pub use scene::{
    generate_scene, part_color, sample_params, scene_from_params, HeldoutView, SceneConfig, SyntheticScene,
};

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::body::BodyModel;
use crate::error::{Error, Result};
use crate::gsplat::{render, render_backward, GaussianGrads, GaussianSet, RenderOutput};
use crate::latent::ViewLayout;
use crate::model::params::Grads;
use crate::model::{save_checkpoint, Model, ModelConfig};
use crate::objectives::{perceptual_proxy, psnr, ssim, total_loss, LossWeights};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub steps: usize,
    pub peak_lr: f64,
    pub warmup_steps: usize,
    /// Scenes per optimizer step.
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub grad_clip: f64,
    pub seed: u64,
    /// Number of synthetic scenes generated for training.
    pub scenes: usize,
    pub eval_interval: usize,
    pub checkpoint_interval: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            peak_lr: 4e-4,
            warmup_steps: 2000,
            batch_size: 1,
            beta1: 0.9,
            beta2: 0.95,
            eps: 1e-8,
            weight_decay: 0.05,
            grad_clip: 1.0,
            seed: 0,
            scenes: 1,
            eval_interval: 100,
            checkpoint_interval: 500,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.warmup_steps > self.steps {
            return Err(Error::config(format!(
                "train: warmup_steps ({}) exceeds steps ({})",
                self.warmup_steps, self.steps
            )));
        }
        if !(self.peak_lr > 0.0 && self.peak_lr.is_finite()) {
            return Err(Error::config("train: peak_lr must be positive"));
        }
        if self.batch_size == 0 || self.scenes == 0 {
            return Err(Error::config("train: batch_size and scenes must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return Err(Error::config("train: need 0 <= beta < 1 and eps > 0"));
        }
        if !(self.weight_decay >= 0.0 && self.grad_clip >= 0.0) {
            return Err(Error::config("train: weight_decay and grad_clip must be non-negative"));
        }
        Ok(())
    }

    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }

    pub fn lr(&self, step: usize) -> f64 {
        cosine_warmup_lr(step, self.peak_lr, self.warmup_steps, self.steps)
    }
}

/// Everything a run needs, as read from one TOML file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub loss: LossWeights,
    pub scene: SceneConfig,
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        let c: Config = toml::from_str(text).map_err(|e| Error::config(format!("config: {e}")))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.loss.validate()?;
        self.scene.validate()
    }

    pub fn layout(&self) -> ViewLayout {
        ViewLayout {
            n_views: self.model.n_views,
            latent_h: self.model.latent_h,
            latent_w: self.model.latent_w,
            elevation: self.scene.elevation,
            distance: self.scene.distance,
            focal_ratio: self.scene.focal_ratio,
        }
    }

    pub fn scenes(&self, body: &BodyModel) -> Result<Vec<SyntheticScene>> {
        let layout = self.layout();
        (0..self.train.scenes)
            .into_par_iter()
            .map(|i| generate_scene(self.train.seed.wrapping_add(i as u64), body, &self.scene, &layout))
            .collect()
    }
}

/// One line of the metric log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
    pub loss_hierarchical: f64,
    pub loss_reconstruction: f64,
    pub grad_norm: f64,
    /// Mean PSNR over the full-body supervision views at this step.
    pub train_psnr: f64,
    pub heldout_psnr: Option<f64>,
}

struct StepStats {
    loss: f64,
    hierarchical: f64,
    reconstruction: f64,
    train_psnr: f64,
}

fn render_all(set: &GaussianSet, cams: &[crate::geometry::CameraView], bg: [f64; 3]) -> Result<Vec<RenderOutput>> {
    cams.par_iter().map(|c| render(set, c, bg)).collect()
}

/// Loss and parameter gradients for one scene.
fn scene_grads(model: &Model, scene: &SyntheticScene, cfg: &Config) -> Result<(Grads, StepStats)> {
    let out = model.forward(&scene.bundle, Some(&scene.mesh))?;
    let bg = cfg.scene.background;
    let rendered = scene
        .cameras
        .iter()
        .map(|cams| render_all(&out.gaussians, cams, bg))
        .collect::<Result<Vec<_>>>()?;
    let loss = total_loss(&scene.supervision, &rendered, &cfg.loss)?;
    for (name, v) in [("hierarchical", loss.hierarchical), ("reconstruction", loss.reconstruction)] {
        if !v.is_finite() {
            return Err(Error::numeric(format!("{name} loss is not finite")));
        }
    }
    let mut per_view = Vec::new();
    for (l, cams) in scene.cameras.iter().enumerate() {
        for (v, cam) in cams.iter().enumerate() {
            per_view.push((l, v, cam));
        }
    }
    let view_grads: Vec<GaussianGrads> = per_view
        .par_iter()
        .map(|&(l, v, cam)| {
            let g = &loss.grads[l][v];
            render_backward(&out.gaussians, cam, bg, &g.color, Some(&g.alpha))
        })
        .collect::<Result<_>>()?;
    let mut gg = GaussianGrads::zeros(out.gaussians.len());
    for g in &view_grads {
        gg.add_assign(g);
    }
    let d_raw = model.decode_backward(&out, &gg);
    let (grads, _) = model.backward(&out.cache, &d_raw);
    let full = &scene.supervision.levels[0];
    let train_psnr = full
        .iter()
        .zip(&rendered[0])
        .map(|(s, r)| psnr(&s.target, &r.color))
        .sum::<f64>()
        / full.len() as f64;
    Ok((
        grads,
        StepStats {
            loss: loss.total,
            hierarchical: loss.hierarchical,
            reconstruction: loss.reconstruction,
            train_psnr,
        },
    ))
}

pub struct TrainOutcome {
    pub model: Model,
    pub best: Option<(usize, f64, Model)>,
    pub records: Vec<StepRecord>,
    pub final_heldout_psnr: f64,
}

/// Run `cfg.train.steps` optimizer steps starting from `model`. Each record
/// reports the loss of the parameters before that step's update.
/// `out_dir` receives `last.ckpt` every checkpoint interval and at the end,
/// and `best.ckpt` whenever the held-out PSNR improves.
pub fn train(
    cfg: &Config,
    mut model: Model,
    scenes: &[SyntheticScene],
    out_dir: Option<&Path>,
    mut on_record: impl FnMut(&StepRecord) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if model.config != cfg.model {
        return Err(Error::config("train: model does not match the model config"));
    }
    if scenes.is_empty() {
        return Err(Error::config("train: no scenes"));
    }
    let t = &cfg.train;
    let mut opt = AdamW::new(&model.params, t.adamw());
    let mut records = Vec::with_capacity(t.steps);
    let mut best: Option<(usize, f64, Model)> = None;
    let mut next_scene = 0usize;
    for step in 0..t.steps {
        let mut grads = model.params.zero_grads();
        let mut stats = StepStats {
            loss: 0.0,
            hierarchical: 0.0,
            reconstruction: 0.0,
            train_psnr: 0.0,
        };
        for _ in 0..t.batch_size {
            let scene = &scenes[next_scene % scenes.len()];
            next_scene += 1;
            let (g, s) = scene_grads(&model, scene, cfg).map_err(|e| match e {
                Error::Numeric(m) => Error::numeric(format!("step {step}: {m}")),
                other => other,
            })?;
            grads.add_assign(&g);
            stats.loss += s.loss;
            stats.hierarchical += s.hierarchical;
            stats.reconstruction += s.reconstruction;
            stats.train_psnr += s.train_psnr;
        }
        let b = t.batch_size as f64;
        grads.scale(1.0 / b);
        let heldout_psnr = if t.eval_interval > 0 && step % t.eval_interval == 0 {
            Some(mean_heldout_psnr(&model, scenes, cfg.scene.background)?)
        } else {
            None
        };
        if let Some(p) = heldout_psnr {
            if best.as_ref().is_none_or(|(_, bp, _)| p > *bp) {
                if let Some(dir) = out_dir {
                    save_checkpoint(&model, &dir.join("best.ckpt"))?;
                }
                best = Some((step, p, model.clone()));
            }
        }
        let grad_norm = clip_grad_norm(&mut grads, t.grad_clip);
        let lr = t.lr(step + 1);
        opt.step(&mut model.params, &grads, lr)
            .map_err(|e| Error::numeric(format!("step {step}: {e}")))?;
        let rec = StepRecord {
            step,
            lr,
            loss: stats.loss / b,
            loss_hierarchical: stats.hierarchical / b,
            loss_reconstruction: stats.reconstruction / b,
            grad_norm,
            train_psnr: stats.train_psnr / b,
            heldout_psnr,
        };
        on_record(&rec)?;
        records.push(rec);
        if let Some(dir) = out_dir {
            if t.checkpoint_interval > 0 && (step + 1) % t.checkpoint_interval == 0 {
                save_checkpoint(&model, &dir.join("last.ckpt"))?;
            }
        }
    }
    let final_heldout_psnr = mean_heldout_psnr(&model, scenes, cfg.scene.background)?;
    if best.as_ref().is_none_or(|(_, bp, _)| final_heldout_psnr > *bp) {
        if let Some(dir) = out_dir {
            save_checkpoint(&model, &dir.join("best.ckpt"))?;
        }
        best = Some((t.steps, final_heldout_psnr, model.clone()));
    }
    if let Some(dir) = out_dir {
        save_checkpoint(&model, &dir.join("last.ckpt"))?;
    }
    Ok(TrainOutcome {
        model,
        best,
        records,
        final_heldout_psnr,
    })
}

fn mean_heldout_psnr(model: &Model, scenes: &[SyntheticScene], bg: [f64; 3]) -> Result<f64> {
    let rows = evaluate(model, scenes, bg)?;
    Ok(rows.iter().map(|r| r.psnr).sum::<f64>() / rows.len().max(1) as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub scene: usize,
    pub view: usize,
    pub azimuth: f64,
    pub psnr: f64,
    pub ssim: f64,
    pub proxy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    pub mean_proxy: f64,
}

impl EvalReport {
    pub fn from_rows(rows: Vec<EvalRow>) -> Self {
        let n = rows.len().max(1) as f64;
        let mean = |f: fn(&EvalRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
        Self {
            mean_psnr: mean(|r| r.psnr),
            mean_ssim: mean(|r| r.ssim),
            mean_proxy: mean(|r| r.proxy),
            rows,
        }
    }
}

/// Metrics of every held-out view of every scene, in scene then view order.
pub fn evaluate(model: &Model, scenes: &[SyntheticScene], bg: [f64; 3]) -> Result<Vec<EvalRow>> {
    let mut rows = Vec::new();
    for (si, scene) in scenes.iter().enumerate() {
        let out = model.forward(&scene.bundle, Some(&scene.mesh))?;
        let cams: Vec<_> = scene.heldout.iter().map(|h| h.camera.clone()).collect();
        let rendered = render_all(&out.gaussians, &cams, bg)?;
        for (vi, (h, r)) in scene.heldout.iter().zip(&rendered).enumerate() {
            rows.push(EvalRow {
                scene: si,
                view: vi,
                azimuth: h.azimuth,
                psnr: psnr(&h.image, &r.color),
                ssim: ssim(&h.image, &r.color),
                proxy: perceptual_proxy(&h.image, &r.color),
            });
        }
    }
    Ok(rows)
}

/// Mean PSNR of the full-body supervision views of every scene.
pub fn training_view_psnr(model: &Model, scenes: &[SyntheticScene], bg: [f64; 3]) -> Result<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for scene in scenes {
        let out = model.forward(&scene.bundle, Some(&scene.mesh))?;
        let rendered = render_all(&out.gaussians, &scene.cameras[0], bg)?;
        for (s, r) in scene.supervision.levels[0].iter().zip(&rendered) {
            sum += psnr(&s.target, &r.color);
            n += 1;
        }
    }
    Ok(sum / n.max(1) as f64)
}
