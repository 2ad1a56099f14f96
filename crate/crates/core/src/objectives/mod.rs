//! Part-weighted hierarchical loss, multi-view reconstruction loss,
//! structural perceptual proxy and image metrics.

mod metrics;
mod proxy;

pub use metrics::{mse, psnr, ssim, PSNR_CAP};
pub use proxy::{perceptual_proxy, proxy_with_grad, PROXY_SCALES};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{PartMaskSet, NUM_PARTS};
use crate::gsplat::RenderOutput;
use crate::imaging::Image;

/// Part ids (1-based) weighted 2 by default: head and the arm/hand chain.
pub const EMPHASIZED_PARTS: std::ops::RangeInclusive<u8> = 16..=24;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    /// λ_i per framing level (full body, head crop, ...).
    pub levels: Vec<f64>,
    /// λ_j per part; entry `k` weights part id `k + 1`.
    pub parts: Vec<f64>,
    pub perceptual: f64,
    pub mask: f64,
    /// Multiplier on input-view reconstruction terms.
    pub input_weight: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            levels: vec![1.0, 1.0],
            parts: (1..=NUM_PARTS)
                .map(|id| if EMPHASIZED_PARTS.contains(&id) { 2.0 } else { 1.0 })
                .collect(),
            perceptual: 1.0,
            mask: 1.0,
            input_weight: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = self
            .levels
            .iter()
            .chain(&self.parts)
            .chain([&self.perceptual, &self.mask, &self.input_weight]);
        if all.into_iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::config("loss weights must be finite and non-negative"));
        }
        if self.parts.is_empty() || self.parts.len() > NUM_PARTS as usize {
            return Err(Error::config(format!(
                "loss weights: {} part weights, expected 1 to {NUM_PARTS}",
                self.parts.len()
            )));
        }
        if self.input_weight < 1.0 {
            return Err(Error::config("loss weights: input_weight must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SupervisionView {
    pub target: Image,
    /// Binary foreground mask, one value per pixel.
    pub mask: Vec<f64>,
    pub parts: PartMaskSet,
    pub is_input: bool,
}

/// Supervision views grouped by framing level.
#[derive(Clone, Debug, Default)]
pub struct SupervisionSet {
    pub levels: Vec<Vec<SupervisionView>>,
}

/// Gradient of a loss with respect to one rendered view.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewGrad {
    pub color: Vec<f64>,
    pub alpha: Vec<f64>,
}

impl ViewGrad {
    fn zeros(pixels: usize) -> Self {
        Self {
            color: vec![0.0; pixels * 3],
            alpha: vec![0.0; pixels],
        }
    }

    fn add(&mut self, o: &ViewGrad) {
        for (a, b) in self.color.iter_mut().zip(&o.color) {
            *a += b;
        }
        for (a, b) in self.alpha.iter_mut().zip(&o.alpha) {
            *a += b;
        }
    }
}

pub type Grads = Vec<Vec<ViewGrad>>;

#[derive(Clone, Debug)]
pub struct LossOutput {
    pub hierarchical: f64,
    pub reconstruction: f64,
    pub total: f64,
    pub grads: Grads,
}

fn check_shapes(sup: &SupervisionSet, rendered: &[Vec<RenderOutput>]) -> Result<()> {
    if sup.levels.len() != rendered.len() {
        return Err(Error::invariant(
            "supervision",
            format!("{} levels supervised, {} rendered", sup.levels.len(), rendered.len()),
        ));
    }
    for (i, (sl, rl)) in sup.levels.iter().zip(rendered).enumerate() {
        if sl.len() != rl.len() {
            return Err(Error::invariant(
                "supervision",
                format!("level {i}: {} views supervised, {} rendered", sl.len(), rl.len()),
            ));
        }
        for (v, (s, r)) in sl.iter().zip(rl).enumerate() {
            let (w, h) = (s.target.width, s.target.height);
            let ok = (r.color.width, r.color.height) == (w, h)
                && s.mask.len() == w * h
                && r.alpha.len() == w * h
                && (s.parts.width, s.parts.height) == (w, h);
            if !ok {
                return Err(Error::invariant(
                    "supervision",
                    format!("level {i} view {v}: image, mask, part mask and render sizes differ"),
                ));
            }
        }
    }
    Ok(())
}

fn zero_grads(rendered: &[Vec<RenderOutput>]) -> Grads {
    rendered
        .iter()
        .map(|l| l.iter().map(|r| ViewGrad::zeros(r.alpha.len())).collect())
        .collect()
}

/// Mask-normalized MSE plus `λ_p`·proxy of one part of one view, scaled by
/// `scale`; accumulates the color gradient.
fn part_term(target: &Image, rendered: &Image, mask: &[f64], lambda_p: f64, scale: f64, d_color: &mut [f64]) -> f64 {
    let count: f64 = mask.iter().sum();
    if count == 0.0 {
        return 0.0;
    }
    let denom = count * 3.0;
    let mut mse = 0.0;
    for (p, &m) in mask.iter().enumerate() {
        if m == 0.0 {
            continue;
        }
        for c in 0..3 {
            let i = p * 3 + c;
            let d = (rendered.data[i] - target.data[i]) * m;
            mse += d * d;
            d_color[i] += scale * 2.0 * d * m / denom;
        }
    }
    let mut value = mse / denom;
    if lambda_p > 0.0 {
        let a = target.masked(mask);
        let b = rendered.masked(mask);
        let (pv, pg) = proxy_with_grad(&a.data, &b.data, a.width, a.height);
        value += lambda_p * pv;
        for (p, &m) in mask.iter().enumerate() {
            for c in 0..3 {
                d_color[p * 3 + c] += scale * lambda_p * pg[p * 3 + c] * m;
            }
        }
    }
    value
}

/// `(1/n)(1/m) Σ_i λ_i mean_views Σ_j λ_j (MSE_j + λ_p·L_p,j)` with `n` the
/// level count and `m` the number of part weights.
pub fn hierarchical_loss(
    sup: &SupervisionSet,
    rendered: &[Vec<RenderOutput>],
    w: &LossWeights,
) -> Result<(f64, Grads)> {
    check_shapes(sup, rendered)?;
    w.validate()?;
    if w.levels.len() < sup.levels.len() {
        return Err(Error::invariant(
            "loss weights",
            format!("{} level weights for {} levels", w.levels.len(), sup.levels.len()),
        ));
    }
    let mut grads = zero_grads(rendered);
    let n = sup.levels.len() as f64;
    let m = w.parts.len() as f64;
    let mut total = 0.0;
    for (i, (sl, rl)) in sup.levels.iter().zip(rendered).enumerate() {
        if sl.is_empty() {
            continue;
        }
        let level_scale = w.levels[i] / (n * m * sl.len() as f64);
        for (v, (s, r)) in sl.iter().zip(rl).enumerate() {
            for (j, &lj) in w.parts.iter().enumerate() {
                if lj == 0.0 {
                    continue;
                }
                let mask = s.parts.part_mask(j as u8 + 1);
                let scale = level_scale * lj;
                let t = part_term(&s.target, &r.color, &mask, w.perceptual, scale, &mut grads[i][v].color);
                total += scale * t;
            }
        }
    }
    Ok((total, grads))
}

/// `Σ_views w_v (MSE(I, Î) + λ_m·MSE(M, M̂) + λ_p·L_p(I, Î))`, with `w_v` the
/// input weight on input views and 1 elsewhere.
pub fn reconstruction_loss(
    sup: &SupervisionSet,
    rendered: &[Vec<RenderOutput>],
    w: &LossWeights,
) -> Result<(f64, Grads)> {
    check_shapes(sup, rendered)?;
    w.validate()?;
    let mut grads = zero_grads(rendered);
    let mut total = 0.0;
    for (i, (sl, rl)) in sup.levels.iter().zip(rendered).enumerate() {
        for (v, (s, r)) in sl.iter().zip(rl).enumerate() {
            let wv = if s.is_input { w.input_weight } else { 1.0 };
            let g = &mut grads[i][v];
            let nc = s.target.data.len() as f64;
            let mut t = 0.0;
            for (k, (a, b)) in s.target.data.iter().zip(&r.color.data).enumerate() {
                let d = b - a;
                t += d * d / nc;
                g.color[k] += wv * 2.0 * d / nc;
            }
            if w.mask > 0.0 {
                let np = s.mask.len() as f64;
                let mut mm = 0.0;
                for (k, (a, b)) in s.mask.iter().zip(&r.alpha).enumerate() {
                    let d = b - a;
                    mm += d * d / np;
                    g.alpha[k] += wv * w.mask * 2.0 * d / np;
                }
                t += w.mask * mm;
            }
            if w.perceptual > 0.0 {
                let (pv, pg) = proxy_with_grad(&s.target.data, &r.color.data, s.target.width, s.target.height);
                t += w.perceptual * pv;
                for (a, b) in g.color.iter_mut().zip(&pg) {
                    *a += wv * w.perceptual * b;
                }
            }
            total += wv * t;
        }
    }
    Ok((total, grads))
}

/// `L_H + L_Rec`; gradients superpose.
pub fn total_loss(sup: &SupervisionSet, rendered: &[Vec<RenderOutput>], w: &LossWeights) -> Result<LossOutput> {
    let (h, mut grads) = hierarchical_loss(sup, rendered, w)?;
    let (r, gr) = reconstruction_loss(sup, rendered, w)?;
    for (la, lb) in grads.iter_mut().zip(&gr) {
        for (a, b) in la.iter_mut().zip(lb) {
            a.add(b);
        }
    }
    let total = h + r;
    if !total.is_finite() {
        return Err(Error::numeric("loss is not finite"));
    }
    Ok(LossOutput {
        hierarchical: h,
        reconstruction: r,
        total,
        grads,
    })
}

#[cfg(test)]
mod tests;
