use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::Report;
use crate::geometry::{CameraView, Intrinsics};
use crate::gsplat::oracle::threshold_margin;
use crate::gsplat::{render, render_backward, GaussianSet};

pub struct RenderInstance {
    pub set: GaussianSet,
    pub camera: CameraView,
    pub background: [f64; 3],
}

/// Random Gaussians around the origin seen by a random camera on a sphere of
/// radius 3.
pub fn random_render_instance(rng: &mut impl Rng, max_gaussians: usize, max_size: u32) -> RenderInstance {
    let n = rng.random_range(1..=max_gaussians);
    let w = rng.random_range(4..=max_size);
    let h = rng.random_range(4..=max_size);
    let dir = loop {
        let v = Vector3::new(
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
        );
        if v.norm() > 1e-3 && v.normalize().y.abs() < 0.95 {
            break v.normalize();
        }
    };
    let intr = Intrinsics::centered(w, h, rng.random_range(0.8..1.5));
    let camera = CameraView::look_at(dir * 3.0, Vector3::zeros(), Vector3::y(), &intr).expect("valid camera");
    let mut set = GaussianSet::default();
    for _ in 0..n {
        let q: [f64; 4] = std::array::from_fn(|_| rng.sample::<f64, _>(StandardNormal));
        set.push(
            std::array::from_fn(|_| rng.random_range(-0.6..0.6)),
            q,
            std::array::from_fn(|_| rng.random_range(0.03..0.3)),
            rng.random_range(0.1..0.95),
            std::array::from_fn(|_| rng.random_range(0.0..1.0)),
        );
    }
    let background = std::array::from_fn(|_| rng.random_range(0.0..1.0));
    RenderInstance { set, camera, background }
}

const STEP: f64 = 1e-6;

/// Central differences of `Σ wc ⊙ color + Σ wa ⊙ alpha` against the analytic
/// backward pass, for every attribute of every Gaussian.
pub fn renderer_suite(seed: u64, instances: usize) -> Report {
    let mut report = Report::new("renderer");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut done = 0;
    while done < instances {
        let inst = random_render_instance(&mut rng, 6, 20);
        if threshold_margin(&inst.set, &inst.camera) < 1e-3 {
            continue;
        }
        let npix = (inst.camera.width * inst.camera.height) as usize;
        let wc: Vec<f64> = (0..npix * 3).map(|_| rng.sample(StandardNormal)).collect();
        let wa: Vec<f64> = (0..npix).map(|_| rng.sample(StandardNormal)).collect();
        let grads = render_backward(&inst.set, &inst.camera, inst.background, &wc, Some(&wa)).expect("backward");
        let eval_diff = |plus: &GaussianSet, minus: &GaussianSet| -> f64 {
            let a = render(plus, &inst.camera, inst.background).expect("render");
            let b = render(minus, &inst.camera, inst.background).expect("render");
            let mut s = 0.0;
            for i in 0..npix * 3 {
                s += wc[i] * (a.color.data[i] - b.color.data[i]);
            }
            for i in 0..npix {
                s += wa[i] * (a.alpha[i] - b.alpha[i]);
            }
            s / (2.0 * STEP)
        };
        for g in 0..inst.set.len() {
            let mut check = |class: &str, k: usize, analytic: f64, edit: &dyn Fn(&mut GaussianSet, f64)| {
                let mut plus = inst.set.clone();
                let mut minus = inst.set.clone();
                edit(&mut plus, STEP);
                edit(&mut minus, -STEP);
                let numeric = eval_diff(&plus, &minus);
                report.record(|| format!("instance {done} gaussian {g} {class}[{k}]"), analytic, numeric);
            };
            for k in 0..3 {
                check("mean", k, grads.means[g][k], &|s, h| s.means[g][k] += h);
                check("scale", k, grads.scales[g][k], &|s, h| s.scales[g][k] += h);
                check("color", k, grads.colors[g][k], &|s, h| s.colors[g][k] += h);
            }
            for k in 0..4 {
                check("rotation", k, grads.rotations[g][k], &|s, h| s.rotations[g][k] += h);
            }
            check("opacity", 0, grads.opacities[g], &|s, h| s.opacities[g] += h);
        }
        done += 1;
    }
    report
}
