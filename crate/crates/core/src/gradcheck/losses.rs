use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Report;
use crate::geometry::{PartMaskSet, NUM_PARTS};
use crate::gsplat::RenderOutput;
use crate::imaging::Image;
use crate::objectives::{hierarchical_loss, proxy_with_grad, reconstruction_loss, total_loss, LossWeights, SupervisionSet, SupervisionView};

pub struct LossInstance {
    pub sup: SupervisionSet,
    pub rendered: Vec<Vec<RenderOutput>>,
    pub weights: LossWeights,
}

fn random_image(rng: &mut impl Rng, w: usize, h: usize) -> Image {
    Image::from_data(w, h, (0..w * h * 3).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap()
}

/// Two framing levels of two views each, random targets, renders and part
/// labels (about a quarter of the pixels background), random weights.
pub fn random_loss_instance(rng: &mut impl Rng, w: usize, h: usize) -> LossInstance {
    let mut sup = SupervisionSet::default();
    let mut rendered = Vec::new();
    for level in 0..2 {
        let mut sl = Vec::new();
        let mut rl = Vec::new();
        for v in 0..2 {
            let labels: Vec<u8> = (0..w * h)
                .map(|_| if rng.random_bool(0.25) { 0 } else { rng.random_range(1..=NUM_PARTS) })
                .collect();
            let parts = PartMaskSet {
                width: w,
                height: h,
                depth: vec![0.0; w * h],
                labels,
            };
            sl.push(SupervisionView {
                target: random_image(rng, w, h),
                mask: parts.foreground(),
                parts,
                is_input: level == 0 && v == 0,
            });
            rl.push(RenderOutput {
                color: random_image(rng, w, h),
                alpha: (0..w * h).map(|_| rng.random_range(0.0..1.0)).collect(),
            });
        }
        sup.levels.push(sl);
        rendered.push(rl);
    }
    let weights = LossWeights {
        levels: vec![rng.random_range(0.5..2.0), rng.random_range(0.5..2.0)],
        parts: (0..NUM_PARTS).map(|_| rng.random_range(0.0..2.0)).collect(),
        perceptual: rng.random_range(0.1..1.0),
        mask: rng.random_range(0.1..1.0),
        input_weight: rng.random_range(1.0..3.0),
    };
    LossInstance { sup, rendered, weights }
}

const STEP: f64 = 1e-6;

/// Central differences of the proxy, the hierarchical loss, the
/// reconstruction loss and their sum with respect to every rendered color
/// and alpha value.
pub fn loss_suite(seed: u64, instances: usize) -> Report {
    let mut report = Report::new("losses");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for inst_id in 0..instances {
        let mut inst = random_loss_instance(&mut rng, 12, 10);
        let (w, h) = (12, 10);

        let a = random_image(&mut rng, w, h);
        let mut b = random_image(&mut rng, w, h);
        let (_, pg) = proxy_with_grad(&a.data, &b.data, w, h);
        for k in 0..b.data.len() {
            let x0 = b.data[k];
            b.data[k] = x0 + STEP;
            let plus = proxy_with_grad(&a.data, &b.data, w, h).0;
            b.data[k] = x0 - STEP;
            let minus = proxy_with_grad(&a.data, &b.data, w, h).0;
            b.data[k] = x0;
            report.record(|| format!("instance {inst_id} proxy[{k}]"), pg[k], (plus - minus) / (2.0 * STEP));
        }

        let (_, gh) = hierarchical_loss(&inst.sup, &inst.rendered, &inst.weights).unwrap();
        let (_, gr) = reconstruction_loss(&inst.sup, &inst.rendered, &inst.weights).unwrap();
        let gt = total_loss(&inst.sup, &inst.rendered, &inst.weights).unwrap().grads;
        let eval = |inst: &LossInstance| {
            let o = total_loss(&inst.sup, &inst.rendered, &inst.weights).unwrap();
            [o.hierarchical, o.reconstruction, o.total]
        };
        for l in 0..inst.rendered.len() {
            for v in 0..inst.rendered[l].len() {
                for k in 0..w * h * 3 {
                    let x0 = inst.rendered[l][v].color.data[k];
                    inst.rendered[l][v].color.data[k] = x0 + STEP;
                    let p = eval(&inst);
                    inst.rendered[l][v].color.data[k] = x0 - STEP;
                    let m = eval(&inst);
                    inst.rendered[l][v].color.data[k] = x0;
                    let analytic = [gh[l][v].color[k], gr[l][v].color[k], gt[l][v].color[k]];
                    for (t, name) in ["hierarchical", "reconstruction", "total"].iter().enumerate() {
                        let numeric = (p[t] - m[t]) / (2.0 * STEP);
                        report.record(|| format!("instance {inst_id} {name} level {l} view {v} color[{k}]"), analytic[t], numeric);
                    }
                }
                for k in 0..w * h {
                    let x0 = inst.rendered[l][v].alpha[k];
                    inst.rendered[l][v].alpha[k] = x0 + STEP;
                    let p = eval(&inst);
                    inst.rendered[l][v].alpha[k] = x0 - STEP;
                    let m = eval(&inst);
                    inst.rendered[l][v].alpha[k] = x0;
                    let analytic = [gh[l][v].alpha[k], gr[l][v].alpha[k], gt[l][v].alpha[k]];
                    for (t, name) in ["hierarchical", "reconstruction", "total"].iter().enumerate() {
                        let numeric = (p[t] - m[t]) / (2.0 * STEP);
                        report.record(|| format!("instance {inst_id} {name} level {l} view {v} alpha[{k}]"), analytic[t], numeric);
                    }
                }
            }
        }
    }
    report
}
