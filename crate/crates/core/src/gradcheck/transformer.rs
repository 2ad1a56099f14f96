use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::Report;
use crate::body::BodyMesh;
use crate::gsplat::{GaussianGrads, GaussianSet};
use crate::imaging::Image;
use crate::latent::{bundle_from_images, ViewBundle, ViewLayout};
use crate::model::{Model, ModelConfig};

const STEP: f64 = 1e-5;
const LATENT_STEP: f64 = 1e-3;

/// The gradient-check model: d = 8, one block per stage, 4×4 latents.
pub fn tiny_model_config() -> ModelConfig {
    ModelConfig {
        d: 8,
        heads: 2,
        patch: 2,
        n_intra: 1,
        n_inter: 1,
        n_tokenizer: 1,
        ffn_mult: 2,
        k_win: 1,
        latent_h: 4,
        latent_w: 4,
        n_views: 2,
        ..Default::default()
    }
}

pub struct TransformerInstance {
    pub model: Model,
    pub bundle: ViewBundle,
    pub mesh: BodyMesh,
}

/// Randomized tiny model with random latents and `n_vertices` random points
/// near the origin as the body mesh.
pub fn tiny_instance(seed: u64, n_vertices: usize) -> TransformerInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = tiny_model_config();
    let mut model = Model::new(cfg.clone(), seed).expect("valid config");
    model.randomize(0.5, seed ^ 0x5eed);
    let layout = ViewLayout {
        n_views: cfg.n_views,
        latent_h: cfg.latent_h,
        latent_w: cfg.latent_w,
        elevation: 0.0,
        distance: 2.5,
        focal_ratio: 1.1,
    };
    let (w, h) = layout.image_size();
    let img = Image::filled(w as usize, h as usize, [0.0; 3]);
    let mut bundle = bundle_from_images(&vec![Some(&img); cfg.n_views], &layout).expect("bundle");
    for v in &mut bundle.views {
        for x in &mut v.features.data {
            *x = rng.random_range(-1.0f32..1.0);
        }
    }
    let vertices = (0..n_vertices)
        .map(|_| std::array::from_fn(|_| rng.random_range(-0.6..0.6)))
        .collect();
    let mesh = BodyMesh {
        vertices,
        faces: Vec::new(),
        labels: vec![0; n_vertices],
    };
    TransformerInstance { model, bundle, mesh }
}

struct AttrWeights(GaussianGrads);

impl AttrWeights {
    fn random(n: usize, rng: &mut impl Rng) -> Self {
        let mut g = GaussianGrads::zeros(n);
        let mut r = || rng.sample::<f64, _>(StandardNormal);
        for i in 0..n {
            g.means[i] = std::array::from_fn(|_| r());
            g.rotations[i] = std::array::from_fn(|_| r());
            g.scales[i] = std::array::from_fn(|_| r());
            g.colors[i] = std::array::from_fn(|_| r());
            g.opacities[i] = r();
        }
        Self(g)
    }

    /// `Σ w ⊙ (a - b)`, elementwise so that cancellation happens per value.
    fn diff(&self, a: &GaussianSet, b: &GaussianSet) -> f64 {
        let w = &self.0;
        let mut s = 0.0;
        for i in 0..a.len() {
            for k in 0..3 {
                s += w.means[i][k] * (a.means[i][k] - b.means[i][k]);
                s += w.scales[i][k] * (a.scales[i][k] - b.scales[i][k]);
                s += w.colors[i][k] * (a.colors[i][k] - b.colors[i][k]);
            }
            for k in 0..4 {
                s += w.rotations[i][k] * (a.rotations[i][k] - b.rotations[i][k]);
            }
            s += w.opacities[i] * (a.opacities[i] - b.opacities[i]);
        }
        s
    }
}

/// Every parameter scalar and every latent input of the tiny model, checked
/// through the head activations with a random linear functional of the
/// decoded Gaussian attributes.
pub fn transformer_suite(seed: u64, n_vertices: usize) -> Report {
    let mut report = Report::new("transformer");
    let TransformerInstance { mut model, mut bundle, mesh } = tiny_instance(seed, n_vertices);
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(17));
    let out = model.forward(&bundle, Some(&mesh)).expect("forward");
    let weights = AttrWeights::random(out.gaussians.len(), &mut rng);
    let d_raw = model.decode_backward(&out, &weights.0);
    let (grads, inputs) = model.backward(&out.cache, &d_raw);

    for t in 0..model.params.tensors.len() {
        for i in 0..model.params.tensors[t].data.len() {
            let x0 = model.params.tensors[t].data[i];
            model.params.tensors[t].data[i] = x0 + STEP;
            let a = model.forward(&bundle, Some(&mesh)).expect("forward").gaussians;
            model.params.tensors[t].data[i] = x0 - STEP;
            let b = model.forward(&bundle, Some(&mesh)).expect("forward").gaussians;
            model.params.tensors[t].data[i] = x0;
            let numeric = weights.diff(&a, &b) / (2.0 * STEP);
            let name = &model.params.tensors[t].name;
            report.record(|| format!("{name}[{i}]"), grads.data[t][i], numeric);
        }
    }

    for v in 0..bundle.views.len() {
        for i in 0..bundle.views[v].features.data.len() {
            let x0 = bundle.views[v].features.data[i];
            let hi = (x0 as f64 + LATENT_STEP) as f32;
            let lo = (x0 as f64 - LATENT_STEP) as f32;
            bundle.views[v].features.data[i] = hi;
            let a = model.forward(&bundle, Some(&mesh)).expect("forward").gaussians;
            bundle.views[v].features.data[i] = lo;
            let b = model.forward(&bundle, Some(&mesh)).expect("forward").gaussians;
            bundle.views[v].features.data[i] = x0;
            let numeric = weights.diff(&a, &b) / (hi as f64 - lo as f64);
            report.record(|| format!("latent view {v}[{i}]"), inputs.latents[v][i], numeric);
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiny_model_gradients_match_finite_differences() {
        let r = transformer_suite(3, 10);
        println!("{}", r.summary());
        assert!(r.passed(), "{}\n{}", r.summary(), r.failures.iter().take(20).cloned().collect::<Vec<_>>().join("\n"));
    }

    #[test]
    fn without_prior_tokenizer_gets_no_gradient() {
        let inst = tiny_instance(5, 10);
        let out = inst.model.forward(&inst.bundle, None).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = AttrWeights::random(out.gaussians.len(), &mut rng);
        let (g, _) = inst.model.backward(&out.cache, &inst.model.decode_backward(&out, &w.0));
        for (t, gd) in inst.model.params.tensors.iter().zip(&g.data) {
            let kv_path = t.name.starts_with("inter") && (t.name.contains("ln_kv") || t.name.contains("attn.k") || t.name.contains("attn.v"));
            if t.name.starts_with("tokenizer") || kv_path {
                assert!(gd.iter().all(|v| *v == 0.0), "{}", t.name);
            }
        }
        assert_eq!(out.score_evals, vec![0]);
    }
}
