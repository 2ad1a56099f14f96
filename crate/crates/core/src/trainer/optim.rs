use crate::error::{Error, Result};
use crate::model::params::{Grads, ParamStore};

/// Linear warmup from 0 to `peak` over `warmup` steps, then cosine decay to 0
/// at `total`.
pub fn cosine_warmup_lr(step: usize, peak: f64, warmup: usize, total: usize) -> f64 {
    if step < warmup {
        return peak * step as f64 / warmup as f64;
    }
    if step >= total {
        return if total == warmup && step == total { peak } else { 0.0 };
    }
    let progress = (step - warmup) as f64 / (total - warmup) as f64;
    peak * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.95,
            eps: 1e-8,
            weight_decay: 0.05,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamW {
    pub config: AdamWConfig,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
}

impl AdamW {
    pub fn new(params: &ParamStore, config: AdamWConfig) -> Self {
        Self {
            config,
            m: params.tensors.iter().map(|t| vec![0.0; t.data.len()]).collect(),
            v: params.tensors.iter().map(|t| vec![0.0; t.data.len()]).collect(),
            t: 0,
        }
    }

    /// One decoupled-decay step. Tensors flagged `no_decay` skip the decay.
    pub fn step(&mut self, params: &mut ParamStore, grads: &Grads, lr: f64) -> Result<()> {
        if grads.data.len() != params.tensors.len() {
            return Err(Error::invariant("grads", "tensor count differs from parameters"));
        }
        for (t, g) in params.tensors.iter().zip(&grads.data) {
            if g.len() != t.data.len() {
                return Err(Error::invariant("grads", format!("shape mismatch for {}", t.name)));
            }
            if let Some(i) = g.iter().position(|v| !v.is_finite()) {
                return Err(Error::numeric(format!("non-finite gradient in {}[{i}]", t.name)));
            }
        }
        let c = self.config;
        self.t += 1;
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        for (k, t) in params.tensors.iter_mut().enumerate() {
            let decay = if t.no_decay { 0.0 } else { c.weight_decay };
            let (m, v, g) = (&mut self.m[k], &mut self.v[k], &grads.data[k]);
            for i in 0..t.data.len() {
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                t.data[i] -= lr * (mhat / (vhat.sqrt() + c.eps) + decay * t.data[i]);
            }
        }
        Ok(())
    }
}

/// Scale `grads` so their global norm is at most `max_norm`; returns the norm
/// before clipping.
pub fn clip_grad_norm(grads: &mut Grads, max_norm: f64) -> f64 {
    let n = grads.norm();
    if max_norm > 0.0 && n > max_norm {
        grads.scale(max_norm / n);
    }
    n
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::params::{Init, ParamStore};
    use rand::SeedableRng;

    fn store(values: &[f64], no_decay: bool) -> ParamStore {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut s = ParamStore::default();
        let id = s.add("p", &[values.len()], Init::Zeros, no_decay, &mut rng);
        s.tensors[id].data = values.to_vec();
        s
    }

    #[test]
    fn schedule_pins() {
        assert_eq!(cosine_warmup_lr(0, 4e-4, 2000, 10000), 0.0);
        assert_eq!(cosine_warmup_lr(2000, 4e-4, 2000, 10000), 4e-4);
        assert_eq!(cosine_warmup_lr(10000, 4e-4, 2000, 10000), 0.0);
        let mid = cosine_warmup_lr(6000, 4e-4, 2000, 10000);
        assert!((mid - 4e-4 * 0.5).abs() < 1e-18);
        let q = cosine_warmup_lr(4000, 4e-4, 2000, 10000);
        let expect = 4e-4 * (std::f64::consts::PI / 8.0).cos().powi(2);
        assert!((q - expect).abs() < 1e-15);
    }

    #[test]
    fn schedule_continuous_and_nonincreasing_after_warmup() {
        let (w, t) = (100, 1000);
        let near = cosine_warmup_lr(w - 1, 1.0, w, t);
        assert!((cosine_warmup_lr(w, 1.0, w, t) - near).abs() <= 1.0 / w as f64 + 1e-12);
        let mut prev = f64::INFINITY;
        for s in w..=t {
            let lr = cosine_warmup_lr(s, 1.0, w, t);
            assert!(lr <= prev);
            prev = lr;
        }
    }

    #[test]
    fn single_step_closed_form() {
        let (p0, g, lr) = (0.7, 0.3, 1e-3);
        let mut s = store(&[p0], false);
        let mut opt = AdamW::new(&s, AdamWConfig::default());
        let grads = Grads { data: vec![vec![g]] };
        opt.step(&mut s, &grads, lr).unwrap();
        let m = 0.1 * g / (1.0 - 0.9);
        let v = 0.05 * g * g / (1.0 - 0.95);
        let expect = p0 - lr * (m / (v.sqrt() + 1e-8) + 0.05 * p0);
        assert!((s.tensors[0].data[0] - expect).abs() <= 1e-10);
    }

    #[test]
    fn zero_gradient_zero_decay_is_identity() {
        let mut s = store(&[0.5, -1.5], false);
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut opt = AdamW::new(&s, cfg);
        opt.step(&mut s, &Grads { data: vec![vec![0.0, 0.0]] }, 1e-2).unwrap();
        assert_eq!(s.tensors[0].data, vec![0.5, -1.5]);
    }

    #[test]
    fn decay_shrinks_zero_gradient_weight() {
        let lr = 1e-2;
        let mut s = store(&[2.0], false);
        let mut opt = AdamW::new(&s, AdamWConfig::default());
        opt.step(&mut s, &Grads { data: vec![vec![0.0]] }, lr).unwrap();
        assert!((s.tensors[0].data[0] - 2.0 * (1.0 - lr * 0.05)).abs() < 1e-15);
        let mut s = store(&[2.0], true);
        let mut opt = AdamW::new(&s, AdamWConfig::default());
        opt.step(&mut s, &Grads { data: vec![vec![0.0]] }, lr).unwrap();
        assert_eq!(s.tensors[0].data[0], 2.0);
    }

    #[test]
    fn non_finite_gradient_is_numeric_error() {
        let mut s = store(&[1.0], false);
        let mut opt = AdamW::new(&s, AdamWConfig::default());
        let e = opt.step(&mut s, &Grads { data: vec![vec![f64::NAN]] }, 1e-3).unwrap_err();
        assert_eq!(e.exit_code(), 4);
        assert!(e.to_string().contains("p[0]"));
    }

    #[test]
    fn clipping_caps_norm() {
        let mut g = Grads { data: vec![vec![3.0, 4.0]] };
        assert_eq!(clip_grad_norm(&mut g, 1.0), 5.0);
        assert!((g.norm() - 1.0).abs() < 1e-15);
    }
}
