//! Finite-difference gradient checks for the renderer, the losses and the
//! reconstruction transformer.

mod losses;
mod renderer;
mod transformer;

pub use losses::{loss_suite, random_loss_instance, LossInstance};
pub use renderer::{random_render_instance, renderer_suite, RenderInstance};
pub use transformer::{tiny_instance, tiny_model_config, transformer_suite, TransformerInstance};

/// `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

pub const REL_TOL: f64 = 1e-3;

#[derive(Clone, Debug, Default)]
pub struct Report {
    pub suite: String,
    pub checked: usize,
    pub max_rel: f64,
    pub failures: Vec<String>,
}

impl Report {
    pub fn new(suite: &str) -> Self {
        Self {
            suite: suite.to_string(),
            ..Default::default()
        }
    }

    pub fn record(&mut self, what: impl FnOnce() -> String, analytic: f64, numeric: f64) {
        let e = rel_error(analytic, numeric);
        self.checked += 1;
        if e > self.max_rel || e.is_nan() {
            self.max_rel = if e.is_nan() { f64::INFINITY } else { e };
        }
        if !(e <= REL_TOL) {
            self.failures.push(format!("{}: analytic {analytic:.6e} numeric {numeric:.6e} rel {e:.2e}", what()));
        }
    }

    pub fn passed(&self) -> bool {
        self.failures.is_empty() && self.checked > 0
    }

    pub fn merge(&mut self, other: Report) {
        self.checked += other.checked;
        self.max_rel = self.max_rel.max(other.max_rel);
        self.failures.extend(other.failures);
    }

    pub fn summary(&self) -> String {
        format!(
            "{}: {} checks, max rel error {:.2e}, {} failures",
            self.suite,
            self.checked,
            self.max_rel,
            self.failures.len()
        )
    }
}
