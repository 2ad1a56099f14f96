//! Named flat parameter store and matching gradient buffers.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};

pub type ParamId = usize;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    /// Normalization parameters are excluded from weight decay.
    pub no_decay: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    pub tensors: Vec<Tensor>,
}

pub enum Init {
    Zeros,
    Ones,
    TruncNormal(f64),
    Const(f64),
}

impl ParamStore {
    pub fn add(&mut self, name: &str, shape: &[usize], init: Init, no_decay: bool, rng: &mut impl Rng) -> ParamId {
        let n: usize = shape.iter().product();
        let data = match init {
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
            Init::Const(v) => vec![v; n],
            Init::TruncNormal(std) => {
                let dist = Normal::new(0.0, std).expect("valid std");
                (0..n)
                    .map(|_| loop {
                        let v: f64 = dist.sample(rng);
                        if v.abs() <= 2.0 * std {
                            break v;
                        }
                    })
                    .collect()
            }
        };
        self.tensors.push(Tensor {
            name: name.to_string(),
            shape: shape.to_vec(),
            data,
            no_decay,
        });
        self.tensors.len() - 1
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.tensors.iter().position(|t| t.name == name)
    }

    pub fn mat(&self, id: ParamId) -> ArrayView2<'_, f64> {
        let t = &self.tensors[id];
        ArrayView2::from_shape((t.shape[0], t.shape[1]), &t.data).expect("2-D parameter")
    }

    pub fn vec(&self, id: ParamId) -> ArrayView1<'_, f64> {
        ArrayView1::from(&self.tensors[id].data[..])
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn zero_grads(&self) -> Grads {
        Grads {
            data: self.tensors.iter().map(|t| vec![0.0; t.data.len()]).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.data.iter().all(|v| v.is_finite()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Grads {
    pub data: Vec<Vec<f64>>,
}

impl Grads {
    pub fn add_mat(&mut self, id: ParamId, g: &Array2<f64>) {
        let dst = &mut self.data[id];
        for (d, s) in dst.iter_mut().zip(g.iter()) {
            *d += s;
        }
    }

    pub fn add_vec(&mut self, id: ParamId, g: &Array1<f64>) {
        for (d, s) in self.data[id].iter_mut().zip(g.iter()) {
            *d += s;
        }
    }

    /// Accumulate the column sums of `g` (bias gradient).
    pub fn add_col_sums(&mut self, id: ParamId, g: &Array2<f64>) {
        self.add_vec(id, &g.sum_axis(Axis(0)));
    }

    pub fn add_assign(&mut self, other: &Grads) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().flatten().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, s: f64) {
        for v in self.data.iter_mut().flatten() {
            *v *= s;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().flatten().all(|v| v.is_finite())
    }
}
