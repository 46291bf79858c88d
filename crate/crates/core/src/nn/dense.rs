use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{uniform_fill, ParamAlloc};

/// Affine map `y = W^T x + b` with `W` stored input-major (`input x output`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub input: usize,
    pub output: usize,
    pub w: Range<usize>,
    pub b: Range<usize>,
}

impl Dense {
    pub fn new(input: usize, output: usize, alloc: &mut ParamAlloc) -> Self {
        Self { input, output, w: alloc.take(input * output), b: alloc.take(output) }
    }

    pub fn n_params(&self) -> usize {
        self.w.len() + self.b.len()
    }

    pub fn init<R: Rng>(&self, p: &mut [f64], rng: &mut R) {
        uniform_fill(&mut p[self.w.clone()], (3.0 / self.input as f64).sqrt(), rng);
        p[self.b.clone()].fill(0.0);
    }

    pub fn forward_into(&self, p: &[f64], x: &[f64], y: &mut [f64]) {
        y.copy_from_slice(&p[self.b.clone()]);
        let w = &p[self.w.clone()];
        for (j, &xj) in x.iter().enumerate() {
            if xj != 0.0 {
                let row = &w[j * self.output..(j + 1) * self.output];
                for (yk, wk) in y.iter_mut().zip(row) {
                    *yk += xj * wk;
                }
            }
        }
    }

    pub fn forward(&self, p: &[f64], x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.output];
        self.forward_into(p, x, &mut y);
        y
    }

    /// Adds parameter gradients into `grad` and input gradients into `dx`.
    pub fn backward(&self, p: &[f64], x: &[f64], dy: &[f64], grad: &mut [f64], dx: Option<&mut [f64]>) {
        let out = self.output;
        {
            let gw = &mut grad[self.w.clone()];
            for (j, &xj) in x.iter().enumerate() {
                if xj != 0.0 {
                    for (g, d) in gw[j * out..(j + 1) * out].iter_mut().zip(dy) {
                        *g += xj * d;
                    }
                }
            }
        }
        for (g, d) in grad[self.b.clone()].iter_mut().zip(dy) {
            *g += d;
        }
        if let Some(dx) = dx {
            let w = &p[self.w.clone()];
            for (j, dxj) in dx.iter_mut().enumerate() {
                *dxj += w[j * out..(j + 1) * out].iter().zip(dy).map(|(a, b)| a * b).sum::<f64>();
            }
        }
    }
}
