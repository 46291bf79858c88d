use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{sigmoid, uniform_fill, Activation, ParamAlloc};

/// Input sequence fed to an [`LstmLayer`].
#[derive(Debug, Clone, Copy)]
pub enum SeqInput<'a> {
    /// Binary input given as active column indices per step.
    Sparse(&'a [Vec<u32>]),
    /// The same dense vector at every one of `steps` steps.
    Repeated { x: &'a [f64], steps: usize },
}

impl SeqInput<'_> {
    pub fn steps(&self) -> usize {
        match self {
            SeqInput::Sparse(s) => s.len(),
            SeqInput::Repeated { steps, .. } => *steps,
        }
    }
}

/// One LSTM layer with gate order (input, forget, candidate, output).
///
/// `wx` is stored input-major (`input x 4H`) and `wh` hidden-major
/// (`H x 4H`), so a sparse input adds whole contiguous rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmLayer {
    pub input: usize,
    pub hidden: usize,
    pub activation: Activation,
    pub wx: Range<usize>,
    pub wh: Range<usize>,
    pub b: Range<usize>,
}

/// Forward activations kept for backpropagation.
#[derive(Debug, Clone)]
pub struct LstmCache {
    pub steps: usize,
    pub hidden: usize,
    /// `(steps + 1) x H`, row 0 is the zero initial state.
    pub h: Vec<f64>,
    pub c: Vec<f64>,
    /// `steps x 4H` post-nonlinearity gate values.
    pub gates: Vec<f64>,
    /// `steps x H` activation of the cell state.
    pub act_c: Vec<f64>,
}

impl LstmCache {
    pub fn h_at(&self, t: usize) -> &[f64] {
        &self.h[(t + 1) * self.hidden..(t + 2) * self.hidden]
    }

    pub fn last_h(&self) -> &[f64] {
        &self.h[self.steps * self.hidden..]
    }
}

#[inline]
fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[inline]
fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

impl LstmLayer {
    pub fn new(input: usize, hidden: usize, activation: Activation, alloc: &mut ParamAlloc) -> Self {
        Self {
            input,
            hidden,
            activation,
            wx: alloc.take(input * 4 * hidden),
            wh: alloc.take(hidden * 4 * hidden),
            b: alloc.take(4 * hidden),
        }
    }

    pub fn n_params(&self) -> usize {
        self.wx.len() + self.wh.len() + self.b.len()
    }

    /// Uniform fan-in scaled weights, zero biases except forget gate = 1.
    pub fn init<R: Rng>(&self, p: &mut [f64], rng: &mut R) {
        uniform_fill(&mut p[self.wx.clone()], (3.0 / self.input as f64).sqrt(), rng);
        uniform_fill(&mut p[self.wh.clone()], (3.0 / self.hidden as f64).sqrt(), rng);
        let h = self.hidden;
        let b = &mut p[self.b.clone()];
        b.fill(0.0);
        b[h..2 * h].fill(1.0);
    }

    pub fn forward(&self, p: &[f64], input: SeqInput<'_>) -> LstmCache {
        let h = self.hidden;
        let h4 = 4 * h;
        let steps = input.steps();
        let wx = &p[self.wx.clone()];
        let wh = &p[self.wh.clone()];
        let mut base = p[self.b.clone()].to_vec();
        if let SeqInput::Repeated { x, .. } = input {
            for (j, &xj) in x.iter().enumerate() {
                if xj != 0.0 {
                    axpy(xj, &wx[j * h4..(j + 1) * h4], &mut base);
                }
            }
        }
        let mut cache = LstmCache {
            steps,
            hidden: h,
            h: vec![0.0; (steps + 1) * h],
            c: vec![0.0; (steps + 1) * h],
            gates: vec![0.0; steps * h4],
            act_c: vec![0.0; steps * h],
        };
        let mut z = vec![0.0; h4];
        for t in 0..steps {
            z.copy_from_slice(&base);
            if let SeqInput::Sparse(cols) = input {
                for &c in &cols[t] {
                    let c = c as usize;
                    axpy(1.0, &wx[c * h4..(c + 1) * h4], &mut z);
                }
            }
            {
                let hp = &cache.h[t * h..(t + 1) * h];
                for (j, &hj) in hp.iter().enumerate() {
                    if hj != 0.0 {
                        axpy(hj, &wh[j * h4..(j + 1) * h4], &mut z);
                    }
                }
            }
            let gates = &mut cache.gates[t * h4..(t + 1) * h4];
            for k in 0..h {
                gates[k] = sigmoid(z[k]);
                gates[h + k] = sigmoid(z[h + k]);
                gates[2 * h + k] = self.activation.apply(z[2 * h + k]);
                gates[3 * h + k] = sigmoid(z[3 * h + k]);
            }
            let (prev, next) = cache.c.split_at_mut((t + 1) * h);
            let c_prev = &prev[t * h..];
            let c_next = &mut next[..h];
            let act_c = &mut cache.act_c[t * h..(t + 1) * h];
            let h_next = &mut cache.h[(t + 1) * h..(t + 2) * h];
            for k in 0..h {
                let c = gates[h + k] * c_prev[k] + gates[k] * gates[2 * h + k];
                c_next[k] = c;
                act_c[k] = self.activation.apply(c);
                h_next[k] = gates[3 * h + k] * act_c[k];
            }
        }
        cache
    }

    /// Backpropagation through time.
    ///
    /// `dh_seq` (optional, `steps x H`) holds loss gradients w.r.t. each
    /// step's output, `dh_last` the gradient w.r.t. the final hidden state.
    /// Parameter gradients are added into `grad`. For a repeated dense input
    /// the gradient w.r.t. that input vector is added into `dx`.
    pub fn backward(
        &self,
        p: &[f64],
        input: SeqInput<'_>,
        cache: &LstmCache,
        dh_seq: Option<&[f64]>,
        dh_last: &[f64],
        grad: &mut [f64],
        dx: Option<&mut [f64]>,
    ) {
        let h = self.hidden;
        let h4 = 4 * h;
        let wx = &p[self.wx.clone()];
        let wh = &p[self.wh.clone()];
        let mut dh_next = dh_last.to_vec();
        let mut dc_next = vec![0.0; h];
        let mut dz = vec![0.0; h4];
        let mut dz_sum = vec![0.0; h4];
        let mut dh = vec![0.0; h];

        for t in (0..cache.steps).rev() {
            dh.copy_from_slice(&dh_next);
            if let Some(seq) = dh_seq {
                axpy(1.0, &seq[t * h..(t + 1) * h], &mut dh);
            }
            let gates = &cache.gates[t * h4..(t + 1) * h4];
            let act_c = &cache.act_c[t * h..(t + 1) * h];
            let c_prev = &cache.c[t * h..(t + 1) * h];
            for k in 0..h {
                let (i, f, g, o) = (gates[k], gates[h + k], gates[2 * h + k], gates[3 * h + k]);
                let dc = dc_next[k] + dh[k] * o * self.activation.grad_from_output(act_c[k]);
                dz[k] = dc * g * i * (1.0 - i);
                dz[h + k] = dc * c_prev[k] * f * (1.0 - f);
                dz[2 * h + k] = dc * i * self.activation.grad_from_output(g);
                dz[3 * h + k] = dh[k] * act_c[k] * o * (1.0 - o);
                dc_next[k] = dc * f;
            }

            axpy(1.0, &dz, &mut dz_sum);
            match input {
                SeqInput::Sparse(cols) => {
                    let gwx = &mut grad[self.wx.clone()];
                    for &c in &cols[t] {
                        let c = c as usize;
                        axpy(1.0, &dz, &mut gwx[c * h4..(c + 1) * h4]);
                    }
                }
                SeqInput::Repeated { .. } => {}
            }

            let h_prev = &cache.h[t * h..(t + 1) * h];
            let gwh = &mut grad[self.wh.clone()];
            for j in 0..h {
                if h_prev[j] != 0.0 {
                    axpy(h_prev[j], &dz, &mut gwh[j * h4..(j + 1) * h4]);
                }
                dh_next[j] = dot(&wh[j * h4..(j + 1) * h4], &dz);
            }
        }

        axpy(1.0, &dz_sum, &mut grad[self.b.clone()]);
        if let SeqInput::Repeated { x, .. } = input {
            let gwx = &mut grad[self.wx.clone()];
            for (j, &xj) in x.iter().enumerate() {
                if xj != 0.0 {
                    axpy(xj, &dz_sum, &mut gwx[j * h4..(j + 1) * h4]);
                }
            }
            if let Some(dx) = dx {
                for (j, d) in dx.iter_mut().enumerate() {
                    *d += dot(&wx[j * h4..(j + 1) * h4], &dz_sum);
                }
            }
        }
    }
}
