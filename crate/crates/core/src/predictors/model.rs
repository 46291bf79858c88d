use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingestion::BinaryFeatureTensor;
use crate::nn::{sigmoid, softplus, Activation, Dense, LstmLayer, Objective, ParamAlloc, SeqInput};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// One trunk, one dense layer, one output for every episode.
    Global,
    /// An independent global model per cohort.
    Separate,
    /// Shared trunk; each cohort has its own dense layer and output.
    MultitaskSepDense,
    /// Shared trunk and dense layer; each cohort has its own output unit.
    MultitaskSharedDense,
}

impl Variant {
    pub fn is_cohort_aware(self) -> bool {
        self != Variant::Global
    }

    pub fn is_multitask(self) -> bool {
        matches!(self, Variant::MultitaskSepDense | Variant::MultitaskSharedDense)
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Global => "global",
            Variant::Separate => "separate",
            Variant::MultitaskSepDense => "multitask_sep_dense",
            Variant::MultitaskSharedDense => "multitask_shared_dense",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadLayout {
    SharedDense,
    SeparateDense,
}

/// Layer sizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Hyper {
    pub trunk: usize,
    pub dense: usize,
}

/// A recurrent trunk feeding `heads` sigmoid outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskNet {
    pub columns: usize,
    pub hyper: Hyper,
    pub heads: usize,
    pub layout: HeadLayout,
    pub trunk: LstmLayer,
    /// One entry for a shared dense layer, otherwise one per head.
    pub dense: Vec<Dense>,
    pub outputs: Vec<Dense>,
    pub n_params: usize,
}

impl RiskNet {
    pub fn new(columns: usize, hyper: Hyper, heads: usize, layout: HeadLayout) -> Result<Self> {
        if columns == 0 || hyper.trunk == 0 || hyper.dense == 0 || heads == 0 {
            return Err(Error::invalid(format!("degenerate network: {columns} columns, {hyper:?}, {heads} heads")));
        }
        let mut alloc = ParamAlloc::default();
        let trunk = LstmLayer::new(columns, hyper.trunk, Activation::Relu, &mut alloc);
        let (dense, outputs) = match layout {
            HeadLayout::SharedDense => {
                let d = vec![Dense::new(hyper.trunk, hyper.dense, &mut alloc)];
                let o = (0..heads).map(|_| Dense::new(hyper.dense, 1, &mut alloc)).collect();
                (d, o)
            }
            HeadLayout::SeparateDense => {
                let mut d = Vec::with_capacity(heads);
                let mut o = Vec::with_capacity(heads);
                for _ in 0..heads {
                    d.push(Dense::new(hyper.trunk, hyper.dense, &mut alloc));
                    o.push(Dense::new(hyper.dense, 1, &mut alloc));
                }
                (d, o)
            }
        };
        Ok(Self { columns, hyper, heads, layout, trunk, dense, outputs, n_params: alloc.len() })
    }

    pub fn init_params(&self, seed: u64) -> Vec<f64> {
        let mut rng = seed::rng(seed);
        let mut p = vec![0.0; self.n_params];
        self.trunk.init(&mut p, &mut rng);
        for (i, o) in self.outputs.iter().enumerate() {
            if let Some(d) = self.dense.get(i) {
                d.init(&mut p, &mut rng);
            }
            o.init(&mut p, &mut rng);
        }
        p
    }

    fn dense_for(&self, head: usize) -> &Dense {
        match self.layout {
            HeadLayout::SharedDense => &self.dense[0],
            HeadLayout::SeparateDense => &self.dense[head],
        }
    }

    /// Parameter index ranges owned by `head` alone.
    pub fn head_ranges(&self, head: usize) -> Vec<std::ops::Range<usize>> {
        let o = &self.outputs[head];
        let mut r = vec![o.w.clone(), o.b.clone()];
        if self.layout == HeadLayout::SeparateDense {
            r.push(self.dense[head].w.clone());
            r.push(self.dense[head].b.clone());
        }
        r
    }

    pub fn check(&self, x: &BinaryFeatureTensor) -> Result<()> {
        if x.columns != self.columns || x.active.len() != x.hours || x.hours == 0 {
            return Err(Error::shape(format!("{} columns", self.columns), format!("{}x{}", x.hours, x.columns)));
        }
        Ok(())
    }

    /// Pre-sigmoid output of `head`.
    pub fn logit(&self, p: &[f64], x: &BinaryFeatureTensor, head: usize) -> f64 {
        let h = self.trunk.forward(p, SeqInput::Sparse(&x.active));
        let mut z = self.dense_for(head).forward(p, h.last_h());
        z.iter_mut().for_each(|v| *v = v.max(0.0));
        self.outputs[head].forward(p, &z)[0]
    }

    pub fn probability(&self, p: &[f64], x: &BinaryFeatureTensor, head: usize) -> f64 {
        sigmoid(self.logit(p, x, head))
    }
}

fn bce_with_logits(logit: f64, label: bool) -> f64 {
    softplus(logit) - if label { logit } else { 0.0 }
}

/// A labelled episode routed to one head.
#[derive(Debug, Clone, Copy)]
pub struct RiskExample<'a> {
    pub tensor: &'a BinaryFeatureTensor,
    pub label: bool,
    pub head: usize,
}

/// Binary cross-entropy of each example through its own head only.
pub struct RiskObjective<'a> {
    pub net: &'a RiskNet,
}

impl<'a> Objective for RiskObjective<'a> {
    type Example = RiskExample<'a>;

    fn n_params(&self) -> usize {
        self.net.n_params
    }

    fn loss(&self, p: &[f64], ex: &RiskExample<'a>) -> f64 {
        bce_with_logits(self.net.logit(p, ex.tensor, ex.head), ex.label)
    }

    fn loss_grad(&self, p: &[f64], ex: &RiskExample<'a>, scale: f64, grad: &mut [f64]) -> f64 {
        let net = self.net;
        let input = SeqInput::Sparse(&ex.tensor.active);
        let cache = net.trunk.forward(p, input);
        let h = cache.last_h();
        let dense = net.dense_for(ex.head);
        let mut z = dense.forward(p, h);
        z.iter_mut().for_each(|v| *v = v.max(0.0));
        let out = &net.outputs[ex.head];
        let logit = out.forward(p, &z)[0];
        let y = if ex.label { 1.0 } else { 0.0 };
        let dlogit = scale * (sigmoid(logit) - y);

        let mut dz = vec![0.0; z.len()];
        out.backward(p, &z, &[dlogit], grad, Some(&mut dz));
        for (d, &v) in dz.iter_mut().zip(&z) {
            if v <= 0.0 {
                *d = 0.0;
            }
        }
        let mut dh = vec![0.0; h.len()];
        dense.backward(p, h, &dz, grad, Some(&mut dh));
        net.trunk.backward(p, input, &cache, None, &dh, grad, None);
        bce_with_logits(logit, ex.label)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_tensor(hours: usize, columns: usize, seed_: u64) -> BinaryFeatureTensor {
        let mut rng = seed::rng(seed_);
        let active = (0..hours)
            .map(|_| (0..columns as u32).filter(|_| rng.random_bool(0.4)).collect())
            .collect();
        BinaryFeatureTensor { hours, columns, active }
    }

    #[test]
    fn gradient_matches_central_differences() {
        for layout in [HeadLayout::SharedDense, HeadLayout::SeparateDense] {
            let net = RiskNet::new(4, Hyper { trunk: 3, dense: 3 }, 2, layout).unwrap();
            assert!(net.n_params <= 500);
            let obj = RiskObjective { net: &net };
            for s in 0..4 {
                // Positive biases keep the ReLUs away from their kinks.
                let mut p = net.init_params(s);
                for v in p[net.trunk.b.clone()].iter_mut() {
                    *v += 0.3;
                }
                let x = random_tensor(3, 4, 50 + s);
                let ex = RiskExample { tensor: &x, label: s % 2 == 0, head: (s % 2) as usize };
                let mut g = vec![0.0; p.len()];
                obj.loss_grad(&p, &ex, 1.0, &mut g);
                let h = 1e-5;
                for i in 0..p.len() {
                    let mut q = p.clone();
                    q[i] += h;
                    let lp = obj.loss(&q, &ex);
                    q[i] -= 2.0 * h;
                    let lm = obj.loss(&q, &ex);
                    let num = (lp - lm) / (2.0 * h);
                    let err = (num - g[i]).abs();
                    assert!(err / num.abs().max(g[i].abs()).max(1e-8) < 1e-4 || err < 1e-9, "{layout:?} {i}: {} vs {num}", g[i]);
                }
            }
        }
    }

    #[test]
    fn other_heads_get_exactly_zero_gradient() {
        for layout in [HeadLayout::SharedDense, HeadLayout::SeparateDense] {
            let net = RiskNet::new(6, Hyper { trunk: 4, dense: 3 }, 3, layout).unwrap();
            let p = net.init_params(1);
            let obj = RiskObjective { net: &net };
            let xs: Vec<BinaryFeatureTensor> = (0..8).map(|s| random_tensor(5, 6, s)).collect();
            let mut g = vec![0.0; p.len()];
            for x in &xs {
                obj.loss_grad(&p, &RiskExample { tensor: x, label: true, head: 1 }, 0.125, &mut g);
            }
            for k in [0, 2] {
                for r in net.head_ranges(k) {
                    assert!(g[r].iter().all(|&v| v == 0.0));
                }
            }
            assert!(net.head_ranges(1).into_iter().any(|r| g[r].iter().any(|&v| v != 0.0)));
        }
    }

    #[test]
    fn one_head_layouts_coincide() {
        let x = random_tensor(4, 5, 3);
        let h = Hyper { trunk: 4, dense: 3 };
        let a = RiskNet::new(5, h, 1, HeadLayout::SharedDense).unwrap();
        let b = RiskNet::new(5, h, 1, HeadLayout::SeparateDense).unwrap();
        assert_eq!(a.n_params, b.n_params);
        let p = a.init_params(9);
        assert_eq!(p, b.init_params(9));
        assert_eq!(a.probability(&p, &x, 0), b.probability(&p, &x, 0));
    }
}
