//! Sequence-to-sequence LSTM autoencoder producing fixed-length episode
//! embeddings.
//!
//! The encoder reads the binary tensor hour by hour; its hidden state after
//! the last hour is the embedding. The decoder receives the embedding at
//! every step and a shared linear readout reconstructs each hour's columns.
//! Training minimizes the mean squared error over all `hours x columns`
//! cells, zeros included.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingestion::BinaryFeatureTensor;
use crate::nn::{fit, Activation, Dense, FitOptions, LstmLayer, Objective, ParamAlloc, SeqInput, TrainCurve};
use crate::seed;

pub type Embedding = Vec<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AutoencoderArch {
    pub hours: usize,
    pub columns: usize,
    pub embedding: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutoencoderConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
}

impl Default for AutoencoderConfig {
    fn default() -> Self {
        Self { learning_rate: 0.001, batch_size: 128, max_epochs: 100, patience: 6 }
    }
}

/// Layer layout over a flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutoencoderNet {
    pub arch: AutoencoderArch,
    pub encoder: LstmLayer,
    pub decoder: LstmLayer,
    pub readout: Dense,
    pub n_params: usize,
}

impl AutoencoderNet {
    pub fn new(arch: AutoencoderArch) -> Result<Self> {
        if arch.embedding == 0 || arch.hours == 0 || arch.columns == 0 {
            return Err(Error::invalid(format!("degenerate autoencoder shape {arch:?}")));
        }
        let mut alloc = ParamAlloc::default();
        let d = arch.embedding;
        let encoder = LstmLayer::new(arch.columns, d, Activation::Tanh, &mut alloc);
        let decoder = LstmLayer::new(d, d, Activation::Tanh, &mut alloc);
        let readout = Dense::new(d, arch.columns, &mut alloc);
        Ok(Self { arch, encoder, decoder, readout, n_params: alloc.len() })
    }

    pub fn init_params(&self, seed: u64) -> Vec<f64> {
        let mut rng = seed::rng(seed);
        let mut p = vec![0.0; self.n_params];
        self.encoder.init(&mut p, &mut rng);
        self.decoder.init(&mut p, &mut rng);
        self.readout.init(&mut p, &mut rng);
        p
    }

    fn check_shape(&self, x: &BinaryFeatureTensor) -> Result<()> {
        let a = &self.arch;
        if x.hours != a.hours || x.columns != a.columns || x.active.len() != a.hours {
            return Err(Error::shape(
                format!("{}x{}", a.hours, a.columns),
                format!("{}x{}", x.hours, x.columns),
            ));
        }
        Ok(())
    }

    pub fn embed(&self, p: &[f64], x: &BinaryFeatureTensor) -> Embedding {
        self.encoder.forward(p, SeqInput::Sparse(&x.active)).last_h().to_vec()
    }

    /// Dense `hours x columns` reconstruction.
    pub fn reconstruct(&self, p: &[f64], x: &BinaryFeatureTensor) -> Vec<Vec<f64>> {
        let e = self.embed(p, x);
        let dec = self.decoder.forward(p, SeqInput::Repeated { x: &e, steps: self.arch.hours });
        (0..self.arch.hours).map(|t| self.readout.forward(p, dec.h_at(t))).collect()
    }

    fn squared_error(y: &mut [f64], active: &[u32]) -> f64 {
        for &c in active {
            y[c as usize] -= 1.0;
        }
        y.iter().map(|r| r * r).sum()
    }
}

impl Objective for AutoencoderNet {
    type Example = BinaryFeatureTensor;

    fn n_params(&self) -> usize {
        self.n_params
    }

    fn loss(&self, p: &[f64], x: &BinaryFeatureTensor) -> f64 {
        let cells = (self.arch.hours * self.arch.columns) as f64;
        let e = self.embed(p, x);
        let dec = self.decoder.forward(p, SeqInput::Repeated { x: &e, steps: self.arch.hours });
        let mut y = vec![0.0; self.arch.columns];
        let mut sse = 0.0;
        for t in 0..self.arch.hours {
            self.readout.forward_into(p, dec.h_at(t), &mut y);
            sse += Self::squared_error(&mut y, &x.active[t]);
        }
        sse / cells
    }

    fn loss_grad(&self, p: &[f64], x: &BinaryFeatureTensor, scale: f64, grad: &mut [f64]) -> f64 {
        let (hours, d) = (self.arch.hours, self.arch.embedding);
        let cells = (hours * self.arch.columns) as f64;
        let input = SeqInput::Sparse(&x.active);
        let enc = self.encoder.forward(p, input);
        let e = enc.last_h().to_vec();
        let dec_in = SeqInput::Repeated { x: &e, steps: hours };
        let dec = self.decoder.forward(p, dec_in);

        let mut y = vec![0.0; self.arch.columns];
        let mut dh_seq = vec![0.0; hours * d];
        let mut sse = 0.0;
        let k = scale * 2.0 / cells;
        for t in 0..hours {
            self.readout.forward_into(p, dec.h_at(t), &mut y);
            sse += Self::squared_error(&mut y, &x.active[t]);
            for r in y.iter_mut() {
                *r *= k;
            }
            self.readout
                .backward(p, dec.h_at(t), &y, grad, Some(&mut dh_seq[t * d..(t + 1) * d]));
        }
        let mut de = vec![0.0; d];
        let zeros = vec![0.0; d];
        self.decoder
            .backward(p, dec_in, &dec, Some(&dh_seq), &zeros, grad, Some(&mut de));
        self.encoder.backward(p, input, &enc, None, &de, grad, None);
        sse / cells
    }
}

/// A trained autoencoder: layout, weights and provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeqAutoencoder {
    pub net: AutoencoderNet,
    pub params: Vec<f64>,
    pub seed: u64,
    pub config: AutoencoderConfig,
}

impl SeqAutoencoder {
    pub fn arch(&self) -> AutoencoderArch {
        self.net.arch
    }

    pub fn embedding_size(&self) -> usize {
        self.net.arch.embedding
    }

    pub fn reconstruction_loss(&self, x: &BinaryFeatureTensor) -> Result<f64> {
        self.net.check_shape(x)?;
        Ok(self.net.loss(&self.params, x))
    }
}

fn common_shape(tensors: &[&BinaryFeatureTensor]) -> Result<(usize, usize)> {
    let first = tensors
        .first()
        .ok_or_else(|| Error::InsufficientData("no training tensors".into()))?;
    for t in tensors {
        if t.hours != first.hours || t.columns != first.columns || t.active.len() != t.hours {
            return Err(Error::shape(
                format!("{}x{}", first.hours, first.columns),
                format!("{}x{}", t.hours, t.columns),
            ));
        }
        if t.active.iter().flatten().any(|&c| c as usize >= t.columns) {
            return Err(Error::invalid("active column index out of range"));
        }
    }
    Ok((first.hours, first.columns))
}

/// Trains an autoencoder with embedding size `embedding`; the returned
/// model holds the weights of the best validation epoch.
pub fn train_autoencoder(
    train: &[&BinaryFeatureTensor],
    val: &[&BinaryFeatureTensor],
    embedding: usize,
    cfg: &AutoencoderConfig,
    seed: u64,
) -> Result<(SeqAutoencoder, TrainCurve)> {
    if embedding == 0 {
        return Err(Error::invalid("embedding size must be at least 1"));
    }
    let (hours, columns) = common_shape(train)?;
    if !val.is_empty() {
        let mut all: Vec<&BinaryFeatureTensor> = val.to_vec();
        all.push(train[0]);
        common_shape(&all)?;
        let train_ptrs: HashSet<*const BinaryFeatureTensor> = train.iter().map(|t| *t as *const _).collect();
        if val.iter().any(|t| train_ptrs.contains(&(*t as *const _))) {
            return Err(Error::invalid("training and validation tensors overlap"));
        }
    }
    let net = AutoencoderNet::new(AutoencoderArch { hours, columns, embedding })?;
    let mut params = net.init_params(seed::derive_seed(seed, 0));
    let opts = FitOptions {
        learning_rate: cfg.learning_rate,
        batch_size: cfg.batch_size,
        max_epochs: cfg.max_epochs,
        patience: cfg.patience,
        seed: seed::derive_seed(seed, 1),
    };
    let curve = fit(&net, &mut params, train, val, &opts)?;
    Ok((SeqAutoencoder { net, params, seed, config: cfg.clone() }, curve))
}

/// Embedding of one tensor: the encoder's final hidden state.
pub fn encode(model: &SeqAutoencoder, tensor: &BinaryFeatureTensor) -> Result<Embedding> {
    model.net.check_shape(tensor)?;
    Ok(model.net.embed(&model.params, tensor))
}

pub fn encode_batch(model: &SeqAutoencoder, tensors: &[&BinaryFeatureTensor]) -> Result<Vec<Embedding>> {
    tensors.iter().map(|t| encode(model, t)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingSizeChoice {
    pub size: usize,
    /// `(size, normalized distance to the chord)` for each candidate.
    pub distances: Vec<(usize, f64)>,
    pub warning: Option<String>,
}

/// Knee rule on `(size, validation loss)` pairs: both axes are min-max
/// normalized and the size farthest from the chord joining the smallest
/// and largest candidates wins; near-ties go to the smaller size.
pub fn select_embedding_size(candidates: &[(usize, f64)]) -> Result<EmbeddingSizeChoice> {
    const TIE: f64 = 1e-12;
    let mut c = candidates.to_vec();
    if c.is_empty() {
        return Err(Error::invalid("no embedding size candidates"));
    }
    if c.iter().any(|(_, l)| !l.is_finite()) {
        return Err(Error::invalid("non-finite candidate loss"));
    }
    c.sort_by_key(|(d, _)| *d);
    c.dedup_by_key(|(d, _)| *d);
    if c.len() < 3 {
        let warning = format!("{} candidate size(s); knee rule needs at least 3, using the smallest", c.len());
        log::warn!("{warning}");
        return Ok(EmbeddingSizeChoice {
            size: c[0].0,
            distances: c.iter().map(|&(d, _)| (d, 0.0)).collect(),
            warning: Some(warning),
        });
    }
    if c.windows(2).all(|w| w[1].1 > w[0].1) {
        let warning = "reconstruction loss increases with embedding size; using the smallest".to_string();
        log::warn!("{warning}");
        return Ok(EmbeddingSizeChoice {
            size: c[0].0,
            distances: c.iter().map(|&(d, _)| (d, 0.0)).collect(),
            warning: Some(warning),
        });
    }
    let (x0, x1) = (c[0].0 as f64, c[c.len() - 1].0 as f64);
    let lo = c.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let hi = c.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let pts: Vec<(f64, f64)> = c
        .iter()
        .map(|&(d, l)| ((d as f64 - x0) / (x1 - x0), (l - lo) / span))
        .collect();
    let (a, b) = (pts[0], pts[pts.len() - 1]);
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let norm = (dx * dx + dy * dy).sqrt();
    let distances: Vec<(usize, f64)> = c
        .iter()
        .zip(&pts)
        .map(|(&(d, _), p)| (d, ((p.0 - a.0) * dy - (p.1 - a.1) * dx).abs() / norm))
        .collect();
    let mut best = distances[0];
    for &cand in &distances[1..] {
        if cand.1 > best.1 + TIE {
            best = cand;
        }
    }
    Ok(EmbeddingSizeChoice { size: best.0, distances, warning: None })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_tensor(hours: usize, columns: usize, density: f64, seed: u64) -> BinaryFeatureTensor {
        let mut rng = seed::rng(seed);
        let active = (0..hours)
            .map(|_| (0..columns as u32).filter(|_| rng.random_bool(density)).collect())
            .collect();
        BinaryFeatureTensor { hours, columns, active }
    }

    #[test]
    fn gradient_matches_central_differences() {
        let net = AutoencoderNet::new(AutoencoderArch { hours: 3, columns: 4, embedding: 2 }).unwrap();
        assert!(net.n_params <= 500);
        for s in 0..3 {
            let p = net.init_params(s);
            let x = random_tensor(3, 4, 0.4, 100 + s);
            let mut grad = vec![0.0; p.len()];
            net.loss_grad(&p, &x, 1.0, &mut grad);
            let h = 1e-4;
            for i in 0..p.len() {
                let mut q = p.clone();
                q[i] += h;
                let lp = net.loss(&q, &x);
                q[i] -= 2.0 * h;
                let lm = net.loss(&q, &x);
                let num = (lp - lm) / (2.0 * h);
                let rel = (num - grad[i]).abs() / num.abs().max(grad[i].abs()).max(1e-8);
                assert!(rel < 1e-4 || (num - grad[i]).abs() < 1e-10, "param {i}: {} vs {num}", grad[i]);
            }
        }
    }

    #[test]
    fn elbow_examples() {
        let c = select_embedding_size(&[(10, 0.50), (50, 0.20), (100, 0.18), (200, 0.17)]).unwrap();
        assert_eq!(c.size, 50);
        assert!(c.warning.is_none());

        let c = select_embedding_size(&[(10, 0.4), (20, 0.3), (30, 0.2), (40, 0.1)]).unwrap();
        assert_eq!(c.size, 10);

        let c = select_embedding_size(&[(64, 0.3)]).unwrap();
        assert_eq!(c.size, 64);
        assert!(c.warning.is_some());

        let c = select_embedding_size(&[(10, 0.1), (20, 0.2), (30, 0.3)]).unwrap();
        assert_eq!(c.size, 10);
        assert!(c.warning.is_some());

        assert!(select_embedding_size(&[]).is_err());
    }

    #[test]
    fn encode_is_deterministic_and_sensitive_to_statics() {
        let net = AutoencoderNet::new(AutoencoderArch { hours: 4, columns: 6, embedding: 3 }).unwrap();
        let model = SeqAutoencoder { params: net.init_params(5), net, seed: 5, config: AutoencoderConfig::default() };
        let mut a = random_tensor(4, 4, 0.5, 1);
        a.columns = 6;
        let mut b = a.clone();
        a.append_static(&[0], 4, 6);
        b.append_static(&[1], 4, 6);
        let ea = encode(&model, &a).unwrap();
        assert_eq!(ea, encode(&model, &a).unwrap());
        assert_eq!(ea.len(), 3);
        assert_ne!(ea, encode(&model, &b).unwrap());

        let batch = encode_batch(&model, &[&a, &b]).unwrap();
        assert_eq!(batch[0], ea);
        assert_eq!(batch[1], encode(&model, &b).unwrap());

        let wrong = random_tensor(5, 6, 0.5, 2);
        assert!(matches!(encode(&model, &wrong), Err(Error::ShapeMismatch { .. })));
        assert_eq!(model.net.reconstruct(&model.params, &a).len(), 4);
    }

    #[test]
    fn all_zero_tensors_reconstruct_to_zero() {
        let zeros: Vec<BinaryFeatureTensor> = (0..16).map(|_| BinaryFeatureTensor::zeros(5, 8)).collect();
        let refs: Vec<&BinaryFeatureTensor> = zeros.iter().collect();
        let cfg = AutoencoderConfig { batch_size: 4, max_epochs: 30, ..Default::default() };
        let (model, curve) = train_autoencoder(&refs[..12], &refs[12..], 2, &cfg, 3).unwrap();
        assert!(curve.best_val_loss() < 1e-3, "{curve:?}");
        assert!(encode(&model, refs[0]).unwrap().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn overlapping_splits_rejected() {
        let x = random_tensor(3, 4, 0.3, 1);
        let cfg = AutoencoderConfig { max_epochs: 1, ..Default::default() };
        assert!(train_autoencoder(&[&x], &[&x], 2, &cfg, 0).is_err());
        assert!(train_autoencoder(&[&x], &[], 0, &cfg, 0).is_err());
    }

    #[test]
    fn training_is_reproducible() {
        let data: Vec<BinaryFeatureTensor> = (0..20).map(|s| random_tensor(4, 6, 0.3, s)).collect();
        let refs: Vec<&BinaryFeatureTensor> = data.iter().collect();
        let cfg = AutoencoderConfig { batch_size: 8, max_epochs: 5, ..Default::default() };
        let (a, ca) = train_autoencoder(&refs[..16], &refs[16..], 3, &cfg, 42).unwrap();
        let (b, cb) = train_autoencoder(&refs[..16], &refs[16..], 3, &cfg, 42).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(ca, cb);
        let (c, _) = train_autoencoder(&refs[..16], &refs[16..], 3, &cfg, 43).unwrap();
        assert_ne!(a.params, c.params);
    }
}
