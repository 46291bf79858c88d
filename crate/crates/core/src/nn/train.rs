use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::Adam;
use crate::error::{Error, Result};
use crate::seed;

/// A differentiable per-example loss over a flat parameter vector.
pub trait Objective {
    type Example: ?Sized;

    fn n_params(&self) -> usize;

    /// Returns the example's loss and adds `scale * dloss/dparams` into `grad`.
    fn loss_grad(&self, params: &[f64], example: &Self::Example, scale: f64, grad: &mut [f64]) -> f64;

    fn loss(&self, params: &[f64], example: &Self::Example) -> f64;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

/// Per-epoch mean losses.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainCurve {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    /// 1-based epoch whose weights were kept.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl TrainCurve {
    pub fn epochs(&self) -> usize {
        self.train_loss.len()
    }

    pub fn best_val_loss(&self) -> f64 {
        self.val_loss[self.best_epoch - 1]
    }
}

/// Stops once the monitored loss has not strictly improved on its best for
/// `patience` consecutive epochs.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    epoch: usize,
    stale: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StopCheck {
    pub improved: bool,
    pub stop: bool,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self { patience, best: f64::INFINITY, best_epoch: 0, epoch: 0, stale: 0 }
    }

    pub fn observe(&mut self, loss: f64) -> StopCheck {
        self.epoch += 1;
        let improved = loss < self.best;
        if improved {
            self.best = loss;
            self.best_epoch = self.epoch;
            self.stale = 0;
        } else {
            self.stale += 1;
        }
        StopCheck { improved, stop: self.stale >= self.patience }
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}

/// Mini-batch Adam with per-epoch shuffling, early stopping on the
/// validation loss (training loss when `val` is empty) and restoration of
/// the best weights.
pub fn fit<O: Objective>(
    obj: &O,
    params: &mut [f64],
    train: &[&O::Example],
    val: &[&O::Example],
    opts: &FitOptions,
) -> Result<TrainCurve> {
    if train.is_empty() {
        return Err(Error::InsufficientData("no training examples".into()));
    }
    if opts.batch_size == 0 || opts.max_epochs == 0 {
        return Err(Error::invalid("batch_size and max_epochs must be positive"));
    }
    let n = obj.n_params();
    let mut adam = Adam::new(n, opts.learning_rate);
    let mut grad = vec![0.0; n];
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut stopper = EarlyStopping::new(opts.patience.max(1));
    let mut best = params.to_vec();
    let mut curve = TrainCurve::default();

    for epoch in 0..opts.max_epochs {
        order.shuffle(&mut seed::derived_rng(opts.seed, epoch as u64));
        let mut total = 0.0;
        for batch in order.chunks(opts.batch_size) {
            grad.fill(0.0);
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                total += obj.loss_grad(params, train[i], scale, &mut grad);
            }
            if !total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Numerical(format!(
                    "non-finite training loss in epoch {} (learning rate {} too high or degenerate data)",
                    epoch + 1,
                    opts.learning_rate
                )));
            }
            adam.step(params, &grad);
        }
        let train_loss = total / train.len() as f64;
        let val_loss = if val.is_empty() {
            train_loss
        } else {
            val.iter().map(|ex| obj.loss(params, ex)).sum::<f64>() / val.len() as f64
        };
        if !val_loss.is_finite() {
            return Err(Error::Numerical(format!("non-finite validation loss in epoch {}", epoch + 1)));
        }
        log::debug!("epoch {}: train {train_loss:.6} val {val_loss:.6}", epoch + 1);
        curve.train_loss.push(train_loss);
        curve.val_loss.push(val_loss);
        let check = stopper.observe(val_loss);
        if check.improved {
            best.copy_from_slice(params);
        }
        if check.stop {
            curve.stopped_early = true;
            break;
        }
    }
    curve.best_epoch = stopper.best_epoch();
    params.copy_from_slice(&best);
    Ok(curve)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn patience_six_after_plateau() {
        let losses = [5.0, 4.0, 3.0, 3.0, 3.0, 3.0, 3.0, 3.0, 3.0, 3.0, 3.0];
        let mut es = EarlyStopping::new(6);
        let stop_at = losses
            .iter()
            .position(|&l| es.observe(l).stop)
            .map(|i| i + 1);
        assert_eq!(stop_at, Some(9));
        assert_eq!(es.best_epoch(), 3);
    }

    #[test]
    fn improvement_resets_patience() {
        let mut es = EarlyStopping::new(2);
        assert!(!es.observe(1.0).stop);
        assert!(!es.observe(1.5).stop);
        assert!(es.observe(0.5).improved);
        assert!(!es.observe(0.7).stop);
        assert!(es.observe(0.6).stop);
    }

    /// Least squares on y = 3x, one parameter.
    struct Line;

    impl Objective for Line {
        type Example = (f64, f64);
        fn n_params(&self) -> usize {
            1
        }
        fn loss_grad(&self, p: &[f64], ex: &(f64, f64), scale: f64, grad: &mut [f64]) -> f64 {
            let r = p[0] * ex.0 - ex.1;
            grad[0] += scale * 2.0 * r * ex.0;
            r * r
        }
        fn loss(&self, p: &[f64], ex: &(f64, f64)) -> f64 {
            (p[0] * ex.0 - ex.1).powi(2)
        }
    }

    #[test]
    fn fits_and_restores_best() {
        let data: Vec<(f64, f64)> = (0..20).map(|i| (i as f64 / 10.0, 3.0 * i as f64 / 10.0)).collect();
        let refs: Vec<&(f64, f64)> = data.iter().collect();
        let mut p = vec![0.0];
        let opts = FitOptions { learning_rate: 0.1, batch_size: 4, max_epochs: 100, patience: 6, seed: 1 };
        let curve = fit(&Line, &mut p, &refs, &refs[..5], &opts).unwrap();
        assert!((p[0] - 3.0).abs() < 0.1, "{p:?} {curve:?}");
        assert_eq!(curve.train_loss.len(), curve.val_loss.len());
        assert!(curve.epochs() <= 100);
        let best = curve.val_loss.iter().cloned().fold(f64::INFINITY, f64::min);
        assert_eq!(curve.best_val_loss(), best);

        let mut q = vec![0.0];
        fit(&Line, &mut q, &refs, &refs[..5], &opts).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn divergence_is_reported() {
        let data = [(1e200, 1.0)];
        let refs: Vec<&(f64, f64)> = data.iter().collect();
        let mut p = vec![1e200];
        let opts = FitOptions { learning_rate: 0.1, batch_size: 1, max_epochs: 3, patience: 6, seed: 1 };
        assert!(matches!(fit(&Line, &mut p, &refs, &[], &opts), Err(Error::Numerical(_))));
    }
}
