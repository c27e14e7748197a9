use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::layers::Tensor;
use super::loss::loss;
use super::network::{backward, forward, input_tensor};
use super::weights::WeightSet;
use crate::error::{Error, Result};
use crate::rd_pipeline::{GroundTruthFrame, RDTensor};
use crate::rng::{self, Purpose};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Range of the per-sample standard deviation of additive input noise.
    pub augment_noise_std: (f64, f64),
    /// Final epochs trained without augmentation.
    pub augment_off_epochs: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    /// Anneal the learning rate to zero over the run on a half cosine;
    /// `false` keeps it constant.
    pub cosine_decay: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            epochs: 10,
            batch_size: 16,
            augment_noise_std: (0.0, 0.05),
            augment_off_epochs: 3,
            lambda1: 0.7,
            lambda2: 0.3,
            cosine_decay: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be at least 1".into()));
        }
        if !(self.lambda1 >= 0.0 && self.lambda2 >= 0.0) {
            return Err(Error::Config("loss weights must be nonnegative".into()));
        }
        if !(self.learning_rate >= 0.0) {
            return Err(Error::Config("learning rate must be nonnegative".into()));
        }
        let (lo, hi) = self.augment_noise_std;
        if !(lo >= 0.0 && hi >= lo) {
            return Err(Error::Config("augment_noise_std must satisfy 0 <= lo <= hi".into()));
        }
        Ok(())
    }
}

/// First and second moment estimates of Adam.
#[derive(Debug, Clone)]
pub struct Adam {
    m: WeightSet,
    v: WeightSet,
    t: i32,
    pub lr: f64,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            m: WeightSet::zeros(),
            v: WeightSet::zeros(),
            t: 0,
            lr,
        }
    }

    pub fn step(&mut self, w: &mut WeightSet, g: &WeightSet) {
        self.t += 1;
        let c1 = 1.0 - ADAM_BETA1.powi(self.t);
        let c2 = 1.0 - ADAM_BETA2.powi(self.t);
        let arrays = w
            .arrays_mut()
            .iter_mut()
            .zip(g.arrays())
            .zip(self.m.arrays_mut().iter_mut().zip(self.v.arrays_mut()));
        for ((wa, ga), (ma, va)) in arrays {
            for i in 0..wa.data.len() {
                let gi = ga.data[i];
                ma.data[i] = ADAM_BETA1 * ma.data[i] + (1.0 - ADAM_BETA1) * gi;
                va.data[i] = ADAM_BETA2 * va.data[i] + (1.0 - ADAM_BETA2) * gi * gi;
                let mh = ma.data[i] / c1;
                let vh = va.data[i] / c2;
                wa.data[i] -= self.lr * mh / (vh.sqrt() + ADAM_EPS);
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub weights: WeightSet,
    /// Mean per-frame loss of every epoch.
    pub loss_trace: Vec<f64>,
    /// Truths dropped over the run for sharing a cell.
    pub duplicates: usize,
}

/// Gradient of the summed loss over `batch` and that summed loss.
pub fn batch_gradient(w: &WeightSet, batch: &[(Tensor, &GroundTruthFrame)], lambda1: f64, lambda2: f64) -> Result<(WeightSet, f64, usize)> {
    let mut g = WeightSet::zeros();
    let mut total = 0.0;
    let mut dups = 0;
    for (x, truth) in batch {
        let (map, cache) = forward(x, w)?;
        let l = loss(&map, truth, lambda1, lambda2)?;
        if !l.total.is_finite() {
            return Err(Error::Numeric(format!("non-finite loss {} on frame {}", l.total, truth.frame)));
        }
        total += l.total;
        dups += l.duplicates;
        g.add_scaled(&backward(w, &cache, &l.grad)?, 1.0);
    }
    Ok((g, total, dups))
}

/// Half-cosine annealing from `base` at step 0 toward 0 at `total`.
pub fn learning_rate_at(base: f64, step: usize, total: usize) -> f64 {
    base * 0.5 * (1.0 + (std::f64::consts::PI * step as f64 / total.max(1) as f64).cos())
}

/// Adam training from seeded initial weights.
pub fn train(dataset: &[(RDTensor, GroundTruthFrame)], cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_from(dataset, cfg, WeightSet::seeded(cfg.seed), |_, _| {})
}

/// Adam training from `init`; `on_epoch(epoch, mean_loss)` runs after
/// every epoch.
pub fn train_from(
    dataset: &[(RDTensor, GroundTruthFrame)],
    cfg: &TrainConfig,
    init: WeightSet,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::Domain("training set is empty".into()));
    }
    let mut w = init;
    let mut adam = Adam::new(cfg.learning_rate);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut duplicates = 0;
    let (lo, hi) = cfg.augment_noise_std;
    let total_steps = cfg.epochs * dataset.len().div_ceil(cfg.batch_size);
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng::stream(cfg.seed, epoch as u64, Purpose::Shuffle));
        let augment = epoch + cfg.augment_off_epochs < cfg.epochs && hi > 0.0;
        let mut aug_rng = rng::stream(cfg.seed, epoch as u64, Purpose::Augment);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<(Tensor, &GroundTruthFrame)> = chunk
                .iter()
                .map(|&i| {
                    let mut x = input_tensor(&dataset[i].0);
                    if augment {
                        let sd = if hi > lo { aug_rng.random_range(lo..hi) } else { lo };
                        if sd > 0.0 {
                            let n = Normal::new(0.0, sd).expect("finite std");
                            x.data.iter_mut().for_each(|v| *v += n.sample(&mut aug_rng));
                        }
                    }
                    (x, &dataset[i].1)
                })
                .collect();
            let (mut g, l, d) = batch_gradient(&w, &batch, cfg.lambda1, cfg.lambda2)?;
            duplicates += d;
            epoch_loss += l;
            g.scale(1.0 / batch.len() as f64);
            if cfg.cosine_decay {
                adam.lr = learning_rate_at(cfg.learning_rate, step, total_steps);
            }
            adam.step(&mut w, &g);
            step += 1;
        }
        let mean = epoch_loss / dataset.len() as f64;
        trace.push(mean);
        on_epoch(epoch, mean);
    }
    if w.values().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("training produced non-finite weights".into()));
    }
    Ok(TrainOutcome {
        weights: w,
        loss_trace: trace,
        duplicates,
    })
}
