use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::config::{Ablation, ModelConfig};
use super::loss::loss_and_grad;
use super::net::Model;
use crate::depth::DepthMap;
use crate::error::{Error, Result};
use crate::eval::depth_metrics;
use crate::io::WeightArchive;
use crate::numerics::{ParamStore, Tensor};
use crate::polar::GuidanceTensor;

/// One training triple.
#[derive(Clone, Copy, Debug)]
pub struct Example<'a> {
    pub guidance: &'a GuidanceTensor,
    pub sensor: &'a DepthMap,
    pub gt: &'a DepthMap,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimizerKind {
    /// Plain gradient descent with a fixed step.
    Sgd,
    Adam,
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        })
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(Error::Config(format!("unknown optimizer `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    /// Rescale the gradient to at most this global norm.
    pub clip: Option<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl OptimizerConfig {
    pub fn sgd(lr: f64) -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Sgd,
            lr,
            clip: Some(1.0),
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn adam(lr: f64) -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Adam,
            clip: Some(1.0),
            ..Self::sgd(lr)
        }
    }
}

#[derive(Clone, Debug)]
pub struct Optimizer {
    pub config: OptimizerConfig,
    step: u64,
    m: ParamStore,
    v: ParamStore,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig) -> Self {
        Optimizer {
            config,
            step: 0,
            m: ParamStore::new(),
            v: ParamStore::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Updates every trainable entry of `params` in place.
    pub fn apply(&mut self, params: &mut ParamStore, grads: &ParamStore) -> Result<()> {
        let c = self.config;
        if !(c.lr >= 0.0) {
            return Err(Error::Config(format!("learning rate {} must be >= 0", c.lr)));
        }
        let norm: f64 = params
            .iter()
            .filter(|(_, p)| p.trainable)
            .map(|(n, _)| grads.get(n).map(Tensor::sum_sq))
            .sum::<Result<f64>>()?
            .sqrt();
        if !norm.is_finite() {
            return Err(Error::NonFinite(format!("gradient norm {norm}")));
        }
        let k = match c.clip {
            Some(max) if norm > max => max / norm,
            _ => 1.0,
        };
        self.step += 1;
        let t = self.step as i32;
        let (bc1, bc2) = (1.0 - c.beta1.powi(t), 1.0 - c.beta2.powi(t));
        for (name, p) in params.iter_mut() {
            if !p.trainable {
                continue;
            }
            let g = grads.get(name)?;
            match c.kind {
                OptimizerKind::Sgd => {
                    for (w, &gv) in p.tensor.data_mut().iter_mut().zip(g.data()) {
                        *w -= c.lr * k * gv;
                    }
                }
                OptimizerKind::Adam => {
                    if !self.m.contains(name) {
                        self.m.set(name, Tensor::zeros(g.dims()));
                        self.v.set(name, Tensor::zeros(g.dims()));
                    }
                    let m = self.m.get_mut(name)?.data_mut();
                    let v = self.v.get_mut(name)?.data_mut();
                    for (((w, &gv), mi), vi) in p.tensor.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                        let gk = gv * k;
                        *mi = c.beta1 * *mi + (1.0 - c.beta1) * gk;
                        *vi = c.beta2 * *vi + (1.0 - c.beta2) * gk * gk;
                        *w -= c.lr * (*mi / bc1) / ((*vi / bc2).sqrt() + c.eps);
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepReport {
    pub loss: f64,
    /// Batch-mean RMSE and MAE of the prediction against gt, mm.
    pub rmse: f64,
    pub mae: f64,
    pub grad_norm: f64,
}

/// Dropout seed of example `j` in the step seeded with `seed`.
fn example_seed(seed: u64, j: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add((j as u64) << 16)
}

/// Mean loss and parameter gradient over a batch.
pub fn batch_gradients(model: &Model, batch: &[Example<'_>], seed: u64) -> Result<(ParamStore, StepReport)> {
    if batch.is_empty() {
        return Err(Error::Domain("empty batch".into()));
    }
    let per: Vec<(ParamStore, f64, f64, f64)> = batch
        .par_iter()
        .enumerate()
        .map(|(j, ex)| {
            let cache = model.forward(ex.guidance, ex.sensor, example_seed(seed, j), true)?;
            let pred = model.prediction(&cache)?;
            let (l, g) = loss_and_grad(&pred, ex.gt)?;
            let m = depth_metrics(&pred, ex.gt)?;
            Ok((model.backward(&cache, &g)?, l, m.rmse, m.mae))
        })
        .collect::<Result<_>>()?;
    let inv = 1.0 / batch.len() as f64;
    let mut grads = model.params.zeros_like();
    let mut report = StepReport {
        loss: 0.0,
        rmse: 0.0,
        mae: 0.0,
        grad_norm: 0.0,
    };
    for (g, l, r, m) in &per {
        grads.accumulate(g)?;
        report.loss += l * inv;
        report.rmse += r * inv;
        report.mae += m * inv;
    }
    grads.scale(inv);
    report.grad_norm = grads.global_norm();
    Ok((grads, report))
}

/// One optimizer step on the batch. On a non-finite loss or gradient the
/// parameters are left untouched and an error is returned.
pub fn train_step(model: &mut Model, batch: &[Example<'_>], optimizer: &mut Optimizer, seed: u64) -> Result<StepReport> {
    let (grads, report) = batch_gradients(model, batch, seed)?;
    if !report.loss.is_finite() {
        return Err(Error::NonFinite(format!("loss {}", report.loss)));
    }
    optimizer.apply(&mut model.params, &grads)?;
    Ok(report)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    pub seed: u64,
}

/// Runs `steps` optimizer steps over shuffled epochs of `examples`.
pub fn train(model: &mut Model, examples: &[Example<'_>], config: &TrainConfig) -> Result<Vec<StepReport>> {
    train_with(model, examples, config, |_, _| {})
}

/// Like [`train`], calling `on_step(step, report)` after every step.
pub fn train_with(
    model: &mut Model,
    examples: &[Example<'_>],
    config: &TrainConfig,
    mut on_step: impl FnMut(usize, &StepReport),
) -> Result<Vec<StepReport>> {
    if examples.is_empty() || config.batch_size == 0 {
        return Err(Error::Domain("training needs examples and a positive batch size".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = Vec::new();
    let mut optimizer = Optimizer::new(config.optimizer);
    let mut log = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        let mut batch = Vec::with_capacity(config.batch_size);
        while batch.len() < config.batch_size {
            if order.is_empty() {
                order = (0..examples.len()).collect();
                order.shuffle(&mut rng);
            }
            batch.push(examples[order.pop().expect("refilled above")]);
        }
        let report = train_step(model, &batch, &mut optimizer, config.seed.wrapping_add(step as u64))?;
        on_step(step, &report);
        log.push(report);
    }
    Ok(log)
}

/// Trains the backbone alone on intensity-only guidance and returns its
/// weights, for use as a pretrained starting point.
pub fn pretrain_foundation(
    config: &ModelConfig,
    examples: &[Example<'_>],
    train_config: &TrainConfig,
    seed: u64,
) -> Result<WeightArchive> {
    let mut cfg = config.clone();
    cfg.ablation = Ablation::NoPpft;
    cfg.freeze_prefixes.clear();
    let mut model = Model::new(cfg, seed)?;
    let substituted: Vec<GuidanceTensor> = examples.iter().map(|e| e.guidance.with_intensity_substitution()).collect();
    let rgb: Vec<Example<'_>> = examples
        .iter()
        .zip(&substituted)
        .map(|(e, g)| Example { guidance: g, ..*e })
        .collect();
    train(&mut model, &rgb, train_config)?;
    WeightArchive::from_params(&model.params)
}
