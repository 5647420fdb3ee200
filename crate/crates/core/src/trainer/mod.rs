//! Minibatch training.
//!
//! Each step draws `B` data rows, one fresh noise endpoint and one time per
//! row, evaluates the model at `t` and `1 - t`, and applies one Adam update.
//! All draws come from counter-based streams keyed by the iteration, so a
//! resumed run replays exactly.
//!
//! The batch is split into fixed chunks that may run on different threads;
//! chunk gradients are summed in chunk order, so the result does not depend
//! on the execution mode.

mod checkpoint;

pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::diffcore::{AdamConfig, AdamState, DenseArray};
use crate::error::{Error, Result};
use crate::model::GafModel;
use crate::objective::{self, BridgeBatch, LossBreakdown, LossWeights};
use crate::par;
use crate::rng::{self, Purpose};

/// Samples per gradient work chunk.
pub const TRAIN_CHUNK: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub iterations: u64,
    pub lr: f64,
    pub lambda_res: f64,
    pub lambda_swap: f64,
    pub t_eps: f64,
    pub seed: u64,
    /// Iterations between checkpoints; 0 writes only the final one.
    pub checkpoint_interval: u64,
    pub log_interval: u64,
    pub dataset: String,
    pub weight_decay: f64,
    /// Cosine decay from `lr` to `lr_final` over this many iterations, then
    /// constant. 0 keeps `lr` throughout.
    pub lr_decay_iterations: u64,
    pub lr_final: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 256,
            iterations: 20_000,
            lr: 1e-3,
            lambda_res: objective::DEFAULT_LAMBDA_RES,
            lambda_swap: objective::DEFAULT_LAMBDA_SWAP,
            t_eps: crate::T_EPS,
            seed: 0,
            checkpoint_interval: 0,
            log_interval: 100,
            dataset: "gaussians".into(),
            weight_decay: 0.0,
            lr_decay_iterations: 20_000,
            lr_final: 1e-5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be positive"));
        }
        if !(self.t_eps > 0.0 && self.t_eps < 0.5) {
            return Err(Error::invalid(format!("t_eps {} outside (0, 0.5)", self.t_eps)));
        }
        if !(self.lambda_res >= 0.0 && self.lambda_swap >= 0.0) {
            return Err(Error::invalid("loss weights must be nonnegative"));
        }
        if self.log_interval == 0 {
            return Err(Error::invalid("log_interval must be positive"));
        }
        if !(self.lr_final.is_finite() && self.lr_final >= 0.0 && self.lr_final <= self.lr) {
            return Err(Error::invalid(format!("lr_final {} outside [0, lr]", self.lr_final)));
        }
        self.adam().validate()
    }

    /// Learning rate for the update that completes iteration `iteration + 1`.
    pub fn lr_at(&self, iteration: u64) -> f64 {
        let h = self.lr_decay_iterations;
        if h == 0 {
            return self.lr;
        }
        let frac = iteration.min(h) as f64 / h as f64;
        self.lr_final + (self.lr - self.lr_final) * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            ..AdamConfig::default()
        }
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            lambda_res: self.lambda_res,
            lambda_swap: self.lambda_swap,
        }
    }
}

pub struct Trainer {
    model: GafModel<f32>,
    adam: AdamState<f32>,
    config: TrainConfig,
    iteration: u64,
}

impl Trainer {
    pub fn new(model: GafModel<f32>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let adam = AdamState::new(config.adam(), model.params());
        Ok(Self {
            model,
            adam,
            config,
            iteration: 0,
        })
    }

    pub fn model(&self) -> &GafModel<f32> {
        &self.model
    }

    pub fn into_model(self) -> GafModel<f32> {
        self.model
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn adam(&self) -> &AdamState<f32> {
        &self.adam
    }

    /// Completed update steps.
    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    /// Adds a class head to the model with zero optimizer moments.
    pub fn add_class_head(&mut self) -> usize {
        let before = self.model.params().len();
        let c = self.model.add_class_head();
        self.adam.extend(&self.model.params()[before..]);
        c
    }

    fn check_data(&self, data: &LabeledDataset) -> Result<()> {
        let cfg = self.model.config();
        if data.num_classes() != cfg.num_classes {
            return Err(Error::invalid(format!(
                "dataset has {} classes, model has {}",
                data.num_classes(),
                cfg.num_classes
            )));
        }
        if data.dim() != cfg.data_dim {
            return Err(Error::invalid(format!(
                "dataset has dim {}, model has {}",
                data.dim(),
                cfg.data_dim
            )));
        }
        Ok(())
    }

    /// The batch the next call to [`Trainer::step`] will use.
    pub fn draw_batch(&self, data: &LabeledDataset) -> Result<BridgeBatch<f32>> {
        self.check_data(data)?;
        let (seed, it, b) = (self.config.seed, self.iteration, self.config.batch_size);
        let d = data.dim();
        let mut pick = rng::stream(seed, Purpose::BatchIndex, it, 0);
        let rows: Vec<usize> = (0..b).map(|_| pick.random_range(0..data.len())).collect();
        let mut z_y = Vec::with_capacity(b * d);
        let mut t = Vec::with_capacity(b);
        let (lo, hi) = (self.config.t_eps, 1.0 - self.config.t_eps);
        for i in 0..b as u64 {
            z_y.extend(rng::normal_vec::<f32>(&mut rng::stream(seed, Purpose::Noise, it, i), d));
            t.push(rng::uniform(&mut rng::stream(seed, Purpose::Time, it, i), lo, hi));
        }
        BridgeBatch::new(
            DenseArray::matrix(b, d, z_y)?,
            data.points.select_rows(&rows)?,
            t,
            rows.iter().map(|&r| data.labels[r]).collect(),
        )
    }

    pub fn step(&mut self, data: &LabeledDataset) -> Result<LossBreakdown> {
        let batch = self.draw_batch(data)?;
        self.step_on_batch(&batch)
    }

    /// Batch-mean loss and summed gradient, without updating anything.
    pub fn loss_and_grad(&self, batch: &BridgeBatch<f32>) -> Result<(LossBreakdown, Vec<DenseArray<f32>>)> {
        if batch.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        let weights = self.config.weights();
        let n = batch.len();
        let parts = par::map_chunks(n, TRAIN_CHUNK, |r| {
            let scale = r.len() as f64 / n as f64;
            let rows: Vec<usize> = r.collect();
            let sub = batch.select(&rows)?;
            objective::gaf_loss_and_grad(&self.model, &sub, weights, scale)
        });
        let mut pair = 0.0;
        let mut res = 0.0;
        let mut swap = 0.0;
        let mut acc: Option<Vec<DenseArray<f32>>> = None;
        for part in parts {
            let (l, g) = part.map_err(|e| match e {
                Error::NonFinite { .. } => Error::NonFiniteLoss {
                    iteration: self.iteration,
                    pair: f64::NAN,
                    res: f64::NAN,
                    swap: f64::NAN,
                },
                other => other,
            })?;
            pair += l.pair;
            res += l.res;
            swap += l.swap;
            match &mut acc {
                None => acc = Some(g),
                Some(a) => {
                    for (x, y) in a.iter_mut().zip(&g) {
                        x.data_mut().iter_mut().zip(y.data()).for_each(|(p, q)| *p += q);
                    }
                }
            }
        }
        let report = objective::loss_total(pair, res, swap, weights.lambda_res, weights.lambda_swap)?;
        if ![report.pair, report.res, report.swap, report.total]
            .iter()
            .all(|v| v.is_finite())
        {
            return Err(Error::NonFiniteLoss {
                iteration: self.iteration,
                pair: report.pair,
                res: report.res,
                swap: report.swap,
            });
        }
        Ok((report, acc.expect("nonempty batch")))
    }

    pub fn step_on_batch(&mut self, batch: &BridgeBatch<f32>) -> Result<LossBreakdown> {
        let (report, grads) = self.loss_and_grad(batch)?;
        if grads.iter().any(|g| !g.all_finite()) {
            return Err(Error::NonFiniteLoss {
                iteration: self.iteration,
                pair: report.pair,
                res: report.res,
                swap: report.swap,
            });
        }
        self.adam.config.lr = self.config.lr_at(self.iteration);
        self.adam.update(self.model.params_mut(), &grads)?;
        self.iteration += 1;
        Ok(report)
    }

    /// Steps until `until` iterations are complete, calling `observe` after
    /// every step.
    pub fn run_until(
        &mut self,
        data: &LabeledDataset,
        until: u64,
        mut observe: impl FnMut(&Trainer, &LossBreakdown) -> Result<()>,
    ) -> Result<()> {
        self.check_data(data)?;
        while self.iteration < until {
            let loss = self.step(data)?;
            observe(self, &loss)?;
        }
        Ok(())
    }

    /// Runs to the configured iteration count.
    pub fn train(&mut self, data: &LabeledDataset) -> Result<()> {
        let until = self.config.iterations;
        self.run_until(data, until, |_, _| Ok(()))
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            model: self.model.config().clone(),
            train: self.config.clone(),
            iteration: self.iteration,
            names: self.model.param_names().to_vec(),
            params: self.model.params().to_vec(),
            adam: self.adam.config,
            adam_step: self.adam.step_count(),
            adam_m: self.adam.first_moments().to_vec(),
            adam_v: self.adam.second_moments().to_vec(),
        }
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        ckpt.train.validate()?;
        let model = GafModel::from_parts(ckpt.model, ckpt.params)?;
        if model.param_names() != ckpt.names.as_slice() {
            return Err(Error::Format {
                section: "arrays",
                detail: "parameter names do not match the model layout".into(),
            });
        }
        let adam = AdamState::from_parts(ckpt.adam, ckpt.adam_m, ckpt.adam_v, ckpt.adam_step)?;
        if adam.first_moments().len() != model.params().len()
            || adam
                .first_moments()
                .iter()
                .zip(model.params())
                .any(|(m, p)| m.shape() != p.shape())
        {
            return Err(Error::Format {
                section: "arrays",
                detail: "optimizer moments do not match parameters".into(),
            });
        }
        Ok(Self {
            model,
            adam,
            config: ckpt.train,
            iteration: ckpt.iteration,
        })
    }
}

/// CSV header of the training log.
pub const LOG_HEADER: &str = "iter,loss_pair,loss_res,loss_swap,loss_total";

pub fn log_row(iteration: u64, l: &LossBreakdown) -> String {
    format!("{iteration},{},{},{},{}", l.pair, l.res, l.swap, l.total)
}
