//! Unsupervised SRNN pre-training: Adam on the teacher-forced negative
//! ELBO with per-epoch shuffling and early stopping on validation loss.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::checkpoint::{self, CheckpointMeta};
use crate::rng::{self, label};
use crate::srnn::{self, SrnnParams};
use crate::synth::Sequence;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            adam: AdamConfig::default(),
            batch_size: 256,
            patience: 50,
            max_epochs: 2000,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        // lr = 0 is allowed: it freezes the weights, which is how plateaus
        // are constructed in tests.
        if !(self.adam.lr >= 0.0 && self.adam.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be >= 0, got {}", self.adam.lr)));
        }
        if self.patience < 1 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.adam.beta1) || !(0.0..1.0).contains(&self.adam.beta2) {
            return Err(Error::Config("Adam betas must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Adam moment estimates for a list of tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl Adam {
    pub fn new(shapes: &[Tensor]) -> Self {
        Adam {
            m: shapes.iter().map(|t| vec![0.0; t.len()]).collect(),
            v: shapes.iter().map(|t| vec![0.0; t.len()]).collect(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One bias-corrected Adam update. Non-finite gradients abort the step
    /// before anything is modified.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor], cfg: &AdamConfig) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.m.len() {
            return Err(Error::Config("parameter, gradient and optimiser state counts differ".into()));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || p.len() != self.m[i].len() {
                return Err(Error::Shape {
                    op: "adam_step",
                    lhs: p.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
            if let Some(j) = g.data().iter().position(|x| !x.is_finite()) {
                return Err(Error::Numeric(format!("non-finite gradient in tensor {i} at element {j}")));
            }
        }
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t as i32);
        let bc2 = 1.0 - cfg.beta2.powi(self.t as i32);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, (x, &gj)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * gj;
                v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * gj * gj;
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                *x -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
            }
        }
        Ok(())
    }
}

/// Outcome of feeding one validation loss to [`EarlyStopping`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best: f64,
    pub best_epoch: usize,
    since_best: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            since_best: 0,
        }
    }

    /// Strict improvement resets the counter; `patience` epochs in a row
    /// without one stops training.
    pub fn update(&mut self, epoch: usize, val: f64) -> StopDecision {
        if val < self.best {
            self.best = val;
            self.best_epoch = epoch;
            self.since_best = 0;
            StopDecision::Improved
        } else {
            self.since_best += 1;
            if self.since_best >= self.patience {
                StopDecision::Stop
            } else {
                StopDecision::Continue
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
    pub elapsed_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "reason", content = "detail")]
pub enum StopReason {
    MaxEpochs,
    EarlyStopping,
    Diverged(String),
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Weights of the best validation epoch.
    pub params: SrnnParams,
    pub best_epoch: usize,
    pub best_val: f64,
    pub epochs_run: usize,
    pub log: Vec<EpochLog>,
    pub stop: StopReason,
}

const VAL_CHUNK: usize = 256;

/// Mean negative ELBO per sequence over `seqs`, with noise drawn from a
/// stream fixed by `(seed, label::VAL_NOISE)` so that repeated calls on the
/// same weights return the same number.
pub fn validation_loss(params: &SrnnParams, seqs: &[Sequence], seed: u64) -> Result<f64> {
    let mut total = 0.0;
    for (ci, chunk) in seqs.chunks(VAL_CHUNK).enumerate() {
        let refs: Vec<&[[f64; 4]]> = chunk.iter().map(|s| s.as_slice()).collect();
        let mut r = rng::stream(seed, &[label::VAL_NOISE, ci as u64]);
        let eps = srnn::draw_batch_noise(&mut r, refs.len(), refs[0].len());
        total += srnn::elbo_value(params, &refs, &eps)? * refs.len() as f64;
    }
    Ok(total / seqs.len() as f64)
}

fn check_dataset(name: &str, seqs: &[Sequence]) -> Result<usize> {
    let t = seqs
        .first()
        .map(Vec::len)
        .ok_or_else(|| Error::Data(format!("{name} set is empty")))?;
    if t < 2 || seqs.iter().any(|s| s.len() != t) {
        return Err(Error::Data(format!("{name} sequences must share one length >= 2")));
    }
    Ok(t)
}

/// Trains from a seeded initialisation. When `out` is given the best
/// checkpoint is written there each time validation improves, so a later
/// divergence leaves the last good weights on disk. `on_epoch` sees every
/// log row as it is produced.
pub fn train(
    train_set: &[Sequence],
    val_set: &[Sequence],
    cfg: &TrainConfig,
    out: Option<&Path>,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_dataset("training", train_set)?;
    check_dataset("validation", val_set)?;
    let mut params = SrnnParams::init(&mut rng::stream(cfg.seed, &[label::INIT]));
    let mut adam = Adam::new(params.tensors());
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best = params.clone();
    let mut log = Vec::new();
    let start = Instant::now();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut stop = StopReason::MaxEpochs;
    let mut epochs_run = 0;

    for epoch in 1..=cfg.max_epochs {
        order.sort_unstable();
        order.shuffle(&mut rng::stream(cfg.seed, &[label::SHUFFLE, epoch as u64]));
        let mut sum = 0.0;
        let mut diverged = None;
        for (bi, idx) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&[[f64; 4]]> = idx.iter().map(|&i| train_set[i].as_slice()).collect();
            let mut r = rng::stream(cfg.seed, &[label::TRAIN_NOISE, epoch as u64, bi as u64]);
            let eps = srnn::draw_batch_noise(&mut r, batch.len(), batch[0].len());
            let step = srnn::elbo_and_grad(&params, &batch, &eps).and_then(|(loss, grads)| {
                if !loss.is_finite() {
                    return Err(Error::Numeric(format!("non-finite training loss in batch {bi}")));
                }
                adam.step(params.tensors_mut(), &grads, &cfg.adam)?;
                Ok(loss)
            });
            match step {
                Ok(loss) => sum += loss * batch.len() as f64,
                Err(e) => {
                    diverged = Some(format!("epoch {epoch}: {e}"));
                    break;
                }
            }
        }
        let val = match diverged {
            None => validation_loss(&params, val_set, cfg.seed)
                .and_then(|v| {
                    if v.is_finite() {
                        Ok(v)
                    } else {
                        Err(Error::Numeric("non-finite validation loss".into()))
                    }
                })
                .map_err(|e| format!("epoch {epoch}: {e}")),
            Some(msg) => Err(msg),
        };
        let val = match val {
            Ok(v) => v,
            Err(msg) => {
                log::error!("training diverged, keeping epoch {} weights: {msg}", stopper.best_epoch);
                stop = StopReason::Diverged(msg);
                break;
            }
        };
        epochs_run = epoch;
        let row = EpochLog {
            epoch,
            train_loss: sum / train_set.len() as f64,
            val_loss: val,
            lr: cfg.adam.lr,
            elapsed_s: start.elapsed().as_secs_f64(),
        };
        on_epoch(&row);
        log.push(row);
        match stopper.update(epoch, val) {
            StopDecision::Improved => {
                best = params.clone();
                if let Some(path) = out {
                    checkpoint::save(path, &best, &CheckpointMeta::new(epoch, cfg.seed))?;
                }
            }
            StopDecision::Continue => {}
            StopDecision::Stop => {
                stop = StopReason::EarlyStopping;
                break;
            }
        }
    }
    if stopper.best_epoch == 0 {
        if let StopReason::Diverged(msg) = &stop {
            return Err(Error::Numeric(format!("training diverged before the first validation: {msg}")));
        }
    }
    Ok(TrainOutcome {
        params: best,
        best_epoch: stopper.best_epoch,
        best_val: stopper.best,
        epochs_run,
        log,
        stop,
    })
}

pub fn write_log_csv(path: &Path, log: &[EpochLog]) -> Result<()> {
    let mut out = String::from("epoch,train_loss,val_loss,lr,elapsed_s\n");
    for r in log {
        out.push_str(&format!(
            "{},{},{},{},{:.3}\n",
            r.epoch, r.train_loss, r.val_loss, r.lr, r.elapsed_s
        ));
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

/// One-step teacher-forced RMSE of the model and of the constant-position
/// predictor (`s_t ≈ s_{t-1}`) over every coordinate of frames `2..T`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OneStepRmse {
    pub model: f64,
    pub constant_position: f64,
}

pub fn one_step_rmse(params: &SrnnParams, seqs: &[Sequence]) -> OneStepRmse {
    let (mut se_model, mut se_const, mut n) = (0.0, 0.0, 0usize);
    for s in seqs {
        let pred = srnn::one_step_predictions(params, s);
        for t in 1..s.len() {
            for d in 0..4 {
                se_model += (pred[t - 1][d] - s[t][d]).powi(2);
                se_const += (s[t - 1][d] - s[t][d]).powi(2);
                n += 1;
            }
        }
    }
    let n = n.max(1) as f64;
    OneStepRmse {
        model: (se_model / n).sqrt(),
        constant_position: (se_const / n).sqrt(),
    }
}
