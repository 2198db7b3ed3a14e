//! Supervised training loop on synthetic tasks.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{build, forward_vars, ArchConfig, ModelParams};
use crate::tape::Tape;
use crate::tensor::Tensor;
use crate::train::optim::{adamw_step, cosine_lr, AdamWConfig, AdamWState};
use crate::train::synth::{Dataset, SynthTask};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    /// Stops after this many optimizer steps; the cosine horizon shrinks to
    /// match.
    pub max_steps: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 32,
            lr: 1e-3,
            weight_decay: 0.05,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            max_steps: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch size must be positive".into()));
        }
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!("invalid learning rate {}", self.lr)));
        }
        Ok(())
    }

    fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }

    pub fn total_steps(&self, n_train: usize) -> usize {
        let per_epoch = n_train.div_ceil(self.batch_size);
        let full = self.epochs * per_epoch;
        self.max_steps.map_or(full, |m| m.min(full))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Optimizer steps completed at the end of the epoch.
    pub step: usize,
    pub lr: f64,
    /// Sample-weighted mean training loss over the epoch.
    pub loss: f64,
    pub train_acc: f64,
    pub val_acc: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct History {
    /// Mini-batch loss before each optimizer step.
    pub step_loss: Vec<f64>,
    pub epochs: Vec<EpochRecord>,
}

impl History {
    pub fn loss(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.loss).collect()
    }

    pub fn train_acc(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.train_acc).collect()
    }

    pub fn val_acc(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.val_acc).collect()
    }

    /// Epoch table: `epoch,step,lr,loss,train_acc,val_acc`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,step,lr,loss,train_acc,val_acc\n");
        for e in &self.epochs {
            writeln!(
                s,
                "{},{},{},{},{},{}",
                e.epoch, e.step, e.lr, e.loss, e.train_acc, e.val_acc
            )
            .unwrap();
        }
        s
    }

    /// Per-step table: `step,loss`.
    pub fn steps_csv(&self) -> String {
        let mut s = String::from("step,loss\n");
        for (i, l) in self.step_loss.iter().enumerate() {
            writeln!(s, "{},{}", i + 1, l).unwrap();
        }
        s
    }
}

/// Fraction of `data` classified correctly, evaluated in chunks.
pub fn accuracy(m: &ModelParams, data: &Dataset, chunk: usize) -> Result<f64> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0;
    let idx: Vec<usize> = (0..data.len()).collect();
    for part in idx.chunks(chunk.max(1)) {
        let (x, y) = data.batch(part);
        let logits = m.forward(&x)?;
        correct += argmax_rows(&logits)
            .iter()
            .zip(&y)
            .filter(|(p, l)| p == l)
            .count();
    }
    Ok(correct as f64 / data.len() as f64)
}

pub fn argmax_rows(logits: &Tensor) -> Vec<usize> {
    let k = logits.shape()[1];
    logits
        .data()
        .chunks(k)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                .0
        })
        .collect()
}

/// Trains a freshly built model; the model seed is `tc.seed`.
pub fn train(cfg: &ArchConfig, task: &SynthTask, tc: &TrainConfig) -> Result<(ModelParams, History)> {
    tc.validate()?;
    let (train_set, val_set) = task.generate()?;
    let mut model = build(cfg, tc.seed)?;
    let history = train_model(&mut model, &train_set, &val_set, tc)?;
    Ok((model, history))
}

/// Runs the loop on an existing model.
pub fn train_model(
    model: &mut ModelParams,
    train_set: &Dataset,
    val_set: &Dataset,
    tc: &TrainConfig,
) -> Result<History> {
    tc.validate()?;
    let total = tc.total_steps(train_set.len());
    let adamw = tc.adamw();
    let mut state = AdamWState::new(&model.tensors());
    let mut history = History::default();
    let mut step = 0;
    let mut lr = tc.lr;
    'epochs: for epoch in 0..tc.epochs {
        let order = train_set.shuffled(tc.seed ^ (epoch as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        let mut loss_sum = 0.0;
        let mut seen = 0;
        for batch in order.chunks(tc.batch_size) {
            if step >= total {
                break;
            }
            let (x, y) = train_set.batch(batch);
            let (loss, grads) = {
                let tape = Tape::new();
                let vars = model.bind(&tape, true);
                let (logits, _) = forward_vars(model, &vars, tape.constant(x), None)?;
                let loss = logits.cross_entropy(&y)?;
                let mut g = tape.backward(loss)?;
                let grads: Vec<Tensor> = vars
                    .vars()
                    .into_iter()
                    .map(|v| g.take(v).unwrap_or_else(|| Tensor::zeros(&v.shape())))
                    .collect();
                (loss.item(), grads)
            };
            if !loss.is_finite() {
                return Err(Error::Diverged { step: step + 1, loss });
            }
            history.step_loss.push(loss);
            loss_sum += loss * batch.len() as f64;
            seen += batch.len();
            lr = cosine_lr(step, total, tc.lr)?;
            adamw_step(&mut model.tensors_mut(), &grads, &mut state, lr, &adamw)?;
            step += 1;
        }
        if seen == 0 {
            break 'epochs;
        }
        history.epochs.push(EpochRecord {
            epoch: epoch + 1,
            step,
            lr,
            loss: loss_sum / seen as f64,
            train_acc: accuracy(model, train_set, 128)?,
            val_acc: accuracy(model, val_set, 128)?,
        });
    }
    Ok(history)
}
