//! Fine-tuning loop: AdamW, warmup + cosine schedule, batching policies and
//! per-step logging.

pub mod adamw;
pub mod batch;
pub mod schedule;

use serde::{Deserialize, Serialize};

pub use adamw::{adamw_update, AdamWHyper, Moments};
pub use batch::{make_batches, max_length_spread, BatchPolicy};
pub use schedule::{scaled_lr, schedule_lr, warmup_steps};

use crate::audio::StackedSequence;
use crate::error::{Error, Result};
use crate::model::{AsrGrads, AsrModel, NamedTensors, TrainMode};
use crate::prompt::TrainExample;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    /// Scaled by the square root of the global batch size.
    pub base_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Not given in the source setup; 0.01 is our default.
    pub weight_decay: f64,
    pub warmup_frac: f64,
    pub z_loss_coef: f64,
    pub batch_policy: BatchPolicy,
    pub per_device_batch: usize,
    pub device_count: usize,
    pub epochs: usize,
    /// Global gradient-norm clip; `None` disables clipping.
    pub grad_clip: Option<f64>,
    pub mode: TrainMode,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            base_lr: 5e-4,
            beta1: 0.9,
            beta2: 0.95,
            eps: 1e-8,
            weight_decay: 0.01,
            warmup_frac: 0.01,
            z_loss_coef: 0.0,
            batch_policy: BatchPolicy::RandomShuffle,
            per_device_batch: 8,
            device_count: 1,
            epochs: 1,
            grad_clip: Some(1.0),
            mode: TrainMode::Full,
            seed: 0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InfeasibleConfig(m.to_string()));
        if !(self.warmup_frac > 0.0 && self.warmup_frac < 1.0) {
            return bad("warmup_frac must be in (0, 1)");
        }
        if !(self.beta2 > 0.0 && self.beta2 < 1.0) {
            return bad("beta2 must be in (0, 1)");
        }
        if !(self.beta1 >= 0.0 && self.beta1 < 1.0) {
            return bad("beta1 must be in [0, 1)");
        }
        if !(self.base_lr > 0.0) || !(self.eps > 0.0) {
            return bad("base_lr and eps must be positive");
        }
        if self.per_device_batch == 0 || self.device_count == 0 {
            return bad("batch sizes must be positive");
        }
        if self.grad_clip.is_some_and(|c| !(c > 0.0)) {
            return bad("grad_clip must be positive");
        }
        Ok(())
    }

    pub fn lr_max(&self) -> f64 {
        scaled_lr(self.base_lr, self.per_device_batch, self.device_count)
    }

    pub fn batch_size(&self) -> usize {
        self.per_device_batch * self.device_count
    }

    pub fn hyper(&self) -> AdamWHyper {
        AdamWHyper {
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }
}

/// One assembled example with its stacked acoustic frames.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainItem {
    pub example: TrainExample,
    pub audio: StackedSequence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
    pub grad_norm: f64,
    pub spike: bool,
}

pub const SPIKE_FACTOR: f64 = 3.0;
pub const SPIKE_WINDOW: usize = 50;
pub const SPIKE_MIN_HISTORY: usize = 5;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingLog {
    pub steps: Vec<StepLog>,
}

impl TrainingLog {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn spike_count(&self) -> usize {
        self.steps.iter().filter(|s| s.spike).count()
    }

    /// Whether `loss` exceeds `SPIKE_FACTOR` times the median of the last
    /// `SPIKE_WINDOW` logged losses.
    pub fn is_spike(&self, loss: f64) -> bool {
        let n = self.steps.len();
        if n < SPIKE_MIN_HISTORY {
            return false;
        }
        let mut window: Vec<f64> = self.steps[n.saturating_sub(SPIKE_WINDOW)..]
            .iter()
            .map(|s| s.loss)
            .collect();
        window.sort_by(f64::total_cmp);
        let k = window.len();
        let median = if k % 2 == 1 {
            window[k / 2]
        } else {
            0.5 * (window[k / 2 - 1] + window[k / 2])
        };
        loss > SPIKE_FACTOR * median
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for s in &self.steps {
            out.push_str(&serde_json::to_string(s).expect("plain struct"));
            out.push('\n');
        }
        out
    }

    /// Parses and validates a JSONL log: every line must carry exactly the
    /// keys `step, loss, lr, grad_norm, spike` with the right types, and
    /// steps must count up from zero.
    pub fn from_jsonl(text: &str) -> Result<Self> {
        const KEYS: [&str; 5] = ["step", "loss", "lr", "grad_norm", "spike"];
        let mut steps = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let value: serde_json::Value = serde_json::from_str(line)?;
            let obj = value
                .as_object()
                .ok_or_else(|| Error::InfeasibleConfig(format!("log line {i} is not an object")))?;
            if obj.len() != KEYS.len() || !KEYS.iter().all(|k| obj.contains_key(*k)) {
                return Err(Error::InfeasibleConfig(format!("log line {i} has keys {:?}", obj.keys())));
            }
            let s: StepLog = serde_json::from_value(value)?;
            if s.step != i {
                return Err(Error::InfeasibleConfig(format!("log line {i} has step {}", s.step)));
            }
            steps.push(s);
        }
        Ok(Self { steps })
    }
}

fn zero_grads(grads: &mut AsrGrads) {
    for (_, g) in grads.tensors_mut() {
        g.fill(0.0);
    }
}

/// Trains `model` in place for `config.epochs` epochs.
pub fn fit(items: &[TrainItem], model: &mut AsrModel, config: &OptimizerConfig) -> Result<TrainingLog> {
    fit_with(items, model, config, |_| {})
}

/// As [`fit`], calling `on_step` after every optimizer step.
pub fn fit_with(
    items: &[TrainItem],
    model: &mut AsrModel,
    config: &OptimizerConfig,
    mut on_step: impl FnMut(&StepLog),
) -> Result<TrainingLog> {
    config.validate()?;
    let lengths: Vec<usize> = items.iter().map(|it| it.example.sequence_len()).collect();
    let epochs: Vec<Vec<Vec<usize>>> = (0..config.epochs)
        .map(|e| {
            make_batches(
                &lengths,
                config.batch_policy,
                config.per_device_batch,
                config.device_count,
                config.seed.wrapping_add(e as u64),
            )
        })
        .collect();
    let total_steps: usize = epochs.iter().map(Vec::len).sum();

    let mode = config.mode;
    let scope = mode.scope();
    let hyper = config.hyper();
    let lr_max = config.lr_max();
    let meta: Vec<(bool, bool)> = model
        .tensors()
        .iter()
        .map(|(name, shape, _)| (mode.is_trainable(name), shape.len() >= 2))
        .collect();
    let mut moments: Vec<Moments> = model.tensors().iter().map(|(_, _, t)| Moments::zeros(t.len())).collect();
    let mut grads = AsrGrads::zeros_for(model);
    let mut log = TrainingLog::default();

    let mut step = 0usize;
    for batch in epochs.iter().flatten() {
        zero_grads(&mut grads);
        let weight = 1.0 / batch.len() as f64;
        let mut loss = 0.0;
        for &i in batch {
            let it = &items[i];
            loss += weight
                * model
                    .accumulate_grads(&it.example, &it.audio, config.z_loss_coef, weight, scope, &mut grads)?
                    .total;
        }

        let mut sq = 0.0f64;
        for ((_, _, g), &(trainable, _)) in grads.tensors().iter().zip(&meta) {
            if trainable {
                sq += g.iter().map(|v| v * v).sum::<f64>();
            }
        }
        let grad_norm = sq.sqrt();
        if !grad_norm.is_finite() || !loss.is_finite() {
            return Err(Error::NonFiniteGradient { step });
        }
        if let Some(clip) = config.grad_clip {
            if grad_norm > clip {
                let c = clip / grad_norm;
                for (_, g) in grads.tensors_mut() {
                    g.iter_mut().for_each(|v| *v *= c);
                }
            }
        }

        let lr = schedule_lr(step, total_steps, config.warmup_frac, lr_max);
        let t = step as u64 + 1;
        let gt = grads.tensors();
        for (((_, p), (_, _, g)), (&(trainable, decay), st)) in model
            .tensors_mut()
            .into_iter()
            .zip(gt)
            .zip(meta.iter().zip(moments.iter_mut()))
        {
            if trainable {
                adamw_update(p, g, st, t, lr, &hyper, decay);
            }
        }

        let entry = StepLog {
            step,
            loss,
            lr,
            grad_norm,
            spike: log.is_spike(loss),
        };
        on_step(&entry);
        log.steps.push(entry);
        step += 1;
    }
    Ok(log)
}
