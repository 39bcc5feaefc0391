//! Pieces shared by the flow and diffusion training loops.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::velocity::AdamW;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LrSchedule {
    Constant,
    /// Linear decay from `lr` at step 0 to `lr / steps` at the last step.
    Linear,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "kebab-case")]
pub enum TimeSampling {
    Uniform,
    LogitNormal { mean: f64, std: f64 },
}

impl TimeSampling {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            TimeSampling::Uniform => rng.random::<f64>(),
            TimeSampling::LogitNormal { mean, std } => {
                let e: f64 = StandardNormal.sample(rng);
                1.0 / (1.0 + (-(mean + std * e)).exp())
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_schedule: LrSchedule,
    pub weight_decay: f64,
    /// Perturbation amplitude added to anchor colors, in color units.
    pub beta: f64,
    pub time_sampling: TimeSampling,
    /// Set from the run-level seed; not part of the serialized table.
    #[serde(skip)]
    pub seed: u64,
    pub eval_every: usize,
    /// Number of leading validation samples used for evaluation; 0 means all.
    pub eval_samples: usize,
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 3000,
            batch_size: 128,
            lr: 1e-3,
            lr_schedule: LrSchedule::Linear,
            weight_decay: 1e-4,
            beta: 6.0,
            time_sampling: TimeSampling::Uniform,
            seed: 0,
            eval_every: 500,
            eval_samples: 0,
            log_every: 50,
        }
    }
}

impl TrainConfig {
    /// Every violated constraint. `steps = 0` is allowed here and yields the
    /// initialization unchanged.
    pub fn problems(&self) -> Vec<String> {
        let mut p = Vec::new();
        if self.batch_size == 0 {
            p.push("train.batch_size must be >= 1".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            p.push("train.lr must be > 0".into());
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            p.push("train.weight_decay must be >= 0".into());
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            p.push("train.beta must be >= 0".into());
        }
        if let TimeSampling::LogitNormal { mean, std } = self.time_sampling {
            if !(mean.is_finite() && std > 0.0 && std.is_finite()) {
                p.push("train.time_sampling logit-normal needs finite mean and std > 0".into());
            }
        }
        if self.eval_every == 0 {
            p.push("train.eval_every must be >= 1".into());
        }
        if self.log_every == 0 {
            p.push("train.log_every must be >= 1".into());
        }
        p
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.problems();
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(p))
        }
    }

    pub fn optimizer(&self) -> AdamW {
        AdamW {
            weight_decay: self.weight_decay,
            ..AdamW::default()
        }
    }

    pub fn lr_at(&self, step: usize) -> f64 {
        match self.lr_schedule {
            LrSchedule::Constant => self.lr,
            LrSchedule::Linear => self.lr * (self.steps - step.min(self.steps - 1)) as f64 / self.steps as f64,
        }
    }
}

/// Walks shuffled epochs of `0..n`, reshuffling whenever one is exhausted.
#[derive(Clone, Debug)]
pub struct EpochSampler {
    order: Vec<usize>,
    pos: usize,
}

impl EpochSampler {
    pub fn new(n: usize) -> Self {
        Self {
            order: (0..n).collect(),
            pos: n,
        }
    }

    pub fn next_batch<R: Rng + ?Sized>(&mut self, size: usize, rng: &mut R) -> Vec<usize> {
        let mut out = Vec::with_capacity(size);
        while out.len() < size {
            if self.pos == self.order.len() {
                self.order.shuffle(rng);
                self.pos = 0;
            }
            let take = (size - out.len()).min(self.order.len() - self.pos);
            out.extend_from_slice(&self.order[self.pos..self.pos + take]);
            self.pos += take;
        }
        out
    }
}

/// One training log line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: usize,
    pub loss: f64,
    /// Validation mIoU with one sampler step.
    pub miou_1: Option<f64>,
    /// Validation mIoU with 25 sampler steps.
    pub miou_25: Option<f64>,
    pub wall_ms: u64,
}

impl LogRecord {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("log records serialize")
    }
}

pub fn write_log(records: &[LogRecord]) -> String {
    records.iter().map(|r| r.to_json() + "\n").collect()
}
