//! Rectified-flow training between images (t = 0) and pseudo masks (t = 1).
//!
//! Along `z_t = (1 - t) z0 + t z1` the regression target is the constant
//! velocity `z1 - z0`. The loss is the mean squared residual per value.

use std::time::Instant;

use ndarray::{Array2, ArrayView2, Zip};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::anchor::{CategoryId, PerturbationConfig};
use crate::dataset::{paired_batch, Dataset, PairedBatch, Split, SplitName};
use crate::error::{Error, Result};
use crate::latent::LatentCodec;
use crate::metrics;
use crate::sampler::{self, Direction, SolveConfig};
use crate::task::TaskGeometry;
use crate::training::{EpochSampler, LogRecord, TrainConfig};
use crate::velocity::{AdamW, Architecture, GradientBundle, Network, OptimizerState, RegressionBatch, VelocityField};

/// A trained (or initialized) bidirectional model.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowModel {
    pub geometry: TaskGeometry,
    pub codec: LatentCodec,
    pub net: Network,
    /// Perturbation amplitude used in training; the default for synthesis.
    pub beta: f64,
}

impl FlowModel {
    pub fn new(geometry: TaskGeometry, codec: LatentCodec, net: Network, beta: f64) -> Result<Self> {
        if codec.input_dim() != geometry.sample_dim() {
            return Err(Error::Shape(format!(
                "codec input {} vs task sample size {}",
                codec.input_dim(),
                geometry.sample_dim()
            )));
        }
        if net.architecture().data_dim() != codec.latent_dim() || net.architecture().cond_dim() != 0 {
            return Err(Error::Shape("velocity network must map the latent space to itself".into()));
        }
        PerturbationConfig::new(beta, &geometry.anchors)?;
        Ok(Self {
            geometry,
            codec,
            net,
            beta,
        })
    }
}

impl VelocityField for FlowModel {
    fn dim(&self) -> usize {
        self.net.dim()
    }

    fn velocity(&self, z: ArrayView2<'_, f64>, t: &[f64]) -> Result<Array2<f64>> {
        self.net.velocity(z, t)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InterpolatedState {
    pub z_t: Vec<f64>,
    pub t: f64,
    pub target: Vec<f64>,
}

pub fn interpolate(z0: &[f64], z1: &[f64], t: f64) -> Result<InterpolatedState> {
    if z0.len() != z1.len() {
        return Err(Error::Shape(format!("z0 has {} values, z1 has {}", z0.len(), z1.len())));
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::TimeOutOfRange(t));
    }
    Ok(InterpolatedState {
        z_t: z0.iter().zip(z1).map(|(a, b)| (1.0 - t) * a + t * b).collect(),
        t,
        target: z0.iter().zip(z1).map(|(a, b)| b - a).collect(),
    })
}

/// Row-wise interpolation: returns `(z_t, z1 - z0)`.
pub fn interpolate_batch(
    z0: ArrayView2<'_, f64>,
    z1: ArrayView2<'_, f64>,
    t: &[f64],
) -> Result<(Array2<f64>, Array2<f64>)> {
    if z0.dim() != z1.dim() {
        return Err(Error::Shape(format!("z0 {:?} vs z1 {:?}", z0.dim(), z1.dim())));
    }
    if t.len() != z0.nrows() {
        return Err(Error::Shape(format!("{} times for {} rows", t.len(), z0.nrows())));
    }
    if let Some(&bad) = t.iter().find(|t| !(0.0..=1.0).contains(*t)) {
        return Err(Error::TimeOutOfRange(bad));
    }
    let mut z_t = Array2::zeros(z0.dim());
    for (i, &ti) in t.iter().enumerate() {
        Zip::from(z_t.row_mut(i))
            .and(z0.row(i))
            .and(z1.row(i))
            .for_each(|o, &a, &b| *o = (1.0 - ti) * a + ti * b);
    }
    Ok((z_t, &z1 - &z0))
}

/// Loss of an arbitrary field on a batch: mean over rows and values of the
/// squared residual `v(z_t, t) - (z1 - z0)`.
pub fn loss_value<F: VelocityField + ?Sized>(
    field: &F,
    z0: ArrayView2<'_, f64>,
    z1: ArrayView2<'_, f64>,
    t: &[f64],
) -> Result<f64> {
    let (z_t, target) = interpolate_batch(z0, z1, t)?;
    let v = field.velocity(z_t.view(), t)?;
    if v.dim() != target.dim() {
        return Err(Error::Shape("field changed the tensor shape".into()));
    }
    Ok((v - target).iter().map(|r| r * r).sum::<f64>() / z_t.len() as f64)
}

/// Loss and gradient on one batch, then one optimizer step.
pub fn train_step(
    net: &mut Network,
    state: &mut OptimizerState,
    optimizer: &AdamW,
    batch: &PairedBatch,
    t: &[f64],
    lr: f64,
) -> Result<GradientBundle> {
    let (z_t, target) = interpolate_batch(batch.z0.view(), batch.z1.view(), t)?;
    let bundle = net.regression_loss_and_grad(&RegressionBatch {
        input: z_t.view(),
        cond: None,
        t,
        target: target.view(),
        weights: batch.weights.as_ref().map(|w| w.view()),
    })?;
    optimizer.apply(net.params_mut(), &bundle.grad, state, lr)?;
    Ok(bundle)
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: FlowModel,
    pub log: Vec<LogRecord>,
    /// Training loss at every step.
    pub losses: Vec<f64>,
}

/// Validation mIoU with an `n`-step Euler forward solve.
pub fn eval_miou(model: &FlowModel, split: &Split, steps: usize) -> Result<f64> {
    let pred = sampler::segment(model, split.images.view(), &SolveConfig::euler(Direction::Forward, steps))?;
    let report = metrics::miou(
        &pred,
        &split.layouts,
        model.geometry.anchors.num_categories() as usize,
        CategoryId::VOID,
    )?;
    Ok(report.miou)
}

pub fn eval_split(dataset: &Dataset, cfg: &TrainConfig) -> Split {
    if cfg.eval_samples == 0 {
        dataset.val.clone()
    } else {
        dataset.val.head(cfg.eval_samples)
    }
}

/// Trains a velocity field on the train split. Network initialization and the
/// training stream (batches, perturbations, times) both derive from `cfg.seed`.
pub fn train(dataset: &Dataset, codec: LatentCodec, arch: Architecture, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let geometry = dataset.spec.geometry()?;
    let perturbation = PerturbationConfig::new(cfg.beta, &geometry.anchors)?;
    if dataset.train.is_empty() {
        return Err(Error::InvalidArgument("train split is empty".into()));
    }
    let net = Network::new(arch, cfg.seed)?;
    let mut model = FlowModel::new(geometry, codec, net, cfg.beta)?;
    let optimizer = cfg.optimizer();
    let mut state = OptimizerState::new(model.net.param_count());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut epochs = EpochSampler::new(dataset.train.len());
    let batch_size = cfg.batch_size.min(dataset.train.len());
    let val = eval_split(dataset, cfg);
    let start = Instant::now();
    let mut log = Vec::new();
    let mut losses = Vec::with_capacity(cfg.steps);

    for step in 0..cfg.steps {
        let idx = epochs.next_batch(batch_size, &mut rng);
        let batch = paired_batch(
            &dataset.train,
            SplitName::Train,
            &idx,
            &model.geometry,
            &model.codec,
            Some(&perturbation),
            &mut rng,
        )?;
        let t: Vec<f64> = (0..idx.len()).map(|_| cfg.time_sampling.sample(&mut rng)).collect();
        let bundle = train_step(&mut model.net, &mut state, &optimizer, &batch, &t, cfg.lr_at(step))
            .map_err(|e| match e {
                Error::NonFinite("loss") | Error::NonFiniteGradient => Error::LossDiverged { step: step + 1 },
                other => other,
            })?;
        losses.push(bundle.loss);
        let done = step + 1;
        let eval = (done % cfg.eval_every == 0 || done == cfg.steps) && !val.is_empty();
        if eval || done % cfg.log_every == 0 {
            let (miou_1, miou_25) = if eval {
                (Some(eval_miou(&model, &val, 1)?), Some(eval_miou(&model, &val, 25)?))
            } else {
                (None, None)
            };
            log.push(LogRecord {
                step: done,
                loss: bundle.loss,
                miou_1,
                miou_25,
                wall_ms: start.elapsed().as_millis() as u64,
            });
        }
    }
    Ok(TrainOutcome { model, log, losses })
}
