//! Conditional denoising-diffusion segmentation baseline.
//!
//! A noise-prediction network sees the noisy mask concatenated with the image
//! and a normalized timestep. Sampling uses the shared DDPM/DDIM update
//!
//! `x_prev = sqrt(ab_prev) * (x_t - sqrt(1 - ab_t) * eps) / sqrt(ab_t)
//!         + sqrt(1 - ab_prev - sigma^2) * eps + sigma * noise`
//!
//! with `sigma = 0` for DDIM.

use std::time::Instant;

use ndarray::{Array2, ArrayView2, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::anchor::CategoryId;
use crate::dataset::{paired_batch, Dataset, Split, SplitName};
use crate::error::{Error, Result};
use crate::flow::eval_split;
use crate::latent::LatentCodec;
use crate::metrics;
use crate::task::TaskGeometry;
use crate::training::{EpochSampler, LogRecord, TrainConfig};
use crate::velocity::{Architecture, GradientBundle, Network, OptimizerState, RegressionBatch};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerMode {
    Ddpm,
    Ddim,
}

/// DDPM noise scale.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VarianceForm {
    /// `sqrt((1 - ab_prev) / (1 - ab_t)) * sqrt(1 - ab_t / ab_prev)`
    #[default]
    Standard,
    /// `sqrt((1 - ab_prev) * (1 - ab_t)) * sqrt(1 - ab_t / ab_prev)`
    Product,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSchedule", into = "RawSchedule")]
pub struct NoiseSchedule {
    /// Cumulative signal fraction for `t = 0..=T`; entry 0 is the clean data.
    alpha_bar: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawSchedule {
    alpha_bar: Vec<f64>,
}

impl TryFrom<RawSchedule> for NoiseSchedule {
    type Error = Error;
    fn try_from(r: RawSchedule) -> Result<Self> {
        NoiseSchedule::from_alpha_bar(r.alpha_bar)
    }
}

impl From<NoiseSchedule> for RawSchedule {
    fn from(s: NoiseSchedule) -> Self {
        RawSchedule { alpha_bar: s.alpha_bar }
    }
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self::linear(200, 5e-4, 0.1).expect("valid default schedule")
    }
}

impl NoiseSchedule {
    /// `alpha_bar[t] = prod_{s <= t} (1 - beta_s)` with betas spaced linearly.
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidSchedule("T must be >= 1".into()));
        }
        if !(0.0 < beta_start && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::InvalidSchedule(format!(
                "need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}"
            )));
        }
        let mut alpha_bar = Vec::with_capacity(steps + 1);
        alpha_bar.push(1.0);
        let mut acc = 1.0;
        for i in 0..steps {
            let frac = if steps == 1 { 0.0 } else { i as f64 / (steps - 1) as f64 };
            acc *= 1.0 - (beta_start + frac * (beta_end - beta_start));
            alpha_bar.push(acc);
        }
        Self::from_alpha_bar(alpha_bar)
    }

    pub fn from_alpha_bar(alpha_bar: Vec<f64>) -> Result<Self> {
        if alpha_bar.len() < 2 {
            return Err(Error::InvalidSchedule("schedule needs at least one noisy step".into()));
        }
        if let Some(v) = alpha_bar.iter().find(|v| !(**v > 0.0 && **v <= 1.0)) {
            return Err(Error::InvalidSchedule(format!("alpha_bar value {v} outside (0, 1]")));
        }
        if let Some(i) = alpha_bar.windows(2).position(|w| w[1] >= w[0]) {
            return Err(Error::InvalidSchedule(format!("alpha_bar not strictly decreasing at t = {}", i + 1)));
        }
        Ok(Self { alpha_bar })
    }

    /// Number of noisy steps `T`.
    pub fn steps(&self) -> usize {
        self.alpha_bar.len() - 1
    }

    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        self.alpha_bar.get(t).copied().ok_or(Error::TimestepOutOfRange {
            t,
            min: 0,
            max: self.steps(),
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.alpha_bar
    }

    /// `(t, t_prev)` pairs of an evenly strided run with `steps` updates,
    /// starting at `T` and ending at 0.
    pub fn strided(&self, steps: usize) -> Result<Vec<(usize, usize)>> {
        let big_t = self.steps();
        if steps == 0 || steps > big_t {
            return Err(Error::InvalidArgument(format!("sampler steps must lie in 1..={big_t}, got {steps}")));
        }
        let ts: Vec<usize> = (0..=steps).map(|i| (steps - i) * big_t / steps).collect();
        Ok(ts.windows(2).map(|w| (w[0], w[1])).collect())
    }
}

/// `x_t = sqrt(ab_t) x0 + sqrt(1 - ab_t) eps`, one timestep per row.
pub fn q_sample(
    x0: ArrayView2<'_, f64>,
    t: &[usize],
    eps: ArrayView2<'_, f64>,
    schedule: &NoiseSchedule,
) -> Result<Array2<f64>> {
    if x0.dim() != eps.dim() {
        return Err(Error::Shape(format!("x0 {:?} vs eps {:?}", x0.dim(), eps.dim())));
    }
    if t.len() != x0.nrows() {
        return Err(Error::Shape(format!("{} timesteps for {} rows", t.len(), x0.nrows())));
    }
    let mut out = Array2::zeros(x0.dim());
    for (i, &ti) in t.iter().enumerate() {
        let ab = schedule.alpha_bar(ti)?;
        let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
        Zip::from(out.row_mut(i))
            .and(x0.row(i))
            .and(eps.row(i))
            .for_each(|o, &x, &e| *o = a * x + b * e);
    }
    Ok(out)
}

pub fn sigma(mode: SamplerMode, form: VarianceForm, ab_t: f64, ab_prev: f64) -> f64 {
    match mode {
        SamplerMode::Ddim => 0.0,
        SamplerMode::Ddpm => {
            let tail = (1.0 - ab_t / ab_prev).max(0.0).sqrt();
            match form {
                VarianceForm::Standard => ((1.0 - ab_prev) / (1.0 - ab_t)).sqrt() * tail,
                VarianceForm::Product => ((1.0 - ab_prev) * (1.0 - ab_t)).sqrt() * tail,
            }
        }
    }
}

/// The unified update for one row set. `noise` is required when `sigma > 0`.
pub fn update(
    x_t: ArrayView2<'_, f64>,
    eps_hat: ArrayView2<'_, f64>,
    ab_t: f64,
    ab_prev: f64,
    sigma: f64,
    noise: Option<ArrayView2<'_, f64>>,
) -> Result<Array2<f64>> {
    if x_t.dim() != eps_hat.dim() {
        return Err(Error::Shape("prediction does not match state".into()));
    }
    let c_x0 = ab_prev.sqrt() / ab_t.sqrt();
    let c_eps = (1.0 - ab_prev - sigma * sigma).max(0.0).sqrt();
    let s1 = (1.0 - ab_t).sqrt();
    let mut out = Array2::zeros(x_t.dim());
    Zip::from(&mut out)
        .and(x_t)
        .and(eps_hat)
        .for_each(|o, &x, &e| *o = c_x0 * (x - s1 * e) + c_eps * e);
    if sigma > 0.0 {
        let noise = noise.ok_or_else(|| Error::InvalidArgument("stochastic step needs noise".into()))?;
        if noise.dim() != out.dim() {
            return Err(Error::Shape("noise does not match state".into()));
        }
        out.scaled_add(sigma, &noise);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct DsmModel {
    pub geometry: TaskGeometry,
    pub schedule: NoiseSchedule,
    pub net: Network,
    pub variance: VarianceForm,
}

impl DsmModel {
    pub fn new(geometry: TaskGeometry, schedule: NoiseSchedule, net: Network, variance: VarianceForm) -> Result<Self> {
        let d = geometry.sample_dim();
        let a = net.architecture();
        if a.data_dim() != d || a.cond_dim() != d {
            return Err(Error::Shape(format!(
                "noise network must take {d} state and {d} condition values, has {} and {}",
                a.data_dim(),
                a.cond_dim()
            )));
        }
        Ok(Self {
            geometry,
            schedule,
            net,
            variance,
        })
    }

    pub fn predict_noise(&self, x_t: ArrayView2<'_, f64>, cond: ArrayView2<'_, f64>, t: usize) -> Result<Array2<f64>> {
        let big_t = self.schedule.steps();
        if t > big_t {
            return Err(Error::TimestepOutOfRange { t, min: 0, max: big_t });
        }
        let tt = vec![t as f64 / big_t as f64; x_t.nrows()];
        self.net.forward(x_t, Some(cond), &tt)
    }
}

/// One reverse step from `t` to `t_prev`.
pub fn sample_step<R: Rng + ?Sized>(
    model: &DsmModel,
    x_t: ArrayView2<'_, f64>,
    t: usize,
    t_prev: usize,
    cond: ArrayView2<'_, f64>,
    mode: SamplerMode,
    rng: &mut R,
) -> Result<Array2<f64>> {
    if t == 0 || t_prev >= t {
        return Err(Error::TimestepOutOfRange {
            t,
            min: 1,
            max: model.schedule.steps(),
        });
    }
    let ab_t = model.schedule.alpha_bar(t)?;
    let ab_prev = model.schedule.alpha_bar(t_prev)?;
    let eps_hat = model.predict_noise(x_t, cond, t)?;
    let s = sigma(mode, model.variance, ab_t, ab_prev);
    let noise = (s > 0.0).then(|| standard_normal(x_t.dim(), rng));
    let out = update(x_t, eps_hat.view(), ab_t, ab_prev, s, noise.as_ref().map(|n| n.view()))?;
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::SolverDiverged { step: t });
    }
    Ok(out)
}

fn standard_normal<R: Rng + ?Sized>(dim: (usize, usize), rng: &mut R) -> Array2<f64> {
    Array2::from_shape_simple_fn(dim, || StandardNormal.sample(rng))
}

/// Samples masks (normalized pixel values) conditioned on `images`, starting
/// from standard normal noise drawn from `seed`.
pub fn dsm_sample(
    model: &DsmModel,
    images: ArrayView2<'_, f64>,
    steps: usize,
    mode: SamplerMode,
    seed: u64,
) -> Result<Array2<f64>> {
    let pairs = model.schedule.strided(steps)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = standard_normal(images.dim(), &mut rng);
    for (t, t_prev) in pairs {
        x = sample_step(model, x.view(), t, t_prev, images, mode, &mut rng)?;
    }
    Ok(x)
}

pub fn dsm_segment(
    model: &DsmModel,
    images: ArrayView2<'_, f64>,
    steps: usize,
    mode: SamplerMode,
    seed: u64,
) -> Result<Vec<CategoryId>> {
    let x0 = dsm_sample(model, images, steps, mode, seed)?;
    let mut out = Vec::with_capacity(images.nrows() * model.geometry.pixels());
    for row in x0.rows() {
        out.extend(model.geometry.decode_sample(row.as_slice().expect("owned rows are contiguous")));
    }
    Ok(out)
}

/// Mean squared error between predicted and true noise, with its gradient.
pub fn dsm_loss_and_grad(
    net: &Network,
    schedule: &NoiseSchedule,
    x0: ArrayView2<'_, f64>,
    cond: ArrayView2<'_, f64>,
    t: &[usize],
    eps: ArrayView2<'_, f64>,
    weights: Option<ArrayView2<'_, f64>>,
) -> Result<GradientBundle> {
    let x_t = q_sample(x0, t, eps, schedule)?;
    let big_t = schedule.steps() as f64;
    let tt: Vec<f64> = t.iter().map(|&t| t as f64 / big_t).collect();
    net.regression_loss_and_grad(&RegressionBatch {
        input: x_t.view(),
        cond: Some(cond),
        t: &tt,
        target: eps,
        weights,
    })
}

#[derive(Clone, Debug)]
pub struct DsmOutcome {
    pub model: DsmModel,
    pub log: Vec<LogRecord>,
    pub losses: Vec<f64>,
}

/// Validation mIoU of deterministic (DDIM) sampling with `steps` updates.
pub fn eval_miou(model: &DsmModel, split: &Split, steps: usize, mode: SamplerMode, seed: u64) -> Result<f64> {
    let pred = dsm_segment(model, split.images.view(), steps, mode, seed)?;
    Ok(metrics::miou(
        &pred,
        &split.layouts,
        model.geometry.anchors.num_categories() as usize,
        CategoryId::VOID,
    )?
    .miou)
}

/// Trains the noise predictor on exact (unperturbed) anchor masks; the
/// perturbation amplitude in `cfg` does not apply to this model.
pub fn train_dsm(
    dataset: &Dataset,
    arch: Architecture,
    schedule: NoiseSchedule,
    variance: VarianceForm,
    cfg: &TrainConfig,
) -> Result<DsmOutcome> {
    cfg.validate()?;
    let geometry = dataset.spec.geometry()?;
    if dataset.train.is_empty() {
        return Err(Error::InvalidArgument("train split is empty".into()));
    }
    let net = Network::new(arch, cfg.seed)?;
    let mut model = DsmModel::new(geometry, schedule, net, variance)?;
    let codec = LatentCodec::identity(model.geometry.sample_dim());
    let optimizer = cfg.optimizer();
    let mut state = OptimizerState::new(model.net.param_count());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut epochs = EpochSampler::new(dataset.train.len());
    let batch_size = cfg.batch_size.min(dataset.train.len());
    let val = eval_split(dataset, cfg);
    let big_t = model.schedule.steps();
    let eval_steps = |n: usize| n.min(big_t);
    let start = Instant::now();
    let mut log = Vec::new();
    let mut losses = Vec::with_capacity(cfg.steps);

    for step in 0..cfg.steps {
        let idx = epochs.next_batch(batch_size, &mut rng);
        let batch = paired_batch(&dataset.train, SplitName::Train, &idx, &model.geometry, &codec, None, &mut rng)?;
        let t: Vec<usize> = (0..idx.len()).map(|_| rng.random_range(1..=big_t)).collect();
        let eps = standard_normal(batch.z1.dim(), &mut rng);
        let bundle = dsm_loss_and_grad(
            &model.net,
            &model.schedule,
            batch.z1.view(),
            batch.z0.view(),
            &t,
            eps.view(),
            batch.weights.as_ref().map(|w| w.view()),
        )
        .map_err(|e| match e {
            Error::NonFinite("loss") | Error::NonFiniteGradient => Error::LossDiverged { step: step + 1 },
            other => other,
        })?;
        optimizer.apply(model.net.params_mut(), &bundle.grad, &mut state, cfg.lr_at(step))?;
        losses.push(bundle.loss);
        let done = step + 1;
        let eval = (done % cfg.eval_every == 0 || done == cfg.steps) && !val.is_empty();
        if eval || done % cfg.log_every == 0 {
            let (miou_1, miou_25) = if eval {
                (
                    Some(eval_miou(&model, &val, eval_steps(1), SamplerMode::Ddim, cfg.seed)?),
                    Some(eval_miou(&model, &val, eval_steps(25), SamplerMode::Ddim, cfg.seed)?),
                )
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
    Ok(DsmOutcome { model, log, losses })
}
