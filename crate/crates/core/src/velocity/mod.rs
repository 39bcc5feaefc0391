//! Learnable velocity fields with analytic reverse-mode gradients.
//!
//! Two architectures share one flat parameter vector layout (per layer: weight
//! matrix `out x in`, row-major, then bias): a tanh MLP for vector data and a
//! 3x3 "same"-padded tanh conv net for `H x W x C` grids. Both accept an
//! optional condition tensor, which is how the diffusion baseline feeds the
//! image alongside the noisy mask.

mod conv;
mod embedding;
mod mlp;
pub mod optim;

use ndarray::{Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

pub use embedding::TimeEmbedding;
pub use optim::{AdamW, OptimizerState};

use crate::error::{Error, Result};
use crate::task::DataShape;

/// Anything that returns a velocity for a batch of states (rows of `z`) at
/// per-row times `t`.
pub trait VelocityField {
    fn dim(&self) -> usize;
    fn velocity(&self, z: ArrayView2<'_, f64>, t: &[f64]) -> Result<Array2<f64>>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Architecture {
    Mlp {
        data_dim: usize,
        cond_dim: usize,
        hidden: Vec<usize>,
        time: TimeEmbedding,
    },
    Conv {
        height: usize,
        width: usize,
        channels: usize,
        cond_channels: usize,
        hidden: Vec<usize>,
        time: TimeEmbedding,
    },
}

impl Architecture {
    /// Three hidden layers of width 128.
    pub fn default_mlp(data_dim: usize, cond_dim: usize) -> Self {
        Architecture::Mlp {
            data_dim,
            cond_dim,
            hidden: vec![128, 128, 128],
            time: TimeEmbedding::default(),
        }
    }

    /// Four 3x3 conv layers, 32 channels wide.
    pub fn default_conv(height: usize, width: usize, channels: usize, cond_channels: usize) -> Self {
        Architecture::Conv {
            height,
            width,
            channels,
            cond_channels,
            hidden: vec![32, 32, 32],
            time: TimeEmbedding::Sinusoidal {
                dim: 8,
                max_frequency: 32.0,
            },
        }
    }

    /// Default architecture for a latent shape; grids get the conv net.
    pub fn for_shape(shape: DataShape, conditioned: bool) -> Self {
        match shape {
            DataShape::Vector { dim } => Self::default_mlp(dim, if conditioned { dim } else { 0 }),
            DataShape::Grid {
                height,
                width,
                channels,
            } => Self::default_conv(height, width, channels, if conditioned { channels } else { 0 }),
        }
    }

    pub fn data_dim(&self) -> usize {
        match *self {
            Architecture::Mlp { data_dim, .. } => data_dim,
            Architecture::Conv {
                height,
                width,
                channels,
                ..
            } => height * width * channels,
        }
    }

    pub fn cond_dim(&self) -> usize {
        match *self {
            Architecture::Mlp { cond_dim, .. } => cond_dim,
            Architecture::Conv {
                height,
                width,
                cond_channels,
                ..
            } => height * width * cond_channels,
        }
    }

    fn time(&self) -> TimeEmbedding {
        match self {
            Architecture::Mlp { time, .. } | Architecture::Conv { time, .. } => *time,
        }
    }

    /// `(fan_out, fan_in)` of each weight matrix.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let (first_in, hidden, out, kernel) = match self {
            Architecture::Mlp {
                data_dim,
                cond_dim,
                hidden,
                time,
            } => (data_dim + cond_dim + time.width(), hidden, *data_dim, 1),
            Architecture::Conv {
                channels,
                cond_channels,
                hidden,
                time,
                ..
            } => (channels + cond_channels + time.width(), hidden, *channels, 9),
        };
        let mut shapes = Vec::with_capacity(hidden.len() + 1);
        let mut prev = first_in;
        for &h in hidden {
            shapes.push((h, prev * kernel));
            prev = h;
        }
        shapes.push((out, prev * kernel));
        shapes
    }

    pub fn param_count(&self) -> usize {
        self.layer_shapes().iter().map(|(o, i)| o * i + o).sum()
    }

    fn validate(&self) -> Result<()> {
        let ok = match self {
            Architecture::Mlp { data_dim, hidden, .. } => *data_dim > 0 && hidden.iter().all(|&h| h > 0),
            Architecture::Conv {
                height,
                width,
                channels,
                hidden,
                ..
            } => *height > 0 && *width > 0 && *channels > 0 && hidden.iter().all(|&h| h > 0),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("degenerate architecture {self:?}")))
        }
    }
}

/// Loss value and its gradient with respect to the flat parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientBundle {
    pub loss: f64,
    pub grad: Vec<f64>,
}

/// Weighted mean-squared regression problem: `mean(w * (net(input, cond, t) - target)^2)`
/// over every batch row and coordinate.
#[derive(Clone, Copy, Debug)]
pub struct RegressionBatch<'a> {
    pub input: ArrayView2<'a, f64>,
    pub cond: Option<ArrayView2<'a, f64>>,
    pub t: &'a [f64],
    pub target: ArrayView2<'a, f64>,
    pub weights: Option<ArrayView2<'a, f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    arch: Architecture,
    params: Vec<f64>,
}

pub(crate) enum Cache {
    Mlp(mlp::MlpCache),
    Conv(conv::ConvCache),
}

impl Network {
    /// LeCun-normal weights, zero biases, zero output layer.
    pub fn new(arch: Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shapes = arch.layer_shapes();
        let mut params = Vec::with_capacity(arch.param_count());
        for (li, &(out, fan_in)) in shapes.iter().enumerate() {
            let last = li + 1 == shapes.len();
            let std = (1.0 / fan_in as f64).sqrt();
            for _ in 0..out * fan_in {
                let v: f64 = StandardNormal.sample(&mut rng);
                params.push(if last { 0.0 } else { v * std });
            }
            params.extend(std::iter::repeat_n(0.0, out));
        }
        Ok(Self { arch, params })
    }

    pub fn from_params(arch: Architecture, params: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        if params.len() != arch.param_count() {
            return Err(Error::Shape(format!(
                "architecture needs {} parameters, got {}",
                arch.param_count(),
                params.len()
            )));
        }
        Ok(Self { arch, params })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// (weight, bias) slices of each layer.
    pub(crate) fn layers(&self) -> Vec<(ArrayView2<'_, f64>, &[f64])> {
        let mut off = 0;
        let mut out = Vec::new();
        for (o, i) in self.arch.layer_shapes() {
            let w = ArrayView2::from_shape((o, i), &self.params[off..off + o * i])
                .expect("layer shape matches parameter layout");
            off += o * i;
            let b = &self.params[off..off + o];
            off += o;
            out.push((w, b));
        }
        out
    }

    fn check_inputs(&self, x: &ArrayView2<'_, f64>, cond: Option<&ArrayView2<'_, f64>>, t: &[f64]) -> Result<()> {
        let rows = x.nrows();
        if rows == 0 {
            return Err(Error::EmptyBatch);
        }
        if x.ncols() != self.arch.data_dim() {
            return Err(Error::Shape(format!(
                "input has {} columns, network expects {}",
                x.ncols(),
                self.arch.data_dim()
            )));
        }
        if t.len() != rows {
            return Err(Error::Shape(format!("{} times for {} rows", t.len(), rows)));
        }
        match (cond, self.arch.cond_dim()) {
            (None, 0) => {}
            (Some(c), d) if d > 0 && c.ncols() == d && c.nrows() == rows => {
                if c.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite("condition"));
                }
            }
            (c, d) => {
                return Err(Error::Shape(format!(
                    "condition of shape {:?}, network expects {d} columns",
                    c.map(|c| c.dim())
                )))
            }
        }
        if let Some(&bad) = t.iter().find(|t| !(0.0..=1.0).contains(*t)) {
            return Err(Error::TimeOutOfRange(bad));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("input"));
        }
        Ok(())
    }

    pub fn forward(
        &self,
        x: ArrayView2<'_, f64>,
        cond: Option<ArrayView2<'_, f64>>,
        t: &[f64],
    ) -> Result<Array2<f64>> {
        Ok(self.forward_cached(x, cond, t)?.0)
    }

    pub(crate) fn forward_cached(
        &self,
        x: ArrayView2<'_, f64>,
        cond: Option<ArrayView2<'_, f64>>,
        t: &[f64],
    ) -> Result<(Array2<f64>, Cache)> {
        self.check_inputs(&x, cond.as_ref(), t)?;
        let time = self.arch.time();
        match &self.arch {
            Architecture::Mlp { .. } => {
                let (out, cache) = mlp::forward(self, x, cond, t, time);
                Ok((out, Cache::Mlp(cache)))
            }
            Architecture::Conv {
                height,
                width,
                channels,
                cond_channels,
                ..
            } => {
                let geom = conv::ConvGeometry {
                    height: *height,
                    width: *width,
                    channels: *channels,
                    cond_channels: *cond_channels,
                };
                let (out, cache) = conv::forward(self, &geom, x, cond, t, time);
                Ok((out, Cache::Conv(cache)))
            }
        }
    }

    /// Gradient of `sum(d_out * output)` with respect to the parameters.
    pub(crate) fn backward(&self, cache: &Cache, d_out: Array2<f64>) -> Vec<f64> {
        match cache {
            Cache::Mlp(c) => mlp::backward(self, c, d_out),
            Cache::Conv(c) => conv::backward(self, c, d_out),
        }
    }

    pub fn regression_loss_and_grad(&self, batch: &RegressionBatch<'_>) -> Result<GradientBundle> {
        if batch.target.dim() != batch.input.dim() {
            return Err(Error::Shape(format!(
                "target {:?} vs input {:?}",
                batch.target.dim(),
                batch.input.dim()
            )));
        }
        if batch.target.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("target"));
        }
        if let Some(w) = &batch.weights {
            if w.dim() != batch.target.dim() {
                return Err(Error::Shape("weights must match target".into()));
            }
        }
        let (out, cache) = self.forward_cached(batch.input, batch.cond, batch.t)?;
        let denom = out.len() as f64;
        let mut residual = out - &batch.target;
        let loss = match &batch.weights {
            Some(w) => residual.iter().zip(w.iter()).map(|(r, wi)| wi * r * r).sum::<f64>(),
            None => residual.iter().map(|r| r * r).sum::<f64>(),
        } / denom;
        if let Some(w) = &batch.weights {
            residual *= w;
        }
        let d_out = residual * (2.0 / denom);
        let grad = self.backward(&cache, d_out);
        if !loss.is_finite() {
            return Err(Error::NonFinite("loss"));
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient);
        }
        Ok(GradientBundle { loss, grad })
    }
}

impl VelocityField for Network {
    fn dim(&self) -> usize {
        self.arch.data_dim()
    }

    fn velocity(&self, z: ArrayView2<'_, f64>, t: &[f64]) -> Result<Array2<f64>> {
        self.forward(z, None, t)
    }
}

#[cfg(test)]
mod tests;
