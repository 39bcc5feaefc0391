//! Pixel-space <-> latent-space codecs.
//!
//! The flow is trained in whatever space the codec produces. The default is
//! the identity. A linear autoencoder is available as a frozen, separately
//! trained stand-in for a learned image codec.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::task::DataShape;
use crate::velocity::{AdamW, OptimizerState};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CodecKind {
    Identity,
    LinearAutoencoder,
}

/// Serializable description; weights travel separately as arrays.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodecSpec {
    pub kind: CodecKind,
    pub input_dim: usize,
    pub latent_dim: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinearCodec {
    /// latent x input
    pub enc_w: Array2<f64>,
    pub enc_b: Array1<f64>,
    /// input x latent
    pub dec_w: Array2<f64>,
    pub dec_b: Array1<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum LatentCodec {
    Identity { dim: usize },
    Linear(LinearCodec),
}

impl LatentCodec {
    pub fn identity(dim: usize) -> Self {
        LatentCodec::Identity { dim }
    }

    pub fn linear(codec: LinearCodec) -> Result<Self> {
        let (l, d) = codec.enc_w.dim();
        if codec.enc_b.len() != l || codec.dec_w.dim() != (d, l) || codec.dec_b.len() != d {
            return Err(Error::Shape("inconsistent linear codec weights".into()));
        }
        Ok(LatentCodec::Linear(codec))
    }

    pub fn spec(&self) -> CodecSpec {
        match self {
            LatentCodec::Identity { dim } => CodecSpec {
                kind: CodecKind::Identity,
                input_dim: *dim,
                latent_dim: *dim,
            },
            LatentCodec::Linear(c) => CodecSpec {
                kind: CodecKind::LinearAutoencoder,
                input_dim: c.enc_w.ncols(),
                latent_dim: c.enc_w.nrows(),
            },
        }
    }

    pub fn input_dim(&self) -> usize {
        self.spec().input_dim
    }

    pub fn latent_dim(&self) -> usize {
        self.spec().latent_dim
    }

    /// Identity keeps the data shape; a linear codec flattens to a vector.
    pub fn latent_shape(&self, data: DataShape) -> DataShape {
        match self {
            LatentCodec::Identity { .. } => data,
            LatentCodec::Linear(c) => DataShape::Vector { dim: c.enc_w.nrows() },
        }
    }

    /// Encodes each row of `x`.
    pub fn encode(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "codec expects {} columns, got {}",
                self.input_dim(),
                x.ncols()
            )));
        }
        Ok(match self {
            LatentCodec::Identity { .. } => x.to_owned(),
            LatentCodec::Linear(c) => x.dot(&c.enc_w.t()) + &c.enc_b,
        })
    }

    pub fn decode(&self, z: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if z.ncols() != self.latent_dim() {
            return Err(Error::Shape(format!(
                "codec expects {} latent columns, got {}",
                self.latent_dim(),
                z.ncols()
            )));
        }
        Ok(match self {
            LatentCodec::Identity { .. } => z.to_owned(),
            LatentCodec::Linear(c) => z.dot(&c.dec_w.t()) + &c.dec_b,
        })
    }

    /// Mean squared reconstruction error of `decode(encode(x))` per coordinate.
    pub fn reconstruction_mse(&self, x: ArrayView2<'_, f64>) -> Result<f64> {
        let r = self.decode(self.encode(x)?.view())? - x;
        Ok(r.iter().map(|v| v * v).sum::<f64>() / r.len().max(1) as f64)
    }

    /// Named weight arrays for serialization (empty for identity).
    pub fn arrays(&self) -> Vec<(&'static str, Vec<f64>)> {
        match self {
            LatentCodec::Identity { .. } => Vec::new(),
            LatentCodec::Linear(c) => vec![
                ("codec.enc_w", c.enc_w.iter().copied().collect()),
                ("codec.enc_b", c.enc_b.to_vec()),
                ("codec.dec_w", c.dec_w.iter().copied().collect()),
                ("codec.dec_b", c.dec_b.to_vec()),
            ],
        }
    }

    pub fn from_arrays(spec: CodecSpec, mut arrays: impl FnMut(&str) -> Option<Vec<f64>>) -> Result<Self> {
        match spec.kind {
            CodecKind::Identity => Ok(LatentCodec::identity(spec.input_dim)),
            CodecKind::LinearAutoencoder => {
                let (l, d) = (spec.latent_dim, spec.input_dim);
                let mut take = |name: &str, shape: usize| -> Result<Vec<f64>> {
                    let v = arrays(name).ok_or_else(|| Error::Format(format!("missing array {name}")))?;
                    if v.len() != shape {
                        return Err(Error::Format(format!("array {name} has {} values, expected {shape}", v.len())));
                    }
                    Ok(v)
                };
                let codec = LinearCodec {
                    enc_w: Array2::from_shape_vec((l, d), take("codec.enc_w", l * d)?).expect("length checked"),
                    enc_b: Array1::from(take("codec.enc_b", l)?),
                    dec_w: Array2::from_shape_vec((d, l), take("codec.dec_w", d * l)?).expect("length checked"),
                    dec_b: Array1::from(take("codec.dec_b", d)?),
                };
                LatentCodec::linear(codec)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AutoencoderConfig {
    pub latent_dim: usize,
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for AutoencoderConfig {
    fn default() -> Self {
        Self {
            latent_dim: 64,
            steps: 1500,
            batch_size: 64,
            lr: 3e-3,
            seed: 0,
        }
    }
}

/// Trains a linear autoencoder on the rows of `data` by minibatch Adam on the
/// mean squared reconstruction error. Returns the codec and its final
/// full-data reconstruction MSE.
pub fn train_linear_autoencoder(data: ArrayView2<'_, f64>, cfg: &AutoencoderConfig) -> Result<(LatentCodec, f64)> {
    let (n, d) = data.dim();
    let l = cfg.latent_dim;
    if n == 0 || cfg.batch_size == 0 {
        return Err(Error::EmptyBatch);
    }
    if l == 0 || l > d {
        return Err(Error::InvalidArgument(format!("latent_dim must be in 1..={d}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let std = (1.0 / d as f64).sqrt();
    let enc_w = Array2::from_shape_fn((l, d), |_| {
        let v: f64 = StandardNormal.sample(&mut rng);
        std * v
    });
    let mut codec = LinearCodec {
        dec_w: enc_w.t().to_owned(),
        enc_w,
        enc_b: Array1::zeros(l),
        dec_b: data.mean_axis(Axis(0)).expect("n > 0"),
    };
    let sizes = [l * d, l, d * l, d];
    let mut params: Vec<f64> = Vec::with_capacity(sizes.iter().sum());
    let opt = AdamW {
        weight_decay: 0.0,
        ..AdamW::default()
    };
    let mut state = OptimizerState::new(sizes.iter().sum());
    let mut order: Vec<usize> = (0..n).collect();
    let mut cursor = n;
    for step in 0..cfg.steps {
        let mut idx = Vec::with_capacity(cfg.batch_size);
        while idx.len() < cfg.batch_size.min(n) {
            if cursor == n {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            idx.push(order[cursor]);
            cursor += 1;
        }
        let x = data.select(Axis(0), &idx);
        let z = x.dot(&codec.enc_w.t()) + &codec.enc_b;
        let recon = z.dot(&codec.dec_w.t()) + &codec.dec_b;
        let g = (recon - &x) * (2.0 / (idx.len() * d) as f64);
        let d_dec_w = g.t().dot(&z);
        let d_dec_b = g.sum_axis(Axis(0));
        let dz = g.dot(&codec.dec_w);
        let d_enc_w = dz.t().dot(&x);
        let d_enc_b = dz.sum_axis(Axis(0));
        let grad: Vec<f64> = d_enc_w
            .iter()
            .chain(d_enc_b.iter())
            .chain(d_dec_w.iter())
            .chain(d_dec_b.iter())
            .copied()
            .collect();
        params.clear();
        params.extend(codec.enc_w.iter().chain(codec.enc_b.iter()).chain(codec.dec_w.iter()).chain(codec.dec_b.iter()));
        let lr = cfg.lr * (1.0 - step as f64 / cfg.steps as f64);
        opt.apply(&mut params, &grad, &mut state, lr)?;
        let mut it = params.iter().copied();
        codec.enc_w.iter_mut().for_each(|v| *v = it.next().expect("sized"));
        codec.enc_b.iter_mut().for_each(|v| *v = it.next().expect("sized"));
        codec.dec_w.iter_mut().for_each(|v| *v = it.next().expect("sized"));
        codec.dec_b.iter_mut().for_each(|v| *v = it.next().expect("sized"));
    }
    let codec = LatentCodec::linear(codec)?;
    let mse = codec.reconstruction_mse(data)?;
    Ok((codec, mse))
}
