//! Mapping between category layouts and the normalized pixel tensors the
//! flow operates on.
//!
//! Every sample is a grid of `height * width` pixels with `channels.len()`
//! retained color channels. Colors are affinely normalized with
//! `(color - center) / scale` before entering the codec.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::anchor::{self, AnchorConfig, CategoryId, PerturbationConfig, PseudoColor};
use crate::error::{Error, Result};

/// Color used to render ignored pixels in pseudo masks.
pub const VOID_COLOR: f64 = 255.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Point,
    Image,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DataShape {
    Vector { dim: usize },
    Grid { height: usize, width: usize, channels: usize },
}

impl DataShape {
    pub fn len(&self) -> usize {
        match *self {
            DataShape::Vector { dim } => dim,
            DataShape::Grid {
                height,
                width,
                channels,
            } => height * width * channels,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskGeometry {
    pub kind: TaskKind,
    pub height: usize,
    pub width: usize,
    /// Which of the three anchor color channels are kept, in order.
    pub channels: Vec<usize>,
    pub anchors: AnchorConfig,
    pub color_center: f64,
    pub color_scale: f64,
}

impl TaskGeometry {
    /// 2-D point geometry: a single "pixel" keeping the two lowest-order anchor
    /// channels, normalized so the anchors sit on `[-1, 1]`.
    pub fn point(anchors: AnchorConfig) -> Result<Self> {
        let k = u64::from(anchors.k());
        if u64::from(anchors.num_categories()) > k * k {
            return Err(Error::InvalidAnchorConfig(format!(
                "point geometry drops the leading channel, so num_categories must be <= k^2 = {}",
                k * k
            )));
        }
        if anchors.k() < 2 {
            return Err(Error::InvalidAnchorConfig(
                "point geometry needs k >= 2".into(),
            ));
        }
        let half = anchors.extent() / 2.0;
        Ok(Self {
            kind: TaskKind::Point,
            height: 1,
            width: 1,
            channels: vec![1, 2],
            anchors,
            color_center: half,
            color_scale: half,
        })
    }

    /// RGB image geometry normalized from `[0, 255]` to `[-1, 1]`.
    pub fn image(height: usize, width: usize, anchors: AnchorConfig) -> Self {
        Self {
            kind: TaskKind::Image,
            height,
            width,
            channels: vec![0, 1, 2],
            anchors,
            color_center: 127.5,
            color_scale: 127.5,
        }
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn sample_dim(&self) -> usize {
        self.pixels() * self.num_channels()
    }

    pub fn data_shape(&self) -> DataShape {
        match self.kind {
            TaskKind::Point => DataShape::Vector {
                dim: self.num_channels(),
            },
            TaskKind::Image => DataShape::Grid {
                height: self.height,
                width: self.width,
                channels: self.num_channels(),
            },
        }
    }

    pub fn normalize(&self, color: f64) -> f64 {
        (color - self.color_center) / self.color_scale
    }

    pub fn denormalize(&self, value: f64) -> f64 {
        value * self.color_scale + self.color_center
    }

    /// Renders one layout (`pixels()` categories) as normalized pseudo-mask
    /// values, optionally perturbed. Returns the values and per-value loss
    /// weights (0 on void pixels).
    pub fn render_mask<R: Rng + ?Sized>(
        &self,
        layout: &[CategoryId],
        perturbation: Option<(&PerturbationConfig, &mut R)>,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        if layout.len() != self.pixels() {
            return Err(Error::Shape(format!(
                "layout has {} cells, geometry expects {}",
                layout.len(),
                self.pixels()
            )));
        }
        let nc = self.num_channels();
        let mut values = Vec::with_capacity(self.sample_dim());
        let mut weights = Vec::with_capacity(self.sample_dim());
        let mut perturbation = perturbation;
        for (i, &c) in layout.iter().enumerate() {
            if c.is_void() {
                values.extend(std::iter::repeat_n(self.normalize(VOID_COLOR), nc));
                weights.extend(std::iter::repeat_n(0.0, nc));
                continue;
            }
            let color = anchor::encode(c, &self.anchors).map_err(|e| Error::AtPixel {
                row: i / self.width,
                col: i % self.width,
                source: Box::new(e),
            })?;
            for &ch in &self.channels {
                let mut v = color.0[ch];
                if let Some((cfg, rng)) = perturbation.as_mut() {
                    v += cfg.sample(&mut **rng);
                }
                values.push(self.normalize(v));
                weights.push(1.0);
            }
        }
        Ok((values, weights))
    }

    /// Nearest-anchor decoding of one sample's normalized values.
    pub fn decode_sample(&self, values: &[f64]) -> Vec<CategoryId> {
        let nc = self.num_channels();
        values
            .chunks_exact(nc)
            .map(|px| {
                let mut color = [0.0; 3];
                for (&ch, &v) in self.channels.iter().zip(px) {
                    color[ch] = self.denormalize(v);
                }
                anchor::decode(&PseudoColor(color), &self.anchors)
            })
            .collect()
    }

    /// Color-space position (retained channels, normalized) of the anchor for `c`.
    pub fn anchor_point(&self, c: CategoryId) -> Result<Vec<f64>> {
        let color = anchor::encode(c, &self.anchors)?;
        Ok(self
            .channels
            .iter()
            .map(|&ch| self.normalize(color.0[ch]))
            .collect())
    }
}
