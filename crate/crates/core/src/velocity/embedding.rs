use serde::{Deserialize, Serialize};

/// How the scalar time enters the network.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum TimeEmbedding {
    /// `t` appended as one extra feature.
    ScalarAppend,
    /// `[sin(w_j t), cos(w_j t)]` with `w_j` geometric between 1 and `max_frequency`.
    Sinusoidal { dim: usize, max_frequency: f64 },
}

impl Default for TimeEmbedding {
    fn default() -> Self {
        TimeEmbedding::Sinusoidal {
            dim: 16,
            max_frequency: 64.0,
        }
    }
}

impl TimeEmbedding {
    pub fn width(&self) -> usize {
        match *self {
            TimeEmbedding::ScalarAppend => 1,
            TimeEmbedding::Sinusoidal { dim, .. } => dim,
        }
    }

    pub fn embed(&self, t: f64, out: &mut [f64]) {
        match *self {
            TimeEmbedding::ScalarAppend => out[0] = t,
            TimeEmbedding::Sinusoidal { dim, max_frequency } => {
                let half = dim / 2;
                for j in 0..half {
                    let frac = if half > 1 {
                        j as f64 / (half - 1) as f64
                    } else {
                        0.0
                    };
                    let w = max_frequency.powf(frac);
                    out[2 * j] = (w * t).sin();
                    out[2 * j + 1] = (w * t).cos();
                }
                if dim % 2 == 1 {
                    out[dim - 1] = t;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sinusoidal_is_deterministic_and_time_sensitive() {
        let e = TimeEmbedding::default();
        let mut a = vec![0.0; e.width()];
        let mut b = vec![0.0; e.width()];
        let mut c = vec![0.0; e.width()];
        e.embed(0.3, &mut a);
        e.embed(0.3, &mut b);
        e.embed(0.7, &mut c);
        assert_eq!(a, b);
        assert_ne!(a, c);
        e.embed(0.0, &mut a);
        assert_eq!(a[0], 0.0);
        assert_eq!(a[1], 1.0);
    }
}
