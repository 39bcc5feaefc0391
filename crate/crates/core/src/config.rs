//! Run configuration: one TOML file describing a task, a model, and how to
//! train and query it.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::anchor::PerturbationConfig;
use crate::checkpoint::{Dtype, ModelKind};
use crate::dataset::{ImageTaskSpec, PointTaskSpec, SplitName, SplitSizes, TaskSpec};
use crate::dsm::{NoiseSchedule, SamplerMode, VarianceForm};
use crate::error::{Error, Result};
use crate::latent::{AutoencoderConfig, CodecKind};
use crate::metrics::Bandwidth;
use crate::sampler::{Direction, SolveConfig};
use crate::task::{DataShape, TaskKind};
use crate::training::TrainConfig;
use crate::velocity::{Architecture, TimeEmbedding};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    /// Dataset directory holding `manifest.toml`.
    pub data: PathBuf,
    /// Output directory for checkpoints, logs and command outputs.
    pub out: PathBuf,
    /// Checkpoint to read; defaults to `<out>/model.ckpt`.
    pub checkpoint: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            data: PathBuf::from("data"),
            out: PathBuf::from("out"),
            checkpoint: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CodecConfig {
    pub kind: CodecKind,
    pub latent_dim: usize,
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
}

impl Default for CodecConfig {
    fn default() -> Self {
        let ae = AutoencoderConfig::default();
        Self {
            kind: CodecKind::Identity,
            latent_dim: ae.latent_dim,
            steps: ae.steps,
            batch_size: ae.batch_size,
            lr: ae.lr,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    /// Hidden widths (MLP) or channel counts (conv). Empty selects the default.
    pub hidden: Vec<usize>,
    pub time: Option<TimeEmbedding>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DsmConfig {
    pub timesteps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub variance: VarianceForm,
    pub sampler: SamplerMode,
    pub sample_steps: usize,
}

impl Default for DsmConfig {
    fn default() -> Self {
        Self {
            timesteps: 200,
            beta_start: 5e-4,
            beta_end: 0.1,
            variance: VarianceForm::Standard,
            sampler: SamplerMode::Ddim,
            sample_steps: 200,
        }
    }
}

impl DsmConfig {
    pub fn schedule(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(self.timesteps, self.beta_start, self.beta_end)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    /// Perturbation amplitude at synthesis time; defaults to the training value.
    pub beta_prime: Option<f64>,
    /// Number of layouts taken from the head of the split.
    pub count: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            beta_prime: None,
            count: 16,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub split: SplitName,
    /// Synthesized samples per category for the two-sample statistic
    /// (point task); 0 disables it.
    pub mmd_samples: usize,
    pub permutations: usize,
    pub bandwidth: Bandwidth,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            split: SplitName::Val,
            mmd_samples: 256,
            permutations: 200,
            bandwidth: Bandwidth::Median,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub task: TaskKind,
    pub mode: ModelKind,
    pub seed: u64,
    pub checkpoint_dtype: Dtype,
    pub paths: Paths,
    pub splits: SplitSizes,
    pub point: PointTaskSpec,
    pub image: ImageTaskSpec,
    pub codec: CodecConfig,
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub solve: SolveConfig,
    pub dsm: DsmConfig,
    pub synth: SynthConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            task: TaskKind::Point,
            mode: ModelKind::Flow,
            seed: 0,
            checkpoint_dtype: Dtype::F64,
            paths: Paths::default(),
            splits: SplitSizes::default(),
            point: PointTaskSpec::default(),
            image: ImageTaskSpec::default(),
            codec: CodecConfig::default(),
            network: NetworkConfig::default(),
            train: TrainConfig::default(),
            solve: SolveConfig::default(),
            dsm: DsmConfig::default(),
            synth: SynthConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

/// What a command needs from the solver settings.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Purpose {
    Any,
    Segment,
    Synthesize,
    Train,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Validation(vec![format!("config: {}", e.message())]))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    /// SHA-256 of the canonical TOML form.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }

    pub fn task_spec(&self) -> TaskSpec {
        match self.task {
            TaskKind::Point => TaskSpec::Point(self.point.clone()),
            TaskKind::Image => TaskSpec::Image(self.image.clone()),
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.paths
            .checkpoint
            .clone()
            .unwrap_or_else(|| self.paths.out.join("model.ckpt"))
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.paths.data.join(crate::dataset::MANIFEST_NAME)
    }

    /// Network architecture for the configured task, model kind and latent size.
    pub fn architecture(&self, latent: DataShape) -> Architecture {
        let conditioned = self.mode == ModelKind::Dsm;
        let mut arch = Architecture::for_shape(latent, conditioned);
        match &mut arch {
            Architecture::Mlp { hidden, time, .. } | Architecture::Conv { hidden, time, .. } => {
                if !self.network.hidden.is_empty() {
                    *hidden = self.network.hidden.clone();
                }
                if let Some(t) = self.network.time {
                    *time = t;
                }
            }
        }
        arch
    }

    pub fn autoencoder(&self) -> AutoencoderConfig {
        AutoencoderConfig {
            latent_dim: self.codec.latent_dim,
            steps: self.codec.steps,
            batch_size: self.codec.batch_size,
            lr: self.codec.lr,
            seed: self.seed,
        }
    }

    /// Every violated constraint for the given use.
    pub fn problems(&self, purpose: Purpose) -> Vec<String> {
        let spec = self.task_spec();
        let mut p = spec.problems();
        p.extend(self.train.problems());
        if self.train.steps == 0 && purpose == Purpose::Train {
            p.push("train.steps must be >= 1".into());
        }
        p.extend(self.solve.problems());
        let anchors = spec.anchors();
        if let Err(e) = PerturbationConfig::new(self.train.beta, anchors) {
            p.push(format!("train.beta: {e}"));
        }
        if let Some(bp) = self.synth.beta_prime {
            if let Err(e) = PerturbationConfig::new(bp, anchors) {
                p.push(format!("synth.beta_prime: {e}"));
            }
        }
        match purpose {
            Purpose::Segment if self.solve.direction != Direction::Forward => {
                p.push("segmentation integrates forward; solve.direction must be \"forward\"".into())
            }
            Purpose::Synthesize if self.solve.direction != Direction::Reverse => {
                p.push("synthesis integrates in reverse; solve.direction must be \"reverse\"".into())
            }
            _ => {}
        }
        if self.splits.train == 0 {
            p.push("splits.train must be >= 1".into());
        }
        if self.codec.kind == CodecKind::LinearAutoencoder {
            if self.codec.latent_dim == 0 || self.codec.batch_size == 0 || !(self.codec.lr > 0.0) {
                p.push("codec.latent_dim, codec.batch_size and codec.lr must be positive".into());
            }
            if self.mode == ModelKind::Dsm {
                p.push("the diffusion baseline runs in pixel space; codec.kind must be \"identity\"".into());
            }
        }
        if self.mode == ModelKind::Dsm {
            match self.dsm.schedule() {
                Err(e) => p.push(format!("dsm: {e}")),
                Ok(s) if self.dsm.sample_steps == 0 || self.dsm.sample_steps > s.steps() => {
                    p.push(format!("dsm.sample_steps must lie in 1..={}", s.steps()))
                }
                Ok(_) => {}
            }
        }
        if let Bandwidth::Fixed(h) = self.eval.bandwidth {
            if !(h > 0.0 && h.is_finite()) {
                p.push("eval.bandwidth must be > 0".into());
            }
        }
        if self.eval.mmd_samples == 1 {
            p.push("eval.mmd_samples must be 0 or >= 2".into());
        }
        if self.network.hidden.contains(&0) {
            p.push("network.hidden widths must be >= 1".into());
        }
        p
    }

    pub fn validate(&self, purpose: Purpose) -> Result<()> {
        let p = self.problems(purpose);
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(p))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = RunConfig::default();
        let text = cfg.to_toml();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), cfg);
        assert!(cfg.validate(Purpose::Train).is_ok());
    }

    #[test]
    fn partial_files_fill_defaults() {
        let cfg = RunConfig::from_toml("task = \"image\"\nseed = 4\n[train]\nsteps = 10\n").unwrap();
        assert_eq!(cfg.task, TaskKind::Image);
        assert_eq!(cfg.train.steps, 10);
        assert_eq!(cfg.train.batch_size, TrainConfig::default().batch_size);
        assert_eq!(cfg.train_config().seed, 4);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(RunConfig::from_toml("sede = 1\n"), Err(Error::Validation(_))));
    }

    #[test]
    fn every_violation_listed() {
        let mut cfg = RunConfig::default();
        cfg.train.beta = 30.0;
        cfg.synth.beta_prime = Some(25.0);
        cfg.solve.steps = 0;
        cfg.train.batch_size = 0;
        let p = cfg.problems(Purpose::Synthesize);
        assert!(p.iter().any(|m| m.contains("train.beta") && m.contains("25")), "{p:?}");
        assert!(p.iter().any(|m| m.contains("synth.beta_prime")));
        assert!(p.iter().any(|m| m.contains("solve.steps")));
        assert!(p.iter().any(|m| m.contains("batch_size")));
        assert!(p.iter().any(|m| m.contains("reverse")));
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn architecture_overrides() {
        let mut cfg = RunConfig::default();
        cfg.network.hidden = vec![7, 5];
        match cfg.architecture(DataShape::Vector { dim: 2 }) {
            Architecture::Mlp { hidden, cond_dim, .. } => {
                assert_eq!(hidden, vec![7, 5]);
                assert_eq!(cond_dim, 0);
            }
            other => panic!("{other:?}"),
        }
        cfg.mode = ModelKind::Dsm;
        assert_eq!(cfg.architecture(DataShape::Vector { dim: 2 }).cond_dim(), 2);
    }
}
