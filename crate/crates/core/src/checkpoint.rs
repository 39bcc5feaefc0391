//! Self-describing model files.
//!
//! Layout: the line `FLOWSEG-CHECKPOINT`, a line `header_bytes = N`, `N` bytes
//! of TOML header, then each array listed in the header as a little-endian
//! `u64` element count followed by its values (`f64` or `f32`, per the
//! header's `dtype`). The header carries a SHA-256 of everything after it.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dsm::{DsmModel, NoiseSchedule, VarianceForm};
use crate::error::{Error, Result};
use crate::flow::FlowModel;
use crate::latent::{CodecSpec, LatentCodec};
use crate::task::TaskGeometry;
use crate::velocity::{Architecture, Network};

pub const CHECKPOINT_MAGIC: &str = "FLOWSEG-CHECKPOINT";
pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    #[default]
    F64,
    F32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Flow,
    Dsm,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    /// SHA-256 of the canonical run configuration.
    pub config_hash: String,
    pub steps: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Model {
    Flow(FlowModel),
    Dsm(DsmModel),
}

impl Model {
    pub fn kind(&self) -> ModelKind {
        match self {
            Model::Flow(_) => ModelKind::Flow,
            Model::Dsm(_) => ModelKind::Dsm,
        }
    }

    pub fn geometry(&self) -> &TaskGeometry {
        match self {
            Model::Flow(m) => &m.geometry,
            Model::Dsm(m) => &m.geometry,
        }
    }

    pub fn net(&self) -> &Network {
        match self {
            Model::Flow(m) => &m.net,
            Model::Dsm(m) => &m.net,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub provenance: Provenance,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub name: String,
    pub len: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub model: ModelKind,
    pub dtype: Dtype,
    pub payload_sha256: String,
    pub parameter_count: usize,
    /// Training perturbation amplitude (flow models).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variance: Option<VarianceForm>,
    pub provenance: Provenance,
    pub geometry: TaskGeometry,
    pub codec: CodecSpec,
    pub architecture: Architecture,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<NoiseSchedule>,
    pub arrays: Vec<ArrayEntry>,
}

impl Checkpoint {
    pub fn flow(model: FlowModel, provenance: Provenance) -> Self {
        Self {
            model: Model::Flow(model),
            provenance,
        }
    }

    pub fn dsm(model: DsmModel, provenance: Provenance) -> Self {
        Self {
            model: Model::Dsm(model),
            provenance,
        }
    }

    fn arrays(&self) -> Vec<(String, Vec<f64>)> {
        let mut out = vec![("net.params".to_string(), self.model.net().params().to_vec())];
        if let Model::Flow(m) = &self.model {
            out.extend(m.codec.arrays().into_iter().map(|(n, v)| (n.to_string(), v)));
        }
        out
    }

    pub fn to_bytes(&self, dtype: Dtype) -> Result<Vec<u8>> {
        let arrays = self.arrays();
        let mut payload = Vec::new();
        for (_, values) in &arrays {
            payload.extend_from_slice(&(values.len() as u64).to_le_bytes());
            match dtype {
                Dtype::F64 => values.iter().for_each(|v| payload.extend_from_slice(&v.to_le_bytes())),
                Dtype::F32 => values.iter().for_each(|v| payload.extend_from_slice(&(*v as f32).to_le_bytes())),
            }
        }
        let (codec, beta, schedule, variance) = match &self.model {
            Model::Flow(m) => (m.codec.spec(), Some(m.beta), None, None),
            Model::Dsm(m) => (
                LatentCodec::identity(m.geometry.sample_dim()).spec(),
                None,
                Some(m.schedule.clone()),
                Some(m.variance),
            ),
        };
        let header = CheckpointHeader {
            format_version: CHECKPOINT_FORMAT_VERSION,
            model: self.model.kind(),
            dtype,
            payload_sha256: hex::encode(Sha256::digest(&payload)),
            parameter_count: self.model.net().param_count(),
            beta,
            variance,
            provenance: self.provenance.clone(),
            geometry: self.model.geometry().clone(),
            codec,
            architecture: self.model.net().architecture().clone(),
            schedule,
            arrays: arrays
                .iter()
                .map(|(n, v)| ArrayEntry {
                    name: n.clone(),
                    len: v.len(),
                })
                .collect(),
        };
        let text = toml::to_string(&header).map_err(|e| Error::Format(format!("checkpoint header: {e}")))?;
        let mut out = format!("{CHECKPOINT_MAGIC}\nheader_bytes = {}\n", text.len()).into_bytes();
        out.extend_from_slice(text.as_bytes());
        out.extend_from_slice(&payload);
        Ok(out)
    }

    /// Parses and validates only the header.
    pub fn read_header(bytes: &[u8]) -> Result<(CheckpointHeader, &[u8])> {
        let mut lines = bytes.splitn(3, |&b| b == b'\n');
        let magic = lines.next().unwrap_or_default();
        if magic != CHECKPOINT_MAGIC.as_bytes() {
            return Err(Error::Format("not a checkpoint file".into()));
        }
        let len_line = std::str::from_utf8(lines.next().unwrap_or_default())
            .map_err(|_| Error::Format("bad header length line".into()))?;
        let n: usize = len_line
            .strip_prefix("header_bytes = ")
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| Error::Format("bad header length line".into()))?;
        let rest = lines.next().unwrap_or_default();
        if rest.len() < n {
            return Err(Error::Format("truncated checkpoint header".into()));
        }
        let text = std::str::from_utf8(&rest[..n]).map_err(|_| Error::Format("header is not UTF-8".into()))?;
        #[derive(Deserialize)]
        struct Version {
            format_version: u32,
        }
        let v: Version = toml::from_str(text).map_err(|e| Error::Format(format!("checkpoint header: {e}")))?;
        if v.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::FormatVersion {
                found: v.format_version,
                expected: CHECKPOINT_FORMAT_VERSION,
            });
        }
        let header: CheckpointHeader =
            toml::from_str(text).map_err(|e| Error::Format(format!("checkpoint header: {e}")))?;
        Ok((header, &rest[n..]))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (header, payload) = Self::read_header(bytes)?;
        let digest = hex::encode(Sha256::digest(payload));
        if digest != header.payload_sha256 {
            return Err(Error::Checksum(format!(
                "checkpoint payload: expected {}, found {digest}",
                header.payload_sha256
            )));
        }
        let width = match header.dtype {
            Dtype::F64 => 8,
            Dtype::F32 => 4,
        };
        let mut arrays = std::collections::BTreeMap::new();
        let mut pos = 0;
        for entry in &header.arrays {
            let count_bytes = payload
                .get(pos..pos + 8)
                .ok_or_else(|| Error::Format(format!("truncated array {}", entry.name)))?;
            let count = u64::from_le_bytes(count_bytes.try_into().unwrap()) as usize;
            if count != entry.len {
                return Err(Error::Format(format!("array {} length {count} != header {}", entry.name, entry.len)));
            }
            pos += 8;
            let data = payload
                .get(pos..pos + count * width)
                .ok_or_else(|| Error::Format(format!("truncated array {}", entry.name)))?;
            pos += count * width;
            let values: Vec<f64> = match header.dtype {
                Dtype::F64 => data.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect(),
                Dtype::F32 => data
                    .chunks_exact(4)
                    .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
                    .collect(),
            };
            arrays.insert(entry.name.clone(), values);
        }
        if pos != payload.len() {
            return Err(Error::Format("trailing bytes after arrays".into()));
        }
        let params = arrays
            .remove("net.params")
            .ok_or_else(|| Error::Format("checkpoint lacks net.params".into()))?;
        let net = Network::from_params(header.architecture.clone(), params)?;
        let model = match header.model {
            ModelKind::Flow => {
                let codec = LatentCodec::from_arrays(header.codec, |name| arrays.remove(name))?;
                let beta = header.beta.ok_or_else(|| Error::Format("flow checkpoint lacks beta".into()))?;
                Model::Flow(FlowModel::new(header.geometry, codec, net, beta)?)
            }
            ModelKind::Dsm => {
                let schedule = header
                    .schedule
                    .ok_or_else(|| Error::Format("dsm checkpoint lacks schedule".into()))?;
                Model::Dsm(DsmModel::new(
                    header.geometry,
                    schedule,
                    net,
                    header.variance.unwrap_or_default(),
                )?)
            }
        };
        Ok(Self {
            model,
            provenance: header.provenance,
        })
    }

    pub fn save(&self, path: &Path, dtype: Dtype) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, self.to_bytes(dtype)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}
