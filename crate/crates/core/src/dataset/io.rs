//! Binary array files and the dataset manifest.
//!
//! Array layout: 8 magic bytes, `u16` format version, `u8` dtype tag
//! (1 = f32, 2 = f64, 3 = u32), `u8` rank, `rank` little-endian `u64`
//! dimensions, then the row-major little-endian payload.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Dataset, Split, SplitName, SplitSizes, TaskSpec};
use crate::anchor::CategoryId;
use crate::error::{Error, Result};

pub const ARRAY_MAGIC: &[u8; 8] = b"FSARRAY\0";
pub const ARRAY_FORMAT_VERSION: u16 = 1;
pub const MANIFEST_FORMAT_VERSION: u32 = 1;
pub const MANIFEST_NAME: &str = "manifest.toml";

#[derive(Clone, Debug, PartialEq)]
pub enum ArrayData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    U32(Vec<u32>),
}

impl ArrayData {
    fn tag(&self) -> u8 {
        match self {
            ArrayData::F32(_) => 1,
            ArrayData::F64(_) => 2,
            ArrayData::U32(_) => 3,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            ArrayData::F32(v) => v.len(),
            ArrayData::F64(v) => v.len(),
            ArrayData::U32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dtype_name(&self) -> &'static str {
        match self {
            ArrayData::F32(_) => "f32",
            ArrayData::F64(_) => "f64",
            ArrayData::U32(_) => "u32",
        }
    }

    /// Values widened to `f64`.
    pub fn to_f64(&self) -> Vec<f64> {
        match self {
            ArrayData::F32(v) => v.iter().map(|&x| f64::from(x)).collect(),
            ArrayData::F64(v) => v.clone(),
            ArrayData::U32(v) => v.iter().map(|&x| f64::from(x)).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RawArray {
    pub shape: Vec<usize>,
    pub data: ArrayData,
}

impl RawArray {
    pub fn new(shape: Vec<usize>, data: ArrayData) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!("shape {shape:?} holds {n} values, got {}", data.len())));
        }
        Ok(Self { shape, data })
    }
}

pub fn write_array<W: Write>(w: &mut W, array: &RawArray) -> Result<()> {
    if array.shape.len() > u8::MAX as usize {
        return Err(Error::Shape("rank above 255".into()));
    }
    let mut buf = Vec::with_capacity(16 + 8 * array.shape.len() + 8 * array.data.len());
    buf.extend_from_slice(ARRAY_MAGIC);
    buf.extend_from_slice(&ARRAY_FORMAT_VERSION.to_le_bytes());
    buf.push(array.data.tag());
    buf.push(array.shape.len() as u8);
    for &d in &array.shape {
        buf.extend_from_slice(&(d as u64).to_le_bytes());
    }
    match &array.data {
        ArrayData::F32(v) => v.iter().for_each(|x| buf.extend_from_slice(&x.to_le_bytes())),
        ArrayData::F64(v) => v.iter().for_each(|x| buf.extend_from_slice(&x.to_le_bytes())),
        ArrayData::U32(v) => v.iter().for_each(|x| buf.extend_from_slice(&x.to_le_bytes())),
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_array<R: Read>(r: &mut R) -> Result<RawArray> {
    let mut head = [0u8; 12];
    r.read_exact(&mut head).map_err(|_| Error::Format("truncated array header".into()))?;
    if &head[..8] != ARRAY_MAGIC {
        return Err(Error::Format("bad array magic".into()));
    }
    let version = u16::from_le_bytes([head[8], head[9]]);
    if version != ARRAY_FORMAT_VERSION {
        return Err(Error::FormatVersion {
            found: u32::from(version),
            expected: u32::from(ARRAY_FORMAT_VERSION),
        });
    }
    let tag = head[10];
    let rank = head[11] as usize;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        let mut b = [0u8; 8];
        r.read_exact(&mut b).map_err(|_| Error::Format("truncated array shape".into()))?;
        shape.push(usize::try_from(u64::from_le_bytes(b)).map_err(|_| Error::Format("dimension too large".into()))?);
    }
    let n = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Format("array size overflows".into()))?;
    let width = match tag {
        1 | 3 => 4,
        2 => 8,
        other => return Err(Error::Format(format!("unknown dtype tag {other}"))),
    };
    let mut payload = Vec::new();
    r.take((n * width) as u64).read_to_end(&mut payload)?;
    if payload.len() != n * width {
        return Err(Error::Format(format!("payload has {} bytes, expected {}", payload.len(), n * width)));
    }
    let data = match tag {
        1 => ArrayData::F32(payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect()),
        2 => ArrayData::F64(payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect()),
        _ => ArrayData::U32(payload.chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().unwrap())).collect()),
    };
    Ok(RawArray { shape, data })
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestFile {
    pub split: SplitName,
    /// `images` or `labels`.
    pub role: String,
    /// Relative to the manifest's directory.
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub seed: u64,
    pub splits: SplitSizes,
    pub task: TaskSpec,
    pub files: Vec<ManifestFile>,
}

impl Manifest {
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Version {
            format_version: u32,
        }
        let v: Version = toml::from_str(text).map_err(|e| Error::Format(format!("manifest: {e}")))?;
        if v.format_version != MANIFEST_FORMAT_VERSION {
            return Err(Error::FormatVersion {
                found: v.format_version,
                expected: MANIFEST_FORMAT_VERSION,
            });
        }
        toml::from_str(text).map_err(|e| Error::Format(format!("manifest: {e}")))
    }

    pub fn file(&self, split: SplitName, role: &str) -> Result<&ManifestFile> {
        self.files
            .iter()
            .find(|f| f.split == split && f.role == role)
            .ok_or_else(|| Error::Format(format!("manifest lacks {} {role}", split.as_str())))
    }
}

fn split_arrays(spec: &TaskSpec, split: &Split) -> Result<(RawArray, RawArray)> {
    let n = split.len();
    let (img_shape, lbl_shape) = match spec {
        TaskSpec::Point(_) => (vec![n, split.images.ncols()], vec![n]),
        TaskSpec::Image(s) => (vec![n, s.height, s.width, 3], vec![n, s.height, s.width]),
    };
    let images = RawArray::new(img_shape, ArrayData::F32(split.images.iter().map(|&v| v as f32).collect()))?;
    let labels = RawArray::new(lbl_shape, ArrayData::U32(split.layouts.iter().map(|c| c.0).collect()))?;
    Ok((images, labels))
}

pub(super) fn save(dataset: &Dataset, dir: &Path) -> Result<Manifest> {
    fs::create_dir_all(dir)?;
    let mut files = Vec::new();
    for name in SplitName::ALL {
        let (images, labels) = split_arrays(&dataset.spec, dataset.split(name))?;
        for (role, array) in [("images", images), ("labels", labels)] {
            let mut bytes = Vec::new();
            write_array(&mut bytes, &array)?;
            let path = PathBuf::from(format!("{}_{role}.bin", name.as_str()));
            fs::write(dir.join(&path), &bytes)?;
            files.push(ManifestFile {
                split: name,
                role: role.to_string(),
                path,
                sha256: sha256_hex(&bytes),
            });
        }
    }
    let manifest = Manifest {
        format_version: MANIFEST_FORMAT_VERSION,
        seed: dataset.seed,
        splits: dataset.sizes(),
        task: dataset.spec.clone(),
        files,
    };
    fs::write(dir.join(MANIFEST_NAME), manifest.to_toml()?)?;
    Ok(manifest)
}

/// Reads one manifest entry, verifying its checksum.
pub fn read_verified(base: &Path, file: &ManifestFile) -> Result<RawArray> {
    let bytes = fs::read(base.join(&file.path))?;
    let digest = sha256_hex(&bytes);
    if digest != file.sha256 {
        return Err(Error::Checksum(format!(
            "{}: expected {}, found {digest}",
            file.path.display(),
            file.sha256
        )));
    }
    read_array(&mut bytes.as_slice())
}

pub(super) fn load(manifest_path: &Path) -> Result<Dataset> {
    let manifest = Manifest::from_toml(&fs::read_to_string(manifest_path)?)?;
    manifest.task.validate()?;
    let geometry = manifest.task.geometry()?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let mut splits = Vec::new();
    for name in SplitName::ALL {
        let images = read_verified(base, manifest.file(name, "images")?)?;
        let labels = read_verified(base, manifest.file(name, "labels")?)?;
        let n = images.shape.first().copied().unwrap_or(0);
        let expected = match name {
            SplitName::Train => manifest.splits.train,
            SplitName::Val => manifest.splits.val,
            SplitName::Test => manifest.splits.test,
        };
        if n != expected || labels.shape.first().copied().unwrap_or(0) != n {
            return Err(Error::Format(format!("{} split size mismatch", name.as_str())));
        }
        let ArrayData::F32(values) = images.data else {
            return Err(Error::Format("images must be f32".into()));
        };
        let ArrayData::U32(cats) = labels.data else {
            return Err(Error::Format("labels must be u32".into()));
        };
        if values.len() != n * geometry.sample_dim() || cats.len() != n * geometry.pixels() {
            return Err(Error::Format(format!("{} arrays do not match the task geometry", name.as_str())));
        }
        let images = Array2::from_shape_vec((n, geometry.sample_dim()), values.into_iter().map(f64::from).collect())
            .map_err(|e| Error::Shape(e.to_string()))?;
        splits.push(Split {
            images,
            layouts: cats.into_iter().map(CategoryId).collect(),
            pixels: geometry.pixels(),
        });
    }
    let test = splits.pop().expect("three splits");
    let val = splits.pop().expect("three splits");
    let train = splits.pop().expect("three splits");
    Ok(Dataset {
        spec: manifest.task,
        seed: manifest.seed,
        train,
        val,
        test,
    })
}
