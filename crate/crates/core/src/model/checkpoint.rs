//! Binary checkpoint container: magic, version, JSON header with a tensor
//! table, then little-endian tensor data.

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig, TensorInfo};
use crate::dataset::NormalizationStats;
use crate::error::{Error, Result};
use crate::problems::DistributionConfig;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"RTGBCKPT";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    #[default]
    F64,
    F32,
}

impl Dtype {
    fn width(self) -> usize {
        match self {
            Dtype::F64 => 8,
            Dtype::F32 => 4,
        }
    }
}

/// Adam moment estimates, laid out like the parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimState {
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    /// Optimizer steps completed.
    pub step: u64,
    pub seed: u64,
    /// Trainer variant label (`ribbo`, `bc`, `bc-filter`, `algoid`).
    #[serde(default)]
    pub label: String,
    #[serde(default)]
    pub excluded_algos: Vec<String>,
    /// Serialized trainer configuration, kept for resuming.
    #[serde(default)]
    pub trainer: Option<serde_json::Value>,
    /// Task distributions of the training data.
    #[serde(default)]
    pub distributions: Vec<DistributionConfig>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub normalization: Option<NormalizationStats>,
    pub meta: TrainingMeta,
    pub optimizer: Option<OptimState>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    dtype: Dtype,
    config: ModelConfig,
    normalization: Option<NormalizationStats>,
    meta: TrainingMeta,
    #[serde(default)]
    optimizer_step: Option<u64>,
    tensors: Vec<TensorInfo>,
}

impl Checkpoint {
    pub fn new(model: Model) -> Self {
        Checkpoint {
            model,
            normalization: None,
            meta: TrainingMeta::default(),
            optimizer: None,
        }
    }

    pub fn save(&self, path: &Path, dtype: Dtype) -> Result<()> {
        let mut tensors: Vec<TensorInfo> = self.model.tensors().to_vec();
        let n = self.model.num_params();
        let mut blocks: Vec<&[f64]> = vec![self.model.params()];
        if let Some(o) = &self.optimizer {
            if o.m.len() != n || o.v.len() != n {
                return Err(Error::invalid("optimizer state does not match the model"));
            }
            for (prefix, data, base) in [("optim.m.", &o.m, n), ("optim.v.", &o.v, 2 * n)] {
                tensors.extend(self.model.tensors().iter().map(|t| TensorInfo {
                    name: format!("{prefix}{}", t.name),
                    shape: t.shape.clone(),
                    offset: base + t.offset,
                }));
                blocks.push(data);
            }
        }
        let header = Header {
            format_version: CHECKPOINT_VERSION,
            dtype,
            config: self.model.config().clone(),
            normalization: self.normalization.clone(),
            meta: self.meta.clone(),
            optimizer_step: self.optimizer.as_ref().map(|o| o.step),
            tensors,
        };
        let json = serde_json::to_vec(&header)?;
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        let mut w = BufWriter::new(fs::File::create(path)?);
        w.write_all(MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&(json.len() as u64).to_le_bytes())?;
        w.write_all(&json)?;
        for block in blocks {
            for &v in block {
                match dtype {
                    Dtype::F64 => w.write_all(&v.to_le_bytes())?,
                    Dtype::F32 => w.write_all(&(v as f32).to_le_bytes())?,
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let fail = |message: String| Error::Format {
            path: path.to_path_buf(),
            line: 0,
            message,
        };
        let mut bytes = Vec::new();
        fs::File::open(path)?.read_to_end(&mut bytes)?;
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(fail("not a checkpoint file".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(Error::Version {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let body = bytes
            .get(20..20 + hlen)
            .ok_or_else(|| fail("truncated header".into()))?;
        let header: Header = serde_json::from_slice(body)?;
        let data = &bytes[20 + hlen..];
        let w = header.dtype.width();
        let count = data.len() / w;
        if data.len() % w != 0 {
            return Err(fail("tensor data has a partial element".into()));
        }
        let value = |i: usize| -> f64 {
            let b = &data[i * w..(i + 1) * w];
            match header.dtype {
                Dtype::F64 => f64::from_le_bytes(b.try_into().unwrap()),
                Dtype::F32 => f32::from_le_bytes(b.try_into().unwrap()) as f64,
            }
        };
        let reference = super::build_layout(&header.config).0;
        let n: usize = reference.iter().map(TensorInfo::len).sum();
        let read_block = |prefix: &str| -> Result<Option<Vec<f64>>> {
            let mut out = vec![0.0; n];
            let mut found = 0;
            for r in &reference {
                let name = format!("{prefix}{}", r.name);
                let Some(t) = header.tensors.iter().find(|t| t.name == name) else {
                    continue;
                };
                if t.shape != r.shape {
                    return Err(fail(format!("tensor {name} has shape {:?}, expected {:?}", t.shape, r.shape)));
                }
                if t.offset + t.len() > count {
                    return Err(fail(format!("tensor {name} runs past the end of the data")));
                }
                for k in 0..t.len() {
                    out[r.offset + k] = value(t.offset + k);
                }
                found += 1;
            }
            match found {
                0 => Ok(None),
                f if f == reference.len() => Ok(Some(out)),
                _ => Err(fail(format!("incomplete tensor set `{prefix}*`"))),
            }
        };
        let params = read_block("")?.ok_or_else(|| fail("no model tensors".into()))?;
        let model = Model::from_params(header.config, params)?;
        let optimizer = match (read_block("optim.m.")?, read_block("optim.v.")?) {
            (Some(m), Some(v)) => Some(OptimState {
                step: header.optimizer_step.unwrap_or(header.meta.step),
                m,
                v,
            }),
            (None, None) => None,
            _ => return Err(fail("optimizer state is missing moments".into())),
        };
        Ok(Checkpoint {
            model,
            normalization: header.normalization,
            meta: header.meta,
            optimizer,
        })
    }
}
