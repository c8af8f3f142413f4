//! Checkpoint container: an 8-byte magic, a little-endian u64 header
//! length, a JSON header, then raw little-endian f64 tensors (parameters,
//! then first moments, then second moments) in canonical slot order.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{shapes, ModelConfig, ModelError, Parameters};
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"BLCKPT01";
const FORMAT: &str = "bartlab-checkpoint";
const DTYPE: &str = "f64le";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub dtype: String,
    pub config: ModelConfig,
    pub step: u64,
    pub epoch: u64,
    pub has_moments: bool,
    pub tensors: Vec<(String, Vec<usize>)>,
    #[serde(default)]
    pub extra: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub step: u64,
    pub epoch: u64,
    pub params: Parameters,
    /// Adam first and second moments.
    pub moments: Option<(Parameters, Parameters)>,
    pub extra: serde_json::Value,
}

fn format_err(msg: impl Into<String>) -> ModelError {
    ModelError::Checkpoint(msg.into())
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>, ModelError> {
        let mut tensors = Vec::new();
        self.params
            .visit(&mut |name, t| tensors.push((name, t.shape().to_vec())));
        let header = CheckpointHeader {
            format: FORMAT.into(),
            dtype: DTYPE.into(),
            config: self.config.clone(),
            step: self.step,
            epoch: self.epoch,
            has_moments: self.moments.is_some(),
            tensors,
            extra: self.extra.clone(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| format_err(e.to_string()))?;
        let mut out = Vec::with_capacity(16 + json.len() + self.params.num_scalars() as usize * 8 * 3);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        let mut write = |p: &Parameters| {
            for t in p.slots() {
                for x in t.data() {
                    out.extend_from_slice(&x.to_le_bytes());
                }
            }
        };
        write(&self.params);
        if let Some((m, v)) = &self.moments {
            write(m);
            write(v);
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(format_err("missing checkpoint magic"));
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body_start = 16usize
            .checked_add(header_len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| format_err("truncated header"))?;
        let header: CheckpointHeader =
            serde_json::from_slice(&bytes[16..body_start]).map_err(|e| format_err(e.to_string()))?;
        if header.format != FORMAT || header.dtype != DTYPE {
            return Err(format_err(format!("unsupported format {} / {}", header.format, header.dtype)));
        }
        header.config.validate()?;
        let expected = shapes(&header.config);
        let mut expected_list = Vec::new();
        expected.visit(&mut |name, s| expected_list.push((name, s.clone())));
        if expected_list != header.tensors {
            return Err(format_err("tensor table does not match the stored config"));
        }
        let mut cursor = &bytes[body_start..];
        let mut read = || -> Result<Parameters, ModelError> {
            let mut err = None;
            let p = expected.map(&mut |shape| {
                let n: usize = shape.iter().product();
                if cursor.len() < n * 8 {
                    err = Some(format_err("truncated tensor data"));
                    return Tensor::zeros(shape);
                }
                let data = cursor[..n * 8]
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                    .collect();
                cursor = &cursor[n * 8..];
                Tensor::from_vec(shape, data)
            });
            err.map_or(Ok(p), Err)
        };
        let params = read()?;
        let moments = if header.has_moments {
            let m = read()?;
            let v = read()?;
            Some((m, v))
        } else {
            None
        };
        if !cursor.is_empty() {
            return Err(format_err("trailing bytes after tensor data"));
        }
        Ok(Self {
            config: header.config,
            step: header.step,
            epoch: header.epoch,
            params,
            moments,
            extra: header.extra,
        })
    }

    /// Writes to a sibling temporary file and renames it into place.
    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("tmp");
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&bytes)?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let mut bytes = Vec::new();
        fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    /// Loads and checks that the stored architecture equals `cfg`, ignoring
    /// the dropout rate.
    pub fn load_compatible(path: &Path, cfg: &ModelConfig) -> Result<Self, ModelError> {
        let ckpt = Self::load(path)?;
        let mut stored = ckpt.config.clone();
        stored.dropout = cfg.dropout;
        if &stored != cfg {
            return Err(ModelError::Incompatible(format!(
                "checkpoint config {:?} differs from requested {:?}",
                ckpt.config, cfg
            )));
        }
        Ok(ckpt)
    }
}

pub fn checkpoint_file_name(step: u64) -> String {
    format!("ckpt_step{step}.bin")
}
