//! Single-file checkpoints: `SFACKPT1`, a little-endian u64 header length, a
//! JSON header, then raw little-endian f32 tensors (parameters, then Adam `m`
//! and `v` when present).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autograd::Mat;
use crate::error::{Result, SfaError};
use crate::model::{Network, NetworkConfig};
use crate::nn::{Adam, AdamConfig};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SFACKPT1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TensorInfo {
    name: String,
    shape: [usize; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct AdamHeader {
    config: AdamConfig,
    step: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    config: NetworkConfig,
    config_hash: String,
    iteration: u64,
    tensors: Vec<TensorInfo>,
    adam: Option<AdamHeader>,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub network: Network,
    pub adam: Option<Adam>,
    pub iteration: u64,
}

fn parse_err(path: &Path, offset: usize, msg: impl Into<String>) -> SfaError {
    SfaError::Parse {
        path: path.to_path_buf(),
        offset: offset as u64,
        line: None,
        msg: msg.into(),
    }
}

fn push_mats(out: &mut Vec<u8>, mats: &[Mat]) {
    for m in mats {
        for v in m.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
}

impl Checkpoint {
    pub fn config_hash(&self) -> String {
        self.network.cfg.hash()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let params = &self.network.params;
        let header = Header {
            config: self.network.cfg.clone(),
            config_hash: self.config_hash(),
            iteration: self.iteration,
            tensors: params
                .names()
                .iter()
                .zip(params.values())
                .map(|(name, m)| TensorInfo {
                    name: name.clone(),
                    shape: [m.nrows(), m.ncols()],
                })
                .collect(),
            adam: self.adam.as_ref().map(|a| AdamHeader {
                config: a.config,
                step: a.step,
            }),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(16 + json.len() + 12 * params.scalar_count());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        push_mats(&mut out, params.values());
        if let Some(a) = &self.adam {
            push_mats(&mut out, &a.m);
            push_mats(&mut out, &a.v);
        }
        out
    }

    /// Writes through a temporary file so a crash never leaves a torn checkpoint.
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| SfaError::io(dir, e))?;
        }
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.to_bytes()).map_err(|e| SfaError::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| SfaError::io(path, e))
    }

    /// Loads a checkpoint. With `expected` set, a config hash mismatch is a
    /// config error unless `force` is true.
    pub fn load(path: &Path, expected: Option<&NetworkConfig>, force: bool) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| SfaError::io(path, e))?;
        Self::from_bytes(path, &bytes, expected, force)
    }

    pub fn from_bytes(path: &Path, bytes: &[u8], expected: Option<&NetworkConfig>, force: bool) -> Result<Self> {
        if !bytes.starts_with(CHECKPOINT_MAGIC) {
            return Err(parse_err(path, 0, "not a checkpoint (bad magic)"));
        }
        let len_bytes = bytes.get(8..16).ok_or_else(|| parse_err(path, 8, "truncated header length"))?;
        let header_len = u64::from_le_bytes(len_bytes.try_into().unwrap()) as usize;
        let json = bytes.get(16..16 + header_len).ok_or_else(|| parse_err(path, 16, "truncated header"))?;
        let header: Header = serde_json::from_slice(json).map_err(|e| parse_err(path, 16 + e.column(), e.to_string()))?;
        let stored = header.config.hash();
        if stored != header.config_hash {
            return Err(parse_err(path, 16, "embedded config hash does not match the embedded config"));
        }
        if let Some(cfg) = expected {
            if cfg.hash() != header.config_hash && !force {
                return Err(SfaError::Config(format!(
                    "checkpoint {} was trained with config {} but {} was requested; pass force to load anyway",
                    path.display(),
                    &header.config_hash[..12],
                    &cfg.hash()[..12]
                )));
            }
        }

        let mut network = Network::new(&header.config, 0)?;
        let names = network.params.names().to_vec();
        if names.len() != header.tensors.len() {
            return Err(parse_err(path, 16, format!("{} tensors stored, network has {}", header.tensors.len(), names.len())));
        }
        let mut offset = 16 + header_len;
        let mut read_mat = |rows: usize, cols: usize| -> Result<Mat> {
            let n = rows * cols * 4;
            let raw = bytes.get(offset..offset + n).ok_or_else(|| parse_err(path, offset, "truncated tensor data"))?;
            offset += n;
            let vals = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
            Ok(Mat::from_shape_vec((rows, cols), vals).expect("shape matches length"))
        };
        for (i, info) in header.tensors.iter().enumerate() {
            let current = &network.params.values()[i];
            if info.name != names[i] || info.shape != [current.nrows(), current.ncols()] {
                return Err(parse_err(path, 16, format!("tensor {} ({}) does not fit the network", i, info.name)));
            }
            let m = read_mat(info.shape[0], info.shape[1])?;
            network.params.values_mut()[i] = m;
        }
        let adam = match &header.adam {
            Some(h) => {
                let mut read_all = || -> Result<Vec<Mat>> { header.tensors.iter().map(|t| read_mat(t.shape[0], t.shape[1])).collect() };
                let m = read_all()?;
                let v = read_all()?;
                Some(Adam {
                    config: h.config,
                    step: h.step,
                    m,
                    v,
                })
            }
            None => None,
        };
        if offset != bytes.len() {
            return Err(parse_err(path, offset, "trailing bytes after tensor data"));
        }
        Ok(Checkpoint {
            network,
            adam,
            iteration: header.iteration,
        })
    }
}
