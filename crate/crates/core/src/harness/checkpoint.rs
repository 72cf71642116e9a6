//! Binary checkpoint container shared by the codec and the dynamics model.
//!
//! ```text
//! magic     8 bytes            "HARPCODC" or "HARPDYNA"
//! version   u32                currently 1
//! meta_len  u32
//! meta      meta_len bytes     UTF-8 JSON: model configuration and provenance
//! count     u32                number of tensors
//! count × {
//!   name_len u32, name bytes (UTF-8)
//!   ndim u32, dims u32 × ndim
//!   data f32 × Π dims
//! }
//! ```
//! Every integer and float is little-endian. Tensors appear in parameter
//! order, so save → load → save reproduces the same bytes.

use std::fs;
use std::path::Path;

use lvp_tensor::Tensor;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::codec::{Codec, CodecConfig};
use crate::dynamics::{DynamicsConfig, Transformer};
use crate::params::{hex, ParamSet};
use crate::{Error, Result};

pub const CODEC_MAGIC: &[u8; 8] = b"HARPCODC";
pub const DYNAMICS_MAGIC: &[u8; 8] = b"HARPDYNA";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub magic: [u8; 8],
    pub meta: Value,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Reader<'_> {
    fn fail(&self, msg: impl Into<String>) -> Error {
        Error::Format {
            path: self.path.to_path_buf(),
            msg: msg.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.fail(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
}

impl Checkpoint {
    pub fn from_params(magic: &[u8; 8], meta: Value, params: &ParamSet<f32>) -> Checkpoint {
        Checkpoint {
            magic: *magic,
            meta,
            tensors: params.iter().map(|(n, t)| (n.to_string(), t.clone())).collect(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&self.magic);
        put_u32(&mut out, VERSION as usize);
        let meta = serde_json::to_vec(&self.meta).expect("json value serializes");
        put_u32(&mut out, meta.len());
        out.extend_from_slice(&meta);
        put_u32(&mut out, self.tensors.len());
        for (name, t) in &self.tensors {
            put_u32(&mut out, name.len());
            out.extend_from_slice(name.as_bytes());
            put_u32(&mut out, t.shape().len());
            for &d in t.shape() {
                put_u32(&mut out, d);
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], expect: &[u8; 8], path: &Path) -> Result<Checkpoint> {
        let mut r = Reader { bytes, pos: 0, path };
        let magic: [u8; 8] = r.take(8)?.try_into().unwrap();
        if &magic != expect {
            return Err(r.fail(format!(
                "expected magic {:?}, found {:?}",
                String::from_utf8_lossy(expect),
                String::from_utf8_lossy(&magic)
            )));
        }
        let version = r.u32()?;
        if version != VERSION as usize {
            return Err(r.fail(format!("unsupported version {version}")));
        }
        let n = r.u32()?;
        let meta: Value = serde_json::from_slice(r.take(n)?).map_err(|e| r.fail(format!("metadata: {e}")))?;
        let count = r.u32()?;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let n = r.u32()?;
            let name = String::from_utf8(r.take(n)?.to_vec()).map_err(|_| r.fail("tensor name is not UTF-8"))?;
            let ndim = r.u32()?;
            let dims: Vec<usize> = (0..ndim).map(|_| r.u32()).collect::<Result<_>>()?;
            let numel: usize = dims.iter().product();
            let data: Vec<f32> = r
                .take(4 * numel)?
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                .collect();
            let t = Tensor::new(&dims, data).map_err(|e| r.fail(format!("tensor {name}: {e}")))?;
            tensors.push((name, t));
        }
        if r.pos != bytes.len() {
            return Err(r.fail(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Checkpoint { magic, meta, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<String> {
        let bytes = self.to_bytes();
        fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
        Ok(hash_bytes(&bytes))
    }

    /// Reads a checkpoint and returns it with the SHA-256 of its bytes.
    pub fn load(path: &Path, expect: &[u8; 8]) -> Result<(Checkpoint, String)> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok((Checkpoint::from_bytes(&bytes, expect, path)?, hash_bytes(&bytes)))
    }

    fn meta_field<T: DeserializeOwned>(&self, key: &str, path: &Path) -> Result<T> {
        let v = self.meta.get(key).cloned().ok_or_else(|| Error::Format {
            path: path.to_path_buf(),
            msg: format!("metadata has no `{key}`"),
        })?;
        serde_json::from_value(v).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            msg: format!("metadata `{key}`: {e}"),
        })
    }
}

pub fn hash_bytes(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("config serializes")
}

pub fn codec_checkpoint(codec: &Codec) -> Checkpoint {
    let meta = serde_json::json!({ "codec": to_value(&codec.config) });
    Checkpoint::from_params(CODEC_MAGIC, meta, &codec.params)
}

/// Writes the codec and returns its content hash (SHA-256 of the file).
pub fn save_codec(codec: &Codec, path: &Path) -> Result<String> {
    codec_checkpoint(codec).save(path)
}

pub fn load_codec(path: &Path) -> Result<(Codec, String)> {
    let (ck, hash) = Checkpoint::load(path, CODEC_MAGIC)?;
    let config: CodecConfig = ck.meta_field("codec", path)?;
    let codec = Codec::from_tensors(config, ck.tensors).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    Ok((codec, hash))
}

pub fn dynamics_checkpoint(model: &Transformer, codec_hash: &str) -> Checkpoint {
    let meta = serde_json::json!({
        "dynamics": to_value(&model.config),
        "codec_hash": codec_hash,
    });
    Checkpoint::from_params(DYNAMICS_MAGIC, meta, &model.params)
}

pub fn save_dynamics(model: &Transformer, codec_hash: &str, path: &Path) -> Result<String> {
    dynamics_checkpoint(model, codec_hash).save(path)
}

/// Loads a dynamics model, the codec hash it was trained against, and the
/// hash of the dynamics file itself.
pub fn load_dynamics(path: &Path) -> Result<(Transformer, String, String)> {
    let (ck, hash) = Checkpoint::load(path, DYNAMICS_MAGIC)?;
    let config: DynamicsConfig = ck.meta_field("dynamics", path)?;
    let codec_hash: String = ck.meta_field("codec_hash", path)?;
    let model = Transformer::from_tensors(config, ck.tensors).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    Ok((model, codec_hash, hash))
}

/// Refuses a dynamics model trained against a different codec.
pub fn check_codec_hash(expected: &str, actual: &str) -> Result<()> {
    if expected != actual {
        return Err(Error::Mismatch(format!(
            "dynamics model was trained with codec {expected}, but the given codec is {actual}"
        )));
    }
    Ok(())
}
