//! Named-tensor checkpoint container, all integers and floats little-endian:
//!
//! ```text
//! magic        4 bytes  "RVXR"
//! version      u32      1
//! config_len   u32      length of the JSON text that follows
//! config       UTF-8    ModelConfig as JSON
//! best_acc     f64      best test accuracy
//! best_epoch   u32      epoch that produced it (1-based)
//! count        u32      number of tensors
//! per tensor:
//!   name_len   u32
//!   name       UTF-8
//!   rank       u32
//!   dims       rank × u64
//!   payload    product(dims) × f64
//! ```

use std::io::Write;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::tensor::Tensor;
use crate::vit::{ModelConfig, ModelError, ViTParams};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"RVXR";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic: expected RVXR, found {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("checkpoint does not fit the model: {0}")]
    Mismatch(ModelError),
}

type Result<T> = std::result::Result<T, CheckpointError>;

/// Best model of a run together with its config and score.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ViTParams,
    pub best_accuracy: f64,
    pub best_epoch: usize,
}

impl Checkpoint {
    pub fn config(&self) -> &ModelConfig {
        self.params.config()
    }
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Vec<u8> {
    let config = serde_json::to_string(ckpt.config()).expect("config serializes");
    let mut out = Vec::with_capacity(64 + 8 * ckpt.params.num_params());
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(config.len() as u32).to_le_bytes());
    out.extend_from_slice(config.as_bytes());
    out.extend_from_slice(&ckpt.best_accuracy.to_le_bytes());
    out.extend_from_slice(&(ckpt.best_epoch as u32).to_le_bytes());
    let named = ckpt.params.named_tensors();
    out.extend_from_slice(&(named.len() as u32).to_le_bytes());
    for (name, t) in named {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| {
            CheckpointError::Corrupt(format!("truncated while reading {what} at byte {}", self.pos))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn utf8(&mut self, n: usize, what: &str) -> Result<&'a str> {
        std::str::from_utf8(self.take(n, what)?)
            .map_err(|_| CheckpointError::Corrupt(format!("{what} is not UTF-8")))
    }
}

/// Parses and validates a checkpoint; tensors must match the embedded
/// config exactly. Nothing is returned unless the whole file is valid.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let magic: [u8; 4] = r
        .take(4, "magic")
        .map_err(|_| CheckpointError::BadMagic(pad_magic(bytes)))?
        .try_into()
        .unwrap();
    if magic != CHECKPOINT_MAGIC {
        return Err(CheckpointError::BadMagic(magic));
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let config_len = r.u32("config length")? as usize;
    let config: ModelConfig = serde_json::from_str(r.utf8(config_len, "config")?)
        .map_err(|e| CheckpointError::Corrupt(format!("config: {e}")))?;
    config
        .validate()
        .map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
    let best_accuracy = r.f64("best accuracy")?;
    let best_epoch = r.u32("best epoch")? as usize;
    let count = r.u32("tensor count")? as usize;
    let expected = ViTParams::layout(&config).len();
    if count != expected {
        return Err(CheckpointError::Corrupt(format!(
            "{count} tensors stored, config needs {expected}"
        )));
    }
    let mut named = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = r.u32("name length")? as usize;
        let name = r.utf8(name_len, "tensor name")?.to_string();
        let rank = r.u32("rank")? as usize;
        if rank == 0 || rank > 8 {
            return Err(CheckpointError::Corrupt(format!("tensor {name} has rank {rank}")));
        }
        let dims = (0..rank)
            .map(|_| r.u64("dims").map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let numel = dims
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| CheckpointError::Corrupt(format!("tensor {name} is too large")))?;
        let payload = r.take(
            numel
                .checked_mul(8)
                .ok_or_else(|| CheckpointError::Corrupt(format!("tensor {name} is too large")))?,
            &format!("payload of {name}"),
        )?;
        let data = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let t = Tensor::new(dims, data)
            .map_err(|e| CheckpointError::Corrupt(format!("tensor {name}: {e}")))?;
        named.push((name, t));
    }
    if r.pos != bytes.len() {
        return Err(CheckpointError::Corrupt(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    let params = ViTParams::from_named(config, named)
        .map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
    Ok(Checkpoint {
        params,
        best_accuracy,
        best_epoch,
    })
}

fn pad_magic(bytes: &[u8]) -> [u8; 4] {
    let mut m = [0u8; 4];
    for (d, s) in m.iter_mut().zip(bytes) {
        *d = *s;
    }
    m
}

/// Writes to a sibling temp file, then renames over `path`.
pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let io = |source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut tmp_name = path.file_name().unwrap_or_default().to_os_string();
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    let mut f = std::fs::File::create(&tmp).map_err(io)?;
    f.write_all(&encode_checkpoint(ckpt)).map_err(io)?;
    f.sync_all().map_err(io)?;
    drop(f);
    std::fs::rename(&tmp, path).map_err(io)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode_checkpoint(&bytes)
}

/// Loads a checkpoint and checks it against the config the caller expects;
/// a mismatch names the first tensor that does not fit.
pub fn load_checkpoint_for(path: &Path, expected: &ModelConfig) -> Result<Checkpoint> {
    let ckpt = load_checkpoint(path)?;
    if ckpt.config() == expected {
        return Ok(ckpt);
    }
    let named = ckpt
        .params
        .named_tensors()
        .into_iter()
        .map(|(n, t)| (n, t.clone()))
        .collect();
    match ViTParams::from_named(expected.clone(), named) {
        Ok(params) => Ok(Checkpoint { params, ..ckpt }),
        Err(e) => Err(CheckpointError::Mismatch(e)),
    }
}
