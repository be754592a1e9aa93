//! Binary weights file, little-endian:
//!
//! ```text
//! "E2EW" | u32 version | u32 tensor count
//! per tensor: u32 name length | UTF-8 name | u32 rank | u32 dims[rank] | f32 data
//! trailing UTF-8 `key=value` lines, each terminated by '\n'
//! ```
//!
//! The metadata block carries training provenance and the architecture
//! (`input_shape`, `conv_specs`, `fc_sizes`, `output_dim`), written last so a
//! file truncated inside the block is detected.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use super::{ConvSpec, ModelError, PilotNet, PilotNetConfig};
use crate::tensor::Tensor;

pub const WEIGHTS_MAGIC: &[u8; 4] = b"E2EW";
pub const WEIGHTS_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum WeightsError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("unexpected end of file while reading {0}")]
    UnexpectedEof(String),
    #[error("not a weights file (bad magic)")]
    BadMagic,
    #[error("unsupported weights version {0}")]
    UnsupportedVersion(u32),
    #[error("malformed weights file: {0}")]
    Malformed(String),
    #[error("tensor {index} is named {found:?}, expected {expected:?}")]
    UnexpectedTensor {
        index: usize,
        expected: String,
        found: String,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingMetadata {
    pub epochs_run: usize,
    pub final_train_loss: f32,
    pub final_val_loss: f32,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedWeights {
    pub model: PilotNet<f32>,
    pub metadata: TrainingMetadata,
}

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

pub fn encode_weights(model: &PilotNet<f32>, meta: &TrainingMetadata) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(WEIGHTS_MAGIC);
    put_u32(&mut buf, WEIGHTS_VERSION);
    let params = model.params();
    put_u32(&mut buf, params.len() as u32);
    for (name, t) in PilotNet::<f32>::param_names().iter().zip(params) {
        put_u32(&mut buf, name.len() as u32);
        buf.extend_from_slice(name.as_bytes());
        put_u32(&mut buf, t.rank() as u32);
        for &d in t.shape() {
            put_u32(&mut buf, d as u32);
        }
        for &v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let c = model.config();
    let specs: Vec<String> = c
        .conv_specs
        .iter()
        .map(|s| format!("{}:{}:{}", s.out_channels, s.kernel, s.stride))
        .collect();
    let fc: Vec<String> = c.fc_sizes.iter().map(|v| v.to_string()).collect();
    let lines = [
        format!("epochs_run={}", meta.epochs_run),
        format!("final_train_loss={}", meta.final_train_loss),
        format!("final_val_loss={}", meta.final_val_loss),
        format!("seed={}", meta.seed),
        format!("input_shape={}x{}x{}", c.input_channels, c.input_height, c.input_width),
        format!("conv_specs={}", specs.join(",")),
        format!("fc_sizes={}", fc.join(",")),
        format!("output_dim={}", c.output_dim),
    ];
    for line in lines {
        buf.extend_from_slice(line.as_bytes());
        buf.push(b'\n');
    }
    buf
}

pub fn save_weights(model: &PilotNet<f32>, meta: &TrainingMetadata, path: impl AsRef<Path>) -> Result<(), WeightsError> {
    let path = path.as_ref();
    fs::write(path, encode_weights(model, meta)).map_err(|source| WeightsError::Io {
        path: path.to_path_buf(),
        source,
    })
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], WeightsError> {
        if self.buf.len() - self.pos < n {
            return Err(WeightsError::UnexpectedEof(what.to_string()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32, WeightsError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

fn parse_usize(key: &str, v: &str) -> Result<usize, WeightsError> {
    v.parse()
        .map_err(|_| WeightsError::Malformed(format!("metadata {key}={v:?} is not an integer")))
}

fn parse_config(meta: &BTreeMap<String, String>) -> Result<PilotNetConfig, WeightsError> {
    let get = |k: &str| {
        meta.get(k)
            .map(String::as_str)
            .ok_or_else(|| WeightsError::UnexpectedEof(format!("metadata key {k}")))
    };
    let shape: Vec<usize> = get("input_shape")?
        .split('x')
        .map(|v| parse_usize("input_shape", v))
        .collect::<Result<_, _>>()?;
    let [input_channels, input_height, input_width] = shape[..] else {
        return Err(WeightsError::Malformed("input_shape must be CxHxW".into()));
    };
    let conv_specs = get("conv_specs")?
        .split(',')
        .map(|s| {
            let parts: Vec<usize> = s.split(':').map(|v| parse_usize("conv_specs", v)).collect::<Result<_, _>>()?;
            match parts[..] {
                [o, k, st] => Ok(ConvSpec::new(o, k, st)),
                _ => Err(WeightsError::Malformed(format!("conv spec {s:?}"))),
            }
        })
        .collect::<Result<_, _>>()?;
    let fc_sizes = get("fc_sizes")?
        .split(',')
        .map(|v| parse_usize("fc_sizes", v))
        .collect::<Result<_, _>>()?;
    let output_dim = parse_usize("output_dim", get("output_dim")?)?;
    Ok(PilotNetConfig {
        input_channels,
        input_height,
        input_width,
        conv_specs,
        fc_sizes,
        output_dim,
    })
}

pub fn decode_weights(bytes: &[u8]) -> Result<LoadedWeights, WeightsError> {
    let mut cur = Cursor { buf: bytes, pos: 0 };
    if cur.take(4, "magic")? != WEIGHTS_MAGIC {
        return Err(WeightsError::BadMagic);
    }
    let version = cur.u32("version")?;
    if version != WEIGHTS_VERSION {
        return Err(WeightsError::UnsupportedVersion(version));
    }
    let count = cur.u32("tensor count")? as usize;
    let names = PilotNet::<f32>::param_names();
    if count != names.len() {
        return Err(WeightsError::Malformed(format!(
            "{count} tensors, architecture has {}",
            names.len()
        )));
    }
    let mut params = Vec::with_capacity(count);
    for (index, expected) in names.iter().enumerate() {
        let ctx = format!("tensor {index}");
        let len = cur.u32(&ctx)? as usize;
        let name = std::str::from_utf8(cur.take(len, &ctx)?)
            .map_err(|_| WeightsError::Malformed(format!("{ctx} name is not UTF-8")))?;
        if name != expected {
            return Err(WeightsError::UnexpectedTensor {
                index,
                expected: expected.clone(),
                found: name.to_string(),
            });
        }
        let rank = cur.u32(name)? as usize;
        if rank == 0 || rank > 4 {
            return Err(WeightsError::Malformed(format!("{name} has rank {rank}")));
        }
        let shape: Vec<usize> = (0..rank).map(|_| cur.u32(name).map(|d| d as usize)).collect::<Result<_, _>>()?;
        let numel: usize = shape.iter().product();
        let raw = cur.take(numel * 4, name)?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        params.push(Tensor::new(&shape, data).map_err(ModelError::from)?);
    }

    let rest = &bytes[cur.pos..];
    let text = std::str::from_utf8(rest).map_err(|_| WeightsError::Malformed("metadata is not UTF-8".into()))?;
    if !text.is_empty() && !text.ends_with('\n') {
        return Err(WeightsError::UnexpectedEof("metadata line".into()));
    }
    let mut meta = BTreeMap::new();
    for line in text.lines() {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| WeightsError::Malformed(format!("metadata line {line:?}")))?;
        meta.insert(k.to_string(), v.to_string());
    }
    let config = parse_config(&meta)?;
    let model = PilotNet::from_params(config, params)?;
    let num = |k: &str| meta.get(k).map(String::as_str).unwrap_or("0");
    let metadata = TrainingMetadata {
        epochs_run: parse_usize("epochs_run", num("epochs_run"))?,
        final_train_loss: num("final_train_loss")
            .parse()
            .map_err(|_| WeightsError::Malformed("final_train_loss".into()))?,
        final_val_loss: num("final_val_loss")
            .parse()
            .map_err(|_| WeightsError::Malformed("final_val_loss".into()))?,
        seed: num("seed").parse().map_err(|_| WeightsError::Malformed("seed".into()))?,
    };
    Ok(LoadedWeights { model, metadata })
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<LoadedWeights, WeightsError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| WeightsError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode_weights(&bytes)
}
