//! Binary checkpoint container.
//!
//! Layout, all little-endian:
//!
//! ```text
//! magic      4 bytes ("HCNN" model, "SLLE" surrogate)
//! version    u32
//! width      u32   (embedding dimension or curve length)
//! layers     u32
//! dims       layers × (u32 out, u32 in)
//! payload    f64 arrays, layer by layer, then any trailing arrays
//! crc32      u32 over every preceding byte
//! ```
//!
//! A model layer stores `W` (row-major), bias, `c`, `u` and `v`; the
//! trailer holds the embedding mean and std followed by the temperature
//! mean and std.

use std::path::{Path, PathBuf};

use gibbsnet_autodiff::Tensor;
use serde::{Deserialize, Serialize};

use crate::layers::LipschitzLinear;
use crate::model::{layer_shapes, ModelParams, Scaler, LAYER_COUNT};
use crate::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;
pub const MODEL_MAGIC: &[u8; 4] = b"HCNN";

const HEADER_LEN: usize = 16;
const CRC_LEN: usize = 4;
/// Guard against absurd headers before allocating.
const MAX_DIM: u32 = 1 << 20;

pub(crate) struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub(crate) fn new(magic: &[u8; 4], width: usize, dims: &[(usize, usize)]) -> Self {
        let mut w = Self { buf: Vec::new() };
        w.buf.extend_from_slice(magic);
        w.u32(FORMAT_VERSION);
        w.u32(width as u32);
        w.u32(dims.len() as u32);
        for &(o, i) in dims {
            w.u32(o as u32);
            w.u32(i as u32);
        }
        w
    }

    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub(crate) fn f64s(&mut self, values: &[f64]) {
        for v in values {
            self.buf.extend_from_slice(&v.to_le_bytes());
        }
    }

    pub(crate) fn finish(mut self) -> Vec<u8> {
        let crc = crc32fast::hash(&self.buf);
        self.u32(crc);
        self.buf
    }
}

pub(crate) struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
    pub(crate) width: usize,
    pub(crate) dims: Vec<(usize, usize)>,
}

impl<'a> Reader<'a> {
    /// Checks magic, checksum and version, then reads the dimension table.
    pub(crate) fn open(bytes: &'a [u8], magic: &'static [u8; 4]) -> Result<Self> {
        if bytes.len() < magic.len() {
            return Err(Error::Truncated);
        }
        if &bytes[..4] != magic {
            return Err(Error::BadMagic {
                expected: std::str::from_utf8(magic).unwrap_or("checkpoint"),
            });
        }
        if bytes.len() < HEADER_LEN + CRC_LEN {
            return Err(Error::Truncated);
        }
        let (body, tail) = bytes.split_at(bytes.len() - CRC_LEN);
        let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
        let computed = crc32fast::hash(body);
        if stored != computed {
            return Err(Error::Checksum { stored, computed });
        }
        let mut r = Self {
            data: body,
            pos: 4,
            width: 0,
            dims: Vec::new(),
        };
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Version {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        r.width = r.dim()?;
        let layers = r.dim()?;
        for _ in 0..layers {
            let o = r.dim()?;
            let i = r.dim()?;
            r.dims.push((o, i));
        }
        Ok(r)
    }

    fn u32(&mut self) -> Result<u32> {
        let end = self.pos + 4;
        let b = self.data.get(self.pos..end).ok_or(Error::Truncated)?;
        self.pos = end;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }

    fn dim(&mut self) -> Result<usize> {
        let v = self.u32()?;
        if v > MAX_DIM {
            return Err(Error::Format(format!("dimension {v} out of range")));
        }
        Ok(v as usize)
    }

    pub(crate) fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let len = n.checked_mul(8).ok_or(Error::Truncated)?;
        let end = self.pos.checked_add(len).ok_or(Error::Truncated)?;
        let b = self.data.get(self.pos..end).ok_or(Error::Truncated)?;
        self.pos = end;
        let out: Vec<f64> = b
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format("non-finite value".into()));
        }
        Ok(out)
    }

    pub(crate) fn finish(self) -> Result<()> {
        if self.pos != self.data.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes",
                self.data.len() - self.pos
            )));
        }
        Ok(())
    }
}

pub fn encode_model(params: &ModelParams) -> Vec<u8> {
    let dims: Vec<(usize, usize)> = params.layers.iter().map(|l| l.weight.shape()).collect();
    let mut w = Writer::new(MODEL_MAGIC, params.dim, &dims);
    for l in &params.layers {
        w.f64s(l.weight.data());
        w.f64s(&l.bias);
        w.f64s(&[l.c]);
        w.f64s(&l.u);
        w.f64s(&l.v);
    }
    w.f64s(&params.embedding_scaler.mean);
    w.f64s(&params.embedding_scaler.std);
    w.f64s(&params.temperature_scaler.mean);
    w.f64s(&params.temperature_scaler.std);
    w.finish()
}

pub fn decode_model(bytes: &[u8]) -> Result<ModelParams> {
    let mut r = Reader::open(bytes, MODEL_MAGIC)?;
    let dim = r.width;
    if dim == 0 {
        return Err(Error::Format("zero embedding dimension".into()));
    }
    if r.dims.len() != LAYER_COUNT {
        return Err(Error::Dimension {
            what: "layer count",
            expected: LAYER_COUNT,
            found: r.dims.len(),
        });
    }
    let expected = layer_shapes(dim);
    let dims = r.dims.clone();
    let mut layers = Vec::with_capacity(LAYER_COUNT);
    for (&(o, i), (eo, ei)) in dims.iter().zip(expected) {
        if (o, i) != (eo, ei) {
            return Err(Error::Dimension {
                what: "layer shape",
                expected: eo * ei,
                found: o * i,
            });
        }
        let weight = Tensor::new(o, i, r.f64s(o * i)?);
        let bias = r.f64s(o)?;
        let c = r.f64s(1)?[0];
        let u = r.f64s(o)?;
        let v = r.f64s(i)?;
        layers.push(LipschitzLinear {
            weight,
            bias,
            c,
            u,
            v,
        });
    }
    let embedding_scaler = Scaler {
        mean: r.f64s(dim)?,
        std: r.f64s(dim)?,
    };
    let temperature_scaler = Scaler {
        mean: r.f64s(1)?,
        std: r.f64s(1)?,
    };
    r.finish()?;
    let params = ModelParams {
        dim,
        embedding_scaler,
        temperature_scaler,
        layers,
    };
    if params
        .embedding_scaler
        .std
        .iter()
        .chain(&params.temperature_scaler.std)
        .any(|s| *s <= 0.0)
    {
        return Err(Error::Format("non-positive scaler deviation".into()));
    }
    Ok(params)
}

pub fn save_model(params: &ModelParams, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode_model(params))?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelParams> {
    decode_model(&std::fs::read(path)?)
}

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestMember {
    pub seed: u64,
    /// Relative to the manifest's directory.
    pub checkpoint: String,
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

/// Members of an ensemble, rewritten after every finished member so an
/// aborted run leaves the completed ones listed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleManifest {
    pub format_version: u32,
    pub planned: usize,
    pub members: Vec<ManifestMember>,
}

impl EnsembleManifest {
    pub fn new(planned: usize) -> Self {
        Self {
            format_version: MANIFEST_VERSION,
            planned,
            members: Vec::new(),
        }
    }

    pub fn is_complete(&self) -> bool {
        self.members.len() == self.planned
    }

    pub fn validate(&self) -> Result<()> {
        if self.format_version != MANIFEST_VERSION {
            return Err(Error::Version {
                found: self.format_version,
                expected: MANIFEST_VERSION,
            });
        }
        if self.members.len() > self.planned {
            return Err(Error::Format(format!(
                "manifest lists {} members, planned {}",
                self.members.len(),
                self.planned
            )));
        }
        for m in &self.members {
            let p = Path::new(&m.checkpoint);
            if m.checkpoint.is_empty() || p.is_absolute() || p.components().any(|c| c.as_os_str() == "..") {
                return Err(Error::Format(format!("member path {:?} must stay inside the manifest directory", m.checkpoint)));
            }
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(text)?;
        m.validate()?;
        Ok(m)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    /// Checkpoint paths resolved against `dir`.
    pub fn paths(&self, dir: &Path) -> Vec<PathBuf> {
        self.members.iter().map(|m| dir.join(&m.checkpoint)).collect()
    }

    /// Loads every listed member; the manifest lives at `path`.
    pub fn load_members(path: impl AsRef<Path>) -> Result<Vec<ModelParams>> {
        let path = path.as_ref();
        let m = Self::load(path)?;
        if m.members.is_empty() {
            return Err(Error::Data("ensemble manifest lists no members".into()));
        }
        let dir = path.parent().unwrap_or(Path::new("."));
        m.paths(dir).iter().map(load_model).collect()
    }
}
