//! Tensor block exchange format.
//!
//! Layout: 8-byte magic `S2ATNSR1`, u32 LE header length, JSON header
//! `{"dtype":"f32","shape":[..],"meta":{..}}`, then the f32 LE payload in
//! row-major order (leading dimension slowest).

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"S2ATNSR1";

#[derive(Debug, Clone, PartialEq)]
pub struct TensorBlock {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
    pub meta: Map<String, Value>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    dtype: String,
    shape: Vec<usize>,
    #[serde(default)]
    meta: Map<String, Value>,
}

impl TensorBlock {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Self {
            shape,
            data,
            meta: Map::new(),
        })
    }

    pub fn with_meta(mut self, key: &str, value: Value) -> Self {
        self.meta.insert(key.to_string(), value);
        self
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Slice of channel `c` for a block whose leading dimension is channels.
    pub fn channel(&self, c: usize) -> &[f32] {
        let stride: usize = self.shape[1..].iter().product();
        &self.data[c * stride..(c + 1) * stride]
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            dtype: "f32".into(),
            shape: self.shape.clone(),
            meta: self.meta.clone(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(12 + json.len() + 4 * self.data.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Parses one block from the front of `bytes`; returns it with the bytes consumed.
    pub fn read_prefix(bytes: &[u8]) -> Result<(Self, usize)> {
        if bytes.len() < 12 || &bytes[..8] != MAGIC {
            return Err(Error::TensorFormat("magic mismatch".into()));
        }
        let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let hend = 12usize
            .checked_add(hlen)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| Error::TensorFormat("truncated header".into()))?;
        let header: Header = serde_json::from_slice(&bytes[12..hend])
            .map_err(|e| Error::TensorFormat(format!("bad header: {e}")))?;
        if header.dtype != "f32" {
            return Err(Error::TensorFormat(format!("unsupported dtype {}", header.dtype)));
        }
        let n = header
            .shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::ShapeMismatch("shape overflows".into()))?;
        let end = n
            .checked_mul(4)
            .and_then(|b| hend.checked_add(b))
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| {
                Error::ShapeMismatch(format!(
                    "header declares {n} values, payload has {} bytes",
                    bytes.len() - hend
                ))
            })?;
        let data = bytes[hend..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok((
            Self {
                shape: header.shape,
                data,
                meta: header.meta,
            },
            end,
        ))
    }

    /// Parses exactly one block; trailing bytes are a size mismatch.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (block, used) = Self::read_prefix(bytes)?;
        if used != bytes.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} trailing bytes after payload",
                bytes.len() - used
            )));
        }
        Ok(block)
    }
}

/// Concatenated blocks, as used by multi-block responses.
pub fn write_blocks(blocks: &[TensorBlock]) -> Vec<u8> {
    blocks.iter().flat_map(|b| b.to_bytes()).collect()
}

pub fn read_blocks(mut bytes: &[u8]) -> Result<Vec<TensorBlock>> {
    let mut out = Vec::new();
    while !bytes.is_empty() {
        let (b, used) = TensorBlock::read_prefix(bytes)?;
        out.push(b);
        bytes = &bytes[used..];
    }
    Ok(out)
}
