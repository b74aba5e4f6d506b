//! CAMF0001 weight files.
//!
//! Layout:
//!
//! ```text
//! "CAMF0001"                      8 ASCII bytes
//! <canonical model spec>\n        UTF-8, includes class names
//! repeated per parameter tensor, in model order:
//!     rank: u32 LE
//!     dims: rank × u32 LE
//!     values: product(dims) × f64 LE
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::model::Model;
use crate::nn::spec::ModelSpec;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"CAMF0001";

pub fn encode_weights(model: &Model) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + model.param_count() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(model.spec().canonical().as_bytes());
    out.push(b'\n');
    for t in model.params() {
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn save_weights(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_weights(model)).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::WeightsTruncated(format!(
                "needed {n} bytes for {what} at offset {}, {} left",
                self.pos,
                self.bytes.len() - self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }
}

/// Splits off the magic and header line; returns the header text and the
/// remaining tensor payload.
fn split_header(bytes: &[u8]) -> Result<(&str, &[u8])> {
    if bytes.len() < MAGIC.len() {
        return if MAGIC.starts_with(bytes) {
            Err(Error::WeightsTruncated("file ends inside the magic".into()))
        } else {
            Err(Error::WeightsMagic)
        };
    }
    if &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::WeightsMagic);
    }
    let rest = &bytes[MAGIC.len()..];
    let nl = rest
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::WeightsTruncated("header line has no terminating newline".into()))?;
    let header = std::str::from_utf8(&rest[..nl])
        .map_err(|_| Error::WeightsCorrupt("header is not UTF-8".into()))?;
    Ok((header, &rest[nl + 1..]))
}

/// Decodes a weight file for a known spec. Nothing is returned unless every
/// tensor was read in full.
pub fn decode_weights(spec: &ModelSpec, bytes: &[u8]) -> Result<Model> {
    let (header, payload) = split_header(bytes)?;
    let expected = spec.canonical();
    if header != expected {
        return Err(Error::WeightsSpecMismatch {
            expected,
            found: header.to_string(),
        });
    }
    let mut model = Model::build(spec.clone(), 0)?;
    let mut reader = Reader {
        bytes: payload,
        pos: 0,
    };
    let mut params = Vec::with_capacity(model.params().len());
    for (i, template) in model.params().iter().enumerate() {
        let rank = reader.u32("tensor rank")? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(reader.u32("tensor dims")? as usize);
        }
        if dims != template.shape() {
            return Err(Error::WeightsCorrupt(format!(
                "parameter {i} has shape {dims:?}, spec needs {:?}",
                template.shape()
            )));
        }
        let n = template.len();
        let raw = reader.take(n * 8, "tensor values")?;
        let values = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        params.push(Tensor::from_vec(&dims, values)?);
    }
    if reader.pos != payload.len() {
        return Err(Error::WeightsCorrupt(format!(
            "{} trailing bytes after the last tensor",
            payload.len() - reader.pos
        )));
    }
    model.set_params(params)?;
    Ok(model)
}

pub fn load_weights(spec: &ModelSpec, path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_weights(spec, &bytes)
}

/// Loads a weight file using the spec recorded in its own header.
pub fn read_weights(path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (header, _) = split_header(&bytes)?;
    let spec: ModelSpec = header.parse()?;
    decode_weights(&spec, &bytes)
}
