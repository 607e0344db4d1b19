//! Weight files: magic `FACETNET`, a format version byte, the input shape,
//! then one record per layer (name, kind, kind parameters) followed by an
//! `FLT1` payload for each parameter tensor (weights, then bias).
//!
//! All integers are little-endian `u32`.

use std::path::Path;

use super::{LayerKind, LayerSpec, Network};
use crate::error::{Error, Result};
use crate::tensor::{read_flt1, write_flt1, Tensor};
use crate::Scalar;

pub const WEIGHTS_MAGIC: &[u8; 8] = b"FACETNET";
pub const WEIGHTS_VERSION: u8 = 1;

fn put_u32(buf: &mut Vec<u8>, v: usize) {
    buf.extend_from_slice(&(v as u32).to_le_bytes());
}

pub fn write_weights<T: Scalar>(net: &Network<T>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    buf.extend_from_slice(WEIGHTS_MAGIC);
    buf.push(WEIGHTS_VERSION);
    put_u32(&mut buf, net.input_dims().len());
    for &d in net.input_dims() {
        put_u32(&mut buf, d);
    }
    put_u32(&mut buf, net.layers().len());
    for layer in net.layers() {
        let name = layer.spec.name.as_bytes();
        put_u32(&mut buf, name.len());
        buf.extend_from_slice(name);
        let (tag, params) = match layer.spec.kind {
            LayerKind::Conv { kernel, filters, stride, pad } => (0u8, [kernel, filters, stride, pad]),
            LayerKind::Relu => (1, [0; 4]),
            LayerKind::MaxPool { size } => (2, [size, 0, 0, 0]),
            LayerKind::Dense { units } => (3, [units, 0, 0, 0]),
            LayerKind::Softmax => (4, [0; 4]),
        };
        buf.push(tag);
        for p in params {
            put_u32(&mut buf, p);
        }
        let tensors: Vec<&Tensor<T>> = layer.weights.iter().chain(layer.bias.iter()).collect();
        put_u32(&mut buf, tensors.len());
        for t in tensors {
            write_flt1(&mut buf, t)?;
        }
    }
    Ok(buf)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let left = self.bytes.len() - self.pos;
        if left < n {
            return Err(Error::Format(format!(
                "truncated weight file reading {what} at offset {}: need {n} bytes, {left} available ({} missing)",
                self.pos,
                n - left
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn flt1<T: Scalar>(&mut self, what: &str) -> Result<Tensor<T>> {
        let mut rest = &self.bytes[self.pos..];
        let before = rest.len();
        let t = read_flt1(&mut rest).map_err(|e| match e {
            Error::Format(m) => Error::Format(format!("{what} at offset {}: {m}", self.pos)),
            other => other,
        })?;
        self.pos += before - rest.len();
        Ok(t)
    }
}

pub fn read_weights<T: Scalar>(bytes: &[u8]) -> Result<Network<T>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8, "magic")? != WEIGHTS_MAGIC {
        return Err(Error::Format("not a weight file (bad magic)".into()));
    }
    let version = r.u8("version")?;
    if version != WEIGHTS_VERSION {
        return Err(Error::Format(format!("unsupported weight file version {version}")));
    }
    let rank = r.u32("input rank")?;
    if rank == 0 || rank > 8 {
        return Err(Error::Format(format!("input rank {rank} outside 1..=8")));
    }
    let input: Vec<usize> = (0..rank).map(|_| r.u32("input extent")).collect::<Result<_>>()?;
    let count = r.u32("layer count")?;
    let mut specs = Vec::new();
    let mut payloads = Vec::new();
    for i in 0..count {
        let len = r.u32("layer name length")?;
        let name = String::from_utf8(r.take(len, "layer name")?.to_vec())
            .map_err(|_| Error::Format(format!("layer {i} name is not UTF-8")))?;
        let tag = r.u8("layer kind")?;
        let p: Vec<usize> = (0..4).map(|_| r.u32("layer parameter")).collect::<Result<_>>()?;
        let kind = match tag {
            0 => LayerKind::Conv { kernel: p[0], filters: p[1], stride: p[2], pad: p[3] },
            1 => LayerKind::Relu,
            2 => LayerKind::MaxPool { size: p[0] },
            3 => LayerKind::Dense { units: p[0] },
            4 => LayerKind::Softmax,
            t => return Err(Error::Format(format!("layer '{name}' has unknown kind tag {t}"))),
        };
        let n = r.u32("parameter count")?;
        let tensors: Vec<Tensor<T>> =
            (0..n).map(|_| r.flt1(&format!("parameters of layer '{name}'"))).collect::<Result<_>>()?;
        specs.push(LayerSpec { name, kind });
        payloads.push(tensors);
    }
    if r.pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes after last layer", bytes.len() - r.pos)));
    }
    let mut net = Network::new(&input, specs)?;
    for (layer, tensors) in net.layers_mut().iter_mut().zip(payloads) {
        let expected: Vec<&Tensor<T>> = layer.weights.iter().chain(layer.bias.iter()).collect();
        if expected.len() != tensors.len() {
            return Err(Error::Shape(format!(
                "layer '{}' expects {} parameter tensors, file has {}",
                layer.spec.name,
                expected.len(),
                tensors.len()
            )));
        }
        for (want, got) in expected.iter().zip(&tensors) {
            if want.dims() != got.dims() {
                return Err(Error::Shape(format!(
                    "layer '{}' parameter has shape {}, expected {}",
                    layer.spec.name,
                    got.shape(),
                    want.shape()
                )));
            }
        }
        if !tensors.iter().all(|t| t.is_finite()) {
            return Err(Error::Format(format!("layer '{}' has non-finite parameters", layer.spec.name)));
        }
        let mut it = tensors.into_iter();
        if layer.weights.is_some() {
            layer.weights = it.next();
            layer.bias = it.next();
        }
    }
    Ok(net)
}

pub fn save_weights<T: Scalar>(net: &Network<T>, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, write_weights(net)?)?;
    Ok(())
}

pub fn load_weights<T: Scalar>(path: impl AsRef<Path>) -> Result<Network<T>> {
    read_weights(&std::fs::read(path)?)
}
