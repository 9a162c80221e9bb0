//! Binary weight checkpoints.
//!
//! Layout (little-endian): magic `SPCK`, `u32` version, `u32` length and
//! UTF-8 JSON of the [`Architecture`], `u32` tensor count, then per tensor
//! `u32` name length, name, `u32` rank, `u32` dims, and `f32` values.

use std::fs;
use std::path::Path;

use super::net::{Architecture, ConvNet};
use super::NetError;
use crate::scalar::Scalar;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SPCK";
pub const CHECKPOINT_VERSION: u32 = 1;

fn put_u32(buf: &mut Vec<u8>, v: usize) {
    buf.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_tensor<T: Scalar>(buf: &mut Vec<u8>, name: &str, shape: &[usize], data: &[T]) {
    put_u32(buf, name.len());
    buf.extend_from_slice(name.as_bytes());
    put_u32(buf, shape.len());
    for &d in shape {
        put_u32(buf, d);
    }
    for v in data {
        buf.extend_from_slice(&(v.to_f64_lossy() as f32).to_le_bytes());
    }
}

pub fn encode_checkpoint<T: Scalar>(net: &ConvNet<T>) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    put_u32(&mut buf, CHECKPOINT_VERSION as usize);
    let arch = serde_json::to_vec(net.architecture()).expect("architecture serialises");
    put_u32(&mut buf, arch.len());
    buf.extend_from_slice(&arch);
    let params = net.params();
    let buffers = net.buffers();
    put_u32(&mut buf, params.len() + buffers.len());
    for p in params {
        put_tensor(&mut buf, &p.name, &p.shape, &p.value);
    }
    for (name, b) in buffers {
        put_tensor(&mut buf, &name, &[b.len()], b);
    }
    buf
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NetError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| NetError::Checkpoint("truncated file".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize, NetError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }
}

pub fn decode_checkpoint<T: Scalar>(bytes: &[u8]) -> Result<ConvNet<T>, NetError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(NetError::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION as usize {
        return Err(NetError::Checkpoint(format!("unsupported version {version}")));
    }
    let len = r.u32()?;
    let arch: Architecture = serde_json::from_slice(r.take(len)?)
        .map_err(|e| NetError::Checkpoint(format!("architecture: {e}")))?;
    let mut net = ConvNet::<T>::new(arch, 0)?;
    let count = r.u32()?;
    let mut tensors = std::collections::BTreeMap::new();
    for _ in 0..count {
        let nl = r.u32()?;
        let name = String::from_utf8(r.take(nl)?.to_vec()).map_err(|_| NetError::Checkpoint("bad tensor name".into()))?;
        let rank = r.u32()?;
        let shape: Vec<usize> = (0..rank).map(|_| r.u32()).collect::<Result<_, _>>()?;
        let n: usize = shape.iter().product();
        let raw = r.take(n.checked_mul(4).ok_or_else(|| NetError::Checkpoint("tensor too large".into()))?)?;
        let data: Vec<T> = raw
            .chunks_exact(4)
            .map(|c| T::lit(f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64))
            .collect();
        tensors.insert(name, (shape, data));
    }
    let mut take = |name: &str, len: usize| -> Result<Vec<T>, NetError> {
        let (_, data) = tensors.remove(name).ok_or_else(|| NetError::Checkpoint(format!("missing tensor {name}")))?;
        if data.len() != len {
            return Err(NetError::Checkpoint(format!("tensor {name} has {} values, expected {len}", data.len())));
        }
        Ok(data)
    };
    for p in net.params_mut() {
        p.value = take(&p.name, p.value.len())?;
    }
    for (name, b) in net.buffers_mut() {
        *b = take(&name, b.len())?;
    }
    Ok(net)
}

pub fn save_checkpoint<T: Scalar>(net: &ConvNet<T>, path: impl AsRef<Path>) -> crate::Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_checkpoint(net)).map_err(|e| crate::Error::io(path.display().to_string(), e))
}

pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> crate::Result<ConvNet<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| crate::Error::io(path.display().to_string(), e))?;
    Ok(decode_checkpoint(&bytes)?)
}
