//! Named-tensor archive.
//!
//! Little-endian layout:
//!
//! ```text
//! "LCQC"  u32 version=1  u32 epoch
//! u32 meta_len  meta (UTF-8, key=value lines)
//! u32 count
//! count × { u32 name_len  name  u32 ndim  ndim × u32 dim  prod(dim) × f32 }
//! ```
//!
//! Network parameters, quantizer parameters, batch-norm running statistics
//! and optimizer buffers are all stored as tensors under their names.

use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::{Network, Tensor};
use crate::real::Real;

const MAGIC: &[u8; 4] = b"LCQC";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub epoch: u32,
    pub meta: String,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

impl Checkpoint {
    pub fn new(epoch: u32, meta: impl Into<String>) -> Self {
        Self {
            epoch,
            meta: meta.into(),
            tensors: Vec::new(),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<f32>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Value of `key` in the `key=value` metadata lines.
    pub fn meta_value(&self, key: &str) -> Option<&str> {
        self.meta
            .lines()
            .filter_map(|l| l.split_once('='))
            .find(|(k, _)| k.trim() == key)
            .map(|(_, v)| v.trim())
    }

    pub fn push<T: Real>(&mut self, name: impl Into<String>, t: &Tensor<T>) {
        self.tensors.push((name.into(), t.cast()));
    }

    /// Adds every parameter and buffer of `net`.
    pub fn capture<T: Real>(&mut self, net: &Network<T>) {
        for p in net.params() {
            self.push(p.name.clone(), &p.value);
        }
    }

    /// Loads matching tensors into `net` and returns how many were loaded.
    /// With `strict`, every network parameter must be present.
    pub fn restore<T: Real>(&self, net: &mut Network<T>, strict: bool) -> Result<usize> {
        let mut loaded = 0;
        for p in net.params_mut() {
            match self.get(&p.name) {
                Some(t) if t.shape() == p.value.shape() => {
                    p.value = t.cast();
                    loaded += 1;
                }
                Some(t) => {
                    return Err(Error::shape(format!(
                        "checkpoint tensor {} has shape {:?}, model expects {:?}",
                        p.name,
                        t.shape(),
                        p.value.shape()
                    )))
                }
                None if strict => {
                    return Err(Error::format("checkpoint", format!("missing tensor {}", p.name)));
                }
                None => {}
            }
        }
        Ok(loaded)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.epoch.to_le_bytes());
        put_bytes(&mut out, self.meta.as_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            put_bytes(&mut out, name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::format("checkpoint", "bad magic"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::format("checkpoint", format!("unsupported version {version}")));
        }
        let epoch = r.u32()?;
        let meta = r.string()?;
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let name = r.string()?;
            let ndim = r.u32()? as usize;
            if ndim > 8 {
                return Err(Error::format("checkpoint", format!("{name}: {ndim} dimensions")));
            }
            let shape = (0..ndim).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let raw = r.take(n.checked_mul(4).ok_or_else(|| Error::format("checkpoint", "tensor too large"))?)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            tensors.push((name, Tensor::from_vec(&shape, data)?));
        }
        if r.pos != bytes.len() {
            return Err(Error::format("checkpoint", "trailing bytes"));
        }
        Ok(Self { epoch, meta, tensors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn put_bytes(out: &mut Vec<u8>, b: &[u8]) {
    out.extend_from_slice(&(b.len() as u32).to_le_bytes());
    out.extend_from_slice(b);
}

pub(crate) struct Reader<'a> {
    pub buf: &'a [u8],
    pub pos: usize,
}

impl<'a> Reader<'a> {
    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::format("binary record", format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    pub fn i32(&mut self) -> Result<i32> {
        Ok(self.u32()? as i32)
    }

    pub fn f64(&mut self) -> Result<f64> {
        let b = self.take(8)?;
        Ok(f64::from_le_bytes(b.try_into().expect("8 bytes")))
    }

    pub fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::format("binary record", "invalid UTF-8"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Method, ModelConfig};

    #[test]
    fn bytes_round_trip_and_restore() {
        let cfg = ModelConfig::toy(Method::Lcq, 3, 3);
        let net = cfg.build::<f32>(3).unwrap();
        let mut ck = Checkpoint::new(5, format!("model={cfg}\nnote=x"));
        ck.capture(&net);
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.meta_value("note"), Some("x"));
        assert_eq!(back.meta_value("model").unwrap().parse::<ModelConfig>().unwrap(), cfg);

        let mut other = cfg.build::<f32>(4).unwrap();
        let n = back.restore(&mut other, true).unwrap();
        assert_eq!(n, net.params().len());
        for (a, b) in net.params().iter().zip(other.params()) {
            assert_eq!(a.value, b.value);
        }
    }

    #[test]
    fn corrupt_archives_are_rejected() {
        let ck = Checkpoint::new(0, "");
        let mut b = ck.to_bytes();
        assert!(Checkpoint::from_bytes(&b[..b.len() - 1]).is_err());
        b[0] = b'X';
        assert!(Checkpoint::from_bytes(&b).is_err());
    }
}
