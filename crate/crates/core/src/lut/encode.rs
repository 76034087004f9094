//! Level-index encoding of quantized tensors and the encoded-model file.

use std::path::Path;

use crate::error::{Error, Result};
use crate::lut::LatticeLevels;
use crate::nn::checkpoint::Reader;
use crate::nn::Tensor;
use crate::quant::{trace, Branch, CompandingState, QuantRecord, QuantSpec, Rounding};
use crate::real::Real;

/// Quantized tensor stored as level codes.
///
/// A nonzero element at inner level `j` has code `j − 1`; zeros are marked in
/// `zero` and carry code 0. Signed quantizers also record a sign bit.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedTensor {
    pub shape: Vec<usize>,
    pub codes: Vec<u8>,
    pub zero: Vec<bool>,
    /// `Some` for signed quantizers.
    pub negative: Option<Vec<bool>>,
}

/// Encodes `xs` through the quantizer `(alpha, comp, spec)`.
pub fn encode<T: Real>(
    xs: &Tensor<T>,
    alpha: T,
    comp: Option<&CompandingState<T>>,
    spec: &QuantSpec,
) -> Result<EncodedTensor> {
    if spec.rounding() == Rounding::Identity {
        return Err(Error::contract("identity rounding has no level codes"));
    }
    if spec.bits() > super::MAX_LUT_BITS {
        return Err(Error::contract(format!("{}-bit codes do not fit in a byte", spec.bits())));
    }
    let n = xs.len();
    let mut codes = vec![0u8; n];
    let mut zero = vec![true; n];
    let mut negative = spec.signed().then(|| vec![false; n]);
    for (i, &x) in xs.data().iter().enumerate() {
        let t = trace(x, alpha, comp, spec);
        if t.branch == Branch::Zero || t.level == 0 {
            continue;
        }
        zero[i] = false;
        codes[i] = (t.level - 1) as u8;
        if let Some(neg) = &mut negative {
            neg[i] = t.negative;
        }
    }
    Ok(EncodedTensor {
        shape: xs.shape().to_vec(),
        codes,
        zero,
        negative,
    })
}

impl EncodedTensor {
    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn nonzero(&self) -> usize {
        self.zero.iter().filter(|z| !**z).count()
    }

    pub fn is_negative(&self, i: usize) -> bool {
        self.negative.as_ref().is_some_and(|n| n[i])
    }

    fn check_codes(&self, levels: &LatticeLevels) -> Result<()> {
        let m = levels.codes();
        if let Some(bad) = self.codes.iter().zip(&self.zero).find(|(c, z)| !**z && usize::from(**c) >= m) {
            return Err(Error::contract(format!("code {} outside [0, {m})", bad.0)));
        }
        Ok(())
    }

    /// Signed lattice numerators `±n_j`.
    pub fn signed_numerators(&self, levels: &LatticeLevels) -> Result<Vec<i32>> {
        self.check_codes(levels)?;
        Ok((0..self.len())
            .map(|i| {
                if self.zero[i] {
                    0
                } else {
                    let n = levels.numerators[usize::from(self.codes[i]) + 1];
                    if self.is_negative(i) {
                        -n
                    } else {
                        n
                    }
                }
            })
            .collect())
    }

    /// Quantizer outputs `±α·n_j/s'`, equal to the forward pass (zeros come back as `+0`).
    pub fn decode<T: Real>(&self, levels: &LatticeLevels, alpha: T) -> Result<Tensor<T>> {
        self.check_codes(levels)?;
        let l = T::lit(f64::from(levels.lattice));
        let data = (0..self.len())
            .map(|i| {
                if self.zero[i] {
                    return T::zero();
                }
                let n = levels.numerators[usize::from(self.codes[i]) + 1];
                let v = alpha * (T::lit(f64::from(n)) / l);
                if self.is_negative(i) {
                    -v
                } else {
                    v
                }
            })
            .collect();
        Tensor::from_vec(&self.shape, data)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&(self.shape.len() as u32).to_le_bytes());
        for &d in &self.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.push(u8::from(self.negative.is_some()));
        out.extend_from_slice(&self.codes);
        out.extend(pack_bits(&self.zero));
        if let Some(neg) = &self.negative {
            out.extend(pack_bits(neg));
        }
        out
    }

    pub(crate) fn read(r: &mut Reader<'_>) -> Result<Self> {
        let ndim = r.u32()? as usize;
        if ndim > 8 {
            return Err(Error::format("encoded tensor", format!("{ndim} dimensions")));
        }
        let shape = (0..ndim).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let signed = match r.take(1)?[0] {
            0 => false,
            1 => true,
            f => return Err(Error::format("encoded tensor", format!("bad sign flag {f}"))),
        };
        let codes = r.take(n)?.to_vec();
        let zero = unpack_bits(r.take(n.div_ceil(8))?, n);
        let negative = if signed {
            Some(unpack_bits(r.take(n.div_ceil(8))?, n))
        } else {
            None
        };
        Ok(Self {
            shape,
            codes,
            zero,
            negative,
        })
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        let t = Self::read(&mut r)?;
        if r.pos != bytes.len() {
            return Err(Error::format("encoded tensor", "trailing bytes"));
        }
        Ok(t)
    }
}

fn pack_bits(bits: &[bool]) -> Vec<u8> {
    let mut out = vec![0u8; bits.len().div_ceil(8)];
    for (i, &b) in bits.iter().enumerate() {
        if b {
            out[i / 8] |= 1 << (i % 8);
        }
    }
    out
}

fn unpack_bits(bytes: &[u8], n: usize) -> Vec<bool> {
    (0..n).map(|i| bytes[i / 8] >> (i % 8) & 1 == 1).collect()
}

/// One layer of an encoded model: the weight quantizer, the encoded weights,
/// and the factor applied after the quantizer (σ with limited weight
/// normalization, 1 otherwise).
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedLayer {
    pub name: String,
    pub record: QuantRecord,
    pub weight_scale: f64,
    pub weights: EncodedTensor,
}

/// Encoded weights of every quantized layer.
///
/// ```text
/// "LCQE"  u32 version=1  u32 layers
/// layers × { u32 len name  u32 len record-line  f64 weight_scale  u32 len tensor-bytes }
/// tensor-bytes: u32 ndim, ndim × u32 dim, u8 signed, codes (1 byte each),
///               zero mask (bit-packed, LSB first), sign bits (if signed)
/// ```
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EncodedModel {
    pub layers: Vec<EncodedLayer>,
}

const MODEL_MAGIC: &[u8; 4] = b"LCQE";
const MODEL_VERSION: u32 = 1;

impl EncodedModel {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MODEL_MAGIC);
        out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.layers.len() as u32).to_le_bytes());
        let put = |out: &mut Vec<u8>, b: &[u8]| {
            out.extend_from_slice(&(b.len() as u32).to_le_bytes());
            out.extend_from_slice(b);
        };
        for l in &self.layers {
            put(&mut out, l.name.as_bytes());
            put(&mut out, l.record.to_string().as_bytes());
            out.extend_from_slice(&l.weight_scale.to_le_bytes());
            put(&mut out, &l.weights.to_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(4)? != MODEL_MAGIC {
            return Err(Error::format("encoded model", "bad magic"));
        }
        let v = r.u32()?;
        if v != MODEL_VERSION {
            return Err(Error::format("encoded model", format!("unsupported version {v}")));
        }
        let count = r.u32()? as usize;
        let mut layers = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let name = r.string()?;
            let record = r.string()?.parse()?;
            let weight_scale = r.f64()?;
            let len = r.u32()? as usize;
            let weights = EncodedTensor::from_bytes(r.take(len)?)?;
            layers.push(EncodedLayer {
                name,
                record,
                weight_scale,
                weights,
            });
        }
        if r.pos != bytes.len() {
            return Err(Error::format("encoded model", "trailing bytes"));
        }
        Ok(Self { layers })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quant::lcq_forward_requant;

    #[test]
    fn decode_reproduces_quantized_values() {
        let s = CompandingState::<f32>::derive(&[0.4, -0.3, 0.1, 0.0], 1.7).unwrap();
        for signed in [false, true] {
            let spec = QuantSpec::new(3, signed, Some(8), 4).unwrap();
            let xs: Vec<f32> = (0..200).map(|i| (i as f32 - 100.0) * 0.021).collect();
            let t = Tensor::from_vec(&[200], xs.clone()).unwrap();
            let enc = encode(&t, s.alpha(), Some(&s), &spec).unwrap();
            let levels = LatticeLevels::new(Some(&s), &spec).unwrap();
            let dec = enc.decode(&levels, s.alpha()).unwrap();
            for (x, d) in xs.iter().zip(dec.data()) {
                assert_eq!(*d, lcq_forward_requant(*x, &s, &spec).unwrap(), "x = {x}");
            }
            assert_eq!(EncodedTensor::from_bytes(&enc.to_bytes()).unwrap(), enc);
        }
    }

    #[test]
    fn out_of_range_codes_are_rejected() {
        let spec = QuantSpec::new(2, true, Some(8), 4).unwrap();
        let levels = LatticeLevels::new::<f64>(None, &spec).unwrap();
        let bad = EncodedTensor {
            shape: vec![1],
            codes: vec![3],
            zero: vec![false],
            negative: Some(vec![false]),
        };
        assert!(bad.decode::<f64>(&levels, 1.0).is_err());
    }

    #[test]
    fn model_file_round_trips() {
        let spec = QuantSpec::new(2, true, Some(8), 16).unwrap();
        let t = Tensor::from_vec(&[2, 2], vec![0.9f32, -2.0, 0.1, 0.0]).unwrap();
        let enc = encode(&t, 1.0, None, &spec).unwrap();
        assert_eq!(enc.nonzero(), 2);
        let m = EncodedModel {
            layers: vec![EncodedLayer {
                name: "conv2".into(),
                record: QuantRecord {
                    layer: "conv2".into(),
                    role: crate::quant::Role::Weight,
                    spec,
                    companding: false,
                    alpha: 1.0,
                    theta: vec![],
                },
                weight_scale: 0.25,
                weights: enc,
            }],
        };
        assert_eq!(EncodedModel::from_bytes(&m.to_bytes()).unwrap(), m);
    }
}
