//! Look-up-table inference.
//!
//! With an outer bit-width every quantizer output is `±α·n/s'` for an integer
//! numerator `n ∈ [0, s']`. A layer's product `w̃·ã` is therefore
//! `n_w·n_a · (α_w·α_a·σ_w)/(s'_w·s'_a)`: the integer part comes from a table
//! indexed by the two level codes and the scalar is applied once per output.
//!
//! Quantizers without an outer bit-width can take part when their levels
//! already sit on their own lattice (`s' = s`), as uniform quantizers do.

mod encode;
mod infer;

pub use encode::{encode, EncodedLayer, EncodedModel, EncodedTensor};
pub use infer::{
    conv_lattice, conv_lut, layer_operands, layer_tables, lut_infer_layer, network_tables, reference_conv, LayerOperands,
    LayerTables,
};

use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::checkpoint::Reader;
use crate::quant::{level_magnitudes, CompandingState, QuantSpec};
use crate::real::Real;

/// Largest inner bit-width for which codes fit in a byte.
pub const MAX_LUT_BITS: u32 = 8;

/// Number of table entries `m = (2^(b_w−1) − 1)(2^b_a − 1)`: nonzero weight
/// magnitudes times nonzero activation levels.
pub fn lut_elements(b_w: u32, b_a: u32) -> usize {
    ((1usize << (b_w - 1)) - 1) * ((1usize << b_a) - 1)
}

/// Table size in bytes, `(b'_w + b'_a)·m/8`.
pub fn lut_memory_bytes(b_w: u32, b_a: u32, ob_w: u32, ob_a: u32) -> f64 {
    (ob_w + ob_a) as f64 * lut_elements(b_w, b_a) as f64 / 8.0
}

/// Size of the same table holding 32-bit floats, `4m` bytes.
pub fn float_lut_memory_bytes(b_w: u32, b_a: u32) -> f64 {
    4.0 * lut_elements(b_w, b_a) as f64
}

/// Integer numerators of a quantizer's output magnitudes on its lattice.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LatticeLevels {
    /// `n_j` for inner level `j = 0..=s`; `n_0 = 0` and `n_s = s'`.
    pub numerators: Vec<i32>,
    /// Lattice denominator `s'` (or `s` without an outer bit-width).
    pub lattice: u32,
    /// Bit-width of the lattice.
    pub lattice_bits: u32,
    pub bits: u32,
    pub signed: bool,
}

impl LatticeLevels {
    /// Numerators of the quantizer's levels. Fails with a consistency error
    /// when a level is not on the lattice.
    pub fn new<T: Real>(comp: Option<&CompandingState<T>>, spec: &QuantSpec) -> Result<Self> {
        if spec.bits() > MAX_LUT_BITS {
            return Err(Error::contract(format!(
                "look-up tables support up to {MAX_LUT_BITS}-bit quantizers, got {}",
                spec.bits()
            )));
        }
        let lattice = spec.lattice_scale();
        let mags = level_magnitudes(comp, spec)?;
        Ok(Self {
            numerators: numerators_on_lattice(&mags, lattice)?,
            lattice,
            lattice_bits: spec.outer_bits().unwrap_or(spec.bits()),
            bits: spec.bits(),
            signed: spec.signed(),
        })
    }

    /// Number of nonzero level codes (`s`).
    pub fn codes(&self) -> usize {
        self.numerators.len() - 1
    }
}

/// `round(L·m)` for each magnitude, checked to lie within 1e-3 of an integer.
pub fn numerators_on_lattice<T: Real>(mags: &[T], lattice: u32) -> Result<Vec<i32>> {
    let l = lattice as f64;
    mags.iter()
        .map(|&m| {
            let x = m.to_f64_lossy() * l;
            let n = x.round();
            if (x - n).abs() > 1e-3 {
                Err(Error::Consistency(format!(
                    "level {m} is not on the 1/{lattice} lattice (scaled {x})"
                )))
            } else {
                Ok(n as i32)
            }
        })
        .collect()
}

/// Precomputed integer products for one layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Lut {
    pub b_w: u32,
    pub b_a: u32,
    pub ob_w: u32,
    pub ob_a: u32,
    /// Nonzero weight magnitudes (`2^(b_w−1) − 1`).
    pub m_w: usize,
    /// Nonzero activation levels (`2^b_a − 1`, or `2^(b_a−1) − 1` when signed).
    pub m_a: usize,
    /// Row-major `m_w × m_a`; entry `[i][j] = n_w(i+1)·n_a(j+1)`.
    pub entries: Vec<i32>,
    /// `α_w·α_a·σ_w/(s'_w·s'_a)`.
    pub rescale: f64,
}

/// Builds the product table from per-code numerators. Zero levels are not
/// stored: a zero operand is skipped.
pub fn build_lut(w: &LatticeLevels, a: &LatticeLevels, rescale: f64) -> Result<Lut> {
    if !w.signed {
        return Err(Error::contract("weight levels must come from a signed quantizer"));
    }
    if !(rescale.is_finite() && rescale > 0.0) {
        return Err(Error::Consistency(format!("rescale {rescale} must be finite and positive")));
    }
    let (m_w, m_a) = (w.codes(), a.codes());
    let mut entries = Vec::with_capacity(m_w * m_a);
    for &nw in &w.numerators[1..] {
        for &na in &a.numerators[1..] {
            let p = i64::from(nw) * i64::from(na);
            entries.push(i32::try_from(p).map_err(|_| Error::Consistency(format!("entry {p} overflows i32")))?);
        }
    }
    let lut = Lut {
        b_w: w.bits,
        b_a: a.bits,
        ob_w: w.lattice_bits,
        ob_a: a.lattice_bits,
        m_w,
        m_a,
        entries,
        rescale,
    };
    lut.check_entry_width()?;
    Ok(lut)
}

const LUT_MAGIC: &[u8; 4] = b"LCQL";
const LUT_VERSION: u32 = 1;

impl Lut {
    pub fn entry(&self, i: usize, j: usize) -> i32 {
        self.entries[i * self.m_a + j]
    }

    /// Bytes of the table at `b'_w + b'_a` bits per entry.
    pub fn memory_bytes(&self) -> f64 {
        (self.ob_w + self.ob_a) as f64 * self.entries.len() as f64 / 8.0
    }

    /// Every entry fits in `b'_w + b'_a` bits.
    pub fn check_entry_width(&self) -> Result<()> {
        let bound = 1i64 << (self.ob_w + self.ob_a);
        match self.entries.iter().find(|&&e| i64::from(e).abs() >= bound) {
            Some(e) => Err(Error::Consistency(format!(
                "entry {e} needs more than {} bits",
                self.ob_w + self.ob_a
            ))),
            None => Ok(()),
        }
    }

    /// Largest accumulated magnitude over `taps` products.
    pub fn accumulator_bound(&self, taps: usize) -> i64 {
        let max = self.entries.iter().map(|e| i64::from(*e).abs()).max().unwrap_or(0);
        max * taps as i64
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(32 + 4 * self.entries.len() + 8);
        out.extend_from_slice(LUT_MAGIC);
        for v in [
            LUT_VERSION,
            self.b_w,
            self.b_a,
            self.ob_w,
            self.ob_a,
            self.m_w as u32,
            self.m_a as u32,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for e in &self.entries {
            out.extend_from_slice(&e.to_le_bytes());
        }
        out.extend_from_slice(&self.rescale.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(4).map_err(|_| Error::format("lut", "truncated header"))? != LUT_MAGIC {
            return Err(Error::format("lut", "bad magic"));
        }
        let version = r.u32()?;
        if version != LUT_VERSION {
            return Err(Error::format("lut", format!("unsupported version {version}")));
        }
        let (b_w, b_a, ob_w, ob_a) = (r.u32()?, r.u32()?, r.u32()?, r.u32()?);
        let (m_w, m_a) = (r.u32()? as usize, r.u32()? as usize);
        if b_w > MAX_LUT_BITS || b_a > MAX_LUT_BITS || m_w.saturating_mul(m_a) > 1 << 20 {
            return Err(Error::format("lut", "implausible header"));
        }
        let entries = (0..m_w * m_a).map(|_| r.i32()).collect::<Result<Vec<_>>>()?;
        let rescale = r.f64()?;
        if r.pos != bytes.len() {
            return Err(Error::format("lut", "trailing bytes"));
        }
        Ok(Self {
            b_w,
            b_a,
            ob_w,
            ob_a,
            m_w,
            m_a,
            entries,
            rescale,
        })
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

/// Exhaustive pair check: every entry equals the product of its two
/// numerators, and `entry·rescale` equals the product of the decoded levels
/// `(α_w σ_w n_w/s'_w)(α_a n_a/s'_a)` as exact rationals. Returns the number
/// of pairs checked.
pub fn check_lut_exhaustive(
    lut: &Lut,
    w: &LatticeLevels,
    a: &LatticeLevels,
    w_scale: f64,
    a_scale: f64,
) -> Result<usize> {
    if lut.m_w != w.codes() || lut.m_a != a.codes() {
        return Err(Error::Consistency(format!(
            "table is {}×{}, levels give {}×{}",
            lut.m_w,
            lut.m_a,
            w.codes(),
            a.codes()
        )));
    }
    let want = w_scale * a_scale / (f64::from(w.lattice) * f64::from(a.lattice));
    if lut.rescale != want {
        return Err(Error::Consistency(format!("rescale {} vs {want}", lut.rescale)));
    }
    let mut n = 0;
    for i in 0..lut.m_w {
        for j in 0..lut.m_a {
            let p = i64::from(w.numerators[i + 1]) * i64::from(a.numerators[j + 1]);
            if i64::from(lut.entry(i, j)) != p {
                return Err(Error::Consistency(format!(
                    "entry [{i}][{j}] = {} but the level product is {p}",
                    lut.entry(i, j)
                )));
            }
            n += 1;
        }
    }
    lut.check_entry_width()?;
    Ok(n)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_sizes() {
        assert_eq!(lut_elements(3, 3), 21);
        assert_eq!(lut_memory_bytes(3, 3, 8, 8), 42.0);
        assert_eq!(lut_memory_bytes(3, 3, 6, 6), 31.5);
        assert_eq!(lut_memory_bytes(3, 3, 4, 4), 21.0);
        assert_eq!(float_lut_memory_bytes(3, 3), 84.0);
        assert_eq!(float_lut_memory_bytes(3, 3) / lut_memory_bytes(3, 3, 8, 8), 2.0);
    }

    #[test]
    fn build_and_round_trip() {
        let s = CompandingState::<f64>::derive(&[0.3, -0.1, 0.5, 0.0], 1.0).unwrap();
        let ws = QuantSpec::new(3, true, Some(8), 4).unwrap();
        let as_ = QuantSpec::new(3, false, Some(8), 4).unwrap();
        let w = LatticeLevels::new(Some(&s), &ws).unwrap();
        let a = LatticeLevels::new(Some(&s), &as_).unwrap();
        assert_eq!((w.codes(), a.codes()), (3, 7));
        assert_eq!(*w.numerators.last().unwrap(), 127);
        assert_eq!(*a.numerators.last().unwrap(), 255);
        let lut = build_lut(&w, &a, 0.5 / (127.0 * 255.0)).unwrap();
        assert_eq!(lut.entries.len(), 21);
        assert_eq!(lut.memory_bytes(), 42.0);
        assert_eq!(check_lut_exhaustive(&lut, &w, &a, 0.5, 1.0).unwrap(), 21);
        assert_eq!(Lut::from_bytes(&lut.to_bytes()).unwrap(), lut);
        let bytes = lut.to_bytes();
        assert!(Lut::from_bytes(&bytes[..bytes.len() - 3]).is_err());
    }

    #[test]
    fn off_lattice_levels_are_rejected() {
        let s = CompandingState::<f64>::derive(&[0.3, -0.1, 0.5, 0.0], 1.0).unwrap();
        let spec = QuantSpec::new(3, false, None, 4).unwrap();
        assert!(matches!(LatticeLevels::new(Some(&s), &spec), Err(Error::Consistency(_))));
        let uniform = LatticeLevels::new::<f64>(None, &spec).unwrap();
        assert_eq!(uniform.numerators, (0..=7).collect::<Vec<_>>());
    }
}
