use std::fmt;

use crate::error::{Error, Result};

/// Largest bit-width accepted for either the inner or the outer lattice.
pub const MAX_BITS: u32 = 16;

/// How the uniform quantization steps round.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Rounding {
    /// Round half away from zero.
    #[default]
    Nearest,
    /// Debug mode: every rounding step is replaced by the identity, so the
    /// quantizer reduces to a pure clip. Used by the null-gradient checks.
    Identity,
}

/// Number of positive steps on a `bits`-wide lattice: `2^(b-1) - 1` when
/// signed, `2^b - 1` when unsigned.
pub fn scale_factor(bits: u32, signed: bool) -> u32 {
    if signed {
        (1u32 << (bits - 1)) - 1
    } else {
        (1u32 << bits) - 1
    }
}

/// Static configuration of one quantizer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct QuantSpec {
    bits: u32,
    signed: bool,
    outer_bits: Option<u32>,
    intervals: usize,
    rounding: Rounding,
}

impl QuantSpec {
    /// `outer_bits = None` disables re-quantization; the quantizer output then
    /// stays on whatever grid the companding function produces.
    pub fn new(bits: u32, signed: bool, outer_bits: Option<u32>, intervals: usize) -> Result<Self> {
        if !(2..=MAX_BITS).contains(&bits) {
            return Err(Error::contract(format!("bit-width {bits} outside 2..={MAX_BITS}")));
        }
        if let Some(ob) = outer_bits {
            if ob <= bits || ob > MAX_BITS {
                return Err(Error::contract(format!(
                    "outer bit-width {ob} must satisfy {bits} < b' <= {MAX_BITS}"
                )));
            }
        }
        if intervals == 0 {
            return Err(Error::contract("interval count K must be at least 1"));
        }
        Ok(Self {
            bits,
            signed,
            outer_bits,
            intervals,
            rounding: Rounding::Nearest,
        })
    }

    pub fn with_rounding(mut self, rounding: Rounding) -> Self {
        self.rounding = rounding;
        self
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn signed(&self) -> bool {
        self.signed
    }

    pub fn outer_bits(&self) -> Option<u32> {
        self.outer_bits
    }

    pub fn intervals(&self) -> usize {
        self.intervals
    }

    pub fn rounding(&self) -> Rounding {
        self.rounding
    }

    pub fn scale(&self) -> u32 {
        scale_factor(self.bits, self.signed)
    }

    pub fn outer_scale(&self) -> Option<u32> {
        self.outer_bits.map(|b| scale_factor(b, self.signed))
    }

    /// Denominator of the grid the final output lives on: `s'` when
    /// re-quantizing, `s` otherwise.
    pub fn lattice_scale(&self) -> u32 {
        self.outer_scale().unwrap_or_else(|| self.scale())
    }
}

impl fmt::Display for QuantSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.signed { "s" } else { "u" };
        match self.outer_bits {
            Some(ob) => write!(f, "{sign}{}/{ob} K={}", self.bits, self.intervals),
            None => write!(f, "{sign}{} K={}", self.bits, self.intervals),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scale_factors() {
        assert_eq!(scale_factor(2, true), 1);
        assert_eq!(scale_factor(2, false), 3);
        assert_eq!(scale_factor(3, false), 7);
        assert_eq!(scale_factor(8, true), 127);
        assert_eq!(scale_factor(8, false), 255);
    }

    #[test]
    fn rejects_invalid_configs() {
        assert!(QuantSpec::new(1, true, None, 4).is_err());
        assert!(QuantSpec::new(3, true, Some(3), 4).is_err());
        assert!(QuantSpec::new(3, true, Some(2), 4).is_err());
        assert!(QuantSpec::new(3, true, Some(8), 0).is_err());
        let s = QuantSpec::new(3, false, Some(8), 16).unwrap();
        assert_eq!(s.scale(), 7);
        assert_eq!(s.outer_scale(), Some(255));
        assert_eq!(s.lattice_scale(), 255);
    }
}
