//! Flat text record describing one trained quantizer.
//!
//! One record per line:
//!
//! ```text
//! lcq-quantizer v1 layer=<id> role=<weight|activation> signed=<0|1> b=<bits> b_outer=<bits|-> K=<intervals> kind=<companding|uniform> alpha=<f64> theta=<f64>,<f64>,...
//! ```
//!
//! Floats use Rust's shortest round-trip formatting, so a write/read cycle is
//! lossless. `theta` is empty for `kind=uniform`.

use std::fmt;
use std::str::FromStr;

use super::spec::QuantSpec;
use crate::error::{Error, Result};

const MAGIC: &str = "lcq-quantizer";
const VERSION: &str = "v1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Role {
    Weight,
    Activation,
}

impl Role {
    pub fn as_str(&self) -> &'static str {
        match self {
            Role::Weight => "weight",
            Role::Activation => "activation",
        }
    }
}

impl FromStr for Role {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "weight" => Ok(Role::Weight),
            "activation" => Ok(Role::Activation),
            other => Err(Error::format("quantizer record", format!("unknown role {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuantRecord {
    pub layer: String,
    pub role: Role,
    pub spec: QuantSpec,
    /// `false` for the plain uniform quantizer.
    pub companding: bool,
    pub alpha: f64,
    pub theta: Vec<f64>,
}

impl fmt::Display for QuantRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let outer = self.spec.outer_bits().map_or_else(|| "-".to_string(), |b| b.to_string());
        let theta: Vec<String> = self.theta.iter().map(|t| t.to_string()).collect();
        write!(
            f,
            "{MAGIC} {VERSION} layer={} role={} signed={} b={} b_outer={} K={} kind={} alpha={} theta={}",
            self.layer,
            self.role.as_str(),
            u8::from(self.spec.signed()),
            self.spec.bits(),
            outer,
            self.spec.intervals(),
            if self.companding { "companding" } else { "uniform" },
            self.alpha,
            theta.join(",")
        )
    }
}

impl FromStr for QuantRecord {
    type Err = Error;

    fn from_str(line: &str) -> Result<Self> {
        let bad = |r: String| Error::format("quantizer record", r);
        let mut tokens = line.split_whitespace();
        if tokens.next() != Some(MAGIC) {
            return Err(bad(format!("missing {MAGIC:?} tag")));
        }
        match tokens.next() {
            Some(VERSION) => {}
            other => return Err(bad(format!("unsupported version {other:?}"))),
        }
        let mut get = std::collections::HashMap::new();
        for tok in tokens {
            let (k, v) = tok.split_once('=').ok_or_else(|| bad(format!("token {tok:?} is not key=value")))?;
            get.insert(k, v);
        }
        let field = |k: &str| get.get(k).copied().ok_or_else(|| bad(format!("missing field {k}")));
        let num = |k: &str| -> Result<u32> { field(k)?.parse().map_err(|_| bad(format!("bad integer in {k}"))) };

        let signed = match field("signed")? {
            "0" => false,
            "1" => true,
            o => return Err(bad(format!("bad signed flag {o:?}"))),
        };
        let outer = match field("b_outer")? {
            "-" => None,
            o => Some(o.parse().map_err(|_| bad(format!("bad b_outer {o:?}")))?),
        };
        let intervals = num("K")? as usize;
        let spec = QuantSpec::new(num("b")?, signed, outer, intervals)?;
        let companding = match field("kind")? {
            "companding" => true,
            "uniform" => false,
            o => return Err(bad(format!("unknown kind {o:?}"))),
        };
        let alpha: f64 = field("alpha")?.parse().map_err(|_| bad("bad alpha".into()))?;
        let theta_txt = field("theta")?;
        let theta = if theta_txt.is_empty() {
            Vec::new()
        } else {
            theta_txt
                .split(',')
                .map(|t| t.parse::<f64>().map_err(|_| bad(format!("bad theta entry {t:?}"))))
                .collect::<Result<Vec<_>>>()?
        };
        if companding && theta.len() != intervals {
            return Err(bad(format!("expected {intervals} theta values, got {}", theta.len())));
        }
        Ok(QuantRecord {
            layer: field("layer")?.to_string(),
            role: field("role")?.parse()?,
            spec,
            companding,
            alpha,
            theta,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn record_round_trips() {
        let rec = QuantRecord {
            layer: "conv2".into(),
            role: Role::Weight,
            spec: QuantSpec::new(3, true, Some(8), 4).unwrap(),
            companding: true,
            alpha: 2.718281828459045,
            theta: vec![0.1, -0.25, 1e-17, 3.0],
        };
        let line = rec.to_string();
        assert!(line.starts_with("lcq-quantizer v1 layer=conv2 role=weight signed=1 b=3 b_outer=8 K=4"));
        assert_eq!(line.parse::<QuantRecord>().unwrap(), rec);
    }

    #[test]
    fn uniform_record_without_outer_bits() {
        let line = "lcq-quantizer v1 layer=fc role=activation signed=0 b=8 b_outer=- K=16 kind=uniform alpha=8 theta=";
        let rec: QuantRecord = line.parse().unwrap();
        assert_eq!(rec.spec.outer_bits(), None);
        assert!(!rec.companding);
        assert_eq!(rec.to_string(), line);
    }

    #[test]
    fn malformed_records_are_rejected() {
        assert!("nope v1".parse::<QuantRecord>().is_err());
        assert!("lcq-quantizer v9 layer=a".parse::<QuantRecord>().is_err());
        let short = "lcq-quantizer v1 layer=a role=weight signed=1 b=3 b_outer=8 K=4 kind=companding alpha=1 theta=0,0";
        assert!(short.parse::<QuantRecord>().is_err());
    }
}
