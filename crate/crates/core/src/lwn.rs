//! Limited weight normalization.
//!
//! Weights are standardized with their own mean and (population) standard
//! deviation, quantized, and then scaled back by the standard deviation only:
//! `w̃ = σ·Q((w − μ)/σ)`. The mean is not restored. Both statistics are
//! treated as constants in the backward pass, so `∂L/∂w = ∂L/∂w̃` under the
//! straight-through rule.

use crate::error::Result;
use crate::nn::Tensor;
use crate::quant::{lcq_forward, lcq_forward_requant, CompandingState, QuantSpec};
use crate::real::Real;

/// Lower bound on σ for constant weight tensors.
pub const SIGMA_FLOOR: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WeightStats<T> {
    pub mu: T,
    pub sigma: T,
}

/// Mean and population standard deviation (`1/n`), σ floored at [`SIGMA_FLOOR`].
pub fn weight_stats<T: Real>(w: &[T]) -> WeightStats<T> {
    if w.is_empty() {
        return WeightStats {
            mu: T::zero(),
            sigma: T::lit(SIGMA_FLOOR),
        };
    }
    let n = T::lit(w.len() as f64);
    let mean = w.iter().fold(T::zero(), |a, &x| a + x) / n;
    let var = w.iter().fold(T::zero(), |a, &x| a + (x - mean) * (x - mean)) / n;
    WeightStats {
        mu: mean,
        sigma: var.sqrt().max(T::lit(SIGMA_FLOOR)),
    }
}

/// How a weight tensor is prepared before and after quantization.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum WeightNorm {
    /// `σ·Q((w − μ)/σ)`.
    #[default]
    Limited,
    /// `Q((w − μ)/σ)`: standardized, never rescaled.
    StandardizeOnly,
    /// `Q(w)`.
    Off,
}

impl WeightNorm {
    pub fn as_str(&self) -> &'static str {
        match self {
            WeightNorm::Limited => "lwn",
            WeightNorm::StandardizeOnly => "standardize",
            WeightNorm::Off => "off",
        }
    }

    /// Quantizer input for weight `w`.
    #[inline]
    pub fn normalize<T: Real>(&self, w: T, st: &WeightStats<T>) -> T {
        match self {
            WeightNorm::Off => w,
            _ => (w - st.mu) / st.sigma,
        }
    }

    /// Factor applied to the quantizer output.
    #[inline]
    pub fn output_scale<T: Real>(&self, st: &WeightStats<T>) -> T {
        match self {
            WeightNorm::Limited => st.sigma,
            _ => T::one(),
        }
    }

    /// `∂(normalized w)/∂w` with frozen statistics.
    #[inline]
    pub fn input_scale<T: Real>(&self, st: &WeightStats<T>) -> T {
        match self {
            WeightNorm::Off => T::one(),
            _ => T::one() / st.sigma,
        }
    }
}

impl std::str::FromStr for WeightNorm {
    type Err = crate::error::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lwn" => Ok(WeightNorm::Limited),
            "standardize" => Ok(WeightNorm::StandardizeOnly),
            "off" => Ok(WeightNorm::Off),
            o => Err(crate::error::Error::Config(format!("unknown weight normalization {o:?}"))),
        }
    }
}

/// Applies limited weight normalization around the companding quantizer.
/// With outer bits in `spec` the re-quantized variant is used.
pub fn lwn_quantize<T: Real>(w: &Tensor<T>, state: &CompandingState<T>, spec: &QuantSpec) -> Result<Tensor<T>> {
    let st = weight_stats(w.data());
    let out = w
        .data()
        .iter()
        .map(|&x| {
            let z = WeightNorm::Limited.normalize(x, &st);
            let q = if spec.outer_bits().is_some() {
                lcq_forward_requant(z, state, spec)?
            } else {
                lcq_forward(z, state, spec)?
            };
            Ok(st.sigma * q)
        })
        .collect::<Result<Vec<T>>>()?;
    Tensor::from_vec(w.shape(), out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stats_example() {
        let st = weight_stats(&[1.0f64, 2.0, 3.0, 4.0]);
        assert_eq!(st.mu, 2.5);
        assert!((st.sigma - 1.25f64.sqrt()).abs() < 1e-15);
        let st = weight_stats(&[-0.7f64, 0.7]);
        assert_eq!((st.mu, st.sigma), (0.0, 0.7));
    }

    #[test]
    fn constant_tensor_uses_floor() {
        let st = weight_stats(&[0.5f64; 9]);
        assert_eq!(st.sigma, SIGMA_FLOOR);
        assert_eq!(WeightNorm::Limited.normalize(0.5, &st), 0.0);
    }

    #[test]
    fn lwn_keeps_sigma_scale_and_drops_mean() {
        let w = [1.0f64, 2.0, 3.0, 4.0];
        let s = CompandingState::identity(4, 1.5).unwrap();
        let spec = QuantSpec::new(3, true, Some(8), 4).unwrap();
        let out = lwn_quantize(&Tensor::from_vec(&[4], w.to_vec()).unwrap(), &s, &spec).unwrap();
        let out = out.data();
        let st = weight_stats(&w);
        for (o, x) in out.iter().zip(w) {
            let z = (x - st.mu) / st.sigma;
            let want = st.sigma * lcq_forward_requant(z, &s, &spec).unwrap();
            assert_eq!(*o, want);
        }
        // Symmetric input: symmetric output, no mean restored.
        assert_eq!(out[0], -out[3]);
        assert_eq!(out[1], -out[2]);
    }

    #[test]
    fn identity_rounding_returns_centered_weights() {
        let w = Tensor::from_vec(&[3], vec![0.5f64, 1.0, 3.0]).unwrap();
        let s = CompandingState::identity(4, 10.0).unwrap();
        let spec = QuantSpec::new(3, true, None, 4).unwrap().with_rounding(crate::quant::Rounding::Identity);
        let out = lwn_quantize(&w, &s, &spec).unwrap();
        let mu = 1.5;
        for (o, x) in out.data().iter().zip(w.data()) {
            assert!((o - (x - mu)).abs() < 1e-14);
        }
    }

    #[test]
    fn modes_round_trip_names() {
        for m in [WeightNorm::Limited, WeightNorm::StandardizeOnly, WeightNorm::Off] {
            assert_eq!(m.as_str().parse::<WeightNorm>().unwrap(), m);
        }
    }
}
