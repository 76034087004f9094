//! Forward quantization: the clipped uniform quantizer, the companding
//! quantizer and its re-quantized variant.
//!
//! Every element goes through [`trace`], which records the intermediate values
//! (`v`, `f(v)`, the quantized code, interval indices) that the backward pass
//! and the LUT encoder reuse.

mod companding;
mod record;
mod spec;

pub use companding::{CompandingState, PiecewiseLinear, GAMMA_FLOOR};
pub use record::{QuantRecord, Role};
pub use spec::{scale_factor, QuantSpec, Rounding, MAX_BITS};

use crate::error::{Error, Result};
use crate::real::Real;

/// `round(s·v)/s` with ties away from zero.
#[inline]
pub(crate) fn round_to_lattice<T: Real>(v: T, s: T) -> T {
    (s * v).round() / s
}

/// Uniform quantization `q_b(v) = ⌊s·v⌉ / s` of a clipped value `v ∈ [0, 1)`.
pub fn uniform_quantize<T: Real>(v: T, s: u32) -> Result<T> {
    if !(v >= T::zero() && v < T::one()) {
        return Err(Error::contract(format!("uniform_quantize input {v} outside [0, 1)")));
    }
    if s == 0 {
        return Err(Error::contract("lattice scale must be positive"));
    }
    Ok(round_to_lattice(v, T::lit(s as f64)))
}

/// Which branch of the clipped quantizer an input fell into.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Branch {
    /// `x == 0`, or `x <= 0` for an unsigned quantizer: the output is 0.
    Zero,
    /// `|x| < α`: the companding path.
    Inside,
    /// `|x| >= α`: the output saturates at `±α`.
    Saturated,
}

/// Everything the forward pass computed for one element.
#[derive(Clone, Copy, Debug)]
pub struct Trace<T> {
    pub branch: Branch,
    /// Sign applied to the magnitude (0 in the zero branch).
    pub negative: bool,
    /// Clipped input `|x|/α` (0 outside the inside branch).
    pub v: T,
    /// Compressed value `f(v)`.
    pub u: T,
    /// Quantized compressed value `q_b(f(v))`, before any ε correction.
    pub vq: T,
    /// Input-side interval of `v`.
    pub i: usize,
    /// Output-side interval of `v_q` after the ε correction.
    pub j: usize,
    /// Companding value `g(v)` in `[0, 1]` (1 when saturated).
    pub g: T,
    /// Integer level index on the inner lattice (`0..=s`).
    pub level: u32,
    /// `Q_L(x)`.
    pub out: T,
    /// `Q'_L(x)`: `Q_L` followed by outer re-quantization (equal to `out`
    /// when the spec has no outer bit-width).
    pub out_outer: T,
}

#[inline]
fn signed_value<T: Real>(negative: bool, alpha: T, magnitude: T) -> T {
    let y = alpha * magnitude;
    if negative {
        -y
    } else {
        y
    }
}

/// Traces one element through the clipped quantizer.
///
/// `comp = None` is the uniform quantizer (the compressing function is the
/// identity and is skipped entirely).
#[inline]
pub fn trace<T: Real>(x: T, alpha: T, comp: Option<&CompandingState<T>>, spec: &QuantSpec) -> Trace<T> {
    let zero = T::zero();
    let one = T::one();
    let s = spec.scale();
    let s_t = T::lit(s as f64);
    let outer = spec.outer_scale();

    let mut t = Trace {
        branch: Branch::Zero,
        negative: false,
        v: zero,
        u: zero,
        vq: zero,
        i: 0,
        j: 0,
        g: zero,
        level: 0,
        out: zero,
        out_outer: zero,
    };
    if x == zero || (!spec.signed() && x < zero) || x.is_nan() {
        return t;
    }
    let negative = x < zero;
    let ax = x.abs();
    t.negative = negative;

    if ax >= alpha {
        let top = comp.map_or(0, |c| c.intervals() - 1);
        t.branch = Branch::Saturated;
        t.v = one;
        t.u = one;
        t.vq = one;
        t.i = top;
        t.j = top;
        t.g = one;
        t.level = s;
        t.out = signed_value(negative, alpha, one);
        t.out_outer = t.out;
        return t;
    }

    t.branch = Branch::Inside;
    let v = ax / alpha;
    t.v = v;
    let identity = spec.rounding() == Rounding::Identity;

    match comp {
        None => {
            t.u = v;
            t.vq = if identity { v } else { round_to_lattice(v, s_t) };
            t.g = t.vq;
        }
        Some(c) => {
            let map = c.map();
            let i = map.input_interval(v);
            let u = map.compress_in(v, i);
            t.i = i;
            t.u = u;
            t.vq = if identity { u } else { round_to_lattice(u, s_t) };
            let vq_eps = if t.vq >= one { one - T::ulp_one() } else { t.vq };
            t.j = map.output_interval(vq_eps);
            t.g = map.expand_unchecked(t.vq);
        }
    }
    t.level = if identity {
        0
    } else {
        (s_t * t.u).round().to_f64_lossy() as u32
    };
    t.out = signed_value(negative, alpha, t.g);
    t.out_outer = match outer {
        Some(so) if !identity => signed_value(negative, alpha, round_to_lattice(t.g, T::lit(so as f64))),
        _ => t.out,
    };
    t
}

fn check_alpha<T: Real>(alpha: T) -> Result<()> {
    if alpha.is_finite() && alpha > T::zero() {
        Ok(())
    } else {
        Err(Error::contract(format!("clip alpha {alpha} must be finite and positive")))
    }
}

/// Clipped uniform quantizer `sgn(x)·α·q_b(|x|/α)`, saturating at `±α`.
/// Unsigned specs map `x <= 0` to 0.
pub fn clip_uniform_quantize<T: Real>(x: T, alpha: T, spec: &QuantSpec) -> Result<T> {
    check_alpha(alpha)?;
    Ok(trace(x, alpha, None, spec).out)
}

/// Clipped uniform quantizer followed by outer re-quantization.
pub fn clip_uniform_quantize_requant<T: Real>(x: T, alpha: T, spec: &QuantSpec) -> Result<T> {
    check_alpha(alpha)?;
    Ok(trace(x, alpha, None, spec).out_outer)
}

/// Companding function `g(v) = f⁻¹(q_b(f(v)))` for `v ∈ [0, 1)`.
pub fn compand<T: Real>(v: T, state: &CompandingState<T>, spec: &QuantSpec) -> Result<T> {
    if !(v >= T::zero() && v < T::one()) {
        return Err(Error::contract(format!("compand input {v} outside [0, 1)")));
    }
    check_intervals(state, spec)?;
    let map = state.map();
    let u = map.compress_unchecked(v);
    let vq = match spec.rounding() {
        Rounding::Identity => u,
        Rounding::Nearest => round_to_lattice(u, T::lit(spec.scale() as f64)),
    };
    Ok(map.expand_unchecked(vq))
}

fn check_intervals<T: Real>(state: &CompandingState<T>, spec: &QuantSpec) -> Result<()> {
    if state.intervals() != spec.intervals() {
        return Err(Error::contract(format!(
            "state has {} intervals, spec expects {}",
            state.intervals(),
            spec.intervals()
        )));
    }
    Ok(())
}

/// LCQ quantizer `Q_L(x) = sgn(x)·α·g(|x|/α)`, saturating at `±α`.
pub fn lcq_forward<T: Real>(x: T, state: &CompandingState<T>, spec: &QuantSpec) -> Result<T> {
    check_intervals(state, spec)?;
    Ok(trace(x, state.alpha(), Some(state), spec).out)
}

/// Re-quantized LCQ quantizer `Q'_L(x) = sgn(x)·α·q_{b'}(g(|x|/α))`.
pub fn lcq_forward_requant<T: Real>(x: T, state: &CompandingState<T>, spec: &QuantSpec) -> Result<T> {
    check_intervals(state, spec)?;
    if spec.outer_bits().is_none() {
        return Err(Error::contract("lcq_forward_requant needs an outer bit-width"));
    }
    Ok(trace(x, state.alpha(), Some(state), spec).out_outer)
}

/// Non-negative output magnitudes of the quantizer, one per inner level
/// `j = 0..=s`, in units of `α` (i.e. `q_{b'}(f⁻¹(j/s))`, or `f⁻¹(j/s)` without
/// re-quantization). Entry `s` is always exactly 1.
pub fn level_magnitudes<T: Real>(comp: Option<&CompandingState<T>>, spec: &QuantSpec) -> Result<Vec<T>> {
    if spec.rounding() == Rounding::Identity {
        return Err(Error::contract("identity rounding has no discrete levels"));
    }
    let s = spec.scale();
    let s_t = T::lit(s as f64);
    let outer = spec.outer_scale().map(|so| T::lit(so as f64));
    Ok((0..=s)
        .map(|j| {
            let vq = T::lit(j as f64) / s_t;
            let g = match comp {
                Some(c) => c.map().expand_unchecked(vq),
                None => vq,
            };
            match outer {
                Some(so) => round_to_lattice(g, so),
                None => g,
            }
        })
        .collect())
}

/// Every value `Q'_L` (or `Q_L` without an outer bit-width) can output,
/// sorted and deduplicated.
pub fn quant_levels<T: Real>(state: &CompandingState<T>, spec: &QuantSpec) -> Result<Vec<T>> {
    check_intervals(state, spec)?;
    levels_from_magnitudes(state.alpha(), &level_magnitudes(Some(state), spec)?, spec.signed())
}

/// [`quant_levels`] for the uniform quantizer.
pub fn uniform_levels<T: Real>(alpha: T, spec: &QuantSpec) -> Result<Vec<T>> {
    check_alpha(alpha)?;
    levels_from_magnitudes(alpha, &level_magnitudes(None, spec)?, spec.signed())
}

fn levels_from_magnitudes<T: Real>(alpha: T, mags: &[T], signed: bool) -> Result<Vec<T>> {
    let mut out: Vec<T> = mags.iter().map(|&m| signed_value(false, alpha, m)).collect();
    if signed {
        out.extend(mags.iter().map(|&m| signed_value(true, alpha, m)));
    }
    // -0.0 and 0.0 are the same level.
    for x in out.iter_mut() {
        if *x == T::zero() {
            *x = T::zero();
        }
    }
    out.sort_by(|a, b| a.partial_cmp(b).expect("levels are finite"));
    out.dedup();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unsigned(bits: u32, outer: Option<u32>, k: usize) -> QuantSpec {
        QuantSpec::new(bits, false, outer, k).unwrap()
    }

    fn signed(bits: u32, outer: Option<u32>, k: usize) -> QuantSpec {
        QuantSpec::new(bits, true, outer, k).unwrap()
    }

    fn worked_state() -> CompandingState<f64> {
        CompandingState::derive(&[3f64.ln(), 0.0], 1.0).unwrap()
    }

    #[test]
    fn uniform_quantize_examples() {
        assert_eq!(uniform_quantize(0.0, 7).unwrap(), 0.0);
        assert_eq!(uniform_quantize(0.3, 7).unwrap(), 2.0 / 7.0);
        assert_eq!(uniform_quantize(0.5, 7).unwrap(), 4.0 / 7.0);
        assert!(uniform_quantize(1.0, 7).is_err());
        assert!(uniform_quantize(-0.01, 7).is_err());
    }

    #[test]
    fn clip_uniform_examples() {
        let s2 = signed(2, None, 1);
        assert_eq!(clip_uniform_quantize(5.0, 1.0, &s2).unwrap(), 1.0);
        assert_eq!(clip_uniform_quantize(-0.4, 1.0, &s2).unwrap(), 0.0);
        assert_eq!(clip_uniform_quantize(-0.6, 1.0, &s2).unwrap(), -1.0);
        assert_eq!(clip_uniform_quantize(0.3, 1.0, &unsigned(3, None, 1)).unwrap(), 2.0 / 7.0);
        assert_eq!(clip_uniform_quantize(-0.3, 1.0, &unsigned(3, None, 1)).unwrap(), 0.0);
        assert!(clip_uniform_quantize(0.3, 0.0, &s2).is_err());
    }

    #[test]
    fn ternary_outputs() {
        let s2 = signed(2, None, 1);
        for i in -300..=300 {
            let y = clip_uniform_quantize(i as f64 / 100.0, 1.0, &s2).unwrap();
            assert!(y == -1.0 || y == 0.0 || y == 1.0);
        }
    }

    #[test]
    fn compand_examples() {
        let id = CompandingState::<f64>::identity(4, 1.0).unwrap();
        assert_eq!(compand(0.4, &id, &unsigned(2, None, 4)).unwrap(), 1.0 / 3.0);
        let s = worked_state();
        let g = compand(0.3, &s, &unsigned(2, None, 2)).unwrap();
        assert!((g - 2.0 / 9.0).abs() < 1e-15, "{g}");
    }

    #[test]
    fn lcq_forward_examples() {
        let id = CompandingState::<f64>::identity(4, 1.0).unwrap();
        let spec = unsigned(3, None, 4);
        assert_eq!(lcq_forward(2.0, &id, &spec).unwrap(), 1.0);
        assert_eq!(lcq_forward(0.3, &id, &spec).unwrap(), 2.0 / 7.0);
        assert_eq!(lcq_forward(-0.3, &id, &spec).unwrap(), 0.0);
        let bad = unsigned(3, None, 5);
        assert!(lcq_forward(0.3, &id, &bad).is_err());
    }

    #[test]
    fn requant_examples() {
        let id = CompandingState::<f64>::identity(4, 1.0).unwrap();
        let spec = unsigned(3, Some(8), 4);
        assert_eq!(lcq_forward_requant(0.3, &id, &spec).unwrap(), 73.0 / 255.0);
        assert_eq!(lcq_forward_requant(1.5, &id, &spec).unwrap(), 1.0);
        assert!(lcq_forward_requant(0.3, &id, &unsigned(3, None, 4)).is_err());
    }

    #[test]
    fn levels_examples() {
        let id = CompandingState::<f64>::identity(4, 3.0).unwrap();
        let lv = quant_levels(&id, &unsigned(2, Some(16), 4)).unwrap();
        assert_eq!(lv.len(), 4);
        for (l, want) in lv.iter().zip([0.0, 1.0, 2.0, 3.0]) {
            assert!((l - want).abs() < 1e-4);
        }
        let tern = quant_levels(&CompandingState::<f64>::identity(4, 1.0).unwrap(), &signed(2, Some(8), 4)).unwrap();
        assert_eq!(tern, vec![-1.0, 0.0, 1.0]);
    }

    #[test]
    fn worked_levels_match_hand_values() {
        // f⁻¹({0, 1/3, 2/3, 1}) = {0, 2/9, 4/9, 1}, then q_255.
        let lv = quant_levels(&worked_state(), &unsigned(2, Some(8), 2)).unwrap();
        let want = [0.0, 57.0 / 255.0, 113.0 / 255.0, 1.0];
        assert_eq!(lv.len(), 4);
        for (l, w) in lv.iter().zip(want) {
            assert_eq!(*l, w);
        }
    }

    #[test]
    fn identity_rounding_passes_input_through() {
        let s = worked_state();
        let spec = signed(3, Some(8), 2).with_rounding(Rounding::Identity);
        for &x in &[-0.9, -0.3, 0.1, 0.55] {
            let y = lcq_forward_requant(x, &s, &spec).unwrap();
            assert!((y - x).abs() < 1e-15);
        }
        assert!(quant_levels(&s, &spec).is_err());
    }

    #[test]
    fn trace_level_indices() {
        let s = worked_state();
        let spec = unsigned(2, Some(8), 2);
        let t = trace(0.3, 1.0, Some(&s), &spec);
        assert_eq!(t.branch, Branch::Inside);
        assert_eq!((t.i, t.j, t.level), (0, 0, 1));
        let t = trace(0.99, 1.0, Some(&s), &spec);
        assert_eq!(t.vq, 1.0);
        assert_eq!((t.j, t.level), (1, 3));
        assert_eq!(t.out, 1.0);
    }
}
