//! Learnable piecewise-linear compressing/expanding functions.
//!
//! The input range `[0, 1)` is split into `K` equal intervals of width
//! `Δ = 1/K`. Interval `k` is mapped linearly onto `[β_{k-1}, β_k)` with slope
//! `γ_k = θ̃_k / Δ`, where `θ̃ = softmax(θ)`. Because every `θ̃_k > 0`, the map
//! is strictly increasing and its inverse is the expanding function.
//!
//! Interval indices in this module are 0-based: interval `k` covers
//! `[d[k], d[k+1])` on the input side and `[beta[k], beta[k+1])` on the output
//! side. `beta[k]` is therefore the intercept of interval `k`.

use crate::error::{Error, Result};
use crate::real::Real;

/// Lower bound applied to `θ̃_k` before computing the slope `γ_k`.
pub const GAMMA_FLOOR: f64 = 1e-6;

/// Breakpoint tables of a monotone piecewise-linear map on `[0, 1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PiecewiseLinear<T> {
    gamma: Vec<T>,
    beta: Vec<T>,
    d: Vec<T>,
    delta: T,
}

impl<T: Real> PiecewiseLinear<T> {
    /// Builds a map directly from slopes and intercepts (`beta.len() == K + 1`).
    ///
    /// Unlike [`CompandingState::derive`], the tables are taken as free
    /// parameters, so `beta[k] + gamma[k]·Δ` need not equal `beta[k+1]`. This is
    /// what the component-level finite-difference checks perturb.
    pub fn from_tables(gamma: Vec<T>, beta: Vec<T>) -> Result<Self> {
        let k = gamma.len();
        if k == 0 || beta.len() != k + 1 {
            return Err(Error::contract(format!(
                "need K >= 1 slopes and K + 1 intercepts, got {} and {}",
                k,
                beta.len()
            )));
        }
        if gamma.iter().any(|g| !(g.is_finite() && *g > T::zero())) {
            return Err(Error::ParameterCorruption("slopes must be finite and positive".into()));
        }
        if beta.iter().any(|b| !b.is_finite()) || beta.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::ParameterCorruption("intercepts must be finite and non-decreasing".into()));
        }
        let (delta, d) = breakpoints::<T>(k);
        Ok(Self { gamma, beta, d, delta })
    }

    pub fn intervals(&self) -> usize {
        self.gamma.len()
    }

    pub fn gamma(&self) -> &[T] {
        &self.gamma
    }

    /// `β_0 ..= β_K`.
    pub fn beta(&self) -> &[T] {
        &self.beta
    }

    /// `d_0 ..= d_K`.
    pub fn d(&self) -> &[T] {
        &self.d
    }

    pub fn delta(&self) -> T {
        self.delta
    }

    /// Interval containing `v` on the input side, clamped to `[0, K)`.
    #[inline]
    pub fn input_interval(&self, v: T) -> usize {
        let k = self.gamma.len();
        self.d[1..].partition_point(|&b| b <= v).min(k - 1)
    }

    /// Interval containing `u` on the output side, clamped to `[0, K)`.
    #[inline]
    pub fn output_interval(&self, u: T) -> usize {
        let k = self.gamma.len();
        self.beta[1..].partition_point(|&b| b <= u).min(k - 1)
    }

    /// Evaluates the compressing function using the formula of interval `k`.
    #[inline]
    pub fn compress_in(&self, v: T, k: usize) -> T {
        self.gamma[k] * (v - self.d[k]) + self.beta[k]
    }

    /// Evaluates the expanding function using the formula of interval `k`.
    #[inline]
    pub fn expand_in(&self, u: T, k: usize) -> T {
        (u - self.beta[k]) / self.gamma[k] + self.d[k]
    }

    #[inline]
    pub(crate) fn compress_unchecked(&self, v: T) -> T {
        self.compress_in(v, self.input_interval(v))
    }

    /// The top endpoint maps to exactly 1 so that the saturation level and the
    /// largest companding level coincide.
    #[inline]
    pub(crate) fn expand_unchecked(&self, u: T) -> T {
        if u >= T::one() {
            return T::one();
        }
        self.expand_in(u, self.output_interval(u))
    }

    /// Compressing function `f(v)` for `v ∈ [0, 1)`.
    pub fn compress(&self, v: T) -> Result<T> {
        if !(v >= T::zero() && v < T::one()) {
            return Err(Error::contract(format!("compress input {v} outside [0, 1)")));
        }
        Ok(self.compress_unchecked(v))
    }

    /// Expanding function `f⁻¹(u)`. Inputs at or above 1 are clamped to the
    /// top endpoint; negative or NaN inputs are rejected.
    pub fn expand(&self, u: T) -> Result<T> {
        if !(u >= T::zero()) {
            return Err(Error::contract(format!("expand input {u} is negative or NaN")));
        }
        Ok(self.expand_unchecked(u))
    }
}

/// `Δ` and `d_0..=d_K`. The breakpoints are accumulated the same way as the
/// intercepts so that a uniform softmax yields `β == d` bit for bit.
fn breakpoints<T: Real>(k: usize) -> (T, Vec<T>) {
    let delta = T::one() / T::lit(k as f64);
    let mut d = Vec::with_capacity(k + 1);
    let mut acc = T::zero();
    d.push(acc);
    for _ in 1..k {
        acc += delta;
        d.push(acc);
    }
    d.push(T::one());
    (delta, d)
}

/// Learnable companding parameters (`θ`, `α`) together with the tables derived
/// from them. Immutable once derived.
#[derive(Clone, Debug, PartialEq)]
pub struct CompandingState<T> {
    theta_raw: Vec<T>,
    theta_tilde: Vec<T>,
    alpha: T,
    map: PiecewiseLinear<T>,
}

impl<T: Real> CompandingState<T> {
    /// Derives `θ̃ = softmax(θ)`, `γ_k = θ̃_k/Δ`, `β_k = Σ_{i≤k} θ̃_i` and
    /// `d_k = kΔ`.
    pub fn derive(theta_raw: &[T], alpha: T) -> Result<Self> {
        let k = theta_raw.len();
        if k == 0 {
            return Err(Error::contract("companding needs at least one interval"));
        }
        if let Some(bad) = theta_raw.iter().find(|t| !t.is_finite()) {
            return Err(Error::ParameterCorruption(format!("non-finite theta {bad}")));
        }
        if !(alpha.is_finite() && alpha > T::zero()) {
            return Err(Error::ParameterCorruption(format!("clip alpha {alpha} must be finite and positive")));
        }

        let max = theta_raw.iter().copied().fold(T::neg_infinity(), T::max);
        let exps: Vec<T> = theta_raw.iter().map(|&t| (t - max).exp()).collect();
        let sum: T = exps.iter().copied().sum();
        let theta_tilde: Vec<T> = exps.iter().map(|&e| e / sum).collect();

        let (delta, d) = breakpoints::<T>(k);
        let floor = T::lit(GAMMA_FLOOR);
        let gamma = theta_tilde.iter().map(|&t| t.max(floor) / delta).collect();

        let mut beta = Vec::with_capacity(k + 1);
        let mut acc = T::zero();
        beta.push(acc);
        for &t in &theta_tilde[..k - 1] {
            acc += t;
            beta.push(acc);
        }
        beta.push(T::one());

        Ok(Self {
            theta_raw: theta_raw.to_vec(),
            theta_tilde,
            alpha,
            map: PiecewiseLinear { gamma, beta, d, delta },
        })
    }

    /// `θ = 0`: the compressing function is the identity.
    pub fn identity(intervals: usize, alpha: T) -> Result<Self> {
        Self::derive(&vec![T::zero(); intervals], alpha)
    }

    pub fn intervals(&self) -> usize {
        self.theta_raw.len()
    }

    pub fn alpha(&self) -> T {
        self.alpha
    }

    pub fn theta_raw(&self) -> &[T] {
        &self.theta_raw
    }

    pub fn theta_tilde(&self) -> &[T] {
        &self.theta_tilde
    }

    pub fn map(&self) -> &PiecewiseLinear<T> {
        &self.map
    }

    pub fn gamma(&self) -> &[T] {
        self.map.gamma()
    }

    pub fn beta(&self) -> &[T] {
        self.map.beta()
    }

    pub fn d(&self) -> &[T] {
        self.map.d()
    }

    pub fn delta(&self) -> T {
        self.map.delta()
    }

    /// Same θ, different clip.
    pub fn with_alpha(&self, alpha: T) -> Result<Self> {
        if !(alpha.is_finite() && alpha > T::zero()) {
            return Err(Error::ParameterCorruption(format!("clip alpha {alpha} must be finite and positive")));
        }
        Ok(Self { alpha, ..self.clone() })
    }

    pub fn compress(&self, v: T) -> Result<T> {
        self.map.compress(v)
    }

    pub fn expand(&self, u: T) -> Result<T> {
        self.map.expand(u)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn derive_two_equal_intervals() {
        let s = CompandingState::<f64>::derive(&[0.0, 0.0], 1.0).unwrap();
        assert_eq!(s.theta_tilde(), &[0.5, 0.5]);
        assert_eq!(s.gamma(), &[1.0, 1.0]);
        assert_eq!(s.beta(), &[0.0, 0.5, 1.0]);
        assert_eq!(s.d(), &[0.0, 0.5, 1.0]);
    }

    #[test]
    fn derive_zero_theta_gives_unit_slopes() {
        for k in 1..=20 {
            let s = CompandingState::<f64>::identity(k, 1.0).unwrap();
            assert!(s.gamma().iter().all(|&g| g == 1.0), "K={k}");
            assert_eq!(s.beta(), s.d(), "K={k}");
        }
    }

    #[test]
    fn derive_ln3_case() {
        let s = CompandingState::<f64>::derive(&[3f64.ln(), 0.0], 1.0).unwrap();
        assert!(close(s.theta_tilde()[0], 0.75, 1e-15));
        assert!(close(s.theta_tilde()[1], 0.25, 1e-15));
        assert!(close(s.gamma()[0], 1.5, 1e-15));
        assert!(close(s.gamma()[1], 0.5, 1e-15));
        assert!(close(s.beta()[1], 0.75, 1e-15));
        assert_eq!(s.beta()[2], 1.0);
    }

    #[test]
    fn derive_rejects_bad_parameters() {
        assert!(matches!(
            CompandingState::<f64>::derive(&[0.0, f64::NAN], 1.0),
            Err(Error::ParameterCorruption(_))
        ));
        assert!(CompandingState::<f64>::derive(&[0.0], 0.0).is_err());
        assert!(CompandingState::<f64>::derive(&[], 1.0).is_err());
    }

    #[test]
    fn derive_invariants_hold_for_extreme_theta() {
        let s = CompandingState::<f64>::derive(&[40.0, -40.0, 0.0, 3.0], 2.0).unwrap();
        let sum: f64 = s.theta_tilde().iter().sum();
        assert!(close(sum, 1.0, 1e-12));
        assert!(s.gamma().iter().all(|&g| g > 0.0));
        assert!(s.theta_tilde().iter().all(|&t| (0.0..=1.0).contains(&t)));
        assert!(s.d().windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn compress_expand_worked_case() {
        let s = CompandingState::<f64>::derive(&[3f64.ln(), 0.0], 1.0).unwrap();
        assert!(close(s.compress(0.25).unwrap(), 0.375, 1e-15));
        assert!(close(s.compress(0.75).unwrap(), 0.875, 1e-15));
        assert!(close(s.expand(0.375).unwrap(), 0.25, 1e-15));
        assert!(close(s.expand(0.875).unwrap(), 0.75, 1e-15));
    }

    #[test]
    fn identity_map_is_exact() {
        let s = CompandingState::<f64>::identity(7, 1.0).unwrap();
        for i in 0..1000 {
            let v = i as f64 / 1000.0;
            assert_eq!(s.compress(v).unwrap(), v);
            assert_eq!(s.expand(v).unwrap(), v);
        }
    }

    #[test]
    fn domain_errors() {
        let s = CompandingState::<f64>::identity(4, 1.0).unwrap();
        assert!(s.compress(1.0).is_err());
        assert!(s.compress(-0.1).is_err());
        assert!(s.expand(-0.1).is_err());
        assert!(s.expand(f64::NAN).is_err());
        assert_eq!(s.expand(1.0).unwrap(), 1.0);
        assert_eq!(s.expand(3.0).unwrap(), 1.0);
    }

    #[test]
    fn half_open_interval_convention() {
        let s = CompandingState::<f64>::identity(4, 1.0).unwrap();
        assert_eq!(s.map().input_interval(0.0), 0);
        assert_eq!(s.map().input_interval(0.25), 1);
        assert_eq!(s.map().input_interval(0.2499999), 0);
        assert_eq!(s.map().input_interval(0.999), 3);
        assert_eq!(s.map().output_interval(0.5), 2);
    }

    #[test]
    fn free_tables_validate() {
        assert!(PiecewiseLinear::<f64>::from_tables(vec![1.0, 1.0], vec![0.0, 0.5]).is_err());
        assert!(PiecewiseLinear::<f64>::from_tables(vec![1.0, -1.0], vec![0.0, 0.5, 1.0]).is_err());
        let p = PiecewiseLinear::<f64>::from_tables(vec![1.2, 0.8], vec![0.0, 0.6, 1.0]).unwrap();
        assert!(close(p.compress(0.25).unwrap(), 0.3, 1e-15));
    }
}
