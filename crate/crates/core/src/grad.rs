//! Backward pass of the companding quantizer.
//!
//! Rounding steps use the straight-through estimator. With `v` the clipped
//! input in input interval `i` and `v_q = q_b(f(v))` in output interval `j`,
//!
//! ```text
//! g(v) = (v_q - β_j)/γ_j + d_j,    f(v) = γ_i (v - d_i) + β_i
//! ∂g/∂γ_i += (v - d_i)/γ_j         ∂g/∂γ_j -= (v_q - β_j)/γ_j²
//! ∂g/∂β_i += 1/γ_j                 ∂g/∂β_j -= 1/γ_j
//! ```
//!
//! where `β_k` here is the intercept of interval `k` (0-based). When `v_q`
//! rounds up to 1, one ulp is subtracted before locating `j`.
//!
//! The gradient with respect to the raw parameters `θ` follows either the
//! per-index chain rule (`∂γ_k/∂θ̃_k = K`, `∂β_k/∂θ̃_k = 1`, diagonal softmax
//! derivative) or the full softmax/cumulative-sum Jacobian; see [`ThetaChain`].

use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::quant::{trace, Branch, CompandingState, PiecewiseLinear, QuantSpec, Role, Trace};
use crate::real::Real;

/// How `∂L/∂γ` and `∂L/∂β` are mapped back onto `θ`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ThetaChain {
    /// `(∂L/∂γ_k · K + ∂L/∂β_k) · θ̃_k (1 - θ̃_k)` per index.
    #[default]
    Diagonal,
    /// Exact chain through the softmax and the cumulative sum.
    FullJacobian,
}

/// Interval memberships behind the indicator `I_(i,j)`: `v` lies in input
/// interval `i` and `v_q` in output interval `j` (both 0-based).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct IndicatorPair {
    pub i: usize,
    pub j: usize,
}

/// ε-corrected quantized value used for interval lookup and in the formulas.
#[inline]
fn corrected<T: Real>(vq: T) -> T {
    if vq >= T::one() {
        T::one() - T::ulp_one()
    } else {
        vq
    }
}

pub fn indicator_pair<T: Real>(v: T, v_q: T, map: &PiecewiseLinear<T>) -> IndicatorPair {
    IndicatorPair {
        i: map.input_interval(v),
        j: map.output_interval(corrected(v_q)),
    }
}

/// Nonzero partial derivatives of a piecewise-linear map at one point, with
/// the tables `γ`, `β` treated as free parameters. Only interval `k` enters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IntervalPartials<T> {
    pub k: usize,
    pub d_gamma: T,
    pub d_beta: T,
}

/// `∂f(v)/∂γ_i = v − d_i` and `∂f(v)/∂β_i = 1` for `v` in input interval `i`.
pub fn compress_partials<T: Real>(v: T, map: &PiecewiseLinear<T>) -> IntervalPartials<T> {
    let k = map.input_interval(v);
    IntervalPartials {
        k,
        d_gamma: v - map.d()[k],
        d_beta: T::one(),
    }
}

/// `∂f⁻¹(u)/∂γ_j = −(u − β_j)/γ_j²` and `∂f⁻¹(u)/∂β_j = −1/γ_j` for `u` in
/// output interval `j`.
pub fn expand_partials<T: Real>(u: T, map: &PiecewiseLinear<T>) -> IntervalPartials<T> {
    let k = map.output_interval(u);
    let g = map.gamma()[k];
    IntervalPartials {
        k,
        d_gamma: -((u - map.beta()[k]) / (g * g)),
        d_beta: -(T::one() / g),
    }
}

/// The at most two nonzero slots of `∂g/∂γ` and `∂g/∂β`.
#[derive(Clone, Copy, Debug)]
struct Sparse<T> {
    i: usize,
    j: usize,
    // Contributions to slot i and (subtracted from) slot j.
    gamma_i: T,
    gamma_j: T,
    beta: T,
}

/// `g = f⁻¹(q(f(v)))` with a straight-through `q`: the compress partials are
/// scaled by `∂f⁻¹/∂u = 1/γ_j` and the expand partials enter directly.
#[inline]
fn sparse<T: Real>(v: T, v_q: T, map: &PiecewiseLinear<T>) -> Sparse<T> {
    let c = compress_partials(v, map);
    let e = expand_partials(corrected(v_q), map);
    let gj = map.gamma()[e.k];
    Sparse {
        i: c.k,
        j: e.k,
        gamma_i: c.d_gamma / gj,
        gamma_j: -e.d_gamma,
        beta: c.d_beta / gj,
    }
}

impl<T: Real> Sparse<T> {
    /// Slot values exactly as the dense vectors hold them.
    #[inline]
    fn slots(&self) -> ([(usize, T); 2], [(usize, T); 2], usize) {
        if self.i == self.j {
            let g = self.gamma_i - self.gamma_j;
            let b = self.beta - self.beta;
            ([(self.i, g), (self.i, g)], [(self.i, b), (self.i, b)], 1)
        } else {
            (
                [(self.i, self.gamma_i), (self.j, T::zero() - self.gamma_j)],
                [(self.i, self.beta), (self.j, T::zero() - self.beta)],
                2,
            )
        }
    }
}

/// `∂g(v)/∂γ_k` for every `k`.
pub fn grad_g_gamma<T: Real>(v: T, v_q: T, map: &PiecewiseLinear<T>) -> Vec<T> {
    let mut out = vec![T::zero(); map.intervals()];
    let (g, _, n) = sparse(v, v_q, map).slots();
    for &(k, x) in &g[..n] {
        out[k] = x;
    }
    out
}

/// `∂g(v)/∂β_k` for every `k` (`β_k` = intercept of interval `k`).
pub fn grad_g_beta<T: Real>(v: T, v_q: T, map: &PiecewiseLinear<T>) -> Vec<T> {
    let mut out = vec![T::zero(); map.intervals()];
    let (_, b, n) = sparse(v, v_q, map).slots();
    for &(k, x) in &b[..n] {
        out[k] = x;
    }
    out
}

#[inline]
fn signed<T: Real>(negative: bool, scale: T, x: T) -> T {
    let y = scale * x;
    if negative {
        -y
    } else {
        y
    }
}

/// `(∂Q_L/∂γ, ∂Q_L/∂β)`: `sgn(x)·α·∂g/∂·` inside the clip range, zero otherwise.
pub fn grad_ql_param<T: Real>(x: T, state: &CompandingState<T>, spec: &QuantSpec) -> (Vec<T>, Vec<T>) {
    let k = state.intervals();
    let mut dg = vec![T::zero(); k];
    let mut db = vec![T::zero(); k];
    let t = trace(x, state.alpha(), Some(state), spec);
    if t.branch == Branch::Inside {
        let (g, b, n) = sparse(t.v, t.vq, state.map()).slots();
        for idx in 0..n {
            dg[g[idx].0] = signed(t.negative, state.alpha(), g[idx].1);
            db[b[idx].0] = signed(t.negative, state.alpha(), b[idx].1);
        }
    }
    (dg, db)
}

/// Maps `(∂L/∂γ, ∂L/∂β)` onto `∂L/∂θ`.
pub fn chain_to_theta<T: Real>(state: &CompandingState<T>, d_gamma: &[T], d_beta: &[T], chain: ThetaChain) -> Vec<T> {
    let tt = state.theta_tilde();
    let kk = T::lit(tt.len() as f64);
    match chain {
        ThetaChain::Diagonal => (0..tt.len())
            .map(|k| (d_gamma[k] * kk + d_beta[k]) * (tt[k] * (T::one() - tt[k])))
            .collect(),
        ThetaChain::FullJacobian => {
            // Intercept k is Σ_{m<k} θ̃_m, so θ̃_m feeds every intercept after it.
            let n = tt.len();
            let mut d_tilde = vec![T::zero(); n];
            let mut suffix = T::zero();
            for m in (0..n).rev() {
                d_tilde[m] = d_gamma[m] * kk + suffix;
                suffix += d_beta[m];
            }
            let dot: T = tt.iter().zip(&d_tilde).fold(T::zero(), |a, (&t, &d)| a + t * d);
            tt.iter().zip(&d_tilde).map(|(&t, &d)| t * (d - dot)).collect()
        }
    }
}

/// `∂Q_L/∂θ_k`.
pub fn grad_ql_theta<T: Real>(x: T, state: &CompandingState<T>, spec: &QuantSpec, chain: ThetaChain) -> Vec<T> {
    let (dg, db) = grad_ql_param(x, state, spec);
    chain_to_theta(state, &dg, &db, chain)
}

#[inline]
fn alpha_grad_from_trace<T: Real>(t: &Trace<T>) -> T {
    match t.branch {
        Branch::Zero => T::zero(),
        Branch::Saturated => signed(t.negative, T::one(), T::one()),
        Branch::Inside => signed(t.negative, T::one(), t.g - t.v),
    }
}

/// `∂Q_L/∂α`: `sgn(x)·(g(|x|/α) − |x|/α)` inside, `sgn(x)` when saturated.
/// The same expression is used for the re-quantized quantizer.
pub fn grad_ql_alpha<T: Real>(x: T, state: &CompandingState<T>, spec: &QuantSpec) -> T {
    alpha_grad_from_trace(&trace(x, state.alpha(), Some(state), spec))
}

/// [`grad_ql_alpha`] for the uniform quantizer (`g = q_b`).
pub fn grad_uniform_alpha<T: Real>(x: T, alpha: T, spec: &QuantSpec) -> T {
    alpha_grad_from_trace(&trace(x, alpha, None, spec))
}

/// Straight-through input gradient. Activations pass gradient only inside the
/// clip range (`0 < x < α` when unsigned); weight quantizers pass it everywhere.
#[inline]
pub fn grad_ql_input<T: Real>(x: T, alpha: T, spec: &QuantSpec, role: Role) -> T {
    if role == Role::Weight {
        return T::one();
    }
    let inside = if spec.signed() {
        x.abs() < alpha
    } else {
        x > T::zero() && x < alpha
    };
    if inside {
        T::one()
    } else {
        T::zero()
    }
}

/// Per-element gradient bundle.
#[derive(Clone, Debug, PartialEq)]
pub struct GradOut<T> {
    pub d_theta: Vec<T>,
    pub d_alpha: T,
    pub d_input: T,
}

pub fn grad_ql<T: Real>(x: T, state: &CompandingState<T>, spec: &QuantSpec, role: Role, chain: ThetaChain) -> GradOut<T> {
    GradOut {
        d_theta: grad_ql_theta(x, state, spec, chain),
        d_alpha: grad_ql_alpha(x, state, spec),
        d_input: grad_ql_input(x, state.alpha(), spec, role),
    }
}

/// Gradients of a whole tensor through one quantizer.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorGrads<T> {
    /// Empty for the uniform quantizer.
    pub d_theta: Vec<T>,
    pub d_alpha: T,
    pub d_input: Tensor<T>,
}

/// Sums the scalar rules over a tensor, weighted by the upstream gradient.
///
/// In [`ThetaChain::Diagonal`] mode the result is bit-identical to summing the
/// scalar [`grad_ql_theta`]/[`grad_ql_alpha`] results in element order. The
/// full-Jacobian mode sums `∂L/∂γ`, `∂L/∂β` first and applies the chain once.
pub fn accumulate_tensor_grads<T: Real>(
    xs: &Tensor<T>,
    upstream: &Tensor<T>,
    state: &CompandingState<T>,
    spec: &QuantSpec,
    role: Role,
    chain: ThetaChain,
) -> Result<TensorGrads<T>> {
    accumulate(xs, upstream, state.alpha(), Some(state), spec, role, chain)
}

/// [`accumulate_tensor_grads`] for the uniform quantizer.
pub fn accumulate_uniform_grads<T: Real>(
    xs: &Tensor<T>,
    upstream: &Tensor<T>,
    alpha: T,
    spec: &QuantSpec,
    role: Role,
) -> Result<TensorGrads<T>> {
    accumulate(xs, upstream, alpha, None, spec, role, ThetaChain::Diagonal)
}

pub(crate) fn accumulate<T: Real>(
    xs: &Tensor<T>,
    upstream: &Tensor<T>,
    alpha: T,
    comp: Option<&CompandingState<T>>,
    spec: &QuantSpec,
    role: Role,
    chain: ThetaChain,
) -> Result<TensorGrads<T>> {
    if xs.shape() != upstream.shape() {
        return Err(Error::shape(format!(
            "quantizer input {:?} vs upstream {:?}",
            xs.shape(),
            upstream.shape()
        )));
    }
    let k = comp.map_or(0, |c| c.intervals());
    let mut d_theta = vec![T::zero(); k];
    let mut sum_gamma = vec![T::zero(); k];
    let mut sum_beta = vec![T::zero(); k];
    let mut d_alpha = T::zero();
    let mut d_input = Vec::with_capacity(xs.len());

    let kk = T::lit(k as f64);
    let diag_coef: Vec<T> = comp
        .map(|c| c.theta_tilde().iter().map(|&t| t * (T::one() - t)).collect())
        .unwrap_or_default();

    for (&x, &up) in xs.data().iter().zip(upstream.data()) {
        let t = trace(x, alpha, comp, spec);
        d_alpha += up * alpha_grad_from_trace(&t);
        d_input.push(up * grad_ql_input(x, alpha, spec, role));

        let (Some(c), Branch::Inside) = (comp, t.branch) else {
            continue;
        };
        let (g, b, n) = sparse(t.v, t.vq, c.map()).slots();
        for idx in 0..n {
            let (slot, gv) = g[idx];
            let dg = signed(t.negative, alpha, gv);
            let db = signed(t.negative, alpha, b[idx].1);
            match chain {
                ThetaChain::Diagonal => {
                    d_theta[slot] += up * ((dg * kk + db) * diag_coef[slot]);
                }
                ThetaChain::FullJacobian => {
                    sum_gamma[slot] += up * dg;
                    sum_beta[slot] += up * db;
                }
            }
        }
    }
    if let (Some(c), ThetaChain::FullJacobian) = (comp, chain) {
        d_theta = chain_to_theta(c, &sum_gamma, &sum_beta, ThetaChain::FullJacobian);
    }
    Ok(TensorGrads {
        d_theta,
        d_alpha,
        d_input: Tensor::from_vec(xs.shape(), d_input)?,
    })
}

#[derive(Clone, Copy, Debug)]
struct Frozen<T> {
    branch: Branch,
    negative: bool,
    x0: T,
    v0: T,
    i: usize,
    j: usize,
    /// `v_q − f(v)` at the base point (ε-corrected), held fixed.
    offset: T,
    g0: T,
    /// `Q'_L − Q_L` at the base point, held fixed.
    requant: T,
    slope: T,
}

/// Smooth stand-in for the quantizer around a base point whose exact
/// derivatives are the straight-through gradients above.
///
/// Every element keeps its base branch, interval pair and rounding offset, so
/// `g(v) ≈ f⁻¹(f(v₀) + c)` remains a differentiable function of `θ`. The
/// input enters linearly with slope 1 (or the weight/activation STE slope
/// outside the clip range). Central differences of a network built from
/// these surrogates therefore check that backpropagation composes the
/// per-element rules correctly, with θ following [`ThetaChain::FullJacobian`].
#[derive(Clone, Debug)]
pub struct SteSurrogate<T> {
    points: Vec<Frozen<T>>,
}

impl<T: Real> SteSurrogate<T> {
    pub fn freeze(xs: &[T], alpha: T, comp: Option<&CompandingState<T>>, spec: &QuantSpec, role: Role) -> Self {
        let points = xs
            .iter()
            .map(|&x| {
                let t = trace(x, alpha, comp, spec);
                Frozen {
                    branch: t.branch,
                    negative: t.negative,
                    x0: x,
                    v0: t.v,
                    i: t.i,
                    j: t.j,
                    offset: corrected(t.vq) - t.u,
                    g0: t.g,
                    requant: t.out_outer - t.out,
                    slope: grad_ql_input(x, alpha, spec, role),
                }
            })
            .collect();
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Surrogate outputs for the current inputs and parameters.
    pub fn eval(&self, xs: &[T], alpha: T, comp: Option<&CompandingState<T>>) -> Result<Vec<T>> {
        if xs.len() != self.points.len() {
            return Err(Error::shape(format!(
                "surrogate frozen for {} elements, got {}",
                self.points.len(),
                xs.len()
            )));
        }
        Ok(xs
            .iter()
            .zip(&self.points)
            .map(|(&x, p)| match p.branch {
                Branch::Zero => p.slope * (x - p.x0),
                Branch::Saturated => signed(p.negative, alpha, T::one()) + p.slope * (x - p.x0),
                Branch::Inside => {
                    let v = if p.negative { -x } else { x } / alpha;
                    let g = match comp {
                        Some(c) => {
                            let m = c.map();
                            m.expand_in(m.compress_in(p.v0, p.i) + p.offset, p.j)
                        }
                        None => p.g0,
                    };
                    signed(p.negative, alpha, g + (v - p.v0)) + p.requant
                }
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quant::Rounding;

    fn worked() -> CompandingState<f64> {
        CompandingState::derive(&[3f64.ln(), 0.0], 1.0).unwrap()
    }

    #[test]
    fn gamma_grad_worked_case() {
        let s = worked();
        // f(0.3) = 0.45, q = round(1.35)/3 = 1/3, inside output interval 0.
        let g = grad_g_gamma(0.3, 1.0 / 3.0, s.map());
        let want = 0.3 / 1.5 - (1.0 / 3.0) / 2.25;
        assert!((g[0] - want).abs() < 1e-15);
        assert!((g[0] - 0.051852).abs() < 1e-6);
        assert_eq!(g[1], 0.0);
        let b = grad_g_beta(0.3, 1.0 / 3.0, s.map());
        assert_eq!(b, vec![0.0, 0.0]);
    }

    #[test]
    fn identity_state_cancels_on_lattice() {
        let s = CompandingState::<f64>::identity(4, 1.0).unwrap();
        let v = 0.5;
        assert_eq!(grad_g_gamma(v, v, s.map()), vec![0.0; 4]);
        assert_eq!(grad_g_beta(v, v, s.map()), vec![0.0; 4]);
    }

    #[test]
    fn beta_grad_across_intervals() {
        // v in input interval 0; v_q rounded up past β_1 = 0.75 into output interval 1.
        let s = worked();
        let v = 0.49; // f = 0.735, q_3 = round(2.205)/3 = 2/3 < 0.75: still interval 0
        assert_eq!(indicator_pair(v, 2.0 / 3.0, s.map()), IndicatorPair { i: 0, j: 0 });
        let vq = 1.0; // top code: ε-corrected into output interval 1
        assert_eq!(indicator_pair(v, vq, s.map()), IndicatorPair { i: 0, j: 1 });
        let b = grad_g_beta(v, vq, s.map());
        assert!((b[0] - 1.0 / 0.5).abs() < 1e-15);
        assert!((b[1] + 1.0 / 0.5).abs() < 1e-15);
        let g = grad_g_gamma(v, vq, s.map());
        assert!((g[0] - v / 0.5).abs() < 1e-15);
        let want1 = -((1.0 - f64::EPSILON) - 0.75) / 0.25;
        assert!((g[1] - want1).abs() < 1e-12);
    }

    #[test]
    fn param_grad_branches() {
        let s = worked();
        let spec = QuantSpec::new(2, true, None, 2).unwrap();
        let (dg, db) = grad_ql_param(1.5, &s, &spec);
        assert!(dg.iter().chain(&db).all(|&x| x == 0.0));
        let (p, _) = grad_ql_param(0.3, &s, &spec);
        let (n, _) = grad_ql_param(-0.3, &s, &spec);
        for (a, b) in p.iter().zip(&n) {
            assert_eq!(*a, -*b);
        }
        // α = 2: the gradient is α times the one at v = 0.15.
        let s2 = s.with_alpha(2.0).unwrap();
        let (dg2, _) = grad_ql_param(0.3, &s2, &spec);
        let vq = crate::quant::uniform_quantize(s.compress(0.15).unwrap(), spec.scale()).unwrap();
        let raw = grad_g_gamma(0.15, vq, s.map());
        assert!((dg2[0] - 2.0 * raw[0]).abs() < 1e-15);
    }

    #[test]
    fn alpha_grad_examples() {
        let id = CompandingState::<f64>::identity(4, 1.0).unwrap();
        let u3 = QuantSpec::new(3, false, None, 4).unwrap();
        assert_eq!(grad_ql_alpha(2.0, &id, &u3), 1.0);
        assert!((grad_ql_alpha(0.3, &id, &u3) - (2.0 / 7.0 - 0.3)).abs() < 1e-15);
        assert!((grad_ql_alpha(0.3, &id, &u3) + 0.0142857).abs() < 1e-7);
        assert_eq!(grad_ql_alpha(0.0, &id, &u3), 0.0);
        let s3 = QuantSpec::new(3, true, None, 4).unwrap();
        assert_eq!(grad_ql_alpha(0.0, &id, &s3), 0.0);
        assert_eq!(grad_ql_alpha(-4.0, &id, &s3), -1.0);
    }

    #[test]
    fn input_grad_rules() {
        let u = QuantSpec::new(3, false, None, 4).unwrap();
        assert_eq!(grad_ql_input(2.0, 1.0, &u, Role::Activation), 0.0);
        assert_eq!(grad_ql_input(0.5, 1.0, &u, Role::Activation), 1.0);
        assert_eq!(grad_ql_input(-0.5, 1.0, &u, Role::Activation), 0.0);
        let s = QuantSpec::new(3, true, None, 4).unwrap();
        assert_eq!(grad_ql_input(2.0, 1.0, &s, Role::Weight), 1.0);
        assert_eq!(grad_ql_input(-0.5, 1.0, &s, Role::Activation), 1.0);
    }

    #[test]
    fn theta_grad_vanishes_in_saturation_and_on_identity_lattice() {
        let id = CompandingState::<f64>::identity(4, 1.0).unwrap();
        let spec = QuantSpec::new(3, true, None, 4).unwrap();
        for chain in [ThetaChain::Diagonal, ThetaChain::FullJacobian] {
            assert!(grad_ql_theta(3.0, &id, &spec, chain).iter().all(|&x| x == 0.0));
            // 2/3 is a lattice point of s = 3.
            assert!(grad_ql_theta(2.0 / 3.0, &id, &spec, chain).iter().all(|&x| x.abs() < 1e-15));
        }
    }

    #[test]
    fn accumulate_small_cases() {
        let s = worked();
        let spec = QuantSpec::new(3, true, None, 2).unwrap();
        let xs = Tensor::from_vec(&[2], vec![0.3, -0.8]).unwrap();
        let zeros = Tensor::zeros(&[2]);
        let g = accumulate_tensor_grads(&xs, &zeros, &s, &spec, Role::Activation, ThetaChain::Diagonal).unwrap();
        assert!(g.d_theta.iter().all(|&x| x == 0.0));
        assert_eq!(g.d_alpha, 0.0);
        assert!(g.d_input.data().iter().all(|&x| x == 0.0));

        let up = Tensor::from_vec(&[2], vec![0.7, -1.3]).unwrap();
        let g = accumulate_tensor_grads(&xs, &up, &s, &spec, Role::Activation, ThetaChain::Diagonal).unwrap();
        let mut want = vec![0.0; 2];
        let mut want_alpha = 0.0;
        for (&x, &u) in xs.data().iter().zip(up.data()) {
            for (w, t) in want.iter_mut().zip(grad_ql_theta(x, &s, &spec, ThetaChain::Diagonal)) {
                *w += u * t;
            }
            want_alpha += u * grad_ql_alpha(x, &s, &spec);
        }
        assert_eq!(g.d_theta, want);
        assert_eq!(g.d_alpha, want_alpha);

        let bad = Tensor::zeros(&[3]);
        assert!(accumulate_tensor_grads(&xs, &bad, &s, &spec, Role::Activation, ThetaChain::Diagonal).is_err());
    }

    #[test]
    fn surrogate_matches_forward_at_base_point() {
        let s = CompandingState::<f64>::derive(&[0.3, -0.2, 0.9, 0.0], 1.3).unwrap();
        let spec = QuantSpec::new(3, true, Some(8), 4).unwrap();
        let xs = [-2.0, -0.7, -0.2, 0.0, 0.05, 0.4, 1.29, 1.31];
        for role in [Role::Weight, Role::Activation] {
            let sur = SteSurrogate::freeze(&xs, s.alpha(), Some(&s), &spec, role);
            let ys = sur.eval(&xs, s.alpha(), Some(&s)).unwrap();
            for (&x, y) in xs.iter().zip(ys) {
                let want = crate::quant::lcq_forward_requant(x, &s, &spec).unwrap();
                assert!((y - want).abs() < 1e-14, "{x}: {y} vs {want}");
            }
        }
    }

    #[test]
    fn identity_rounding_null_gradient_spot_check() {
        let s = CompandingState::<f64>::derive(&[0.4, -1.0, 0.2], 2.0).unwrap();
        let spec = QuantSpec::new(3, true, None, 3).unwrap().with_rounding(Rounding::Identity);
        for &x in &[-1.9, -0.4, 0.01, 0.77, 1.5] {
            assert!(grad_ql_theta(x, &s, &spec, ThetaChain::Diagonal).iter().all(|g| g.abs() < 1e-12));
            assert!(grad_ql_alpha(x, &s, &spec).abs() < 1e-12);
        }
    }
}
