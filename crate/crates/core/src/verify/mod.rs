//! Independent references and gradient checks.
//!
//! The reference compander here recomputes the softmax and locates intervals
//! by linear scan; it shares no code with [`crate::quant`]. Finite
//! differences always run at 64-bit.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::grad::{
    chain_to_theta, compress_partials, expand_partials, grad_ql_alpha, grad_ql_theta, SteSurrogate, ThetaChain,
};
use crate::lut::{build_lut, check_lut_exhaustive, encode, lut_infer_layer, reference_conv, LatticeLevels, LayerOperands};
use crate::nn::conv::{conv_forward, ConvGeom};
use crate::nn::{softmax_xent, Method, Mode, ModelConfig, Network, ParamGroup, Tensor};
use crate::quant::{lcq_forward_requant, trace, CompandingState, QuantSpec, Role, Rounding};
use crate::real::Real;

/// Default central-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Central difference `(f(x+h) − f(x−h)) / 2h`.
pub fn fd_gradient(mut f: impl FnMut(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// Five-point difference, halving the step from `1e-2` until two consecutive
/// estimates agree to 1e-6 relative (floor 1e-6); returns the narrower one,
/// whose truncation error is then about a fifteenth of the gap. Wide steps
/// keep cancellation noise small; disagreement means a stencil straddles a
/// kink. `None` when no step qualifies, i.e. `x` sits next to a
/// non-smooth point of `f`.
pub fn smooth_fd(mut f: impl FnMut(f64) -> f64, x: f64) -> Option<f64> {
    let mut h = 1e-2;
    let mut prev = fd_gradient5(&mut f, x, h);
    for _ in 0..12 {
        h *= 0.5;
        let cur = fd_gradient5(&mut f, x, h);
        if rel_err(prev, cur, NET_GRAD_FLOOR) < 1e-6 {
            return Some(cur);
        }
        prev = cur;
    }
    None
}

/// Five-point central difference, truncation error `O(h⁴)`.
pub fn fd_gradient5(mut f: impl FnMut(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x - 2.0 * h) - 8.0 * f(x - h) + 8.0 * f(x + h) - f(x + 2.0 * h)) / (12.0 * h)
}

/// `|a − b| / max(|a|, |b|, floor)`.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Softmax computed as `exp(θ_k − log Σ exp θ)`.
pub fn ref_softmax(theta: &[f64]) -> Vec<f64> {
    let m = theta.iter().fold(f64::NEG_INFINITY, |a, &b| if b > a { b } else { a });
    let lse = m + theta.iter().map(|t| (t - m).exp()).sum::<f64>().ln();
    theta.iter().map(|t| (t - lse).exp()).collect()
}

/// Reference piecewise-linear compander with explicit tables.
#[derive(Clone, Debug, PartialEq)]
pub struct RefCompander {
    /// Slopes, one per interval.
    pub gamma: Vec<f64>,
    /// Output breakpoints, `K + 1` entries.
    pub beta: Vec<f64>,
    /// Input breakpoints `k/K`, `K + 1` entries.
    pub d: Vec<f64>,
}

impl RefCompander {
    pub fn from_theta(theta: &[f64]) -> Self {
        let k = theta.len();
        let tt = ref_softmax(theta);
        let gamma = tt.iter().map(|&t| t.max(1e-6) * k as f64).collect();
        let mut beta = vec![0.0];
        for i in 0..k - 1 {
            beta.push(beta[i] + tt[i]);
        }
        beta.push(1.0);
        let d = (0..=k).map(|i| i as f64 / k as f64).collect();
        Self { gamma, beta, d }
    }

    pub fn intervals(&self) -> usize {
        self.gamma.len()
    }

    fn scan(edges: &[f64], x: f64) -> usize {
        let k = edges.len() - 1;
        let mut idx = 0;
        for (i, &e) in edges[..k].iter().enumerate() {
            if x >= e {
                idx = i;
            }
        }
        idx
    }

    pub fn input_interval(&self, v: f64) -> usize {
        Self::scan(&self.d, v)
    }

    pub fn output_interval(&self, u: f64) -> usize {
        Self::scan(&self.beta, u)
    }

    pub fn compress_in(&self, v: f64, k: usize) -> f64 {
        self.gamma[k] * (v - self.d[k]) + self.beta[k]
    }

    pub fn expand_in(&self, u: f64, k: usize) -> f64 {
        (u - self.beta[k]) / self.gamma[k] + self.d[k]
    }

    pub fn compress(&self, v: f64) -> f64 {
        self.compress_in(v, self.input_interval(v))
    }

    pub fn expand(&self, u: f64) -> f64 {
        self.expand_in(u, self.output_interval(u))
    }
}

/// Distinct outputs of `Q'_L` over a uniform sweep of `grid_n` inputs in
/// `[−1.25α, 1.25α]` (`[0, 1.25α]` when unsigned), sorted ascending.
pub fn enumerate_levels_bruteforce<T: Real>(state: &CompandingState<T>, spec: &QuantSpec, grid_n: usize) -> Result<Vec<T>> {
    let a = state.alpha().to_f64_lossy() * 1.25;
    let lo = if spec.signed() { -a } else { 0.0 };
    let n = grid_n.max(2);
    let mut out = Vec::new();
    for i in 0..n {
        let x = lo + (a - lo) * i as f64 / (n - 1) as f64;
        let mut y = lcq_forward_requant(T::lit(x), state, spec)?;
        if y == T::zero() {
            y = T::zero();
        }
        out.push(y);
    }
    out.sort_by(|p, q| p.partial_cmp(q).expect("finite outputs"));
    out.dedup();
    Ok(out)
}

/// Switches every quantizer of `net` to identity rounding (`on`) or back.
pub fn identity_rounding_mode<T: Real>(net: &mut Network<T>, on: bool) {
    net.set_rounding(if on { Rounding::Identity } else { Rounding::Nearest });
}

/// One line of the gradient-check report.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckRow {
    pub operation: String,
    /// Maximum relative error (or maximum magnitude for the null checks).
    pub max_rel_err: f64,
    pub n_points: usize,
    pub tolerance: f64,
}

impl CheckRow {
    pub fn pass(&self) -> bool {
        self.n_points > 0 && self.max_rel_err < self.tolerance
    }
}

pub fn checks_csv(rows: &[CheckRow]) -> String {
    let mut s = String::from("operation,max_rel_err,n_points,tolerance,pass\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{:.3e},{},{:e},{}",
            r.operation,
            r.max_rel_err,
            r.n_points,
            r.tolerance,
            r.pass()
        );
    }
    s
}

pub fn write_checks_csv(rows: &[CheckRow], path: &Path) -> Result<()> {
    std::fs::write(path, checks_csv(rows)).map_err(|e| Error::io(path, e))
}

fn random_theta(rng: &mut impl Rng, k: usize, scale: f64) -> Vec<f64> {
    (0..k)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            z * scale
        })
        .collect()
}

fn near_any(x: f64, edges: &[f64], gap: f64) -> bool {
    edges.iter().any(|e| (x - e).abs() < gap)
}

/// Component checks of the compress/expand partials against central
/// differences of [`RefCompander`] with perturbed tables, interval held fixed
/// (step 1e-6, points at least 1e-3 from any breakpoint).
pub fn check_component_partials(samples: usize, seed: u64) -> Result<Vec<CheckRow>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = 1e-6;
    let (mut e_cg, mut e_cb, mut e_eg, mut e_eb, mut n) = (0f64, 0f64, 0f64, 0f64, 0usize);
    while n < samples {
        let k = [2, 4, 8, 16][rng.random_range(0..4)];
        let theta = random_theta(&mut rng, k, 0.5);
        let state = CompandingState::<f64>::derive(&theta, 1.0)?;
        let r = RefCompander {
            gamma: state.gamma().to_vec(),
            beta: state.beta().to_vec(),
            d: state.d().to_vec(),
        };
        let v: f64 = rng.random_range(0.0..1.0);
        let u: f64 = rng.random_range(0.0..1.0);
        if near_any(v, &r.d, 1e-3) || near_any(u, &r.beta, 1e-3) {
            continue;
        }
        let cp = compress_partials(v, state.map());
        let ep = expand_partials(u, state.map());
        let (ki, kj) = (r.input_interval(v), r.output_interval(u));
        if cp.k != ki || ep.k != kj {
            return Err(Error::Consistency(format!(
                "interval lookup disagrees: ({}, {}) vs reference ({ki}, {kj})",
                cp.k, ep.k
            )));
        }
        let with = |f: &dyn Fn(&mut RefCompander, f64), x: f64| {
            let mut p = r.clone();
            f(&mut p, x);
            p
        };
        let g0 = r.gamma[ki];
        let fd_cg = fd_gradient(|x| with(&|p, x| p.gamma[ki] = x, x).compress_in(v, ki), g0, h);
        let b0 = r.beta[ki];
        let fd_cb = fd_gradient(|x| with(&|p, x| p.beta[ki] = x, x).compress_in(v, ki), b0, h);
        let gj = r.gamma[kj];
        let fd_eg = fd_gradient(|x| with(&|p, x| p.gamma[kj] = x, x).expand_in(u, kj), gj, h);
        let bj = r.beta[kj];
        let fd_eb = fd_gradient(|x| with(&|p, x| p.beta[kj] = x, x).expand_in(u, kj), bj, h);
        e_cg = e_cg.max(rel_err(cp.d_gamma, fd_cg, 1e-12));
        e_cb = e_cb.max(rel_err(cp.d_beta, fd_cb, 1e-12));
        e_eg = e_eg.max(rel_err(ep.d_gamma, fd_eg, 1e-12));
        e_eb = e_eb.max(rel_err(ep.d_beta, fd_eb, 1e-12));
        n += 1;
    }
    let row = |op: &str, e| CheckRow {
        operation: op.into(),
        max_rel_err: e,
        n_points: n,
        tolerance: 1e-5,
    };
    Ok(vec![
        row("compress_dgamma", e_cg),
        row("compress_dbeta", e_cb),
        row("expand_dgamma", e_eg),
        row("expand_dbeta", e_eb),
    ])
}

/// With identity rounding, `∂Q/∂θ` and `∂Q/∂α` vanish for `|x| < α`.
pub fn check_identity_rounding_null(samples: usize, seed: u64) -> Result<Vec<CheckRow>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut mt, mut ma) = (0f64, 0f64);
    for _ in 0..samples {
        let k = [4, 8, 12, 16][rng.random_range(0..4)];
        let bits = rng.random_range(2..=4);
        let signed = rng.random::<bool>();
        let spec = QuantSpec::new(bits, signed, None, k)?.with_rounding(Rounding::Identity);
        let alpha = rng.random_range(0.1..5.0);
        let state = CompandingState::<f64>::derive(&random_theta(&mut rng, k, 1.0), alpha)?;
        let lo = if signed { -alpha } else { 0.0 };
        let x = rng.random_range(lo..alpha) * 0.999_999;
        for chain in [ThetaChain::Diagonal, ThetaChain::FullJacobian] {
            for g in grad_ql_theta(x, &state, &spec, chain) {
                mt = mt.max(g.abs());
            }
        }
        ma = ma.max(grad_ql_alpha(x, &state, &spec).abs());
    }
    Ok(vec![
        CheckRow {
            operation: "identity_rounding_dtheta".into(),
            max_rel_err: mt,
            n_points: samples,
            tolerance: 1e-10,
        },
        CheckRow {
            operation: "identity_rounding_dalpha".into(),
            max_rel_err: ma,
            n_points: samples,
            tolerance: 1e-10,
        },
    ])
}

/// Scalar quantizer: the full-Jacobian `∂Q/∂θ` and `∂Q/∂α` against central
/// differences of the straight-through surrogate frozen at `x`.
pub fn check_quantizer_surrogate(samples: usize, seed: u64) -> Result<Vec<CheckRow>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut et, mut ea, mut n) = (0f64, 0f64, 0usize);
    while n < samples {
        let k = [4, 8, 16][rng.random_range(0..3)];
        let spec = QuantSpec::new(rng.random_range(2..=4), true, Some(8), k)?;
        let theta = random_theta(&mut rng, k, 0.5);
        let alpha = rng.random_range(0.5..3.0);
        let state = CompandingState::<f64>::derive(&theta, alpha)?;
        let x = rng.random_range(-1.2 * alpha..1.2 * alpha);
        if (x.abs() - alpha).abs() < 1e-3 || x.abs() < 1e-3 {
            continue;
        }
        let sur = SteSurrogate::freeze(&[x], alpha, Some(&state), &spec, Role::Weight);
        let eval = |th: &[f64], a: f64| -> f64 {
            let s = CompandingState::derive(th, a).expect("finite parameters");
            sur.eval(&[x], a, Some(&s)).expect("same length")[0]
        };
        let (dg, db) = crate::grad::grad_ql_param(x, &state, &spec);
        let dth = chain_to_theta(&state, &dg, &db, ThetaChain::FullJacobian);
        for m in 0..k {
            let fd = fd_gradient(
                |t| {
                    let mut th = theta.clone();
                    th[m] = t;
                    eval(&th, alpha)
                },
                theta[m],
                FD_STEP,
            );
            et = et.max(rel_err(dth[m], fd, 1e-6));
        }
        let fd_a = fd_gradient(|a| eval(&theta, a), alpha, FD_STEP);
        ea = ea.max(rel_err(grad_ql_alpha(x, &state, &spec), fd_a, 1e-6));
        n += 1;
    }
    Ok(vec![
        CheckRow {
            operation: "quantizer_dtheta_surrogate".into(),
            max_rel_err: et,
            n_points: n,
            tolerance: 1e-5,
        },
        CheckRow {
            operation: "quantizer_dalpha_surrogate".into(),
            max_rel_err: ea,
            n_points: n,
            tolerance: 1e-5,
        },
    ])
}

fn toy_problem(seed: u64, method: Method) -> Result<(Network<f64>, Tensor<f64>, Vec<usize>)> {
    let cfg = ModelConfig::toy(method, 3, 3);
    let mut net = cfg.build::<f64>(seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA5A5);
    for p in net.params_mut() {
        if p.name.ends_with(".theta") {
            for t in p.value.data_mut() {
                *t = rng.random_range(-0.5..0.5);
            }
        }
        if p.name.ends_with("aq.alpha") {
            p.value.data_mut()[0] = rng.random_range(1.0..2.0);
        }
        if p.name.ends_with("wq.alpha") {
            p.value.data_mut()[0] = rng.random_range(1.0..2.0);
        }
    }
    let shape = cfg.input_shape(4);
    let n: usize = shape.iter().product();
    let x = Tensor::from_vec(&shape, (0..n).map(|_| rng.random_range(-1.5..1.5)).collect())?;
    let y = (0..4).map(|i| i % cfg.classes).collect();
    Ok((net, x, y))
}

fn loss(net: &mut Network<f64>, x: &Tensor<f64>, y: &[usize]) -> Result<f64> {
    Ok(softmax_xent(&net.forward(x, Mode::Train)?, y)?.loss)
}

/// Relative-error floor for network gradients; entries below it are compared
/// absolutely.
pub const NET_GRAD_FLOOR: f64 = 1e-6;

/// End-to-end check on the toy network: backpropagated gradients of the
/// mean cross-entropy with respect to every clip value, every `θ` and a sample
/// of weights against central differences. With `identity` the quantizers use
/// identity rounding (weight statistics frozen); otherwise each quantizer is
/// replaced by its surrogate frozen at the current forward pass.
pub fn check_network(seed: u64, identity: bool, weights_per_layer: usize) -> Result<CheckRow> {
    let (mut net, x, y) = toy_problem(seed, Method::Lcq)?;
    net.set_theta_chain(ThetaChain::FullJacobian);
    if identity {
        identity_rounding_mode(&mut net, true);
        // With nothing saturated the loss no longer depends on any clip
        // value or companding parameter, so those gradients are exactly zero.
        for p in net.params_mut() {
            if p.name.ends_with(".alpha") {
                p.value.data_mut()[0] = 50.0;
            }
        }
    }
    net.freeze(&x, !identity)?;
    net.zero_grad();
    let logits = net.forward(&x, Mode::Train)?;
    let out = softmax_xent(&logits, &y)?;
    net.backward(&out.dlogits)?;
    let mut targets: Vec<(String, usize, f64)> = Vec::new();
    for p in net.params() {
        let take = match p.group {
            ParamGroup::Quant => p.value.len(),
            ParamGroup::Weight => weights_per_layer.min(p.value.len()),
            _ => 0,
        };
        let stride = (p.value.len() / take.max(1)).max(1);
        for e in (0..p.value.len()).step_by(stride).take(take) {
            targets.push((p.name.clone(), e, p.grad.data()[e]));
        }
    }
    let mut worst = 0f64;
    let mut excluded = 0;
    for (name, e, analytic) in &targets {
        let base = net.param(name).expect("listed").value.data()[*e];
        let mut at = |v: f64| -> f64 {
            net.param_mut(name).expect("listed").value.data_mut()[*e] = v;
            let l = loss(&mut net, &x, &y).expect("forward");
            net.param_mut(name).expect("listed").value.data_mut()[*e] = base;
            l
        };
        let fd = if identity {
            match smooth_fd(&mut at, base) {
                Some(fd) => fd,
                None => {
                    excluded += 1;
                    continue;
                }
            }
        } else {
            fd_gradient(&mut at, base, 1e-4)
        };
        worst = worst.max(rel_err(*analytic, fd, NET_GRAD_FLOOR));
    }
    Ok(CheckRow {
        operation: if identity {
            "network_identity_rounding".into()
        } else {
            "network_surrogate".into()
        },
        max_rel_err: worst,
        n_points: targets.len() - excluded,
        tolerance: if identity { 1e-6 } else { 1e-2 },
    })
}

/// Result of one LUT equivalence run.
#[derive(Clone, Debug, PartialEq)]
pub struct LutEquivalence {
    pub b_w: u32,
    pub b_a: u32,
    pub outer: u32,
    pub pairs: usize,
    /// Largest relative difference between the table path and the float
    /// convolution of the dequantized tensors (floor: 1e-6 of the largest
    /// output).
    pub max_rel_err: f64,
    /// Table path equals the lattice reference bit for bit.
    pub lattice_exact: bool,
}

/// Exhaustive level-pair check plus a randomized 3×3 convolution comparing
/// the table path with the float path.
pub fn check_lut_equivalence(b_w: u32, b_a: u32, outer: u32, seed: u64) -> Result<LutEquivalence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = 8;
    let ws = QuantSpec::new(b_w, true, Some(outer), k)?;
    let as_ = QuantSpec::new(b_a, false, Some(outer), k)?;
    let sw = CompandingState::<f64>::derive(&random_theta(&mut rng, k, 0.5), rng.random_range(0.5..3.0))?;
    let sa = CompandingState::<f64>::derive(&random_theta(&mut rng, k, 0.5), rng.random_range(0.5..3.0))?;
    let sigma = rng.random_range(0.05..1.0);
    let wl = LatticeLevels::new(Some(&sw), &ws)?;
    let al = LatticeLevels::new(Some(&sa), &as_)?;
    let geom = ConvGeom::new(4, 5, 3, 1, 1);
    let wshape = geom.weight_shape();
    let wn: usize = wshape.iter().product();
    let z = Tensor::from_vec(&wshape, (0..wn).map(|_| rng.random_range(-1.2 * sw.alpha()..1.2 * sw.alpha())).collect())?;
    let xshape = [2, 4, 6, 6];
    let xn: usize = xshape.iter().product();
    let x = Tensor::from_vec(&xshape, (0..xn).map(|_| rng.random_range(-0.3..1.2 * sa.alpha())).collect())?;
    let ops = LayerOperands {
        weights: encode(&z, sw.alpha(), Some(&sw), &ws)?,
        acts: encode(&x, sa.alpha(), Some(&sa), &as_)?,
        w_levels: wl.clone(),
        a_levels: al.clone(),
        w_scale: sw.alpha() * sigma,
        a_scale: sa.alpha(),
    };
    let lut = build_lut(&wl, &al, ops.rescale())?;
    let pairs = check_lut_exhaustive(&lut, &wl, &al, ops.w_scale, ops.a_scale)?;
    let y: Tensor<f64> = lut_infer_layer(&ops.weights, &ops.acts, &lut, &geom)?;
    let lattice: Tensor<f64> = reference_conv(&ops, &geom)?;
    // Float path: the training graph's quantized values, convolved directly.
    let wq: Vec<f64> = z
        .data()
        .iter()
        .map(|&v| sigma * trace(v, sw.alpha(), Some(&sw), &ws).out_outer)
        .collect();
    let aq = x.map(|v| trace(v, sa.alpha(), Some(&sa), &as_).out_outer);
    let (yf, _) = conv_forward(&aq, &wq, &geom)?;
    let scale = yf.data().iter().fold(0f64, |m, v| m.max(v.abs()));
    let max_rel_err = y
        .data()
        .iter()
        .zip(yf.data())
        .map(|(a, b)| rel_err(*a, *b, 1e-6 * scale))
        .fold(0.0, f64::max);
    Ok(LutEquivalence {
        b_w,
        b_a,
        outer,
        pairs,
        max_rel_err,
        lattice_exact: y == lattice,
    })
}

/// Float forward against the integer table path over a dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct PathAgreement {
    pub samples: usize,
    pub float_top1: f64,
    pub lut_top1: f64,
    /// Largest relative logit difference (floor: 1e-6 of the batch's largest
    /// logit magnitude).
    pub max_rel_err: f64,
    /// Samples whose predicted class differs between the paths.
    pub disagreements: usize,
}

fn argmax<T: Real>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Runs `ds` through `net` in [`Mode::Eval`] and [`Mode::Lut`].
pub fn compare_float_lut<T: Real>(net: &mut Network<T>, ds: &crate::data::Dataset, batch: usize) -> Result<PathAgreement> {
    let mut r = PathAgreement {
        samples: ds.len(),
        float_top1: 0.0,
        lut_top1: 0.0,
        max_rel_err: 0.0,
        disagreements: 0,
    };
    let (mut cf, mut cl) = (0usize, 0usize);
    let idx: Vec<usize> = (0..ds.len()).collect();
    for chunk in idx.chunks(batch.max(1)) {
        let (x, y) = ds.batch::<T>(chunk)?;
        let yf = net.forward(&x, Mode::Eval)?;
        let yl = net.forward(&x, Mode::Lut)?;
        let scale = yf.data().iter().fold(0f64, |m, v| m.max(v.to_f64_lossy().abs()));
        for (a, b) in yf.data().iter().zip(yl.data()) {
            r.max_rel_err = r.max_rel_err.max(rel_err(a.to_f64_lossy(), b.to_f64_lossy(), 1e-6 * scale));
        }
        let classes = yf.len() / chunk.len();
        for (i, &label) in y.iter().enumerate() {
            let pf = argmax(&yf.data()[i * classes..(i + 1) * classes]);
            let pl = argmax(&yl.data()[i * classes..(i + 1) * classes]);
            cf += usize::from(pf == label);
            cl += usize::from(pl == label);
            r.disagreements += usize::from(pf != pl);
        }
    }
    let n = ds.len().max(1) as f64;
    r.float_top1 = 100.0 * cf as f64 / n;
    r.lut_top1 = 100.0 * cl as f64 / n;
    Ok(r)
}

/// Every gradient check, as run by `lcq gradcheck`.
pub fn gradcheck_suite(seed: u64) -> Result<Vec<CheckRow>> {
    let mut rows = vec![CheckRow {
        operation: "fd_square".into(),
        max_rel_err: rel_err(fd_gradient(|x| x * x, 3.0, FD_STEP), 6.0, 1e-12),
        n_points: 1,
        tolerance: 1e-9,
    }];
    rows.extend(check_component_partials(2000, seed)?);
    rows.extend(check_identity_rounding_null(10_000, seed)?);
    rows.extend(check_quantizer_surrogate(300, seed)?);
    rows.push(check_network(seed, false, 12)?);
    rows.push(check_network(seed, true, 12)?);
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quant::quant_levels;

    #[test]
    fn fd_basics() {
        assert!((fd_gradient(|x| x * x, 3.0, FD_STEP) - 6.0).abs() < 1e-9);
        assert!((fd_gradient(f64::abs, 0.5, FD_STEP) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn reference_compander_matches_worked_case() {
        let r = RefCompander::from_theta(&[3f64.ln(), 0.0]);
        assert!((r.compress(0.25) - 0.375).abs() < 1e-15);
        assert!((r.compress(0.75) - 0.875).abs() < 1e-15);
        assert!((r.expand(0.875) - 0.75).abs() < 1e-15);
        let s = CompandingState::<f64>::derive(&[3f64.ln(), 0.0], 1.0).unwrap();
        for v in [0.1, 0.3, 0.6, 0.95] {
            assert!((r.compress(v) - s.compress(v).unwrap()).abs() < 1e-15);
        }
    }

    #[test]
    fn compress_derivative_wrt_theta_tilde() {
        // ∂f(v)/∂θ̃₁ through γ₁ = K·θ̃₁ at the worked case, v in interval 1.
        let v = 0.25;
        let an = compress_partials(v, CompandingState::<f64>::derive(&[3f64.ln(), 0.0], 1.0).unwrap().map()).d_gamma * 2.0;
        let f = |t: f64| RefCompander {
            gamma: vec![2.0 * t, 0.5],
            beta: vec![0.0, 0.75, 1.0],
            d: vec![0.0, 0.5, 1.0],
        }
        .compress_in(v, 0);
        assert!((fd_gradient(f, 0.75, FD_STEP) - an).abs() < 1e-9);
    }

    #[test]
    fn bruteforce_levels() {
        let id = CompandingState::<f64>::identity(4, 1.0).unwrap();
        let u2 = QuantSpec::new(2, false, Some(8), 4).unwrap();
        assert_eq!(enumerate_levels_bruteforce(&id, &u2, 100_000).unwrap().len(), 4);
        let s2 = QuantSpec::new(2, true, Some(8), 4).unwrap();
        assert_eq!(enumerate_levels_bruteforce(&id, &s2, 100_000).unwrap().len(), 3);
        let w = CompandingState::<f64>::derive(&[3f64.ln(), 0.0], 1.0).unwrap();
        let spec = QuantSpec::new(2, false, Some(8), 2).unwrap();
        assert_eq!(
            enumerate_levels_bruteforce(&w, &spec, 100_000).unwrap(),
            quant_levels(&w, &spec).unwrap()
        );
    }

    #[test]
    fn suite_passes() {
        let rows = gradcheck_suite(1).unwrap();
        let csv = checks_csv(&rows);
        for r in &rows {
            assert!(r.pass(), "{csv}");
        }
    }

    #[test]
    fn lut_equivalence_small() {
        let r = check_lut_equivalence(3, 3, 8, 2).unwrap();
        assert_eq!(r.pairs, 21);
        assert!(r.lattice_exact);
        assert!(r.max_rel_err < 1e-5, "{r:?}");
    }
}
