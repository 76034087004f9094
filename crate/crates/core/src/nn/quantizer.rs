use crate::error::{Error, Result};
use crate::grad::{accumulate, SteSurrogate, ThetaChain};
use crate::nn::{Param, ParamGroup, Tensor};
use crate::quant::{trace, CompandingState, QuantRecord, QuantSpec, Role};
use crate::real::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QuantKind {
    /// Clipped uniform quantizer (no learnable companding).
    Uniform,
    /// Learnable companding quantizer.
    Companding,
}

/// A quantizer with learnable clip value and (for companding) `θ`.
///
/// The forward value is `Q'` when the spec carries an outer bit-width and
/// `Q` otherwise.
#[derive(Clone, Debug)]
pub struct Quantizer<T> {
    pub role: Role,
    pub kind: QuantKind,
    pub spec: QuantSpec,
    pub chain: ThetaChain,
    pub alpha: Param<T>,
    /// `None` for [`QuantKind::Uniform`].
    pub theta: Option<Param<T>>,
    surrogate: Option<SteSurrogate<T>>,
}

impl<T: Real> Quantizer<T> {
    pub fn new(name: &str, role: Role, kind: QuantKind, spec: QuantSpec, alpha: f64) -> Self {
        let k = spec.intervals();
        let theta = (kind == QuantKind::Companding)
            .then(|| Param::new(format!("{name}.theta"), ParamGroup::Quant, Tensor::zeros(&[k])));
        Self {
            role,
            kind,
            spec,
            chain: ThetaChain::Diagonal,
            alpha: Param::new(format!("{name}.alpha"), ParamGroup::Quant, Tensor::scalar(T::lit(alpha))),
            theta,
            surrogate: None,
        }
    }

    pub fn alpha_value(&self) -> T {
        self.alpha.value.data()[0]
    }

    /// Derived companding tables for the current parameters.
    pub fn state(&self) -> Result<Option<CompandingState<T>>> {
        self.theta
            .as_ref()
            .map(|t| CompandingState::derive(t.value.data(), self.alpha_value()))
            .transpose()
    }

    fn check_alpha(&self) -> Result<T> {
        let a = self.alpha_value();
        if a.is_finite() && a > T::zero() {
            Ok(a)
        } else {
            Err(Error::ParameterCorruption(format!("{}: alpha = {a}", self.alpha.name)))
        }
    }

    /// Quantized values of `xs`.
    pub fn forward(&self, xs: &[T]) -> Result<Vec<T>> {
        let alpha = self.check_alpha()?;
        let state = self.state()?;
        if let Some(s) = &self.surrogate {
            return s.eval(xs, alpha, state.as_ref());
        }
        Ok(xs.iter().map(|&x| trace(x, alpha, state.as_ref(), &self.spec).out_outer).collect())
    }

    /// Adds `∂L/∂α`, `∂L/∂θ` for upstream `up` at inputs `xs` and returns `∂L/∂xs`.
    pub fn backward(&mut self, xs: &Tensor<T>, up: &Tensor<T>) -> Result<Tensor<T>> {
        let alpha = self.check_alpha()?;
        let state = self.state()?;
        let g = accumulate(xs, up, alpha, state.as_ref(), &self.spec, self.role, self.chain)?;
        self.alpha.grad.data_mut()[0] += g.d_alpha;
        if let Some(t) = &mut self.theta {
            t.add_grad(&g.d_theta);
        }
        Ok(g.d_input)
    }

    /// Replaces the quantizer by its straight-through surrogate frozen at `xs`.
    pub(crate) fn freeze(&mut self, xs: &[T]) -> Result<()> {
        let alpha = self.check_alpha()?;
        let state = self.state()?;
        self.surrogate = Some(SteSurrogate::freeze(xs, alpha, state.as_ref(), &self.spec, self.role));
        Ok(())
    }

    pub(crate) fn unfreeze(&mut self) {
        self.surrogate = None;
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        std::iter::once(&mut self.alpha).chain(self.theta.as_mut())
    }

    pub fn params(&self) -> impl Iterator<Item = &Param<T>> {
        std::iter::once(&self.alpha).chain(self.theta.as_ref())
    }

    pub fn record(&self, layer: &str) -> QuantRecord {
        QuantRecord {
            layer: layer.to_string(),
            role: self.role,
            spec: self.spec,
            companding: self.kind == QuantKind::Companding,
            alpha: self.alpha_value().to_f64_lossy(),
            theta: self
                .theta
                .as_ref()
                .map(|t| t.value.data().iter().map(|v| v.to_f64_lossy()).collect())
                .unwrap_or_default(),
        }
    }
}
