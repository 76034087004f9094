use crate::error::{Error, Result};
use crate::lwn::{weight_stats, WeightNorm, WeightStats};
use crate::nn::conv::{conv_backward, conv_forward, ConvGeom};
use crate::nn::{Param, ParamGroup, Quantizer, Tensor};
use crate::real::Real;

/// What happens to a layer's input before the convolution.
#[derive(Clone, Debug)]
pub enum ActOp<T> {
    Identity,
    Relu,
    Quant(Quantizer<T>),
}

/// Weight quantizer together with the normalization wrapped around it.
#[derive(Clone, Debug)]
pub struct WeightQuant<T> {
    pub quantizer: Quantizer<T>,
    pub norm: WeightNorm,
    frozen_stats: Option<WeightStats<T>>,
}

impl<T: Real> WeightQuant<T> {
    pub fn new(quantizer: Quantizer<T>, norm: WeightNorm) -> Self {
        Self {
            quantizer,
            norm,
            frozen_stats: None,
        }
    }

    /// Statistics used for the current forward pass.
    pub fn stats(&self, w: &[T]) -> WeightStats<T> {
        self.frozen_stats.unwrap_or_else(|| weight_stats(w))
    }

    /// Quantizer inputs `z` and the effective weights `scale·Q(z)`.
    pub fn apply(&self, w: &[T]) -> Result<(Vec<T>, Vec<T>, WeightStats<T>)> {
        let st = self.stats(w);
        let z: Vec<T> = w.iter().map(|&x| self.norm.normalize(x, &st)).collect();
        let scale = self.norm.output_scale(&st);
        let q = self.quantizer.forward(&z)?;
        let wt = q.into_iter().map(|v| scale * v).collect();
        Ok((z, wt, st))
    }
}

struct Cache<T> {
    input: Tensor<T>,
    z: Vec<T>,
    stats: Option<WeightStats<T>>,
    w_eff: Vec<T>,
    col: Vec<T>,
}

/// Convolution (or linear) layer with optional weight and input quantizers.
///
/// Forward: the input passes through [`ActOp`], weights through the weight
/// quantizer, then `y = w̃ ⊛ ã`. There is no bias; the preceding batch norm
/// provides it.
pub struct QConv<T> {
    pub name: String,
    pub geom: ConvGeom,
    pub weight: Param<T>,
    pub wq: Option<WeightQuant<T>>,
    pub act: ActOp<T>,
    cache: Option<Cache<T>>,
}

impl<T: Real> QConv<T> {
    pub fn new(name: &str, geom: ConvGeom, weight: Tensor<T>, wq: Option<WeightQuant<T>>, act: ActOp<T>) -> Result<Self> {
        if weight.shape() != geom.weight_shape() {
            return Err(Error::shape(format!(
                "{name}: weight {:?} vs geometry {:?}",
                weight.shape(),
                geom.weight_shape()
            )));
        }
        Ok(Self {
            name: name.to_string(),
            geom,
            weight: Param::new(format!("{name}.weight"), ParamGroup::Weight, weight),
            wq,
            act,
            cache: None,
        })
    }

    pub fn act_quantizer(&self) -> Option<&Quantizer<T>> {
        match &self.act {
            ActOp::Quant(q) => Some(q),
            _ => None,
        }
    }

    /// Input of the last training-mode forward pass, until backward consumes it.
    pub fn cached_input(&self) -> Option<&Tensor<T>> {
        self.cache.as_ref().map(|c| &c.input)
    }

    pub fn is_quantized(&self) -> bool {
        self.wq.is_some() && self.act_quantizer().is_some()
    }

    /// Input after [`ActOp`].
    pub fn activate(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        match &self.act {
            ActOp::Identity => Ok(x.clone()),
            ActOp::Relu => Ok(x.map(|v| v.max(T::zero()))),
            ActOp::Quant(q) => Tensor::from_vec(x.shape(), q.forward(x.data())?),
        }
    }

    /// Weights as seen by the convolution.
    pub fn effective_weights(&self) -> Result<Vec<T>> {
        match &self.wq {
            None => Ok(self.weight.value.data().to_vec()),
            Some(wq) => Ok(wq.apply(self.weight.value.data())?.1),
        }
    }

    pub fn forward(&mut self, x: &Tensor<T>, train: bool) -> Result<Tensor<T>> {
        let a = self.activate(x)?;
        let (z, w_eff, stats) = match &self.wq {
            None => (Vec::new(), self.weight.value.data().to_vec(), None),
            Some(wq) => {
                let (z, w, st) = wq.apply(self.weight.value.data())?;
                (z, w, Some(st))
            }
        };
        let (y, col) = conv_forward(&a, &w_eff, &self.geom).map_err(|e| match e {
            Error::Shape(m) => Error::Shape(format!("{}: {m}", self.name)),
            o => o,
        })?;
        self.cache = train.then(|| Cache {
            input: x.clone(),
            z,
            stats,
            w_eff,
            col,
        });
        Ok(y)
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let c = self
            .cache
            .take()
            .ok_or_else(|| Error::contract(format!("{}: backward without a training forward", self.name)))?;
        let (dw_eff, da) = conv_backward(dy, &c.col, &c.w_eff, c.input.shape(), &self.geom)?;
        match (&mut self.wq, c.stats) {
            (Some(wq), Some(st)) => {
                let out_scale = wq.norm.output_scale(&st);
                let in_scale = wq.norm.input_scale(&st);
                let shape = self.weight.value.shape().to_vec();
                let up = Tensor::from_vec(&shape, dw_eff.iter().map(|&g| g * out_scale).collect())?;
                let z = Tensor::from_vec(&shape, c.z.clone())?;
                let dz = wq.quantizer.backward(&z, &up)?;
                let dw: Vec<T> = dz.data().iter().map(|&g| g * in_scale).collect();
                self.weight.add_grad(&dw);
            }
            _ => self.weight.add_grad(&dw_eff),
        }
        let dx = match &mut self.act {
            ActOp::Identity => da,
            ActOp::Relu => c.input.zip_map(&da, |x, g| if x > T::zero() { g } else { T::zero() })?,
            ActOp::Quant(q) => q.backward(&c.input, &da)?,
        };
        Ok(dx)
    }

    /// Freezes weight statistics (and, with `surrogate`, both quantizers) at
    /// the current weights and the given layer input.
    pub(crate) fn freeze(&mut self, x: &Tensor<T>, surrogate: bool) -> Result<()> {
        if let Some(wq) = &mut self.wq {
            let st = weight_stats(self.weight.value.data());
            wq.frozen_stats = Some(st);
            if surrogate {
                let z: Vec<T> = self.weight.value.data().iter().map(|&w| wq.norm.normalize(w, &st)).collect();
                wq.quantizer.freeze(&z)?;
            }
        }
        if let (ActOp::Quant(q), true) = (&mut self.act, surrogate) {
            q.freeze(x.data())?;
        }
        Ok(())
    }

    pub(crate) fn unfreeze(&mut self) {
        if let Some(wq) = &mut self.wq {
            wq.frozen_stats = None;
            wq.quantizer.unfreeze();
        }
        if let ActOp::Quant(q) = &mut self.act {
            q.unfreeze();
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut out = vec![&mut self.weight];
        if let Some(wq) = &mut self.wq {
            out.extend(wq.quantizer.params_mut());
        }
        if let ActOp::Quant(q) = &mut self.act {
            out.extend(q.params_mut());
        }
        out
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        let mut out = vec![&self.weight];
        if let Some(wq) = &self.wq {
            out.extend(wq.quantizer.params());
        }
        if let ActOp::Quant(q) = &self.act {
            out.extend(q.params());
        }
        out
    }
}
