use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::real::Real;

/// Optimizer group a parameter belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    /// Convolution and linear weights: weight learning rate, weight decay.
    Weight,
    /// Clip values and companding parameters: quantizer learning rate, no decay.
    Quant,
    /// Batch-norm affine parameters: weight learning rate, no decay.
    Norm,
    /// Running statistics; saved in checkpoints, never optimized.
    Buffer,
}

impl ParamGroup {
    pub fn as_str(&self) -> &'static str {
        match self {
            ParamGroup::Weight => "weight",
            ParamGroup::Quant => "quant",
            ParamGroup::Norm => "norm",
            ParamGroup::Buffer => "buffer",
        }
    }
}

/// A named tensor with its gradient accumulator.
#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub group: ParamGroup,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

impl<T: Real> Param<T> {
    pub fn new(name: impl Into<String>, group: ParamGroup, value: Tensor<T>) -> Self {
        let grad = Tensor::zeros(value.shape());
        Self {
            name: name.into(),
            group,
            value,
            grad,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.data_mut().iter_mut().for_each(|g| *g = T::zero());
    }

    pub(crate) fn add_grad(&mut self, g: &[T]) {
        for (a, &b) in self.grad.data_mut().iter_mut().zip(g) {
            *a += b;
        }
    }
}

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

struct BnCache<T> {
    xhat: Vec<T>,
    inv_std: Vec<T>,
    shape: Vec<usize>,
}

/// Per-channel batch normalization over `[N, C, H, W]` with learnable scale and shift.
pub struct BatchNorm<T> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Param<T>,
    pub running_var: Param<T>,
    cache: Option<BnCache<T>>,
}

impl<T: Real> BatchNorm<T> {
    pub fn new(name: &str, channels: usize) -> Self {
        let ones = Tensor::from_vec(&[channels], vec![T::one(); channels]).expect("length matches");
        Self {
            gamma: Param::new(format!("{name}.gamma"), ParamGroup::Norm, ones.clone()),
            beta: Param::new(format!("{name}.beta"), ParamGroup::Norm, Tensor::zeros(&[channels])),
            running_mean: Param::new(format!("{name}.running_mean"), ParamGroup::Buffer, Tensor::zeros(&[channels])),
            running_var: Param::new(format!("{name}.running_var"), ParamGroup::Buffer, ones),
            cache: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.value.len()
    }

    fn dims(&self, shape: &[usize]) -> Result<(usize, usize, usize)> {
        if shape.len() != 4 || shape[1] != self.channels() {
            return Err(Error::shape(format!(
                "batch norm expects [N, {}, H, W], got {shape:?}",
                self.channels()
            )));
        }
        Ok((shape[0], shape[1], shape[2] * shape[3]))
    }

    pub fn forward(&mut self, x: &Tensor<T>, train: bool) -> Result<Tensor<T>> {
        let (n, c, hw) = self.dims(x.shape())?;
        let m = n * hw;
        let eps = T::lit(BN_EPS);
        let mut y = vec![T::zero(); x.len()];
        let xd = x.data();
        if !train {
            for ch in 0..c {
                let inv = T::one() / (self.running_var.value.data()[ch] + eps).sqrt();
                let (mu, ga, be) = (
                    self.running_mean.value.data()[ch],
                    self.gamma.value.data()[ch],
                    self.beta.value.data()[ch],
                );
                for b in 0..n {
                    let o = (b * c + ch) * hw;
                    for i in o..o + hw {
                        y[i] = ga * ((xd[i] - mu) * inv) + be;
                    }
                }
            }
            self.cache = None;
            return Tensor::from_vec(x.shape(), y);
        }
        if m < 2 {
            return Err(Error::shape("batch norm in training mode needs at least 2 values per channel"));
        }
        let mf = T::lit(m as f64);
        let mom = T::lit(BN_MOMENTUM);
        let mut xhat = vec![T::zero(); x.len()];
        let mut inv_std = vec![T::zero(); c];
        for ch in 0..c {
            let mut sum = T::zero();
            for b in 0..n {
                sum += xd[(b * c + ch) * hw..][..hw].iter().fold(T::zero(), |a, &v| a + v);
            }
            let mean = sum / mf;
            let mut sq = T::zero();
            for b in 0..n {
                sq += xd[(b * c + ch) * hw..][..hw]
                    .iter()
                    .fold(T::zero(), |a, &v| a + (v - mean) * (v - mean));
            }
            let var = sq / mf;
            let inv = T::one() / (var + eps).sqrt();
            inv_std[ch] = inv;
            let (ga, be) = (self.gamma.value.data()[ch], self.beta.value.data()[ch]);
            for b in 0..n {
                let o = (b * c + ch) * hw;
                for i in o..o + hw {
                    xhat[i] = (xd[i] - mean) * inv;
                    y[i] = ga * xhat[i] + be;
                }
            }
            let rm = &mut self.running_mean.value.data_mut()[ch];
            *rm = (T::one() - mom) * *rm + mom * mean;
            let rv = &mut self.running_var.value.data_mut()[ch];
            let unbiased = var * mf / T::lit((m - 1) as f64);
            *rv = (T::one() - mom) * *rv + mom * unbiased;
        }
        self.cache = Some(BnCache {
            xhat,
            inv_std,
            shape: x.shape().to_vec(),
        });
        Tensor::from_vec(x.shape(), y)
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| Error::contract("batch norm backward without a training forward"))?;
        if dy.shape() != cache.shape.as_slice() {
            return Err(Error::shape(format!("upstream {:?} vs {:?}", dy.shape(), cache.shape)));
        }
        let (n, c, hw) = self.dims(dy.shape())?;
        let mf = T::lit((n * hw) as f64);
        let dyd = dy.data();
        let mut dx = vec![T::zero(); dy.len()];
        for ch in 0..c {
            let mut sum_dy = T::zero();
            let mut sum_dy_xhat = T::zero();
            for b in 0..n {
                let o = (b * c + ch) * hw;
                for i in o..o + hw {
                    sum_dy += dyd[i];
                    sum_dy_xhat += dyd[i] * cache.xhat[i];
                }
            }
            self.gamma.grad.data_mut()[ch] += sum_dy_xhat;
            self.beta.grad.data_mut()[ch] += sum_dy;
            let k = self.gamma.value.data()[ch] * cache.inv_std[ch] / mf;
            for b in 0..n {
                let o = (b * c + ch) * hw;
                for i in o..o + hw {
                    dx[i] = k * (mf * dyd[i] - sum_dy - cache.xhat[i] * sum_dy_xhat);
                }
            }
        }
        self.cache = Some(cache);
        Tensor::from_vec(dy.shape(), dx)
    }
}

/// Non-overlapping average pooling; `None` pools the whole spatial extent.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AvgPool {
    pub kernel: Option<usize>,
}

impl AvgPool {
    fn window(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        match self.kernel {
            None => Ok((h, w)),
            Some(k) if k > 0 && k <= h && k <= w => Ok((k, k)),
            Some(k) => Err(Error::shape(format!("pool kernel {k} does not fit {h}×{w}"))),
        }
    }

    pub fn out_shape(&self, shape: &[usize]) -> Result<Vec<usize>> {
        if shape.len() != 4 {
            return Err(Error::shape(format!("pooling expects NCHW, got {shape:?}")));
        }
        let (kh, kw) = self.window(shape[2], shape[3])?;
        Ok(vec![shape[0], shape[1], shape[2] / kh, shape[3] / kw])
    }

    pub fn forward<T: Real>(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let out = self.out_shape(x.shape())?;
        let (h, w) = (x.shape()[2], x.shape()[3]);
        let (kh, kw) = self.window(h, w)?;
        let (ho, wo) = (out[2], out[3]);
        let scale = T::one() / T::lit((kh * kw) as f64);
        let mut y = vec![T::zero(); out.iter().product()];
        for (plane, dst) in x.data().chunks(h * w).zip(y.chunks_mut(ho * wo)) {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = T::zero();
                    for ky in 0..kh {
                        for kx in 0..kw {
                            acc += plane[(oy * kh + ky) * w + ox * kw + kx];
                        }
                    }
                    dst[oy * wo + ox] = acc * scale;
                }
            }
        }
        Tensor::from_vec(&out, y)
    }

    pub fn backward<T: Real>(&self, dy: &Tensor<T>, in_shape: &[usize]) -> Result<Tensor<T>> {
        let out = self.out_shape(in_shape)?;
        if dy.shape() != out.as_slice() {
            return Err(Error::shape(format!("upstream {:?} vs pooled {:?}", dy.shape(), out)));
        }
        let (h, w) = (in_shape[2], in_shape[3]);
        let (kh, kw) = self.window(h, w)?;
        let (ho, wo) = (out[2], out[3]);
        let scale = T::one() / T::lit((kh * kw) as f64);
        let mut dx = vec![T::zero(); in_shape.iter().product()];
        for (src, plane) in dy.data().chunks(ho * wo).zip(dx.chunks_mut(h * w)) {
            for oy in 0..ho {
                for ox in 0..wo {
                    let g = src[oy * wo + ox] * scale;
                    for ky in 0..kh {
                        for kx in 0..kw {
                            plane[(oy * kh + ky) * w + ox * kw + kx] = g;
                        }
                    }
                }
            }
        }
        Tensor::from_vec(in_shape, dx)
    }
}

/// Mean softmax cross-entropy over a batch of logits `[N, C, ...]`.
#[derive(Clone, Debug)]
pub struct XentOut<T> {
    pub loss: T,
    pub dlogits: Tensor<T>,
    pub correct: usize,
}

pub fn softmax_xent<T: Real>(logits: &Tensor<T>, labels: &[usize]) -> Result<XentOut<T>> {
    let n = logits.shape().first().copied().unwrap_or(0);
    if n == 0 || n != labels.len() {
        return Err(Error::shape(format!(
            "{} labels for logits {:?}",
            labels.len(),
            logits.shape()
        )));
    }
    let classes = logits.len() / n;
    let nf = T::lit(n as f64);
    let mut loss = T::zero();
    let mut correct = 0;
    let mut d = vec![T::zero(); logits.len()];
    for (b, &label) in labels.iter().enumerate() {
        if label >= classes {
            return Err(Error::shape(format!("label {label} outside {classes} classes")));
        }
        let row = logits.outer(b);
        let (arg, max) = row
            .iter()
            .enumerate()
            .fold((0, T::neg_infinity()), |(ai, am), (i, &v)| if v > am { (i, v) } else { (ai, am) });
        if arg == label {
            correct += 1;
        }
        let mut z = T::zero();
        for &v in row {
            z += (v - max).exp();
        }
        let lz = z.ln();
        loss += lz - (row[label] - max);
        let drow = &mut d[b * classes..(b + 1) * classes];
        for (dv, &v) in drow.iter_mut().zip(row) {
            *dv = (v - max).exp() / z / nf;
        }
        drow[label] -= T::one() / nf;
    }
    Ok(XentOut {
        loss: loss / nf,
        dlogits: Tensor::from_vec(logits.shape(), d)?,
        correct,
    })
}

/// Index of the largest logit per sample.
pub fn argmax_rows<T: Real>(logits: &Tensor<T>) -> Vec<usize> {
    let n = logits.shape().first().copied().unwrap_or(0);
    (0..n)
        .map(|b| {
            logits
                .outer(b)
                .iter()
                .enumerate()
                .fold((0, T::neg_infinity()), |(ai, am), (i, &v)| if v > am { (i, v) } else { (ai, am) })
                .0
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batchnorm_identity_on_standardized_input() {
        let mut bn = BatchNorm::<f64>::new("bn", 1);
        let x = Tensor::from_vec(&[4, 1, 1, 1], vec![-1.0, 1.0, -1.0, 1.0]).unwrap();
        let y = bn.forward(&x, true).unwrap();
        for (a, b) in x.data().iter().zip(y.data()) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn batchnorm_eval_uses_running_stats() {
        let mut bn = BatchNorm::<f64>::new("bn", 2);
        let x = Tensor::from_vec(&[1, 2, 1, 2], vec![3.0, 4.0, 5.0, 6.0]).unwrap();
        let y = bn.forward(&x, false).unwrap();
        for (a, b) in x.data().iter().zip(y.data()) {
            assert!((a / (1.0 + BN_EPS).sqrt() - b).abs() < 1e-12);
        }
    }

    #[test]
    fn xent_of_uniform_logits_is_ln_classes() {
        let logits = Tensor::<f64>::zeros(&[3, 10]);
        let out = softmax_xent(&logits, &[0, 4, 9]).unwrap();
        assert!((out.loss - 10f64.ln()).abs() < 1e-12);
        let s: f64 = out.dlogits.data().iter().sum();
        assert!(s.abs() < 1e-12);
        assert!(softmax_xent(&logits, &[0, 10, 1]).is_err());
    }

    #[test]
    fn pooling_round_trip_shapes() {
        let p = AvgPool { kernel: Some(2) };
        let x = Tensor::<f64>::from_vec(&[1, 1, 2, 4], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]).unwrap();
        let y = p.forward(&x).unwrap();
        assert_eq!(y.data(), &[3.5, 5.5]);
        let dx = p.backward(&Tensor::from_vec(&[1, 1, 1, 2], vec![4.0, 8.0]).unwrap(), x.shape()).unwrap();
        assert_eq!(dx.data(), &[1.0, 1.0, 2.0, 2.0, 1.0, 1.0, 2.0, 2.0]);
        let g = AvgPool { kernel: None }.forward(&x).unwrap();
        assert_eq!(g.data(), &[4.5]);
    }
}
