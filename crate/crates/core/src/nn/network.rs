use crate::error::{Error, Result};
use crate::grad::ThetaChain;
use crate::nn::{ActOp, AvgPool, BatchNorm, Param, QConv, Quantizer, Tensor};
use crate::quant::{QuantRecord, Role, Rounding};
use crate::real::Real;

/// How a forward pass is evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics, caches kept for backward.
    Train,
    /// Running statistics, no caches.
    Eval,
    /// As [`Mode::Eval`], with every quantized convolution computed on integer
    /// lattice codes in 64-bit floats and rescaled afterwards.
    Lattice,
    /// As [`Mode::Lattice`], with products read from look-up tables and
    /// accumulated in `i32`.
    Lut,
}

pub enum Layer<T> {
    Conv(QConv<T>),
    BatchNorm(BatchNorm<T>),
    Pool { pool: AvgPool, in_shape: Vec<usize> },
    /// `[N, C, H, W]` → `[N, C·H·W, 1, 1]`.
    Flatten { in_shape: Vec<usize> },
    /// `body(x) + shortcut(x)`; an empty shortcut is the identity.
    Residual { body: Vec<Layer<T>>, shortcut: Vec<Layer<T>> },
}

impl<T: Real> Layer<T> {
    pub fn pool(kernel: Option<usize>) -> Self {
        Layer::Pool {
            pool: AvgPool { kernel },
            in_shape: Vec::new(),
        }
    }

    pub fn flatten() -> Self {
        Layer::Flatten { in_shape: Vec::new() }
    }

    fn forward(&mut self, x: Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let train = mode == Mode::Train;
        match self {
            Layer::Conv(c) => match mode {
                Mode::Train | Mode::Eval => c.forward(&x, train),
                Mode::Lattice => crate::lut::conv_lattice(c, &x),
                Mode::Lut => crate::lut::conv_lut(c, &x),
            },
            Layer::BatchNorm(bn) => bn.forward(&x, train),
            Layer::Pool { pool, in_shape } => {
                *in_shape = x.shape().to_vec();
                pool.forward(&x)
            }
            Layer::Flatten { in_shape } => {
                *in_shape = x.shape().to_vec();
                let n = x.shape()[0];
                let rest = x.len() / n.max(1);
                x.reshape(&[n, rest, 1, 1])
            }
            Layer::Residual { body, shortcut } => {
                let s = run(shortcut, x.clone(), mode)?;
                let b = run(body, x, mode)?;
                b.zip_map(&s, |p, q| p + q)
            }
        }
    }

    fn backward(&mut self, dy: Tensor<T>) -> Result<Tensor<T>> {
        match self {
            Layer::Conv(c) => c.backward(&dy),
            Layer::BatchNorm(bn) => bn.backward(&dy),
            Layer::Pool { pool, in_shape } => pool.backward(&dy, in_shape),
            Layer::Flatten { in_shape } => dy.reshape(in_shape),
            Layer::Residual { body, shortcut } => {
                let ds = run_back(shortcut, dy.clone())?;
                let db = run_back(body, dy)?;
                db.zip_map(&ds, |p, q| p + q)
            }
        }
    }

    fn freeze_forward(&mut self, x: Tensor<T>, surrogate: bool) -> Result<Tensor<T>> {
        match self {
            Layer::Conv(c) => {
                c.freeze(&x, surrogate)?;
                c.forward(&x, true)
            }
            Layer::Residual { body, shortcut } => {
                let s = freeze_run(shortcut, x.clone(), surrogate)?;
                let b = freeze_run(body, x, surrogate)?;
                b.zip_map(&s, |p, q| p + q)
            }
            other => other.forward(x, Mode::Train),
        }
    }

    fn visit<'a>(&'a self, out: &mut Vec<&'a QConv<T>>, bns: &mut Vec<&'a BatchNorm<T>>) {
        match self {
            Layer::Conv(c) => out.push(c),
            Layer::BatchNorm(b) => bns.push(b),
            Layer::Residual { body, shortcut } => {
                for l in body.iter().chain(shortcut.iter()) {
                    l.visit(out, bns);
                }
            }
            _ => {}
        }
    }

    fn visit_mut<'a>(&'a mut self, out: &mut Vec<&'a mut QConv<T>>, bns: &mut Vec<&'a mut BatchNorm<T>>) {
        match self {
            Layer::Conv(c) => out.push(c),
            Layer::BatchNorm(b) => bns.push(b),
            Layer::Residual { body, shortcut } => {
                for l in body.iter_mut().chain(shortcut.iter_mut()) {
                    l.visit_mut(out, bns);
                }
            }
            _ => {}
        }
    }

    fn params_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Param<T>>) {
        match self {
            Layer::Conv(c) => out.extend(c.params_mut()),
            Layer::BatchNorm(b) => out.extend([&mut b.gamma, &mut b.beta, &mut b.running_mean, &mut b.running_var]),
            Layer::Residual { body, shortcut } => {
                for l in body.iter_mut().chain(shortcut.iter_mut()) {
                    l.params_mut(out);
                }
            }
            _ => {}
        }
    }

    fn params<'a>(&'a self, out: &mut Vec<&'a Param<T>>) {
        match self {
            Layer::Conv(c) => out.extend(c.params()),
            Layer::BatchNorm(b) => out.extend([&b.gamma, &b.beta, &b.running_mean, &b.running_var]),
            Layer::Residual { body, shortcut } => {
                for l in body.iter().chain(shortcut.iter()) {
                    l.params(out);
                }
            }
            _ => {}
        }
    }
}

fn run<T: Real>(layers: &mut [Layer<T>], mut x: Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
    for l in layers.iter_mut() {
        x = l.forward(x, mode)?;
    }
    Ok(x)
}

fn run_back<T: Real>(layers: &mut [Layer<T>], mut dy: Tensor<T>) -> Result<Tensor<T>> {
    for l in layers.iter_mut().rev() {
        dy = l.backward(dy)?;
    }
    Ok(dy)
}

fn freeze_run<T: Real>(layers: &mut [Layer<T>], mut x: Tensor<T>, surrogate: bool) -> Result<Tensor<T>> {
    for l in layers.iter_mut() {
        x = l.freeze_forward(x, surrogate)?;
    }
    Ok(x)
}

/// A feed-forward stack of layers producing logits `[N, classes, 1, 1]`.
pub struct Network<T> {
    pub layers: Vec<Layer<T>>,
}

impl<T: Real> Network<T> {
    pub fn new(layers: Vec<Layer<T>>) -> Self {
        Self { layers }
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        run(&mut self.layers, x.clone(), mode)
    }

    /// Backpropagates `∂L/∂logits`, accumulating parameter gradients, and
    /// returns `∂L/∂input`.
    pub fn backward(&mut self, dlogits: &Tensor<T>) -> Result<Tensor<T>> {
        run_back(&mut self.layers, dlogits.clone())
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    /// All parameters and buffers in a fixed order.
    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut out = Vec::new();
        for l in self.layers.iter_mut() {
            l.params_mut(&mut out);
        }
        out
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        let mut out = Vec::new();
        for l in self.layers.iter() {
            l.params(&mut out);
        }
        out
    }

    pub fn param(&self, name: &str) -> Option<&Param<T>> {
        self.params().into_iter().find(|p| p.name == name)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Param<T>> {
        self.params_mut().into_iter().find(|p| p.name == name)
    }

    pub fn convs(&self) -> Vec<&QConv<T>> {
        let (mut c, mut b) = (Vec::new(), Vec::new());
        for l in &self.layers {
            l.visit(&mut c, &mut b);
        }
        c
    }

    pub fn convs_mut(&mut self) -> Vec<&mut QConv<T>> {
        let (mut c, mut b) = (Vec::new(), Vec::new());
        for l in self.layers.iter_mut() {
            l.visit_mut(&mut c, &mut b);
        }
        c
    }

    /// Every quantizer with its owning layer name, weights before activations.
    pub fn quantizers(&self) -> Vec<(&str, &Quantizer<T>)> {
        let mut out = Vec::new();
        for c in self.convs() {
            if let Some(wq) = &c.wq {
                out.push((c.name.as_str(), &wq.quantizer));
            }
            if let ActOp::Quant(q) = &c.act {
                out.push((c.name.as_str(), q));
            }
        }
        out
    }

    pub fn quantizers_mut(&mut self) -> Vec<&mut Quantizer<T>> {
        let mut out = Vec::new();
        for c in self.convs_mut() {
            let QConv { wq, act, .. } = c;
            if let Some(wq) = wq {
                out.push(&mut wq.quantizer);
            }
            if let ActOp::Quant(q) = act {
                out.push(q);
            }
        }
        out
    }

    pub fn quant_records(&self) -> Vec<QuantRecord> {
        self.quantizers().into_iter().map(|(l, q)| q.record(l)).collect()
    }

    pub fn set_theta_chain(&mut self, chain: ThetaChain) {
        for q in self.quantizers_mut() {
            q.chain = chain;
        }
    }

    /// Switches every quantizer between rounding and the identity debug mode.
    pub fn set_rounding(&mut self, rounding: Rounding) {
        for q in self.quantizers_mut() {
            q.spec = q.spec.with_rounding(rounding);
        }
    }

    /// Runs one training-mode forward pass on `x`, freezing each layer's
    /// weight statistics and, with `surrogate`, replacing every quantizer by
    /// its straight-through surrogate at the values seen in this pass.
    pub fn freeze(&mut self, x: &Tensor<T>, surrogate: bool) -> Result<Tensor<T>> {
        freeze_run(&mut self.layers, x.clone(), surrogate)
    }

    pub fn unfreeze(&mut self) {
        for c in self.convs_mut() {
            c.unfreeze();
        }
    }

    /// Number of optimizable scalars.
    pub fn num_trainable(&self) -> usize {
        self.params()
            .iter()
            .filter(|p| p.group != crate::nn::ParamGroup::Buffer)
            .map(|p| p.value.len())
            .sum()
    }

    /// Clip values by layer and role (`None` for an unquantized slot).
    pub fn alpha_summary(&self) -> Vec<(String, Option<f64>, Option<f64>)> {
        self.convs()
            .iter()
            .map(|c| {
                let w = c.wq.as_ref().map(|q| q.quantizer.alpha_value().to_f64_lossy());
                let a = c.act_quantizer().map(|q| q.alpha_value().to_f64_lossy());
                (c.name.clone(), w, a)
            })
            .collect()
    }

    pub fn check_finite(&self) -> Result<()> {
        for p in self.params() {
            if let Some(bad) = p.value.data().iter().find(|v| !v.is_finite()) {
                return Err(Error::ParameterCorruption(format!("{} holds {bad}", p.name)));
            }
        }
        Ok(())
    }

    pub fn role_count(&self, role: Role) -> usize {
        self.quantizers().iter().filter(|(_, q)| q.role == role).count()
    }
}
