//! Model builders.
//!
//! Every quantized convolution quantizes its input activations and its
//! weights; a batch norm in front of it supplies the bias. The first and the
//! last layer use 8-bit uniform quantizers. Middle layers use the configured
//! method, except that 2-bit weights always take the uniform (ternary) path.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::lwn::WeightNorm;
use crate::nn::conv::ConvGeom;
use crate::nn::{ActOp, BatchNorm, Layer, Network, QConv, QuantKind, Quantizer, Tensor, WeightQuant};
use crate::quant::{QuantSpec, Role};
use crate::real::Real;

/// Training method of the middle layers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Method {
    /// Full precision, ReLU activations.
    Float,
    /// Learnable companding quantizers with limited weight normalization.
    Lcq,
    /// Clipped uniform quantizers (companding parameters absent).
    Uniform,
    /// Learnable companding, weights standardized but not rescaled.
    LcqNoLwn,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Float => "float",
            Method::Lcq => "lcq",
            Method::Uniform => "uniform",
            Method::LcqNoLwn => "lcq-no-lwn",
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "float" | "fp" => Ok(Method::Float),
            "lcq" => Ok(Method::Lcq),
            "uniform" => Ok(Method::Uniform),
            "lcq-no-lwn" => Ok(Method::LcqNoLwn),
            o => Err(Error::Config(format!("unknown method {o:?} (float, lcq, uniform, lcq-no-lwn)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Arch {
    /// 1×28×28 input: conv(16) → pool → conv(32) → pool → fc(128) → fc(classes).
    MnistCnn,
    /// Three fully connected layers on flat inputs.
    Mlp,
    /// A tiny conv net for gradient checks.
    Toy,
    /// Pre-activation ResNet-20 for 3×32×32 inputs.
    ResNet20,
}

impl Arch {
    pub fn as_str(&self) -> &'static str {
        match self {
            Arch::MnistCnn => "mnist-cnn",
            Arch::Mlp => "mlp",
            Arch::Toy => "toy",
            Arch::ResNet20 => "resnet20",
        }
    }
}

impl FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mnist-cnn" => Ok(Arch::MnistCnn),
            "mlp" => Ok(Arch::Mlp),
            "toy" => Ok(Arch::Toy),
            "resnet20" => Ok(Arch::ResNet20),
            o => Err(Error::Config(format!("unknown arch {o:?}"))),
        }
    }
}

/// Everything needed to rebuild a network's structure.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub arch: Arch,
    pub method: Method,
    pub w_bits: u32,
    pub a_bits: u32,
    /// Outer bit-width of the middle layers; `None` disables re-quantization.
    pub outer_bits: Option<u32>,
    pub intervals: usize,
    /// Bit-width of the first and last layer.
    pub edge_bits: u32,
    pub alpha_w: f64,
    pub alpha_a: f64,
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub classes: usize,
    pub hidden: usize,
}

impl ModelConfig {
    pub fn mnist(method: Method, w_bits: u32, a_bits: u32) -> Self {
        Self {
            arch: Arch::MnistCnn,
            method,
            w_bits,
            a_bits,
            outer_bits: Some(8),
            intervals: 16,
            edge_bits: 8,
            alpha_w: 3.0,
            alpha_a: 8.0,
            in_channels: 1,
            height: 28,
            width: 28,
            classes: 10,
            hidden: 128,
        }
    }

    pub fn mlp(method: Method, inputs: usize, hidden: usize, classes: usize, w_bits: u32, a_bits: u32) -> Self {
        Self {
            arch: Arch::Mlp,
            in_channels: inputs,
            height: 1,
            width: 1,
            classes,
            hidden,
            ..Self::mnist(method, w_bits, a_bits)
        }
    }

    pub fn toy(method: Method, w_bits: u32, a_bits: u32) -> Self {
        Self {
            arch: Arch::Toy,
            in_channels: 2,
            height: 6,
            width: 6,
            classes: 3,
            hidden: 4,
            intervals: 4,
            ..Self::mnist(method, w_bits, a_bits)
        }
    }

    pub fn resnet20(method: Method, w_bits: u32, a_bits: u32) -> Self {
        Self {
            arch: Arch::ResNet20,
            in_channels: 3,
            height: 32,
            width: 32,
            classes: 10,
            hidden: 16,
            ..Self::mnist(method, w_bits, a_bits)
        }
    }

    pub fn input_shape(&self, batch: usize) -> [usize; 4] {
        [batch, self.in_channels, self.height, self.width]
    }

    fn quantized(&self) -> bool {
        self.method != Method::Float
    }

    fn spec(&self, bits: u32, signed: bool, outer: Option<u32>) -> Result<QuantSpec> {
        QuantSpec::new(bits, signed, outer, self.intervals)
    }

    fn weight_quant<T: Real>(&self, name: &str, edge: bool) -> Result<Option<WeightQuant<T>>> {
        if !self.quantized() {
            return Ok(None);
        }
        let (spec, kind) = if edge {
            (self.spec(self.edge_bits, true, None)?, QuantKind::Uniform)
        } else {
            let kind = match self.method {
                _ if self.w_bits == 2 => QuantKind::Uniform,
                Method::Uniform => QuantKind::Uniform,
                _ => QuantKind::Companding,
            };
            (self.spec(self.w_bits, true, self.outer_bits)?, kind)
        };
        let norm = match self.method {
            Method::LcqNoLwn if !edge => WeightNorm::StandardizeOnly,
            _ => WeightNorm::Limited,
        };
        let q = Quantizer::new(&format!("{name}.wq"), Role::Weight, kind, spec, self.alpha_w);
        Ok(Some(WeightQuant::new(q, norm)))
    }

    fn act<T: Real>(&self, name: &str, edge: bool, signed: bool, relu: bool) -> Result<ActOp<T>> {
        if !self.quantized() {
            return Ok(if relu { ActOp::Relu } else { ActOp::Identity });
        }
        let (spec, kind) = if edge {
            (self.spec(self.edge_bits, signed, None)?, QuantKind::Uniform)
        } else {
            let kind = if self.method == Method::Uniform {
                QuantKind::Uniform
            } else {
                QuantKind::Companding
            };
            (self.spec(self.a_bits, signed, self.outer_bits)?, kind)
        };
        Ok(ActOp::Quant(Quantizer::new(
            &format!("{name}.aq"),
            Role::Activation,
            kind,
            spec,
            self.alpha_a,
        )))
    }

    /// Builds the network with seeded He-normal weights.
    pub fn build<T: Real>(&self, seed: u64) -> Result<Network<T>> {
        let mut b = Builder {
            cfg: self,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        let layers = match self.arch {
            Arch::MnistCnn => b.mnist()?,
            Arch::Mlp => b.mlp()?,
            Arch::Toy => b.toy()?,
            Arch::ResNet20 => b.resnet20()?,
        };
        Ok(Network::new(layers))
    }
}

struct Builder<'a> {
    cfg: &'a ModelConfig,
    rng: ChaCha8Rng,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Pos {
    First,
    Middle,
    Last,
}

impl Builder<'_> {
    fn conv<T: Real>(&mut self, name: &str, geom: ConvGeom, pos: Pos) -> Result<Layer<T>> {
        let fan_in = geom.patch() as f64;
        let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).map_err(|e| Error::Config(e.to_string()))?;
        let shape = geom.weight_shape();
        let w: Vec<T> = (0..shape.iter().product::<usize>())
            .map(|_| T::lit(normal.sample(&mut self.rng)))
            .collect();
        let w = Tensor::from_vec(&shape, w)?;
        let edge = pos != Pos::Middle;
        let wq = self.cfg.weight_quant(name, edge)?;
        let first = pos == Pos::First;
        let act = self.cfg.act(name, edge, first, !first)?;
        Ok(Layer::Conv(QConv::new(name, geom, w, wq, act)?))
    }

    fn mnist<T: Real>(&mut self) -> Result<Vec<Layer<T>>> {
        let c = self.cfg;
        let (h, w) = (c.height / 4, c.width / 4);
        Ok(vec![
            self.conv("conv1", ConvGeom::new(c.in_channels, 16, 3, 1, 1), Pos::First)?,
            Layer::pool(Some(2)),
            Layer::BatchNorm(BatchNorm::new("bn1", 16)),
            self.conv("conv2", ConvGeom::new(16, 32, 3, 1, 1), Pos::Middle)?,
            Layer::pool(Some(2)),
            Layer::BatchNorm(BatchNorm::new("bn2", 32)),
            Layer::flatten(),
            self.conv("fc1", ConvGeom::dense(32 * h * w, c.hidden), Pos::Middle)?,
            Layer::BatchNorm(BatchNorm::new("bn3", c.hidden)),
            self.conv("fc2", ConvGeom::dense(c.hidden, c.classes), Pos::Last)?,
        ])
    }

    fn mlp<T: Real>(&mut self) -> Result<Vec<Layer<T>>> {
        let c = self.cfg;
        let inputs = c.in_channels * c.height * c.width;
        Ok(vec![
            Layer::flatten(),
            self.conv("fc1", ConvGeom::dense(inputs, c.hidden), Pos::First)?,
            Layer::BatchNorm(BatchNorm::new("bn1", c.hidden)),
            self.conv("fc2", ConvGeom::dense(c.hidden, c.hidden), Pos::Middle)?,
            Layer::BatchNorm(BatchNorm::new("bn2", c.hidden)),
            self.conv("fc3", ConvGeom::dense(c.hidden, c.classes), Pos::Last)?,
        ])
    }

    fn toy<T: Real>(&mut self) -> Result<Vec<Layer<T>>> {
        let c = self.cfg;
        let k = c.hidden;
        Ok(vec![
            self.conv("conv1", ConvGeom::new(c.in_channels, k, 3, 1, 1), Pos::First)?,
            Layer::BatchNorm(BatchNorm::new("bn1", k)),
            self.conv("conv2", ConvGeom::new(k, k, 3, 1, 1), Pos::Middle)?,
            Layer::pool(Some(2)),
            Layer::BatchNorm(BatchNorm::new("bn2", k)),
            Layer::flatten(),
            self.conv("fc1", ConvGeom::dense(k * (c.height / 2) * (c.width / 2), 2 * k), Pos::Middle)?,
            Layer::BatchNorm(BatchNorm::new("bn3", 2 * k)),
            self.conv("fc2", ConvGeom::dense(2 * k, c.classes), Pos::Last)?,
        ])
    }

    fn resnet20<T: Real>(&mut self) -> Result<Vec<Layer<T>>> {
        let c = self.cfg;
        let mut layers = vec![self.conv("conv1", ConvGeom::new(c.in_channels, 16, 3, 1, 1), Pos::First)?];
        let mut cin = 16;
        for (stage, &width) in [16usize, 32, 64].iter().enumerate() {
            for block in 0..3 {
                let name = format!("s{}b{}", stage + 1, block + 1);
                let stride = if stage > 0 && block == 0 { 2 } else { 1 };
                let conv_a = self.conv(&format!("{name}.conv1"), ConvGeom::new(cin, width, 3, stride, 1), Pos::Middle)?;
                let bn_b = Layer::BatchNorm(BatchNorm::new(&format!("{name}.bn2"), width));
                let conv_b = self.conv(&format!("{name}.conv2"), ConvGeom::new(width, width, 3, 1, 1), Pos::Middle)?;
                let bn_a = Layer::BatchNorm(BatchNorm::new(&format!("{name}.bn1"), cin));
                if stride == 1 && cin == width {
                    layers.push(Layer::Residual {
                        body: vec![bn_a, conv_a, bn_b, conv_b],
                        shortcut: Vec::new(),
                    });
                } else {
                    // The projection shortcut reads the normalized input, as in
                    // pre-activation ResNets.
                    let proj = self.conv(&format!("{name}.proj"), ConvGeom::new(cin, width, 1, stride, 0), Pos::Middle)?;
                    layers.push(bn_a);
                    layers.push(Layer::Residual {
                        body: vec![conv_a, bn_b, conv_b],
                        shortcut: vec![proj],
                    });
                }
                cin = width;
            }
        }
        layers.push(Layer::BatchNorm(BatchNorm::new("bn_final", cin)));
        layers.push(Layer::pool(None));
        layers.push(Layer::flatten());
        layers.push(self.conv("fc", ConvGeom::dense(cin, c.classes), Pos::Last)?);
        Ok(layers)
    }
}

impl fmt::Display for ModelConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "arch={} method={} w_bits={} a_bits={} outer_bits={} intervals={} edge_bits={} alpha_w={} alpha_a={} \
             in_channels={} height={} width={} classes={} hidden={}",
            self.arch.as_str(),
            self.method.as_str(),
            self.w_bits,
            self.a_bits,
            self.outer_bits.map_or_else(|| "none".to_string(), |b| b.to_string()),
            self.intervals,
            self.edge_bits,
            self.alpha_w,
            self.alpha_a,
            self.in_channels,
            self.height,
            self.width,
            self.classes,
            self.hidden
        )
    }
}

impl FromStr for ModelConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for tok in s.split_whitespace() {
            let (k, v) = tok
                .split_once('=')
                .ok_or_else(|| Error::format("model config", format!("token {tok:?} is not key=value")))?;
            map.insert(k, v);
        }
        let get = |k: &str| {
            map.get(k)
                .copied()
                .ok_or_else(|| Error::format("model config", format!("missing {k}")))
        };
        fn num<X: FromStr>(k: &str, v: &str) -> Result<X> {
            v.parse()
                .map_err(|_| Error::format("model config", format!("bad value {v:?} for {k}")))
        }
        let outer = match get("outer_bits")? {
            "none" => None,
            v => Some(num("outer_bits", v)?),
        };
        Ok(Self {
            arch: get("arch")?.parse()?,
            method: get("method")?.parse()?,
            w_bits: num("w_bits", get("w_bits")?)?,
            a_bits: num("a_bits", get("a_bits")?)?,
            outer_bits: outer,
            intervals: num("intervals", get("intervals")?)?,
            edge_bits: num("edge_bits", get("edge_bits")?)?,
            alpha_w: num("alpha_w", get("alpha_w")?)?,
            alpha_a: num("alpha_a", get("alpha_a")?)?,
            in_channels: num("in_channels", get("in_channels")?)?,
            height: num("height", get("height")?)?,
            width: num("width", get("width")?)?,
            classes: num("classes", get("classes")?)?,
            hidden: num("hidden", get("hidden")?)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Mode;

    #[test]
    fn config_round_trips() {
        for cfg in [
            ModelConfig::mnist(Method::Lcq, 2, 2),
            ModelConfig::toy(Method::LcqNoLwn, 3, 3),
            ModelConfig {
                outer_bits: None,
                ..ModelConfig::mlp(Method::Float, 8, 16, 4, 4, 4)
            },
        ] {
            assert_eq!(cfg.to_string().parse::<ModelConfig>().unwrap(), cfg);
        }
    }

    #[test]
    fn two_bit_weights_never_use_companding() {
        for m in [Method::Lcq, Method::LcqNoLwn, Method::Uniform] {
            let net = ModelConfig::mnist(m, 2, 2).build::<f32>(0).unwrap();
            for (_, q) in net.quantizers() {
                if q.role == Role::Weight {
                    assert_eq!(q.kind, QuantKind::Uniform);
                }
            }
        }
        let net = ModelConfig::mnist(Method::Lcq, 3, 3).build::<f32>(0).unwrap();
        let kinds: Vec<_> = net.quantizers().iter().map(|(l, q)| (l.to_string(), q.role, q.kind)).collect();
        assert!(kinds.contains(&("conv2".into(), Role::Weight, QuantKind::Companding)));
        assert!(kinds.contains(&("conv1".into(), Role::Weight, QuantKind::Uniform)));
    }

    #[test]
    fn shapes_flow_through_every_arch() {
        for cfg in [
            ModelConfig::mnist(Method::Lcq, 2, 2),
            ModelConfig::toy(Method::Lcq, 3, 3),
            ModelConfig::mlp(Method::Float, 6, 8, 3, 2, 2),
            ModelConfig::resnet20(Method::Lcq, 2, 2),
        ] {
            let mut net = cfg.build::<f32>(1).unwrap();
            let x = Tensor::zeros(&cfg.input_shape(2));
            let y = net.forward(&x, Mode::Eval).unwrap();
            assert_eq!(y.shape(), &[2, cfg.classes, 1, 1], "{:?}", cfg.arch);
        }
    }

    #[test]
    fn same_seed_same_weights() {
        let cfg = ModelConfig::toy(Method::Lcq, 3, 3);
        let a = cfg.build::<f64>(7).unwrap();
        let b = cfg.build::<f64>(7).unwrap();
        let c = cfg.build::<f64>(8).unwrap();
        let w = |n: &Network<f64>| n.param("conv2.weight").unwrap().value.clone();
        assert_eq!(w(&a), w(&b));
        assert_ne!(w(&a), w(&c));
    }
}
