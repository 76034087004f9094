//! CPU tensor engine with manual forward and backward passes.

mod arch;
pub mod checkpoint;
pub mod conv;
mod layers;
mod network;
mod qconv;
mod quantizer;
mod tensor;

pub use arch::{Arch, Method, ModelConfig};
pub use conv::ConvGeom;
pub use layers::{argmax_rows, softmax_xent, AvgPool, BatchNorm, Param, ParamGroup, XentOut, BN_EPS, BN_MOMENTUM};
pub use network::{Layer, Mode, Network};
pub use qconv::{ActOp, QConv, WeightQuant};
pub use quantizer::{QuantKind, Quantizer};
pub use tensor::Tensor;
