//! Dense tensor engine: layers, forward/backward passes, loss and Adam.

mod layer;
mod loss;
mod model;
mod ops;
mod optim;

pub use layer::{Layer, LayerKind};
pub use loss::softmax_cross_entropy;
pub use model::{ForwardCache, Gradients, Model, ParamGrad};
pub use optim::{AdamConfig, LayerMoments, LrSchedule, OptimizerState};
