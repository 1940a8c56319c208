//! Minimal reverse-mode autodiff engine: tensors, a per-forward tape, the
//! layers the backbone needs, and Adam / momentum-SGD.

mod graph;
mod optim;
mod tensor;

pub use graph::{BatchStats, Graph, Var};
pub use optim::{gradient_check, OptimAlgo, Optimizer, ParamGroup, Parameter, Slot};
pub use tensor::{argmax, ensure_finite, Tensor};
