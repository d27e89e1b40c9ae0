//! Dense tensors, forward/reverse automatic differentiation, and small
//! spectral routines.

pub mod ad;
pub mod dual;
pub mod kernels;
pub mod linalg;
pub mod ops;
pub mod rng;
pub mod tape;
pub mod tensor;

pub use ad::{grad, jvp, value_and_grad, vjp, DiffMap, ParamLoss};
pub use dual::{Dual, DualOver, DualTensor};
pub use linalg::{power_iter_gain, svd_small, sym_eig, SmallMatrix};
pub use ops::{Ops, Plain, Scale};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
