//! Dense tensors and a define-by-run reverse-mode differentiation engine.
//!
//! A [`Graph`] records every op as it is evaluated. Leaves created with
//! [`Graph::param`] receive gradients from [`Graph::backward`]; constants do
//! not. All arithmetic is 64-bit.
//!
//! ```
//! use secaps::autograd::{Graph, Tensor};
//!
//! let mut g = Graph::new();
//! let x = g.param(Tensor::scalar(3.0));
//! let y = g.mul(x, x).unwrap();
//! let grads = g.backward(y).unwrap();
//! assert_eq!(grads.get(x).unwrap().item().unwrap(), 6.0);
//! ```

mod gradcheck;
mod graph;
mod tensor;

pub use gradcheck::{finite_difference_check, GRADIENT_FLOOR};
pub use graph::{Gradients, Graph, Var};
pub use tensor::Tensor;

pub(crate) use graph::squash_factor;
