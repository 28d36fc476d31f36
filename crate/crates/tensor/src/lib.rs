//! Minimal reverse-mode automatic differentiation over dense arrays.
//!
//! Operations are evaluated eagerly and recorded on a [`Tape`]. The reverse
//! pass records its adjoints as ordinary tape ops, which gives
//! double-backpropagation for free on every op except batch normalisation:
//! a gradient obtained with [`Tape::grad_wrt_input_differentiable`] can be
//! fed into further ops and differentiated again. This is what a
//! Wasserstein gradient penalty needs.
//!
//! ```
//! use firecast_tensor::{Tape, Tensor};
//!
//! let mut tape = Tape::<f64>::new();
//! let x = tape.leaf(Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap());
//! let sq = tape.square(x).unwrap();
//! let loss = tape.mean(sq).unwrap();
//! let grads = tape.backward(loss, &[x]).unwrap();
//! assert!((grads[0].data()[2] - 2.0).abs() < 1e-12);
//! ```

mod adam;
mod backward;
mod check;
mod error;
pub mod gradcheck;
mod kernels;
mod params;
mod tape;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use check::{finite_difference_check, max_relative_error, numeric_gradient};
pub use error::{Result, TensorError};
pub use params::{ManifestEntry, Param, ParamId, ParamStore};
pub use tape::{Attrs, BatchStats, NodeId, OpKind, Tape};
pub use tensor::{numel, Real, Tensor};

