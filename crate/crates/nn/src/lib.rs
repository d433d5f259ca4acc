//! A small deterministic neural-network engine in f64.
//!
//! Networks are directed acyclic graphs of layers built with [`GraphBuilder`].
//! [`Network::forward`] caches activations and [`Network::backward`] returns
//! exact reverse-mode gradients for every parameter *and* every named input,
//! which is what training-free architecture scoring needs.
//!
//! ```
//! use stressnas_nn::{GraphBuilder, Inputs, Tensor};
//!
//! let mut b = GraphBuilder::new();
//! let x = b.input("x", &[4]).unwrap();
//! let h = b.dense(x, 8, true).unwrap();
//! let h = b.relu(h).unwrap();
//! let y = b.dense(h, 3, true).unwrap();
//! let mut net = b.finish(y, None).unwrap();
//! net.init_params(0);
//!
//! let mut inputs = Inputs::new();
//! inputs.insert("x".into(), Tensor::zeros(&[2, 4]));
//! let logits = net.forward(&inputs, true).unwrap();
//! let grads = net.backward(&Tensor::full(logits.shape(), 1.0)).unwrap();
//! assert_eq!(grads.inputs["x"].shape(), &[2, 4]);
//! ```

pub mod checkpoint;
mod error;
pub mod gradcheck;
pub mod graph;
pub mod kernels;
mod loss;
mod optim;
pub mod par;
mod tensor;

pub use error::{NnError, Result};
pub use graph::{Gradients, GraphBuilder, Inputs, Layer, NetState, Network, NodeId, ParamKind};
pub use kernels::Padding;
pub use loss::cross_entropy;
pub use optim::{Sgd, TrainConfig};
pub use tensor::Tensor;
