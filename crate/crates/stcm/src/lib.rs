//! Unsupervised slow-feature learning on temporally coherent image
//! sequences: pooling auto-encoders regularized by slowness and sparsity,
//! contrastive metric learning over temporal pairs, and a retrieval-based
//! evaluation protocol.

pub mod error;
pub mod io;
pub mod loss;
pub mod model;
pub mod nn;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use rng::Rng;
pub use tensor::Tensor;
