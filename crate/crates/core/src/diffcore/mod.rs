//! Dense tensors, tape-based reverse-mode differentiation, an MLP feature
//! extractor, Adam, gradient checking and checkpoints.

mod adam;
mod checkpoint;
mod gradcheck;
mod graph;
mod kernels;
mod mlp;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::{Checkpoint, FORMAT_VERSION};
pub use gradcheck::{finite_diff_check, GradCheck};
pub use graph::{Gradients, Graph, Var};
pub use mlp::{Activation, BoundMlp, FeatureExtractor, Mlp};
pub use tensor::Tensor;

pub(crate) use kernels::lp_norm;
