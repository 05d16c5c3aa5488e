//! Small dense neural-network toolkit: matrices, a reverse-mode tape,
//! MLPs with a softmax policy head, Adam, and JSON checkpoints.

mod adam;
mod checkpoint;
mod matrix;
mod mlp;
mod tape;

pub use adam::{clip_grad_norm, Adam, AdamConfig};
pub use checkpoint::{Checkpoint, MlpDump, CHECKPOINT_VERSION};
pub use matrix::{log_softmax_rows, Matrix};
pub use mlp::{forward_policy, Activation, Mlp, PolicyOutput};
pub use tape::{Gradients, Tape, Var};
