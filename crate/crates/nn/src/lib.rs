//! Minimal differentiable-computation kernel.
//!
//! Dense matrices, a recorded tape for reverse-mode gradients, multilayer
//! perceptrons, Adam, diagonal-Gaussian policy heads and a small named-tensor
//! checkpoint format. Sized for MLPs of a few layers and a few hundred units;
//! everything runs on the CPU in `f64`.

pub mod adam;
pub mod checkpoint;
pub mod error;
pub mod gaussian;
pub mod gradcheck;
pub mod mlp;
pub mod rng;
pub mod tape;

pub use adam::{clip_grad_norm, Adam, AdamConfig};
pub use checkpoint::{Checkpoint, Tensor};
pub use error::{NnError, Result};
pub use gaussian::{GaussianHead, SampleMode};
pub use gradcheck::{check_gradients, GradCheck};
pub use mlp::{Activation, Dense, Mlp, Module, OutputActivation};
pub use rng::{derive_seed, rng_from_seed, stream, Rng};
pub use tape::{Gradients, Matrix, Tape, Var};
