pub mod autograd;
pub mod backbone;
pub mod blocks;
pub mod data;
pub mod error;
pub mod eval;
pub mod frontend;
pub mod gradcam;
pub mod io;
pub mod nn;
pub mod pooling;
pub mod synth;
pub mod tensor;
pub mod train;
pub mod variant;

pub use autograd::{Gradients, Tape, Var};
pub use backbone::{ParamCount, SpeakerModel};
pub use error::{Error, Result};
pub use tensor::{Fill, Scalar, Tensor};
pub use variant::{BlockFamily, ModelVariant};
