//! The diffusion autoencoder network with hand-written forward and backward passes.

pub mod attention;
pub mod checkpoint;
pub mod layers;
pub mod network;
pub mod params;
pub mod rope;
pub mod tensor;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use network::{timestep_features, DecoderCache, EncoderCache, Layout, Model, ModelConfig};
pub use params::{Grads, ParamId, ParamStore};
pub use rope::{rope4d, RopeTable};
pub use tensor::{Mat, Real};
