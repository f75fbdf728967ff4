//! U-Net assembly, the position-encoding sharing registry, parameter
//! accounting and checkpoints.

mod config;
mod model;
mod registry;

pub use config::{AblationCase, EncodingMode, KeyValues, NetworkConfig, Sharing, Upsample};
pub use model::{DecoderStage, Hierarchy, Model, ParamCount, Upsampler};
pub use registry::ParamRegistry;
