pub mod blocks;
pub mod error;
pub mod geometry;
pub mod gradcheck;
pub mod network;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
