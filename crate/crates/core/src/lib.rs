pub mod cli;
pub mod error;
pub mod eval;
pub mod losses;
pub mod nn;
pub mod render;
pub mod scene;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
