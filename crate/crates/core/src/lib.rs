pub mod cluster;
pub mod config;
pub mod dataset;
pub mod drivable;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod geometry;
pub mod io;
pub mod par;
pub mod pipeline;
pub mod ground;
pub mod lane;
pub mod scene;
pub mod synth;

pub use error::{Error, Result};
