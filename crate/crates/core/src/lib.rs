mod binfmt;
pub mod config;
pub mod csi;
pub mod error;
pub mod fingerprint;
pub mod geometry;
pub mod gradcheck;
pub mod io;
pub mod labels;
pub mod nn;
pub mod scene;
pub mod train;

pub use error::{Error, Result};
