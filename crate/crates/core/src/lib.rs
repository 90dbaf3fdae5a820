//! Data-driven receding-horizon fault estimation for unknown LTI systems.

extern crate openblas_src;

pub mod bench;
pub mod error;
pub mod estimator;
pub mod identification;
pub mod io;
pub mod linalg;
pub mod online;
pub mod robust;
pub mod sdp;
pub mod simulator;
pub mod system_model;

pub use error::{Error, Result};
