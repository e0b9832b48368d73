//! Deployment toolchain and cycle-approximate model for a weight-stationary
//! systolic-array CNN accelerator.

pub mod accel;
pub mod autotuner;
pub mod decimal;
pub mod dsp_pack;
pub mod error;
pub mod graph_ir;
pub mod models;
pub mod pipeline;
pub mod pruner;
pub mod quantizer;
pub mod runtime;
pub mod scheduler;

pub use error::{Error, Result};
