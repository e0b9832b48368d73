//! Per-tensor int8 quantization and the binary16-scaled requantization path.

mod calibrate;
pub mod f16;
mod quantize;
mod requant;

pub use calibrate::{calibrate, CalibrationStats, TensorRange};
pub use f16::{f16_round, F16};
pub use quantize::{activation_params, quantize_graph, weight_params};
pub use requant::{dequantize_value, quantize_value, requantize, requantize_with_multiplier, RequantSpec};
