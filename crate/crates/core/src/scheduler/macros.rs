//! Coarse operations expanded with the default schedule.

use super::lower::{lower_conv, ConvDram};
use super::schedule::ConvLayer;
use crate::accel::{execute_stream, AcceleratorConfig, CycleReport, InstructionStream};
use crate::error::Result;
use crate::quantizer::RequantSpec;

#[derive(Debug, Clone, PartialEq)]
pub enum Macro {
    /// `C[m x n] = requant(bias + A[m x k] @ B[k x n])`.
    TiledMatmul {
        m: usize,
        k: usize,
        n: usize,
        requant: RequantSpec,
    },
    TiledConv(ConvLayer),
}

impl Macro {
    pub fn layer(&self) -> ConvLayer {
        match self {
            Macro::TiledMatmul { m, k, n, requant } => ConvLayer::matmul(*m, *k, *n, *requant),
            Macro::TiledConv(l) => l.clone(),
        }
    }
}

/// Expand `op` with the default schedule and run it. The returned stream
/// is the one that was executed.
pub fn execute_macro(
    cfg: &AcceleratorConfig,
    op: &Macro,
    layout: &ConvDram,
    dram: &mut [u8],
) -> Result<(CycleReport, InstructionStream)> {
    let stream = lower_conv(&op.layer(), cfg, None, layout)?;
    let report = execute_stream(cfg, &stream, dram)?;
    Ok((report, stream))
}
