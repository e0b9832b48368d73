//! Functional and cycle-approximate model of the systolic-array accelerator.

mod config;
mod isa;
mod sim;
mod timing;

pub(crate) use config::hex_digest;
pub use config::{feature_flags, AcceleratorConfig, Dataflow, Feature};
pub use isa::{Controller, Elem, Im2col, Instruction, InstructionStream, LocalAddr, PoolCfg, Space, LOAD_CONFIGS};
pub use sim::{execute_stream, run, SimOptions};
pub use timing::{CycleReport, TraceEntry, DRAM_LINE};
