//! Lowering of quantized graph nodes to accelerator instruction streams.

mod aux;
mod lower;
mod macros;
mod schedule;

pub use aux::lower_aux;
pub use lower::{lower_conv, ConvDram};
pub use macros::{execute_macro, Macro};
pub use schedule::{default_schedule, legal_schedules, ConvLayer, LoopOrder, Schedule};
