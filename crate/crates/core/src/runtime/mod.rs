//! Reference execution, dtype partitioning, end-to-end runs and reporting.

mod end_to_end;
mod partition;
mod postprocess;
mod reference;
mod tensor;

pub use postprocess::{box_decode, detections_from_rows, nms, Detection};
pub use reference::{eval_node, execute, execute_observed, sigmoid};
pub use tensor::{random_inputs, Tensor, TensorData};
pub use end_to_end::{
    accel_cycles, compare_placements, run_end_to_end, write_detections, EndToEnd, HostModel, PlacementRow, RunReport,
    REPORT_FORMAT, REPORT_VERSION,
};
pub use partition::{partition, side_of, BoundaryTensor, Partition, Side};
