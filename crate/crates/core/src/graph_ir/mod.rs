//! Operator graph, model file format and graph-level transforms.

mod format;
mod gop;
mod graph;
mod op;
mod transform;
mod types;

pub use format::{load_model, load_model_from_bytes, load_model_with_weights, save_model, serialize_model, serialize_model_with, MODEL_FORMAT, MODEL_VERSION};
pub use gop::{count_gop, GopReport, NodeOps};
pub use graph::{Bias, ConvParams, Graph, GraphBuilder, GraphInput, Node, Weights};
pub use op::{
    infer_shape, pad_before, Activation, BoxDecode, Conv2d, Nms, Op, OpClass, Padding, Pool2d, NMS_ROW,
};
pub use transform::{downsampling_factor, replace_activations, rescale_input};
pub use types::{DataType, QuantParams, Shape, TensorSpec};
