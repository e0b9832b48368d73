use serde::{Deserialize, Serialize};

use super::types::{QuantParams, Shape};
use crate::quantizer::RequantSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    /// Output spatial size `ceil(in / stride)`, symmetric zero padding.
    Same,
    /// No padding.
    Valid,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Activation {
    None,
    Relu6,
    LeakyRelu {
        #[serde(with = "crate::decimal")]
        alpha: f32,
    },
}

impl Activation {
    pub fn apply(self, x: f32) -> f32 {
        match self {
            Activation::None => x,
            Activation::Relu6 => x.clamp(0.0, 6.0),
            Activation::LeakyRelu { alpha } => {
                if x >= 0.0 {
                    x
                } else {
                    x * alpha
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Conv2d {
    /// `[kh, kw]`
    pub kernel: [usize; 2],
    pub stride: usize,
    pub padding: Padding,
    #[serde(default = "one")]
    pub dilation: usize,
    pub has_bias: bool,
    pub activation: Activation,
    /// Per-tensor symmetric weight scale, present once quantized.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight_qparams: Option<QuantParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub requant: Option<RequantSpec>,
}

fn one() -> usize {
    1
}

impl Conv2d {
    pub fn new(kernel: [usize; 2], stride: usize, padding: Padding, activation: Activation) -> Self {
        Conv2d {
            kernel,
            stride,
            padding,
            dilation: 1,
            has_bias: true,
            activation,
            weight_qparams: None,
            requant: None,
        }
    }

    pub fn effective_kernel(&self) -> [usize; 2] {
        [
            self.dilation * (self.kernel[0] - 1) + 1,
            self.dilation * (self.kernel[1] - 1) + 1,
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pool2d {
    pub kernel: usize,
    pub stride: usize,
    #[serde(default = "valid")]
    pub padding: Padding,
}

fn valid() -> Padding {
    Padding::Valid
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxDecode {
    pub stride: usize,
    /// Anchor (width, height) pairs in input pixels.
    #[serde(with = "crate::decimal::vec_pairs")]
    pub anchors: Vec<(f32, f32)>,
    pub num_classes: usize,
}

impl BoxDecode {
    pub fn row_len(&self) -> usize {
        5 + self.num_classes
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Nms {
    #[serde(with = "crate::decimal")]
    pub iou_thresh: f32,
    #[serde(with = "crate::decimal")]
    pub conf_thresh: f32,
    pub max_det: usize,
}

/// Row layout of the NMS output tensor: `[x1, y1, x2, y2, score, class]`.
pub const NMS_ROW: usize = 6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Op {
    Conv2d(Conv2d),
    MaxPool2d(Pool2d),
    ResizeNearest {
        factor: usize,
    },
    /// Concatenation along the channel axis.
    Concat,
    Add {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        requant: Option<RequantSpec>,
    },
    Quantize,
    Dequantize,
    Sigmoid,
    BoxDecode(BoxDecode),
    Nms(Nms),
}

/// Coarse operator classes used by op counting and cost models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpClass {
    Conv,
    Elementwise,
    Convert,
    PostProcess,
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Conv2d(_) => "conv2d",
            Op::MaxPool2d(_) => "max_pool2d",
            Op::ResizeNearest { .. } => "resize_nearest",
            Op::Concat => "concat",
            Op::Add { .. } => "add",
            Op::Quantize => "quantize",
            Op::Dequantize => "dequantize",
            Op::Sigmoid => "sigmoid",
            Op::BoxDecode(_) => "box_decode",
            Op::Nms(_) => "nms",
        }
    }

    pub fn class(&self) -> OpClass {
        match self {
            Op::Conv2d(_) => OpClass::Conv,
            Op::MaxPool2d(_) | Op::ResizeNearest { .. } | Op::Concat | Op::Add { .. } => {
                OpClass::Elementwise
            }
            Op::Quantize | Op::Dequantize => OpClass::Convert,
            Op::Sigmoid | Op::BoxDecode(_) | Op::Nms(_) => OpClass::PostProcess,
        }
    }

    /// Operators the accelerator can execute once quantized.
    pub fn is_accelerator_eligible(&self) -> bool {
        matches!(
            self,
            Op::Conv2d(_) | Op::MaxPool2d(_) | Op::ResizeNearest { .. } | Op::Concat | Op::Add { .. }
        )
    }

    pub fn is_post_process(&self) -> bool {
        self.class() == OpClass::PostProcess
    }

    /// Downsampling contributed by this operator as a (numerator, denominator)
    /// ratio applied to spatial dims.
    pub(crate) fn spatial_factor(&self) -> (usize, usize) {
        match self {
            Op::Conv2d(c) => (c.stride, 1),
            Op::MaxPool2d(p) => (p.stride, 1),
            Op::ResizeNearest { factor } => (1, *factor),
            _ => (1, 1),
        }
    }
}

fn out_dim(input: usize, kernel: usize, stride: usize, padding: Padding) -> Result<usize, String> {
    if stride == 0 {
        return Err("stride must be at least 1".into());
    }
    match padding {
        Padding::Same => Ok(input.div_ceil(stride)),
        Padding::Valid => {
            if input < kernel {
                Err(format!("input extent {input} smaller than kernel {kernel}"))
            } else {
                Ok((input - kernel) / stride + 1)
            }
        }
    }
}

/// Leading padding for one spatial axis.
pub fn pad_before(input: usize, kernel: usize, stride: usize, padding: Padding) -> usize {
    match padding {
        Padding::Valid => 0,
        Padding::Same => {
            let out = input.div_ceil(stride);
            let total = ((out - 1) * stride + kernel).saturating_sub(input);
            total / 2
        }
    }
}

/// Shape rule for each operator. `inputs` are the input tensor shapes in
/// order; channel counts of weights are taken from `out_channels` for convs.
pub fn infer_shape(op: &Op, inputs: &[Shape], out_channels: Option<usize>) -> Result<Shape, String> {
    let arity = |n: usize| -> Result<(), String> {
        if inputs.len() == n {
            Ok(())
        } else {
            Err(format!("{} expects {n} input(s), got {}", op.name(), inputs.len()))
        }
    };
    match op {
        Op::Conv2d(c) => {
            arity(1)?;
            if c.kernel[0] == 0 || c.kernel[1] == 0 || c.dilation == 0 {
                return Err("kernel and dilation must be at least 1".into());
            }
            let [kh, kw] = c.effective_kernel();
            let s = inputs[0];
            let cout = out_channels.ok_or("conv output channel count unknown")?;
            if cout == 0 {
                return Err("conv must have at least one output channel".into());
            }
            Ok([
                1,
                out_dim(s[1], kh, c.stride, c.padding)?,
                out_dim(s[2], kw, c.stride, c.padding)?,
                cout,
            ])
        }
        Op::MaxPool2d(p) => {
            arity(1)?;
            if p.kernel == 0 {
                return Err("pool kernel must be at least 1".into());
            }
            let s = inputs[0];
            Ok([
                1,
                out_dim(s[1], p.kernel, p.stride, p.padding)?,
                out_dim(s[2], p.kernel, p.stride, p.padding)?,
                s[3],
            ])
        }
        Op::ResizeNearest { factor } => {
            arity(1)?;
            if *factor == 0 {
                return Err("resize factor must be a positive integer".into());
            }
            let s = inputs[0];
            Ok([1, s[1] * factor, s[2] * factor, s[3]])
        }
        Op::Concat => {
            if inputs.is_empty() {
                return Err("concat needs at least one input".into());
            }
            let first = inputs[0];
            let mut channels = 0;
            for s in inputs {
                if s[1] != first[1] || s[2] != first[2] {
                    return Err(format!(
                        "concat spatial mismatch: {:?} vs {:?}",
                        &first[1..3],
                        &s[1..3]
                    ));
                }
                channels += s[3];
            }
            Ok([1, first[1], first[2], channels])
        }
        Op::Add { .. } => {
            arity(2)?;
            if inputs[0] != inputs[1] {
                return Err(format!("add shape mismatch: {:?} vs {:?}", inputs[0], inputs[1]));
            }
            Ok(inputs[0])
        }
        Op::Quantize | Op::Dequantize | Op::Sigmoid => {
            arity(1)?;
            Ok(inputs[0])
        }
        Op::BoxDecode(d) => {
            arity(1)?;
            let s = inputs[0];
            let per = d.anchors.len() * d.row_len();
            if d.anchors.is_empty() || s[3] != per {
                return Err(format!(
                    "box decode expects {} anchors x {} = {per} channels, got {}",
                    d.anchors.len(),
                    d.row_len(),
                    s[3]
                ));
            }
            Ok([1, 1, s[1] * s[2] * d.anchors.len(), d.row_len()])
        }
        Op::Nms(n) => {
            if inputs.is_empty() {
                return Err("nms needs at least one input".into());
            }
            let row = inputs[0][3];
            if row < 6 {
                return Err("nms inputs need at least one class column".into());
            }
            for s in inputs {
                if s[1] != 1 || s[3] != row {
                    return Err(format!("nms input {s:?} is not a decoded box list"));
                }
            }
            if n.max_det == 0 {
                return Err("max_det must be at least 1".into());
            }
            Ok([1, 1, n.max_det, NMS_ROW])
        }
    }
}
