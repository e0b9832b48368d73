use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quantizer::f16::{f16_round, F16};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataType {
    I8,
    I32,
    F16,
    F32,
}

impl DataType {
    pub fn size_bytes(self) -> usize {
        match self {
            DataType::I8 => 1,
            DataType::F16 => 2,
            DataType::I32 | DataType::F32 => 4,
        }
    }

    pub fn is_float(self) -> bool {
        matches!(self, DataType::F16 | DataType::F32)
    }
}

/// Per-tensor affine quantization parameters.
///
/// `scale_f16` is always the nearest-even binary16 rounding of `scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "QuantParamsDoc", into = "QuantParamsDoc")]
pub struct QuantParams {
    scale: f32,
    scale_f16: F16,
    zero_point: i32,
}

impl QuantParams {
    pub fn new(scale: f32, zero_point: i32) -> Result<Self> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::Quantization(format!(
                "scale must be positive and finite, got {scale}"
            )));
        }
        if !(-128..=127).contains(&zero_point) {
            return Err(Error::Quantization(format!(
                "zero point {zero_point} outside [-128, 127]"
            )));
        }
        Ok(QuantParams {
            scale,
            scale_f16: f16_round(scale),
            zero_point,
        })
    }

    /// Symmetric parameters (zero point 0), used for weights.
    pub fn symmetric(scale: f32) -> Result<Self> {
        Self::new(scale, 0)
    }

    pub fn scale(&self) -> f32 {
        self.scale
    }

    pub fn scale_f16(&self) -> F16 {
        self.scale_f16
    }

    pub fn zero_point(&self) -> i32 {
        self.zero_point
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct QuantParamsDoc {
    #[serde(with = "crate::decimal")]
    scale: f32,
    #[serde(with = "crate::decimal")]
    scale_f16: f32,
    zero_point: i32,
}

impl TryFrom<QuantParamsDoc> for QuantParams {
    type Error = String;

    fn try_from(doc: QuantParamsDoc) -> std::result::Result<Self, String> {
        let q = QuantParams::new(doc.scale, doc.zero_point).map_err(|e| e.to_string())?;
        if q.scale_f16.to_f32() != doc.scale_f16 {
            return Err(format!(
                "scale_f16 {} is not the binary16 rounding of scale {} (expected {})",
                doc.scale_f16, doc.scale, q.scale_f16
            ));
        }
        Ok(q)
    }
}

impl From<QuantParams> for QuantParamsDoc {
    fn from(q: QuantParams) -> Self {
        QuantParamsDoc {
            scale: q.scale,
            scale_f16: q.scale_f16.to_f32(),
            zero_point: q.zero_point,
        }
    }
}

/// NHWC shape with the batch dimension fixed at 1.
pub type Shape = [usize; 4];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorSpec {
    pub shape: Shape,
    pub dtype: DataType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qparams: Option<QuantParams>,
}

impl TensorSpec {
    pub fn f32(shape: Shape) -> Self {
        TensorSpec {
            shape,
            dtype: DataType::F32,
            qparams: None,
        }
    }

    pub fn i8(shape: Shape, qparams: QuantParams) -> Self {
        TensorSpec {
            shape,
            dtype: DataType::I8,
            qparams: Some(qparams),
        }
    }

    pub fn height(&self) -> usize {
        self.shape[1]
    }

    pub fn width(&self) -> usize {
        self.shape[2]
    }

    pub fn channels(&self) -> usize {
        self.shape[3]
    }

    pub fn num_elements(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn size_bytes(&self) -> usize {
        self.num_elements() * self.dtype.size_bytes()
    }

    pub fn validate(&self, node: &str) -> Result<()> {
        if self.shape.iter().any(|&d| d == 0) {
            return Err(Error::Shape {
                node: node.to_string(),
                message: format!("zero-sized dimension in {:?}", self.shape),
            });
        }
        if self.shape[0] != 1 {
            return Err(Error::Shape {
                node: node.to_string(),
                message: format!("batch must be 1, got {}", self.shape[0]),
            });
        }
        match (self.dtype, &self.qparams) {
            (DataType::I8, None) => Err(Error::Graph(format!(
                "tensor `{node}` is i8 but carries no quantization parameters"
            ))),
            (DataType::I8, Some(_)) => Ok(()),
            (_, Some(_)) => Err(Error::Graph(format!(
                "tensor `{node}` is {:?} but carries quantization parameters",
                self.dtype
            ))),
            (_, None) => Ok(()),
        }
    }
}
