//! Accumulator requantization and the scalar quantize/dequantize kernels.
//!
//! These are the only routines that convert between real and integer
//! domains; the reference executor and the accelerator model both call them
//! so that results stay bit-identical.

use serde::{Deserialize, Serialize};

use super::f16::F16;
use crate::error::{Error, Result};
use crate::graph_ir::QuantParams;

/// Output-stage parameters for scaling an i32 accumulator back to i8.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RequantDoc", into = "RequantDoc")]
pub struct RequantSpec {
    multiplier_f16: F16,
    output_zero_point: i32,
    activation_clamp: Option<(i32, i32)>,
}

impl RequantSpec {
    pub fn new(
        multiplier_f16: F16,
        output_zero_point: i32,
        activation_clamp: Option<(i32, i32)>,
    ) -> Result<Self> {
        if !multiplier_f16.is_finite()
            || multiplier_f16.is_zero()
            || multiplier_f16.is_sign_negative()
        {
            return Err(Error::Quantization(format!(
                "requant multiplier must be a positive finite binary16, got {multiplier_f16}"
            )));
        }
        if !(-128..=127).contains(&output_zero_point) {
            return Err(Error::Quantization(format!(
                "output zero point {output_zero_point} outside [-128, 127]"
            )));
        }
        if let Some((lo, hi)) = activation_clamp {
            if !(-128..=127).contains(&lo) || !(-128..=127).contains(&hi) || lo > hi {
                return Err(Error::Quantization(format!(
                    "activation clamp ({lo}, {hi}) is not an ordered i8 range"
                )));
            }
        }
        Ok(RequantSpec {
            multiplier_f16,
            output_zero_point,
            activation_clamp,
        })
    }

    /// Unit multiplier, zero offset, no clamp.
    pub fn identity() -> Self {
        RequantSpec {
            multiplier_f16: F16::ONE,
            output_zero_point: 0,
            activation_clamp: None,
        }
    }

    pub fn multiplier_f16(&self) -> F16 {
        self.multiplier_f16
    }

    pub fn output_zero_point(&self) -> i32 {
        self.output_zero_point
    }

    pub fn activation_clamp(&self) -> Option<(i32, i32)> {
        self.activation_clamp
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RequantDoc {
    #[serde(with = "crate::decimal")]
    multiplier_f16: f32,
    output_zero_point: i32,
    #[serde(default)]
    activation_clamp: Option<(i32, i32)>,
}

impl TryFrom<RequantDoc> for RequantSpec {
    type Error = String;

    fn try_from(doc: RequantDoc) -> std::result::Result<Self, String> {
        let m = F16::from_f32(doc.multiplier_f16);
        if m.to_f32() != doc.multiplier_f16 {
            return Err(format!(
                "multiplier {} is not exactly representable in binary16",
                doc.multiplier_f16
            ));
        }
        RequantSpec::new(m, doc.output_zero_point, doc.activation_clamp).map_err(|e| e.to_string())
    }
}

impl From<RequantSpec> for RequantDoc {
    fn from(r: RequantSpec) -> Self {
        RequantDoc {
            multiplier_f16: r.multiplier_f16.to_f32(),
            output_zero_point: r.output_zero_point,
            activation_clamp: r.activation_clamp,
        }
    }
}

/// Scale an accumulator to i8: f32 multiply by the binary16 multiplier,
/// round half to even, add the output zero point, apply the activation
/// clamp, saturate.
pub fn requantize(acc: i32, spec: &RequantSpec) -> i8 {
    requantize_with_multiplier(
        acc,
        spec.multiplier_f16.to_f32(),
        spec.output_zero_point,
        spec.activation_clamp,
    )
}

/// Same pipeline as [`requantize`] with an arbitrary f32 multiplier.
pub fn requantize_with_multiplier(
    acc: i32,
    multiplier: f32,
    zero_point: i32,
    clamp: Option<(i32, i32)>,
) -> i8 {
    let scaled = (acc as f32 * multiplier).round_ties_even();
    // float-to-int casts saturate, so huge products stay ordered
    let mut q = scaled as i64 + zero_point as i64;
    if let Some((lo, hi)) = clamp {
        q = q.clamp(lo as i64, hi as i64);
    }
    q.clamp(-128, 127) as i8
}

/// Affine quantization of one real value.
pub fn quantize_value(r: f32, q: &QuantParams) -> i8 {
    let v = (r / q.scale()).round_ties_even() as i64 + q.zero_point() as i64;
    v.clamp(-128, 127) as i8
}

pub fn dequantize_value(v: i8, q: &QuantParams) -> f32 {
    (v as i32 - q.zero_point()) as f32 * q.scale()
}
