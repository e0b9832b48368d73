use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::graph_ir::{DataType, Shape, TensorSpec};

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    I8(Vec<i8>),
}

/// A dense NHWC tensor value.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Shape,
    pub data: TensorData,
}

impl Tensor {
    pub fn f32(shape: Shape, data: Vec<f32>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "tensor size mismatch");
        Tensor {
            shape,
            data: TensorData::F32(data),
        }
    }

    pub fn i8(shape: Shape, data: Vec<i8>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "tensor size mismatch");
        Tensor {
            shape,
            data: TensorData::I8(data),
        }
    }

    pub fn zeros(spec: &TensorSpec) -> Self {
        let n = spec.num_elements();
        match spec.dtype {
            DataType::I8 => Tensor::i8(spec.shape, vec![0; n]),
            _ => Tensor::f32(spec.shape, vec![0.0; n]),
        }
    }

    pub fn dtype(&self) -> DataType {
        match self.data {
            TensorData::F32(_) => DataType::F32,
            TensorData::I8(_) => DataType::I8,
        }
    }

    pub fn len(&self) -> usize {
        match &self.data {
            TensorData::F32(v) => v.len(),
            TensorData::I8(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn as_f32(&self) -> Option<&[f32]> {
        match &self.data {
            TensorData::F32(v) => Some(v),
            TensorData::I8(_) => None,
        }
    }

    pub fn as_i8(&self) -> Option<&[i8]> {
        match &self.data {
            TensorData::I8(v) => Some(v),
            TensorData::F32(_) => None,
        }
    }

    /// Equality on raw bits, so NaN payloads and signed zeros count.
    pub fn bit_eq(&self, other: &Tensor) -> bool {
        if self.shape != other.shape {
            return false;
        }
        match (&self.data, &other.data) {
            (TensorData::I8(a), TensorData::I8(b)) => a == b,
            (TensorData::F32(a), TensorData::F32(b)) => {
                a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
            }
            _ => false,
        }
    }

    /// (min, max) of an f32 tensor.
    pub fn range(&self) -> Option<(f32, f32)> {
        let v = self.as_f32()?;
        Some(v.iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &x| {
            (lo.min(x), hi.max(x))
        }))
    }
}

/// Uniform random f32 inputs in `[lo, hi)`, one tensor per sample.
pub fn random_inputs(shape: Shape, count: usize, seed: u64, lo: f32, hi: f32) -> Vec<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    (0..count)
        .map(|_| Tensor::f32(shape, (0..n).map(|_| rng.gen_range(lo..hi)).collect()))
        .collect()
}
