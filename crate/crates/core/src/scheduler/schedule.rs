use std::fmt;

use serde::{Deserialize, Serialize};

use crate::accel::AcceleratorConfig;
use crate::error::{Error, Result};
use crate::graph_ir::{pad_before, Node, Op, TensorSpec};
use crate::quantizer::RequantSpec;

/// Nesting of the three tile loops, outermost first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LoopOrder {
    Ijk,
    Ikj,
    Jik,
    Jki,
    Kij,
    Kji,
}

impl LoopOrder {
    pub const ALL: [LoopOrder; 6] = [
        LoopOrder::Ijk,
        LoopOrder::Ikj,
        LoopOrder::Jik,
        LoopOrder::Jki,
        LoopOrder::Kij,
        LoopOrder::Kji,
    ];

    /// Axis indices (0 = i, 1 = j, 2 = k), outermost first.
    pub fn axes(self) -> [usize; 3] {
        match self {
            LoopOrder::Ijk => [0, 1, 2],
            LoopOrder::Ikj => [0, 2, 1],
            LoopOrder::Jik => [1, 0, 2],
            LoopOrder::Jki => [1, 2, 0],
            LoopOrder::Kij => [2, 0, 1],
            LoopOrder::Kji => [2, 1, 0],
        }
    }
}

/// Tiling of one layer. Tile sizes count `dim x dim` blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Schedule {
    pub tile_i: usize,
    pub tile_j: usize,
    pub tile_k: usize,
    pub loop_order: LoopOrder,
    pub double_buffer: bool,
}

impl fmt::Display for Schedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "i{}j{}k{}/{:?}{}",
            self.tile_i,
            self.tile_j,
            self.tile_k,
            self.loop_order,
            if self.double_buffer { "/db" } else { "" }
        )
    }
}

impl Schedule {
    pub fn new(tile_i: usize, tile_j: usize, tile_k: usize) -> Self {
        Schedule {
            tile_i,
            tile_j,
            tile_k,
            loop_order: LoopOrder::Ijk,
            double_buffer: false,
        }
    }

    /// Scratchpad bytes of one A tile plus one B tile.
    pub fn spad_footprint(&self, dim: usize) -> usize {
        (self.tile_i * self.tile_k + self.tile_k * self.tile_j) * dim * dim
    }

    pub fn acc_footprint(&self, dim: usize) -> usize {
        self.tile_i * self.tile_j * dim * dim * 4
    }

    /// Capacity check; the error names the constraint that failed.
    pub fn check(&self, cfg: &AcceleratorConfig) -> Result<()> {
        if self.tile_i == 0 || self.tile_j == 0 || self.tile_k == 0 {
            return Err(Error::IllegalSchedule(format!("{self}: tile sizes must be positive")));
        }
        let dim = cfg.dim;
        let spad = self.spad_footprint(dim);
        let budget = if self.double_buffer {
            cfg.spad_bytes() / 2
        } else {
            cfg.spad_bytes()
        };
        if spad > budget {
            return Err(Error::IllegalSchedule(format!(
                "{self}: scratchpad footprint {spad} B exceeds {budget} B{}",
                if self.double_buffer { " (half capacity with double buffering)" } else { "" }
            )));
        }
        let acc = self.acc_footprint(dim);
        if acc > cfg.acc_bytes() {
            return Err(Error::IllegalSchedule(format!(
                "{self}: accumulator footprint {acc} B exceeds {} B",
                cfg.acc_bytes()
            )));
        }
        Ok(())
    }

    pub fn is_legal(&self, cfg: &AcceleratorConfig) -> bool {
        self.check(cfg).is_ok()
    }
}

/// A convolution seen as the matmul `[M x K] @ [K x N]` over its patch
/// matrix. Plain matmuls are 1x1 convolutions over a `[1, M, 1, K]` input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvLayer {
    /// `[h, w, cin]`
    pub input: [usize; 3],
    /// `[ho, wo, cout]`
    pub output: [usize; 3],
    pub kernel: [usize; 2],
    pub stride: usize,
    pub dilation: usize,
    pub pad_top: usize,
    pub pad_left: usize,
    /// Input zero point, used as the padding value.
    pub pad_value: i8,
    pub requant: RequantSpec,
}

impl ConvLayer {
    pub fn from_node(node: &Node, input: &TensorSpec) -> Result<Self> {
        let Op::Conv2d(c) = &node.op else {
            return Err(Error::Lowering(format!("node `{}` is a {}, not a conv", node.id, node.op.name())));
        };
        let (Some(requant), Some(q)) = (c.requant, input.qparams) else {
            return Err(Error::Lowering(format!("conv `{}` is not quantized", node.id)));
        };
        let [_, h, w, cin] = input.shape;
        let [_, ho, wo, cout] = node.output.shape;
        let [ekh, ekw] = c.effective_kernel();
        Ok(ConvLayer {
            input: [h, w, cin],
            output: [ho, wo, cout],
            kernel: c.kernel,
            stride: c.stride,
            dilation: c.dilation,
            pad_top: pad_before(h, ekh, c.stride, c.padding),
            pad_left: pad_before(w, ekw, c.stride, c.padding),
            pad_value: q.zero_point() as i8,
            requant,
        })
    }

    pub fn matmul(m: usize, k: usize, n: usize, requant: RequantSpec) -> Self {
        ConvLayer {
            input: [m, 1, k],
            output: [m, 1, n],
            kernel: [1, 1],
            stride: 1,
            dilation: 1,
            pad_top: 0,
            pad_left: 0,
            pad_value: 0,
            requant,
        }
    }

    /// `(M, K, N)` of the patch matmul.
    pub fn mkn(&self) -> (usize, usize, usize) {
        (
            self.output[0] * self.output[1],
            self.kernel[0] * self.kernel[1] * self.input[2],
            self.output[2],
        )
    }

    /// Block counts along i, j, k.
    pub fn blocks(&self, dim: usize) -> [usize; 3] {
        let (m, k, n) = self.mkn();
        [m.div_ceil(dim), n.div_ceil(dim), k.div_ceil(dim)]
    }

    /// Patch matrix equals the input matrix; no gathering needed.
    pub fn is_pointwise(&self) -> bool {
        self.kernel == [1, 1] && self.stride == 1 && self.pad_top == 0 && self.pad_left == 0
    }

    pub fn weight_bytes(&self) -> usize {
        let (_, k, n) = self.mkn();
        k * n
    }
}

/// Every capacity-legal schedule with tiles no larger than the layer.
pub fn legal_schedules(layer: &ConvLayer, cfg: &AcceleratorConfig) -> Vec<Schedule> {
    let [bi, bj, bk] = layer.blocks(cfg.dim);
    let mut out = Vec::new();
    for tile_i in 1..=bi {
        for tile_j in 1..=bj {
            if !Schedule::new(tile_i, tile_j, 1).is_legal(cfg) {
                break;
            }
            for tile_k in 1..=bk {
                let base = Schedule::new(tile_i, tile_j, tile_k);
                if !base.is_legal(cfg) {
                    break;
                }
                for loop_order in LoopOrder::ALL {
                    for double_buffer in [false, true] {
                        let s = Schedule {
                            loop_order,
                            double_buffer,
                            ..base
                        };
                        if s.is_legal(cfg) {
                            out.push(s);
                        }
                    }
                }
            }
        }
    }
    out.sort();
    out
}

/// Largest `tile_k`, then `tile_j`, then `tile_i` that fits; loop order
/// ijk, single buffered.
pub fn default_schedule(layer: &ConvLayer, cfg: &AcceleratorConfig) -> Schedule {
    let [bi, bj, bk] = layer.blocks(cfg.dim);
    let fits = |i, j, k| Schedule::new(i, j, k).is_legal(cfg);
    let tile_k = (1..=bk).rev().find(|&k| fits(1, 1, k)).unwrap_or(1);
    let tile_j = (1..=bj).rev().find(|&j| fits(1, j, tile_k)).unwrap_or(1);
    let tile_i = (1..=bi).rev().find(|&i| fits(i, tile_j, tile_k)).unwrap_or(1);
    Schedule::new(tile_i, tile_j, tile_k)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn capacity_example() {
        let cfg = AcceleratorConfig::ours();
        let s = Schedule::new(4, 4, 8);
        assert_eq!(s.spad_footprint(32), 65_536);
        assert!(s.is_legal(&cfg));
        let big = Schedule::new(1, 1, 600);
        let e = big.check(&cfg).unwrap_err().to_string();
        assert!(e.contains("scratchpad"), "{e}");
        let wide = Schedule::new(8, 8, 1);
        let e = wide.check(&cfg).unwrap_err().to_string();
        assert!(e.contains("accumulator"), "{e}");
    }

    #[test]
    fn im2col_dims() {
        let rq = RequantSpec::identity();
        let mut l = ConvLayer::matmul(1024, 32, 32, rq);
        assert_eq!(l.blocks(32), [32, 1, 1]);
        l.input = [8, 8, 64];
        l.output = [8, 8, 32];
        l.kernel = [3, 3];
        assert_eq!(l.mkn(), (64, 576, 32));
        assert_eq!(l.blocks(32)[2], 18);
    }

    #[test]
    fn default_fits_small_layer_whole() {
        let l = ConvLayer::matmul(64, 96, 64, RequantSpec::identity());
        let s = default_schedule(&l, &AcceleratorConfig::ours());
        assert_eq!((s.tile_i, s.tile_j, s.tile_k), (2, 2, 3));
    }
}
