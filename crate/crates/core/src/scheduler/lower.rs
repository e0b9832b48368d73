//! Conv and matmul lowering to RISC instruction streams.

use serde::{Deserialize, Serialize};

use super::schedule::{default_schedule, ConvLayer, Schedule};
use crate::accel::{AcceleratorConfig, Elem, Im2col, Instruction, InstructionStream, LocalAddr};
use crate::error::Result;

/// DRAM placement of one conv layer's operands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvDram {
    /// NHWC i8 input.
    pub input: u64,
    /// `K x N` i8 weights, row-major.
    pub weights: u64,
    /// `N` little-endian i32 biases.
    pub bias: u64,
    /// `M x N` i8 output.
    pub output: u64,
    /// `M x N` i32 partial sums, used when a tile is spilled.
    pub scratch: u64,
}

impl ConvDram {
    /// Operands laid out back to back from `base`; returns the layout and
    /// the end address.
    pub fn contiguous(layer: &ConvLayer, base: u64) -> (Self, u64) {
        let (m, k, n) = layer.mkn();
        let [h, w, cin] = layer.input;
        let input = base;
        let weights = input + (h * w * cin) as u64;
        let bias = weights + (k * n) as u64;
        let output = bias + 4 * n as u64;
        let scratch = output + (m * n) as u64;
        let end = scratch + 4 * (m * n) as u64;
        (
            ConvDram {
                input,
                weights,
                bias,
                output,
                scratch,
            },
            end,
        )
    }
}

const LD_A: usize = 0;
const LD_B: usize = 1;
const LD_BIAS: usize = 2;
const LD_PARTIAL: usize = 3;

struct Lowering<'a> {
    dim: usize,
    m: usize,
    k: usize,
    n: usize,
    blocks: [usize; 3],
    tiles: [usize; 3],
    dram: &'a ConvDram,
    out: InstructionStream,
    st_stride: u64,
    a_rows: usize,
    b_base: usize,
    b_rows: usize,
    bufs: usize,
    a_res: Vec<Option<(usize, usize)>>,
    b_res: Vec<Option<(usize, usize)>>,
    next_a: usize,
    next_b: usize,
    acc_res: Option<(usize, usize)>,
    acc_unfinished: bool,
    /// 0 for patch-gathered loads, whose addresses are virtual.
    a_base: u64,
}

impl Lowering<'_> {
    fn valid(&self, axis: usize, block: usize) -> usize {
        let extent = [self.m, self.n, self.k][axis];
        (extent - block * self.dim).min(self.dim)
    }

    /// Global block range covered by tile `t` along `axis`.
    fn span(&self, axis: usize, t: usize) -> std::ops::Range<usize> {
        let lo = t * self.tiles[axis];
        lo..(lo + self.tiles[axis]).min(self.blocks[axis])
    }

    fn set_store_stride(&mut self, stride: u64) {
        if self.st_stride != stride {
            self.out.push(Instruction::ConfigSt {
                stride,
                virtual_addr: false,
                pool: None,
            });
            self.st_stride = stride;
        }
    }

    fn a_addr(&self, buf: usize, il: usize, kl: usize) -> usize {
        buf * self.a_rows + (il * self.tiles[2] + kl) * self.dim
    }

    fn b_addr(&self, buf: usize, kl: usize, jl: usize) -> usize {
        self.b_base + buf * self.b_rows + (kl * self.tiles[1] + jl) * self.dim
    }

    fn acc_addr(&self, il: usize, jl: usize) -> usize {
        (il * self.tiles[1] + jl) * self.dim
    }

    fn ensure_a(&mut self, ti: usize, tk: usize) -> usize {
        if let Some(b) = self.a_res.iter().position(|r| *r == Some((ti, tk))) {
            return b;
        }
        let buf = self.next_a;
        self.next_a = (self.next_a + 1) % self.bufs;
        for (il, gi) in self.span(0, ti).enumerate() {
            for (kl, gk) in self.span(2, tk).enumerate() {
                let virt = (gi * self.dim * self.k + gk * self.dim) as u64;
                self.out.push(Instruction::Mvin {
                    id: LD_A,
                    dram: self.a_base + virt,
                    local: LocalAddr::spad(self.a_addr(buf, il, kl)),
                    rows: self.valid(0, gi),
                    cols: self.valid(2, gk),
                });
            }
        }
        self.a_res[buf] = Some((ti, tk));
        buf
    }

    fn ensure_b(&mut self, tk: usize, tj: usize) -> usize {
        if let Some(b) = self.b_res.iter().position(|r| *r == Some((tk, tj))) {
            return b;
        }
        let buf = self.next_b;
        self.next_b = (self.next_b + 1) % self.bufs;
        for (kl, gk) in self.span(2, tk).enumerate() {
            for (jl, gj) in self.span(1, tj).enumerate() {
                let addr = self.dram.weights + (gk * self.dim * self.n + gj * self.dim) as u64;
                self.out.push(Instruction::Mvin {
                    id: LD_B,
                    dram: addr,
                    local: LocalAddr::spad(self.b_addr(buf, kl, jl)),
                    rows: self.valid(2, gk),
                    cols: self.valid(1, gj),
                });
            }
        }
        self.b_res[buf] = Some((tk, tj));
        buf
    }

    fn acc_blocks(&self, ti: usize, tj: usize) -> Vec<(usize, usize, usize, usize)> {
        let mut v = Vec::new();
        for (il, gi) in self.span(0, ti).enumerate() {
            for (jl, gj) in self.span(1, tj).enumerate() {
                v.push((il, jl, gi, gj));
            }
        }
        v
    }

    fn spill(&mut self, ti: usize, tj: usize) {
        self.set_store_stride(4 * self.n as u64);
        for (il, jl, gi, gj) in self.acc_blocks(ti, tj) {
            let off = (gi * self.dim * self.n + gj * self.dim) as u64 * 4;
            self.out.push(Instruction::Mvout {
                local: LocalAddr::acc(self.acc_addr(il, jl)).raw(),
                dram: self.dram.scratch + off,
                rows: self.valid(0, gi),
                cols: self.valid(1, gj),
            });
        }
    }

    fn fill(&mut self, ti: usize, tj: usize, first: bool) {
        for (il, jl, gi, gj) in self.acc_blocks(ti, tj) {
            let (id, dram) = if first {
                (LD_BIAS, self.dram.bias + 4 * (gj * self.dim) as u64)
            } else {
                let off = (gi * self.dim * self.n + gj * self.dim) as u64 * 4;
                (LD_PARTIAL, self.dram.scratch + off)
            };
            self.out.push(Instruction::Mvin {
                id,
                dram,
                local: LocalAddr::acc(self.acc_addr(il, jl)),
                rows: self.valid(0, gi),
                cols: self.valid(1, gj),
            });
        }
    }

    fn store(&mut self, ti: usize, tj: usize) {
        self.set_store_stride(self.n as u64);
        for (il, jl, gi, gj) in self.acc_blocks(ti, tj) {
            let off = (gi * self.dim * self.n + gj * self.dim) as u64;
            self.out.push(Instruction::Mvout {
                local: LocalAddr::acc(self.acc_addr(il, jl)),
                dram: self.dram.output + off,
                rows: self.valid(0, gi),
                cols: self.valid(1, gj),
            });
        }
    }

    fn tile(&mut self, ti: usize, tj: usize, tk: usize, k_tiles: usize) {
        if self.acc_res != Some((ti, tj)) {
            if let Some((pi, pj)) = self.acc_res {
                // an unfinished tile leaves with its partial sums
                if self.acc_unfinished {
                    self.spill(pi, pj);
                }
            }
            self.fill(ti, tj, tk == 0);
            self.acc_res = Some((ti, tj));
        }
        let ab = self.ensure_a(ti, tk);
        let bb = self.ensure_b(tk, tj);
        let (ispan, jspan, kspan) = (self.span(0, ti), self.span(1, tj), self.span(2, tk));
        for jl in 0..jspan.len() {
            for kl in 0..kspan.len() {
                for (il, gi) in ispan.clone().enumerate() {
                    let b = (il == 0).then(|| LocalAddr::spad(self.b_addr(bb, kl, jl)));
                    self.out.push(Instruction::Preload {
                        b,
                        c: LocalAddr::acc(self.acc_addr(il, jl)),
                    });
                    self.out.push(Instruction::Compute {
                        a: LocalAddr::spad(self.a_addr(ab, il, kl)),
                        rows: self.valid(0, gi),
                        accumulate: true,
                    });
                }
            }
        }
        self.acc_unfinished = tk + 1 < k_tiles;
        if tk + 1 == k_tiles {
            self.store(ti, tj);
        }
    }
}

/// Lower a quantized conv (or matmul) to a RISC stream. Without a
/// schedule the default heuristic is used.
pub fn lower_conv(
    layer: &ConvLayer,
    cfg: &AcceleratorConfig,
    schedule: Option<&Schedule>,
    dram: &ConvDram,
) -> Result<InstructionStream> {
    cfg.validate()?;
    let sched = match schedule {
        Some(s) => *s,
        None => default_schedule(layer, cfg),
    };
    sched.check(cfg)?;
    let dim = cfg.dim;
    let (m, k, n) = layer.mkn();
    let blocks = layer.blocks(dim);
    let tiles = [
        sched.tile_i.min(blocks[0]),
        sched.tile_j.min(blocks[1]),
        sched.tile_k.min(blocks[2]),
    ];
    let bufs = if sched.double_buffer { 2 } else { 1 };
    let a_rows = tiles[0] * tiles[2] * dim;
    let b_rows = tiles[2] * tiles[1] * dim;
    let mut lw = Lowering {
        dim,
        m,
        k,
        n,
        blocks,
        tiles,
        dram,
        out: InstructionStream::new(),
        st_stride: u64::MAX,
        a_rows,
        b_base: bufs * a_rows,
        b_rows,
        bufs,
        a_res: vec![None; bufs],
        b_res: vec![None; bufs],
        next_a: 0,
        next_b: 0,
        acc_res: None,
        acc_unfinished: false,
        a_base: 0,
    };

    lw.out.push(Instruction::ConfigEx {
        requant: layer.requant,
        transpose: false,
        normalize: false,
    });
    let [h, w, cin] = layer.input;
    let im2col = (!layer.is_pointwise()).then(|| Im2col {
        base: dram.input,
        in_h: h,
        in_w: w,
        cin,
        kh: layer.kernel[0],
        kw: layer.kernel[1],
        stride: layer.stride,
        dilation: layer.dilation,
        pad_top: layer.pad_top,
        pad_left: layer.pad_left,
        out_h: layer.output[0],
        out_w: layer.output[1],
        pad_value: layer.pad_value,
    });
    let a_cfg = match im2col {
        Some(_) => Instruction::ConfigLd {
            id: LD_A,
            stride: 0,
            elem: Elem::I8,
            offset: 0,
            virtual_addr: false,
            im2col,
        },
        None => Instruction::ConfigLd {
            id: LD_A,
            stride: k as u64,
            elem: Elem::I8,
            offset: 0,
            virtual_addr: false,
            im2col: None,
        },
    };
    lw.out.push(a_cfg);
    for (id, stride, elem) in [
        (LD_B, n as u64, Elem::I8),
        (LD_BIAS, 0, Elem::I32),
        (LD_PARTIAL, 4 * n as u64, Elem::I32),
    ] {
        lw.out.push(Instruction::ConfigLd {
            id,
            stride,
            elem,
            offset: 0,
            virtual_addr: false,
            im2col: None,
        });
    }
    if im2col.is_none() {
        lw.a_base = dram.input;
    }

    let counts = [
        blocks[0].div_ceil(tiles[0]),
        blocks[1].div_ceil(tiles[1]),
        blocks[2].div_ceil(tiles[2]),
    ];
    let axes = sched.loop_order.axes();
    let mut idx = [0usize; 3];
    for o0 in 0..counts[axes[0]] {
        idx[axes[0]] = o0;
        for o1 in 0..counts[axes[1]] {
            idx[axes[1]] = o1;
            for o2 in 0..counts[axes[2]] {
                idx[axes[2]] = o2;
                lw.tile(idx[0], idx[1], idx[2], counts[2]);
            }
        }
    }
    lw.out.push(Instruction::Fence);
    Ok(lw.out)
}
