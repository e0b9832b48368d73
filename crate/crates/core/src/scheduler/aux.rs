//! Data-movement lowering for pooling, resize, concat and add.

use crate::accel::{AcceleratorConfig, Elem, Instruction, InstructionStream, LocalAddr, PoolCfg};
use crate::error::{Error, Result};
use crate::graph_ir::{pad_before, Node, Op, TensorSpec};

fn ld(id: usize, stride: u64, offset: i32) -> Instruction {
    Instruction::ConfigLd {
        id,
        stride,
        elem: Elem::I8,
        offset,
        virtual_addr: false,
        im2col: None,
    }
}

fn st(stride: u64, pool: Option<PoolCfg>) -> Instruction {
    Instruction::ConfigSt {
        stride,
        virtual_addr: false,
        pool,
    }
}

/// `(start, len)` chunks of `total` no longer than `size`.
fn chunks(total: usize, size: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..total.div_ceil(size)).map(move |c| (c * size, (total - c * size).min(size)))
}

/// Lower a data-movement node. `inputs` are the DRAM addresses of the
/// node's NHWC i8 inputs, in order.
pub fn lower_aux(
    node: &Node,
    in_specs: &[&TensorSpec],
    cfg: &AcceleratorConfig,
    inputs: &[u64],
    output: u64,
) -> Result<InstructionStream> {
    cfg.validate()?;
    let dim = cfg.dim;
    let bad = |m: String| Error::Lowering(format!("node `{}`: {m}", node.id));
    if in_specs.len() != inputs.len() || in_specs.is_empty() {
        return Err(bad("input addresses do not match the node's inputs".into()));
    }
    let mut s = InstructionStream::new();
    let [_, ho, wo, c] = node.output.shape;
    match &node.op {
        Op::MaxPool2d(p) => {
            let [_, h, w, _] = in_specs[0].shape;
            let (k, stride) = (p.kernel, p.stride);
            let pt = pad_before(h, k, stride, p.padding) as i64;
            let pl = pad_before(w, k, stride, p.padding) as i64;
            let region = k.min(h) * w;
            if region > cfg.spad_rows() {
                return Err(bad(format!("a {k}-row band of width {w} does not fit the scratchpad")));
            }
            let bufs = if 2 * region <= cfg.spad_rows() { 2 } else { 1 };
            s.push(ld(0, c as u64, 0));
            let mut band = 0;
            for (c0, cw) in chunks(c, dim) {
                for oy in 0..ho {
                    let top = oy as i64 * stride as i64 - pt;
                    let y0 = top.max(0) as usize;
                    let y1 = ((top + k as i64).min(h as i64)) as usize;
                    let base = (band % bufs) * region;
                    band += 1;
                    for iy in y0..y1 {
                        for (x0, n) in chunks(w, dim) {
                            s.push(Instruction::Mvin {
                                id: 0,
                                dram: inputs[0] + ((iy * w + x0) * c + c0) as u64,
                                local: LocalAddr::spad(base + (iy - y0) * w + x0),
                                rows: n,
                                cols: cw,
                            });
                        }
                    }
                    for (ox0, n) in chunks(wo, dim) {
                        s.push(st(
                            c as u64,
                            Some(PoolCfg {
                                window: k,
                                stride,
                                region_h: y1 - y0,
                                region_w: w,
                                origin_y: top - y0 as i64,
                                origin_x: ox0 as i64 * stride as i64 - pl,
                            }),
                        ));
                        s.push(Instruction::Mvout {
                            local: LocalAddr::spad(base),
                            dram: output + ((oy * wo + ox0) * c + c0) as u64,
                            rows: n,
                            cols: cw,
                        });
                    }
                }
            }
        }
        Op::ResizeNearest { factor } => {
            let f = *factor;
            if f == 0 {
                return Err(bad("resize factor must be a positive integer".into()));
            }
            let [_, h, w, _] = in_specs[0].shape;
            s.push(ld(0, c as u64, 0));
            s.push(st((f * c) as u64, None));
            let mut blk = 0;
            for (c0, cw) in chunks(c, dim) {
                for y in 0..h {
                    for (x0, n) in chunks(w, dim) {
                        let row = (blk % 2) * dim;
                        blk += 1;
                        s.push(Instruction::Mvin {
                            id: 0,
                            dram: inputs[0] + ((y * w + x0) * c + c0) as u64,
                            local: LocalAddr::spad(row),
                            rows: n,
                            cols: cw,
                        });
                        for dy in 0..f {
                            for dx in 0..f {
                                let oy = y * f + dy;
                                let ox = x0 * f + dx;
                                s.push(Instruction::Mvout {
                                    local: LocalAddr::spad(row),
                                    dram: output + ((oy * wo + ox) * c + c0) as u64,
                                    rows: n,
                                    cols: cw,
                                });
                            }
                        }
                    }
                }
            }
        }
        Op::Concat => {
            s.push(st(c as u64, None));
            let pixels = ho * wo;
            let mut off = 0;
            let mut blk = 0;
            for (spec, &addr) in in_specs.iter().zip(inputs) {
                let ci = spec.shape[3];
                s.push(ld(0, ci as u64, 0));
                for (c0, cw) in chunks(ci, dim) {
                    for (p0, n) in chunks(pixels, dim) {
                        let row = (blk % 2) * dim;
                        blk += 1;
                        s.push(Instruction::Mvin {
                            id: 0,
                            dram: addr + (p0 * ci + c0) as u64,
                            local: LocalAddr::spad(row),
                            rows: n,
                            cols: cw,
                        });
                        s.push(Instruction::Mvout {
                            local: LocalAddr::spad(row),
                            dram: output + (p0 * c + off + c0) as u64,
                            rows: n,
                            cols: cw,
                        });
                    }
                }
                off += ci;
            }
        }
        Op::Add { requant } => {
            let Some(rq) = requant else {
                return Err(bad("add is not quantized".into()));
            };
            let zp = |i: usize| {
                in_specs[i]
                    .qparams
                    .map(|q| q.zero_point())
                    .ok_or_else(|| bad("add input is not quantized".into()))
            };
            s.push(ld(0, c as u64, -zp(0)?));
            s.push(ld(1, c as u64, -zp(1)?));
            s.push(Instruction::ConfigEx {
                requant: *rq,
                transpose: false,
                normalize: false,
            });
            s.push(st(c as u64, None));
            let mut blk = 0;
            for (c0, cw) in chunks(c, dim) {
                for (p0, n) in chunks(ho * wo, dim) {
                    let row = (blk % 2) * dim;
                    blk += 1;
                    let off = (p0 * c + c0) as u64;
                    s.push(Instruction::Mvin {
                        id: 0,
                        dram: inputs[0] + off,
                        local: LocalAddr::acc(row),
                        rows: n,
                        cols: cw,
                    });
                    s.push(Instruction::Mvin {
                        id: 1,
                        dram: inputs[1] + off,
                        local: LocalAddr::acc(row).accumulating(),
                        rows: n,
                        cols: cw,
                    });
                    s.push(Instruction::Mvout {
                        local: LocalAddr::acc(row),
                        dram: output + off,
                        rows: n,
                        cols: cw,
                    });
                }
            }
        }
        other => return Err(bad(format!("{} is not a data-movement op", other.name()))),
    }
    s.push(Instruction::Fence);
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::chunks;

    #[test]
    fn chunking() {
        assert_eq!(chunks(70, 32).collect::<Vec<_>>(), vec![(0, 32), (32, 32), (64, 6)]);
        assert_eq!(chunks(0, 32).count(), 0);
    }
}
