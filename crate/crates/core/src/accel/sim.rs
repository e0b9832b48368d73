//! Functional model of the local memories and systolic array, driven
//! together with the timing model.

use std::ops::Range;

use super::config::AcceleratorConfig;
use super::isa::{Elem, Im2col, Instruction, InstructionStream, LocalAddr, PoolCfg, Space, LOAD_CONFIGS};
use super::timing::{CycleReport, Footprint, Kind, TimingModel};
use crate::dsp_pack::{pack, packed_mac, PackedPair};
use crate::error::{Error, Result};
use crate::quantizer::{requantize, RequantSpec};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SimOptions {
    /// Skip data movement and arithmetic; only account cycles.
    pub timing_only: bool,
    /// Record start/end cycles of every instruction.
    pub trace: bool,
}

#[derive(Debug, Clone, Copy)]
struct LoadCfg {
    stride: u64,
    elem: Elem,
    offset: i32,
    im2col: Option<Im2col>,
}

impl Default for LoadCfg {
    fn default() -> Self {
        LoadCfg {
            stride: 0,
            elem: Elem::I8,
            offset: 0,
            im2col: None,
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct StoreCfg {
    stride: u64,
    pool: Option<PoolCfg>,
}

enum WeightTile {
    Plain(Vec<i32>),
    /// Column pairs packed into one operand, `[k][n / 2]`.
    Packed(Vec<PackedPair>),
}

struct Machine<'a> {
    cfg: &'a AcceleratorConfig,
    dim: usize,
    functional: bool,
    spad: Vec<i8>,
    acc: Vec<i32>,
    ld: [LoadCfg; LOAD_CONFIGS],
    st: StoreCfg,
    requant: RequantSpec,
    transpose: bool,
    weights: Option<WeightTile>,
    pending: Option<LocalAddr>,
    timing: TimingModel,
}

fn sim_err(index: usize, instr: &Instruction, msg: impl std::fmt::Display) -> Error {
    Error::Simulation(format!("instruction {index} `{instr}`: {msg}"))
}

/// Run `stream` against the byte image `dram`, updating it in place.
pub fn execute_stream(cfg: &AcceleratorConfig, stream: &InstructionStream, dram: &mut [u8]) -> Result<CycleReport> {
    run(cfg, stream, Some(dram), SimOptions::default())
}

/// Run with explicit options. `dram` may be None only for timing-only runs.
pub fn run(
    cfg: &AcceleratorConfig,
    stream: &InstructionStream,
    dram: Option<&mut [u8]>,
    opts: SimOptions,
) -> Result<CycleReport> {
    cfg.validate()?;
    stream.validate(cfg)?;
    let functional = !opts.timing_only;
    if functional && dram.is_none() {
        return Err(Error::Simulation("functional simulation needs a DRAM image".into()));
    }
    let dim = cfg.dim;
    let mut m = Machine {
        cfg,
        dim,
        functional,
        spad: if functional { vec![0; cfg.spad_rows() * dim] } else { Vec::new() },
        acc: if functional { vec![0; cfg.acc_rows() * dim] } else { Vec::new() },
        ld: [LoadCfg::default(); LOAD_CONFIGS],
        st: StoreCfg::default(),
        requant: RequantSpec::identity(),
        transpose: false,
        weights: None,
        pending: None,
        timing: TimingModel::new(cfg, opts.trace),
    };
    let mut empty: [u8; 0] = [];
    let dram = match dram {
        Some(d) => d,
        None => &mut empty[..],
    };
    let check_dram = functional;
    for (idx, instr) in stream.instrs.iter().enumerate() {
        m.step(idx, instr, dram, check_dram)?;
    }
    Ok(m.timing.finish())
}

impl Machine<'_> {
    fn step(&mut self, idx: usize, instr: &Instruction, dram: &mut [u8], check_dram: bool) -> Result<()> {
        let dim = self.dim;
        let err = |m: String| sim_err(idx, instr, m);
        let (spad_rows, acc_rows) = (self.cfg.spad_rows(), self.cfg.acc_rows());
        let range = |a: LocalAddr, rows: usize| {
            local_range(a, rows, spad_rows, acc_rows)
                .ok_or_else(|| sim_err(idx, instr, format!("local rows {}..{} out of range", a.row, a.row + rows)))
        };
        let mut fp = Footprint::default();
        let kind = match *instr {
            Instruction::ConfigEx {
                requant, transpose, ..
            } => {
                self.requant = requant;
                self.transpose = transpose;
                Kind::Config
            }
            Instruction::ConfigLd {
                id,
                stride,
                elem,
                offset,
                im2col,
                ..
            } => {
                if id >= LOAD_CONFIGS {
                    return Err(err(format!("load config id {id} >= {LOAD_CONFIGS}")));
                }
                self.ld[id] = LoadCfg {
                    stride,
                    elem,
                    offset,
                    im2col,
                };
                Kind::Config
            }
            Instruction::ConfigSt { stride, pool, .. } => {
                self.st = StoreCfg { stride, pool };
                Kind::Config
            }
            Instruction::Mvin {
                id,
                dram: addr,
                local,
                rows,
                cols,
            } => {
                if id >= LOAD_CONFIGS {
                    return Err(err(format!("load config id {id} >= {LOAD_CONFIGS}")));
                }
                if rows == 0 || rows > dim || cols == 0 || cols > dim {
                    return Err(err(format!("block {rows}x{cols} exceeds {dim}x{dim}")));
                }
                let lc = self.ld[id];
                if local.space == Space::Spad && (lc.elem != Elem::I8 || local.accumulate) {
                    return Err(err("scratchpad loads take plain i8 rows".into()));
                }
                let r = range(local, rows)?;
                let eb = lc.elem.bytes() as u64;
                let row_bytes = cols as u64 * eb;
                if let Some(ic) = lc.im2col {
                    if ic.m_total() < addr as usize / ic.k_total().max(1) + rows
                        || addr as usize % ic.k_total() + cols > ic.k_total()
                    {
                        return Err(err("patch block outside the patch matrix".into()));
                    }
                    if self.functional {
                        self.gather(&ic, addr as usize, local, rows, cols, dram, idx, instr)?;
                    }
                } else {
                    let spans = spans(addr, lc.stride, rows, row_bytes);
                    if check_dram {
                        check_spans(&spans, dram.len()).map_err(err)?;
                    }
                    if self.functional {
                        self.load_rows(&lc, addr, local, rows, cols, dram);
                    }
                    fp.dram_reads = spans;
                }
                if local.accumulate {
                    fp.reads.push((local.space, r.clone()));
                }
                fp.writes.push((local.space, r));
                let bytes = if lc.im2col.is_none() && lc.stride == 0 {
                    row_bytes
                } else {
                    rows as u64 * row_bytes
                };
                Kind::Dma(bytes)
            }
            Instruction::Mvout {
                local,
                dram: addr,
                rows,
                cols,
            } => {
                if rows == 0 || rows > dim || cols == 0 || cols > dim {
                    return Err(err(format!("block {rows}x{cols} exceeds {dim}x{dim}")));
                }
                if local.accumulate {
                    return Err(err("stores cannot accumulate".into()));
                }
                if local.full_width && (local.space == Space::Spad || self.st.pool.is_some()) {
                    return Err(err("raw i32 stores come from the accumulator without pooling".into()));
                }
                let src_rows = match self.st.pool {
                    Some(p) => {
                        if p.window == 0 || p.stride == 0 || p.region_h == 0 || p.region_w == 0 {
                            return Err(err("degenerate pooling window".into()));
                        }
                        p.region_h * p.region_w
                    }
                    None => rows,
                };
                let r = range(local, src_rows)?;
                let eb: u64 = if local.full_width { 4 } else { 1 };
                let spans = spans(addr, self.st.stride, rows, cols as u64 * eb);
                if check_dram {
                    check_spans(&spans, dram.len()).map_err(err)?;
                }
                if self.functional {
                    self.store(local, addr, rows, cols, dram);
                }
                fp.reads.push((local.space, r));
                fp.dram_writes = spans;
                let bytes = rows as u64 * cols as u64 * eb;
                if local.space == Space::Acc && !local.full_width {
                    Kind::DmaAfterConfig(bytes)
                } else {
                    Kind::Dma(bytes)
                }
            }
            Instruction::Preload { b, c } => {
                if c.space != Space::Acc {
                    return Err(err("preload destination must be in the accumulator".into()));
                }
                let with_weights = match b {
                    Some(b) => {
                        if b.space != Space::Spad {
                            return Err(err("weights are read from the scratchpad".into()));
                        }
                        let r = range(b, dim)?;
                        if self.functional {
                            self.latch(b.row);
                        } else {
                            self.weights = Some(WeightTile::Plain(Vec::new()));
                        }
                        fp.reads.push((Space::Spad, r));
                        true
                    }
                    None => {
                        if self.weights.is_none() {
                            return Err(err("preload keeps weights but none are latched".into()));
                        }
                        false
                    }
                };
                self.pending = Some(c);
                Kind::Exec(self.timing.preload_cycles(self.cfg.spad_read_delay, with_weights))
            }
            Instruction::Compute { a, rows, accumulate } => {
                let Some(c) = self.pending.take() else {
                    return Err(err("compute without a preceding preload".into()));
                };
                if a.space != Space::Spad {
                    return Err(err("activations are read from the scratchpad".into()));
                }
                if rows == 0 || rows > dim {
                    return Err(err(format!("compute of {rows} rows exceeds {dim}")));
                }
                let ar = range(a, rows)?;
                let cr = range(c, rows)?;
                if self.functional {
                    self.compute(a.row, c.row, rows, accumulate || c.accumulate);
                }
                fp.reads.push((Space::Spad, ar));
                if accumulate || c.accumulate {
                    fp.reads.push((Space::Acc, cr.clone()));
                }
                fp.writes.push((Space::Acc, cr));
                Kind::Exec(self.timing.compute_cycles(self.cfg.spad_read_delay, rows))
            }
            Instruction::Fence => Kind::Fence,
        };
        self.timing.issue(idx, instr.controller(), kind, &fp);
        Ok(())
    }

    fn load_rows(&mut self, lc: &LoadCfg, addr: u64, local: LocalAddr, rows: usize, cols: usize, dram: &[u8]) {
        let dim = self.dim;
        for r in 0..rows {
            let base = (addr + r as u64 * lc.stride) as usize;
            let row = (local.row + r) * dim;
            match local.space {
                Space::Spad => {
                    let dst = &mut self.spad[row..row + dim];
                    for (c, d) in dst.iter_mut().enumerate() {
                        *d = if c < cols { dram[base + c] as i8 } else { 0 };
                    }
                }
                Space::Acc => {
                    let dst = &mut self.acc[row..row + dim];
                    for (c, d) in dst.iter_mut().enumerate() {
                        let v = if c < cols {
                            let raw = match lc.elem {
                                Elem::I8 => dram[base + c] as i8 as i32,
                                Elem::I32 => {
                                    let o = base + 4 * c;
                                    i32::from_le_bytes(dram[o..o + 4].try_into().unwrap())
                                }
                            };
                            raw.wrapping_add(lc.offset)
                        } else {
                            0
                        };
                        if local.accumulate {
                            *d = d.wrapping_add(v);
                        } else {
                            *d = v;
                        }
                    }
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn gather(
        &mut self,
        ic: &Im2col,
        virt: usize,
        local: LocalAddr,
        rows: usize,
        cols: usize,
        dram: &[u8],
        idx: usize,
        instr: &Instruction,
    ) -> Result<()> {
        if local.space != Space::Spad {
            return Err(sim_err(idx, instr, "patch gathering targets the scratchpad"));
        }
        let k_total = ic.k_total();
        let (m0, k0) = (virt / k_total, virt % k_total);
        let dim = self.dim;
        for r in 0..rows {
            let row = (local.row + r) * dim;
            for c in 0..dim {
                self.spad[row + c] = if c < cols {
                    match ic.source(m0 + r, k0 + c) {
                        Some(a) => *dram
                            .get(a as usize)
                            .ok_or_else(|| sim_err(idx, instr, format!("DRAM address {a} out of range")))?
                            as i8,
                        None => ic.pad_value,
                    }
                } else {
                    0
                };
            }
        }
        Ok(())
    }

    fn latch(&mut self, row: usize) {
        let dim = self.dim;
        let src = &self.spad[row * dim..(row + dim) * dim];
        let mut w = vec![0i32; dim * dim];
        for k in 0..dim {
            for n in 0..dim {
                let v = if self.transpose { src[n * dim + k] } else { src[k * dim + n] };
                w[k * dim + n] = v as i32;
            }
        }
        self.weights = Some(if self.cfg.dsp_packing {
            let half = dim / 2;
            let mut p = Vec::with_capacity(dim * half);
            for k in 0..dim {
                for j in 0..half {
                    p.push(pack(w[k * dim + 2 * j] as i8, w[k * dim + 2 * j + 1] as i8));
                }
            }
            WeightTile::Packed(p)
        } else {
            WeightTile::Plain(w)
        });
    }

    fn compute(&mut self, a_row: usize, c_row: usize, rows: usize, accumulate: bool) {
        let dim = self.dim;
        let sat = self.cfg.saturate_outputs.then(|| {
            let lim = 1i64 << (self.cfg.output_bits - 1);
            (-lim, lim - 1)
        });
        let mut out = vec![0i32; dim];
        for r in 0..rows {
            let a = &self.spad[(a_row + r) * dim..(a_row + r + 1) * dim];
            out.iter_mut().for_each(|o| *o = 0);
            match self.weights.as_ref().expect("weights latched") {
                WeightTile::Plain(w) => {
                    for (k, &av) in a.iter().enumerate() {
                        if av == 0 {
                            continue;
                        }
                        let av = av as i32;
                        for (o, &wv) in out.iter_mut().zip(&w[k * dim..(k + 1) * dim]) {
                            *o += av * wv;
                        }
                    }
                }
                WeightTile::Packed(p) => {
                    let half = dim / 2;
                    for (k, &av) in a.iter().enumerate() {
                        if av == 0 {
                            continue;
                        }
                        for (j, &pp) in p[k * half..(k + 1) * half].iter().enumerate() {
                            let (p1, p2) = packed_mac(pp, av);
                            out[2 * j] += p1;
                            out[2 * j + 1] += p2;
                        }
                    }
                }
            }
            let dst = &mut self.acc[(c_row + r) * dim..(c_row + r + 1) * dim];
            for (d, &o) in dst.iter_mut().zip(&out) {
                let o = match sat {
                    Some((lo, hi)) => (o as i64).clamp(lo, hi) as i32,
                    None => o,
                };
                *d = if accumulate { d.wrapping_add(o) } else { o };
            }
        }
    }

    fn read_i8(&self, local: LocalAddr, row: usize, col: usize) -> i8 {
        let i = (local.row + row) * self.dim + col;
        match local.space {
            Space::Spad => self.spad[i],
            Space::Acc => requantize(self.acc[i], &self.requant),
        }
    }

    fn store(&self, local: LocalAddr, addr: u64, rows: usize, cols: usize, dram: &mut [u8]) {
        let stride = self.st.stride;
        for r in 0..rows {
            let base = (addr + r as u64 * stride) as usize;
            if local.full_width {
                let row = (local.row + r) * self.dim;
                for c in 0..cols {
                    dram[base + 4 * c..base + 4 * c + 4].copy_from_slice(&self.acc[row + c].to_le_bytes());
                }
                continue;
            }
            match self.st.pool {
                None => {
                    for c in 0..cols {
                        dram[base + c] = self.read_i8(local, r, c) as u8;
                    }
                }
                Some(p) => {
                    let oy = p.origin_y;
                    let ox = p.origin_x + (r * p.stride) as i64;
                    for c in 0..cols {
                        let mut best: Option<i8> = None;
                        for dy in 0..p.window as i64 {
                            for dx in 0..p.window as i64 {
                                let (y, x) = (oy + dy, ox + dx);
                                if y < 0 || x < 0 || y >= p.region_h as i64 || x >= p.region_w as i64 {
                                    continue;
                                }
                                let v = self.read_i8(local, y as usize * p.region_w + x as usize, c);
                                best = Some(best.map_or(v, |b| b.max(v)));
                            }
                        }
                        dram[base + c] = best.unwrap_or(0) as u8;
                    }
                }
            }
        }
    }
}

fn local_range(a: LocalAddr, rows: usize, spad_rows: usize, acc_rows: usize) -> Option<Range<usize>> {
    let limit = match a.space {
        Space::Spad => spad_rows,
        Space::Acc => acc_rows,
    };
    let end = a.row.checked_add(rows)?;
    (end <= limit).then_some(a.row..end)
}

fn spans(addr: u64, stride: u64, rows: usize, row_bytes: u64) -> Vec<(u64, u64)> {
    if stride == row_bytes {
        return vec![(addr, rows as u64 * row_bytes)];
    }
    let n = if stride == 0 { 1 } else { rows };
    (0..n as u64).map(|r| (addr + r * stride, row_bytes)).collect()
}

fn check_spans(spans: &[(u64, u64)], len: usize) -> std::result::Result<(), String> {
    for &(a, n) in spans {
        if a + n > len as u64 {
            return Err(format!("DRAM bytes {a}..{} beyond image of {len}", a + n));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantizer::f16_round;

    fn small_cfg(dim: usize) -> AcceleratorConfig {
        AcceleratorConfig {
            dim,
            ..AcceleratorConfig::ours()
        }
    }

    #[test]
    fn empty_stream() {
        let cfg = AcceleratorConfig::ours();
        let mut dram = vec![7u8; 64];
        let r = execute_stream(&cfg, &InstructionStream::new(), &mut dram).unwrap();
        assert_eq!(r.total, 0);
        assert!(dram.iter().all(|&b| b == 7));
    }

    #[test]
    fn single_mvin_duration() {
        let cfg = AcceleratorConfig::ours();
        let mut s = InstructionStream::new();
        s.push(Instruction::Mvin {
            id: 0,
            dram: 0,
            local: LocalAddr::spad(0),
            rows: 32,
            cols: 32,
        });
        // default load config has stride 0; set a real stride
        s.instrs.insert(
            0,
            Instruction::ConfigLd {
                id: 0,
                stride: 32,
                elem: Elem::I8,
                offset: 0,
                virtual_addr: false,
                im2col: None,
            },
        );
        let mut dram = vec![0u8; 1024];
        let r = execute_stream(&cfg, &s, &mut dram).unwrap();
        // config at cycle 0, transfer issues at 1: 40 + 1024 / 16
        assert_eq!(r.total, 1 + 104);
        assert_eq!(r.load_busy, 105);
    }

    #[test]
    fn compute_without_preload_fails() {
        let cfg = small_cfg(4);
        let mut s = InstructionStream::new();
        s.push(Instruction::Compute {
            a: LocalAddr::spad(0),
            rows: 4,
            accumulate: false,
        });
        assert!(execute_stream(&cfg, &s, &mut []).is_err());
    }

    #[test]
    fn out_of_range_rows_fail() {
        let cfg = small_cfg(4);
        let mut s = InstructionStream::new();
        s.push(Instruction::Mvin {
            id: 0,
            dram: 0,
            local: LocalAddr::acc(cfg.acc_rows() - 1),
            rows: 2,
            cols: 4,
        });
        assert!(execute_stream(&cfg, &s, &mut [0u8; 64]).is_err());
    }

    /// A @ W through the array with identity requant, against a brute-force
    /// matmul.
    fn tile_matmul(packing: bool) {
        let dim = 8;
        let mut cfg = small_cfg(dim);
        cfg.dsp_packing = packing;
        let a: Vec<i8> = (0..dim * dim).map(|i| ((i * 37 + 11) % 256) as u8 as i8).collect();
        let w: Vec<i8> = (0..dim * dim).map(|i| ((i * 91 + 5) % 256) as u8 as i8).collect();
        let mut dram = vec![0u8; 4 * dim * dim + 4 * dim * dim];
        dram[..dim * dim].copy_from_slice(&a.iter().map(|&v| v as u8).collect::<Vec<_>>());
        dram[dim * dim..2 * dim * dim].copy_from_slice(&w.iter().map(|&v| v as u8).collect::<Vec<_>>());
        let out_i8 = 2 * dim * dim;
        let out_i32 = 3 * dim * dim;
        let mut s = InstructionStream::new();
        s.push(Instruction::ConfigEx {
            requant: RequantSpec::new(f16_round(1.0), 0, None).unwrap(),
            transpose: false,
            normalize: false,
        });
        s.push(Instruction::ConfigLd {
            id: 0,
            stride: dim as u64,
            elem: Elem::I8,
            offset: 0,
            virtual_addr: false,
            im2col: None,
        });
        s.push(Instruction::Mvin {
            id: 0,
            dram: 0,
            local: LocalAddr::spad(0),
            rows: dim,
            cols: dim,
        });
        s.push(Instruction::Mvin {
            id: 0,
            dram: (dim * dim) as u64,
            local: LocalAddr::spad(dim),
            rows: dim,
            cols: dim,
        });
        s.push(Instruction::Preload {
            b: Some(LocalAddr::spad(dim)),
            c: LocalAddr::acc(0),
        });
        s.push(Instruction::Compute {
            a: LocalAddr::spad(0),
            rows: dim,
            accumulate: false,
        });
        s.push(Instruction::ConfigSt {
            stride: dim as u64,
            virtual_addr: false,
            pool: None,
        });
        s.push(Instruction::Mvout {
            local: LocalAddr::acc(0),
            dram: out_i8 as u64,
            rows: dim,
            cols: dim,
        });
        s.push(Instruction::ConfigSt {
            stride: 4 * dim as u64,
            virtual_addr: false,
            pool: None,
        });
        s.push(Instruction::Mvout {
            local: LocalAddr::acc(0).raw(),
            dram: out_i32 as u64,
            rows: dim,
            cols: dim,
        });
        s.push(Instruction::Fence);
        let rep = execute_stream(&cfg, &s, &mut dram).unwrap();
        for i in 0..dim {
            for j in 0..dim {
                let exact: i32 = (0..dim).map(|k| a[i * dim + k] as i32 * w[k * dim + j] as i32).sum();
                let o = out_i32 + 4 * (i * dim + j);
                let got = i32::from_le_bytes(dram[o..o + 4].try_into().unwrap());
                assert_eq!(got, exact);
                assert_eq!(dram[out_i8 + i * dim + j] as i8, exact.clamp(-128, 127) as i8);
            }
        }
        assert!(rep.total >= rep.load_busy.max(rep.exec_busy).max(rep.store_busy));
        assert!(rep.total <= rep.load_busy + rep.exec_busy + rep.store_busy);
    }

    #[test]
    fn tile_matmul_plain() {
        tile_matmul(false);
    }

    #[test]
    fn tile_matmul_packed() {
        tile_matmul(true);
    }

    #[test]
    fn pooled_store() {
        let dim = 4;
        let cfg = small_cfg(dim);
        // 4x4 region, one channel column, values y*4+x
        let mut dram: Vec<u8> = (0..16u8).flat_map(|v| [v, 0, 0, 0]).collect();
        dram.extend([0u8; 16]);
        let mut s = InstructionStream::new();
        s.push(Instruction::ConfigLd {
            id: 0,
            stride: 4,
            elem: Elem::I8,
            offset: 0,
            virtual_addr: false,
            im2col: None,
        });
        for blk in 0..4 {
            s.push(Instruction::Mvin {
                id: 0,
                dram: 16 * blk,
                local: LocalAddr::spad(4 * blk as usize),
                rows: 4,
                cols: 1,
            });
        }
        for oy in 0..2 {
            s.push(Instruction::ConfigSt {
                stride: 1,
                virtual_addr: false,
                pool: Some(PoolCfg {
                    window: 2,
                    stride: 2,
                    region_h: 4,
                    region_w: 4,
                    origin_y: 2 * oy,
                    origin_x: 0,
                }),
            });
            s.push(Instruction::Mvout {
                local: LocalAddr::spad(0),
                dram: 64 + 2 * oy as u64,
                rows: 2,
                cols: 1,
            });
        }
        execute_stream(&cfg, &s, &mut dram).unwrap();
        assert_eq!(&dram[64..68], &[5, 7, 13, 15]);
    }

    #[test]
    fn timing_only_matches_functional_cycles() {
        let cfg = small_cfg(4);
        let mut s = InstructionStream::new();
        s.push(Instruction::ConfigLd {
            id: 0,
            stride: 4,
            elem: Elem::I8,
            offset: 0,
            virtual_addr: false,
            im2col: None,
        });
        s.push(Instruction::Mvin {
            id: 0,
            dram: 0,
            local: LocalAddr::spad(0),
            rows: 4,
            cols: 4,
        });
        s.push(Instruction::Preload {
            b: Some(LocalAddr::spad(0)),
            c: LocalAddr::acc(0),
        });
        s.push(Instruction::Compute {
            a: LocalAddr::spad(0),
            rows: 4,
            accumulate: false,
        });
        let f = execute_stream(&cfg, &s, &mut [0u8; 16]).unwrap();
        let t = run(
            &cfg,
            &s,
            None,
            SimOptions {
                timing_only: true,
                trace: true,
            },
        )
        .unwrap();
        assert_eq!(f.total, t.total);
        assert_eq!(t.trace.as_ref().unwrap().len(), s.len());
    }
}
