//! RISC-level accelerator instructions and their line-oriented text form.
//!
//! One instruction per line, fields in fixed order:
//!
//! ```text
//! config_ex mult=0.0125 zp=-128 clamp=-128,127 transpose=0 normalize=0
//! config_ld id=1 stride=64 elem=i8 offset=0 virtual=0 im2col=-
//! config_st stride=64 virtual=0 pool=-
//! mvin id=1 dram=4096 local=spad:128 rows=32 cols=32
//! mvout local=acc:0 dram=8192 rows=32 cols=16
//! preload b=spad:128 c=acc:0
//! compute a=spad:0 rows=32 accumulate=1
//! fence
//! ```
//!
//! Local addresses are `spad:ROW` or `acc:ROW`, with `:add` for
//! accumulating accumulator writes and `:i32` for raw accumulator reads.

use std::fmt;
use std::str::FromStr;

use super::config::{AcceleratorConfig, Feature};
use crate::error::{Error, Result};
use crate::quantizer::{RequantSpec, F16};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Space {
    Spad,
    Acc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LocalAddr {
    pub space: Space,
    pub row: usize,
    /// Accumulator writes add to the stored value instead of replacing it.
    pub accumulate: bool,
    /// Accumulator reads return raw i32 values instead of requantized i8.
    pub full_width: bool,
}

impl LocalAddr {
    pub fn spad(row: usize) -> Self {
        LocalAddr {
            space: Space::Spad,
            row,
            accumulate: false,
            full_width: false,
        }
    }

    pub fn acc(row: usize) -> Self {
        LocalAddr {
            space: Space::Acc,
            row,
            accumulate: false,
            full_width: false,
        }
    }

    pub fn accumulating(mut self) -> Self {
        self.accumulate = true;
        self
    }

    pub fn raw(mut self) -> Self {
        self.full_width = true;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Elem {
    I8,
    I32,
}

impl Elem {
    pub fn bytes(self) -> usize {
        match self {
            Elem::I8 => 1,
            Elem::I32 => 4,
        }
    }
}

/// Patch gathering for convolution inputs. With this set, a load's DRAM
/// address is a virtual index `m * k_total + k` into the `M x K` patch
/// matrix of an NHWC i8 tensor at `base`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Im2col {
    pub base: u64,
    pub in_h: usize,
    pub in_w: usize,
    pub cin: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub dilation: usize,
    pub pad_top: usize,
    pub pad_left: usize,
    pub out_w: usize,
    pub out_h: usize,
    pub pad_value: i8,
}

impl Im2col {
    pub fn k_total(&self) -> usize {
        self.kh * self.kw * self.cin
    }

    pub fn m_total(&self) -> usize {
        self.out_h * self.out_w
    }

    /// DRAM byte address of patch element (m, k), or None in the padding.
    pub fn source(&self, m: usize, k: usize) -> Option<u64> {
        let (oy, ox) = (m / self.out_w, m % self.out_w);
        let tap = k / self.cin;
        let ci = k % self.cin;
        let (ky, kx) = (tap / self.kw, tap % self.kw);
        let iy = (oy * self.stride + ky * self.dilation).checked_sub(self.pad_top)?;
        let ix = (ox * self.stride + kx * self.dilation).checked_sub(self.pad_left)?;
        (iy < self.in_h && ix < self.in_w)
            .then(|| self.base + ((iy * self.in_w + ix) * self.cin + ci) as u64)
    }
}

/// Max-pooling applied on the store path. The pooled region is
/// `region_h x region_w` pixels stored one per local row starting at the
/// Mvout's local address; output pixel `i` of the Mvout reads the window
/// whose top-left corner is `(origin_y, origin_x + i * stride)` in region
/// coordinates. Positions outside the region are ignored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PoolCfg {
    pub window: usize,
    pub stride: usize,
    pub region_h: usize,
    pub region_w: usize,
    pub origin_y: i64,
    pub origin_x: i64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Instruction {
    ConfigEx {
        requant: RequantSpec,
        transpose: bool,
        normalize: bool,
    },
    ConfigLd {
        id: usize,
        /// Bytes between consecutive DRAM rows; 0 broadcasts one row.
        stride: u64,
        elem: Elem,
        /// Added to each value loaded into the accumulator.
        offset: i32,
        virtual_addr: bool,
        im2col: Option<Im2col>,
    },
    ConfigSt {
        stride: u64,
        virtual_addr: bool,
        pool: Option<PoolCfg>,
    },
    Mvin {
        id: usize,
        dram: u64,
        local: LocalAddr,
        rows: usize,
        cols: usize,
    },
    Mvout {
        local: LocalAddr,
        dram: u64,
        rows: usize,
        cols: usize,
    },
    /// Latch a `dim x dim` weight block from `b` (None keeps the current
    /// weights) and set the destination of the next Compute.
    Preload {
        b: Option<LocalAddr>,
        c: LocalAddr,
    },
    Compute {
        a: LocalAddr,
        rows: usize,
        accumulate: bool,
    },
    Fence,
}

/// Number of distinct load configurations (`ConfigLd` ids).
pub const LOAD_CONFIGS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Controller {
    Load,
    Execute,
    Store,
}

impl Instruction {
    pub fn controller(&self) -> Option<Controller> {
        match self {
            Instruction::ConfigLd { .. } | Instruction::Mvin { .. } => Some(Controller::Load),
            Instruction::ConfigEx { .. } | Instruction::Preload { .. } | Instruction::Compute { .. } => {
                Some(Controller::Execute)
            }
            Instruction::ConfigSt { .. } | Instruction::Mvout { .. } => Some(Controller::Store),
            Instruction::Fence => None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct InstructionStream {
    pub instrs: Vec<Instruction>,
}

impl InstructionStream {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, i: Instruction) {
        self.instrs.push(i);
    }

    pub fn len(&self) -> usize {
        self.instrs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instrs.is_empty()
    }

    pub fn extend(&mut self, other: InstructionStream) {
        self.instrs.extend(other.instrs);
    }

    pub fn count(&self, pred: impl Fn(&Instruction) -> bool) -> usize {
        self.instrs.iter().filter(|i| pred(i)).count()
    }

    /// Reject instruction attributes that need a disabled hardware feature.
    pub fn validate(&self, cfg: &AcceleratorConfig) -> Result<()> {
        let need = |f: Feature, idx: usize| {
            if cfg.is_enabled(f) {
                Ok(())
            } else {
                Err(Error::FeatureDisabled(format!("{f} (needed by instruction {idx})")))
            }
        };
        for (idx, i) in self.instrs.iter().enumerate() {
            match i {
                Instruction::ConfigEx {
                    transpose, normalize, ..
                } => {
                    if *transpose {
                        need(Feature::Transposition, idx)?;
                    }
                    if *normalize {
                        need(Feature::Normalization, idx)?;
                    }
                }
                Instruction::ConfigLd {
                    virtual_addr, im2col, ..
                } => {
                    if *virtual_addr {
                        need(Feature::VirtualMemory, idx)?;
                    }
                    if im2col.is_some_and(|c| c.dilation > 1) {
                        need(Feature::Dilation, idx)?;
                    }
                }
                Instruction::ConfigSt { virtual_addr, .. } if *virtual_addr => {
                    need(Feature::VirtualMemory, idx)?;
                }
                _ => {}
            }
        }
        Ok(())
    }
}

fn flag(b: bool) -> u8 {
    b as u8
}

impl fmt::Display for LocalAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let space = match self.space {
            Space::Spad => "spad",
            Space::Acc => "acc",
        };
        write!(f, "{space}:{}", self.row)?;
        if self.accumulate {
            f.write_str(":add")?;
        }
        if self.full_width {
            f.write_str(":i32")?;
        }
        Ok(())
    }
}

impl fmt::Display for Instruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Instruction::ConfigEx {
                requant,
                transpose,
                normalize,
            } => {
                write!(
                    f,
                    "config_ex mult={} zp={} clamp=",
                    requant.multiplier_f16().to_f32(),
                    requant.output_zero_point()
                )?;
                match requant.activation_clamp() {
                    Some((lo, hi)) => write!(f, "{lo},{hi}")?,
                    None => f.write_str("-")?,
                }
                write!(f, " transpose={} normalize={}", flag(*transpose), flag(*normalize))
            }
            Instruction::ConfigLd {
                id,
                stride,
                elem,
                offset,
                virtual_addr,
                im2col,
            } => {
                let elem = match elem {
                    Elem::I8 => "i8",
                    Elem::I32 => "i32",
                };
                write!(
                    f,
                    "config_ld id={id} stride={stride} elem={elem} offset={offset} virtual={} im2col=",
                    flag(*virtual_addr)
                )?;
                match im2col {
                    Some(c) => write!(
                        f,
                        "{},{},{},{},{},{},{},{},{},{},{},{},{}",
                        c.base,
                        c.in_h,
                        c.in_w,
                        c.cin,
                        c.kh,
                        c.kw,
                        c.stride,
                        c.dilation,
                        c.pad_top,
                        c.pad_left,
                        c.out_h,
                        c.out_w,
                        c.pad_value
                    ),
                    None => f.write_str("-"),
                }
            }
            Instruction::ConfigSt {
                stride,
                virtual_addr,
                pool,
            } => {
                write!(f, "config_st stride={stride} virtual={} pool=", flag(*virtual_addr))?;
                match pool {
                    Some(p) => write!(
                        f,
                        "{},{},{},{},{},{}",
                        p.window, p.stride, p.region_h, p.region_w, p.origin_y, p.origin_x
                    ),
                    None => f.write_str("-"),
                }
            }
            Instruction::Mvin {
                id,
                dram,
                local,
                rows,
                cols,
            } => write!(f, "mvin id={id} dram={dram} local={local} rows={rows} cols={cols}"),
            Instruction::Mvout {
                local,
                dram,
                rows,
                cols,
            } => write!(f, "mvout local={local} dram={dram} rows={rows} cols={cols}"),
            Instruction::Preload { b, c } => match b {
                Some(b) => write!(f, "preload b={b} c={c}"),
                None => write!(f, "preload b=- c={c}"),
            },
            Instruction::Compute { a, rows, accumulate } => {
                write!(f, "compute a={a} rows={rows} accumulate={}", flag(*accumulate))
            }
            Instruction::Fence => f.write_str("fence"),
        }
    }
}

impl fmt::Display for InstructionStream {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in &self.instrs {
            writeln!(f, "{i}")?;
        }
        Ok(())
    }
}

struct Fields<'a> {
    line: usize,
    items: Vec<(&'a str, &'a str)>,
    pos: usize,
}

impl<'a> Fields<'a> {
    fn err(&self, msg: String) -> Error {
        Error::Parse {
            node: format!("trace line {}", self.line),
            field: self.items.get(self.pos).map(|(k, _)| k.to_string()).unwrap_or_default(),
            message: msg,
        }
    }

    fn next(&mut self, key: &str) -> Result<&'a str> {
        match self.items.get(self.pos) {
            Some((k, v)) if *k == key => {
                self.pos += 1;
                Ok(v)
            }
            _ => Err(self.err(format!("expected field `{key}`"))),
        }
    }

    fn num<T: FromStr>(&mut self, key: &str) -> Result<T> {
        let v = self.next(key)?;
        v.parse().map_err(|_| self.err(format!("`{v}` is not a valid {key}")))
    }

    fn flag(&mut self, key: &str) -> Result<bool> {
        match self.next(key)? {
            "0" => Ok(false),
            "1" => Ok(true),
            v => Err(self.err(format!("flag `{key}` must be 0 or 1, got `{v}`"))),
        }
    }

    fn local(&mut self, key: &str) -> Result<LocalAddr> {
        let v = self.next(key)?;
        parse_local(v).ok_or_else(|| self.err(format!("bad local address `{v}`")))
    }

    fn list<T: FromStr>(&mut self, key: &str, n: usize) -> Result<Option<Vec<T>>> {
        let v = self.next(key)?;
        if v == "-" {
            return Ok(None);
        }
        let parts: Vec<&str> = v.split(',').collect();
        if parts.len() != n {
            return Err(self.err(format!("`{key}` needs {n} values")));
        }
        parts
            .iter()
            .map(|p| p.parse().map_err(|_| self.err(format!("bad value `{p}` in `{key}`"))))
            .collect::<Result<Vec<T>>>()
            .map(Some)
    }

    fn done(&self) -> Result<()> {
        if self.pos == self.items.len() {
            Ok(())
        } else {
            Err(self.err("unexpected trailing field".into()))
        }
    }
}

fn parse_local(v: &str) -> Option<LocalAddr> {
    let mut parts = v.split(':');
    let space = match parts.next()? {
        "spad" => Space::Spad,
        "acc" => Space::Acc,
        _ => return None,
    };
    let row = parts.next()?.parse().ok()?;
    let mut addr = LocalAddr {
        space,
        row,
        accumulate: false,
        full_width: false,
    };
    for p in parts {
        match p {
            "add" if !addr.accumulate && !addr.full_width => addr.accumulate = true,
            "i32" if !addr.full_width => addr.full_width = true,
            _ => return None,
        }
    }
    Some(addr)
}

fn parse_line(line_no: usize, line: &str) -> Result<Instruction> {
    let mut words = line.split_whitespace();
    let op = words.next().unwrap_or_default();
    let mut items = Vec::new();
    for w in words {
        let (k, v) = w.split_once('=').ok_or_else(|| Error::Parse {
            node: format!("trace line {line_no}"),
            field: w.to_string(),
            message: "expected key=value".into(),
        })?;
        items.push((k, v));
    }
    let mut f = Fields {
        line: line_no,
        items,
        pos: 0,
    };
    let instr = match op {
        "config_ex" => {
            let mult: f32 = f.num("mult")?;
            let zp = f.num("zp")?;
            let clamp = f.list::<i32>("clamp", 2)?.map(|v| (v[0], v[1]));
            let m = F16::from_f32(mult);
            if m.to_f32() != mult {
                return Err(f.err(format!("multiplier {mult} is not a binary16 value")));
            }
            let requant = RequantSpec::new(m, zp, clamp).map_err(|e| f.err(e.to_string()))?;
            Instruction::ConfigEx {
                requant,
                transpose: f.flag("transpose")?,
                normalize: f.flag("normalize")?,
            }
        }
        "config_ld" => {
            let id = f.num("id")?;
            let stride = f.num("stride")?;
            let elem = match f.next("elem")? {
                "i8" => Elem::I8,
                "i32" => Elem::I32,
                v => return Err(f.err(format!("unknown element type `{v}`"))),
            };
            let offset = f.num("offset")?;
            let virtual_addr = f.flag("virtual")?;
            let im2col = f.list::<i64>("im2col", 13)?.map(|v| Im2col {
                base: v[0] as u64,
                in_h: v[1] as usize,
                in_w: v[2] as usize,
                cin: v[3] as usize,
                kh: v[4] as usize,
                kw: v[5] as usize,
                stride: v[6] as usize,
                dilation: v[7] as usize,
                pad_top: v[8] as usize,
                pad_left: v[9] as usize,
                out_h: v[10] as usize,
                out_w: v[11] as usize,
                pad_value: v[12] as i8,
            });
            Instruction::ConfigLd {
                id,
                stride,
                elem,
                offset,
                virtual_addr,
                im2col,
            }
        }
        "config_st" => {
            let stride = f.num("stride")?;
            let virtual_addr = f.flag("virtual")?;
            let pool = f.list::<i64>("pool", 6)?.map(|v| PoolCfg {
                window: v[0] as usize,
                stride: v[1] as usize,
                region_h: v[2] as usize,
                region_w: v[3] as usize,
                origin_y: v[4],
                origin_x: v[5],
            });
            Instruction::ConfigSt {
                stride,
                virtual_addr,
                pool,
            }
        }
        "mvin" => Instruction::Mvin {
            id: f.num("id")?,
            dram: f.num("dram")?,
            local: f.local("local")?,
            rows: f.num("rows")?,
            cols: f.num("cols")?,
        },
        "mvout" => Instruction::Mvout {
            local: f.local("local")?,
            dram: f.num("dram")?,
            rows: f.num("rows")?,
            cols: f.num("cols")?,
        },
        "preload" => {
            let b = match f.next("b")? {
                "-" => None,
                v => Some(parse_local(v).ok_or_else(|| f.err(format!("bad local address `{v}`")))?),
            };
            Instruction::Preload { b, c: f.local("c")? }
        }
        "compute" => Instruction::Compute {
            a: f.local("a")?,
            rows: f.num("rows")?,
            accumulate: f.flag("accumulate")?,
        },
        "fence" => Instruction::Fence,
        other => {
            return Err(Error::Parse {
                node: format!("trace line {line_no}"),
                field: "opcode".into(),
                message: format!("unknown instruction `{other}`"),
            })
        }
    };
    f.done()?;
    Ok(instr)
}

impl FromStr for InstructionStream {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut out = InstructionStream::new();
        for (i, line) in s.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            out.push(parse_line(i + 1, line)?);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantizer::f16_round;

    fn sample() -> InstructionStream {
        let mut s = InstructionStream::new();
        s.push(Instruction::ConfigEx {
            requant: RequantSpec::new(f16_round(0.0125), -3, Some((-3, 90))).unwrap(),
            transpose: false,
            normalize: false,
        });
        s.push(Instruction::ConfigLd {
            id: 0,
            stride: 0,
            elem: Elem::I8,
            offset: 0,
            virtual_addr: false,
            im2col: Some(Im2col {
                base: 64,
                in_h: 8,
                in_w: 8,
                cin: 32,
                kh: 3,
                kw: 3,
                stride: 1,
                dilation: 1,
                pad_top: 1,
                pad_left: 1,
                out_h: 8,
                out_w: 8,
                pad_value: -5,
            }),
        });
        s.push(Instruction::ConfigLd {
            id: 2,
            stride: 0,
            elem: Elem::I32,
            offset: -7,
            virtual_addr: true,
            im2col: None,
        });
        s.push(Instruction::ConfigSt {
            stride: 32,
            virtual_addr: false,
            pool: Some(PoolCfg {
                window: 3,
                stride: 1,
                region_h: 4,
                region_w: 8,
                origin_y: -1,
                origin_x: -1,
            }),
        });
        s.push(Instruction::Mvin {
            id: 1,
            dram: 4096,
            local: LocalAddr::acc(3).accumulating(),
            rows: 32,
            cols: 7,
        });
        s.push(Instruction::Preload {
            b: Some(LocalAddr::spad(128)),
            c: LocalAddr::acc(0),
        });
        s.push(Instruction::Preload {
            b: None,
            c: LocalAddr::acc(32),
        });
        s.push(Instruction::Compute {
            a: LocalAddr::spad(0),
            rows: 9,
            accumulate: true,
        });
        s.push(Instruction::Mvout {
            local: LocalAddr::acc(0).raw(),
            dram: 1 << 20,
            rows: 32,
            cols: 32,
        });
        s.push(Instruction::Fence);
        s
    }

    #[test]
    fn trace_round_trip() {
        let s = sample();
        let text = s.to_string();
        assert_eq!(text.lines().count(), s.len());
        let back: InstructionStream = text.parse().unwrap();
        assert_eq!(back, s);
        assert_eq!(back.to_string(), text);
    }

    #[test]
    fn trace_lines_are_stable() {
        let text = sample().to_string();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "config_ex mult=0.012496948 zp=-3 clamp=-3,90 transpose=0 normalize=0");
        assert_eq!(lines[4], "mvin id=1 dram=4096 local=acc:3:add rows=32 cols=7");
        assert_eq!(lines[6], "preload b=- c=acc:32");
        assert_eq!(lines[9], "fence");
    }

    #[test]
    fn parse_errors_name_the_line() {
        let err = "fence\nmvin id=0 dram=1 local=bogus:1 rows=1 cols=1\n"
            .parse::<InstructionStream>()
            .unwrap_err();
        assert!(err.to_string().contains("trace line 2"), "{err}");
        assert!("mvout rows=1".parse::<InstructionStream>().is_err());
        assert!("fence extra=1".parse::<InstructionStream>().is_err());
    }

    #[test]
    fn im2col_source_addresses() {
        let c = Im2col {
            base: 1000,
            in_h: 4,
            in_w: 4,
            cin: 2,
            kh: 3,
            kw: 3,
            stride: 1,
            dilation: 1,
            pad_top: 1,
            pad_left: 1,
            out_h: 4,
            out_w: 4,
            pad_value: 0,
        };
        // output (0,0), tap (0,0) lies in the padding
        assert_eq!(c.source(0, 0), None);
        // output (1,1), tap (1,1) channel 1 is input (1,1) channel 1
        assert_eq!(c.source(5, 4 * 2 + 1), Some(1000 + (4 + 1) * 2 + 1));
    }
}
