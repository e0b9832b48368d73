use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dataflow {
    WeightStationary,
}

/// Optional hardware blocks that can be compiled out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    Normalization,
    Transposition,
    VirtualMemory,
    Dilation,
}

impl Feature {
    pub const ALL: [Feature; 4] = [
        Feature::Normalization,
        Feature::Transposition,
        Feature::VirtualMemory,
        Feature::Dilation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Feature::Normalization => "normalization",
            Feature::Transposition => "transposition",
            Feature::VirtualMemory => "virtual_memory",
            Feature::Dilation => "dilation",
        }
    }
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Feature {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Feature::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown feature `{s}` (expected one of normalization, transposition, virtual_memory, dilation)"
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AcceleratorConfig {
    pub name: String,
    /// The PE array is `dim x dim`.
    pub dim: usize,
    pub dataflow: Dataflow,
    pub spad_kib: usize,
    pub acc_kib: usize,
    pub spad_banks: usize,
    pub acc_banks: usize,
    pub spad_ports: usize,
    pub spad_read_delay: u64,
    /// Width of the spatial-array outputs. Only enforced when
    /// `saturate_outputs` is set.
    pub output_bits: u32,
    #[serde(default)]
    pub saturate_outputs: bool,
    pub max_inflight: usize,
    pub bus_bytes: usize,
    pub dram_latency: u64,
    pub freq_mhz: u32,
    pub dsp_packing: bool,
    #[serde(default)]
    pub disabled: BTreeSet<Feature>,
}

impl AcceleratorConfig {
    /// 32x32 array, 512 KiB scratchpad, 150 MHz.
    pub fn ours() -> Self {
        AcceleratorConfig {
            name: "ours".into(),
            dim: 32,
            dataflow: Dataflow::WeightStationary,
            spad_kib: 512,
            acc_kib: 128,
            spad_banks: 4,
            acc_banks: 2,
            spad_ports: 2,
            spad_read_delay: 8,
            output_bits: 18,
            saturate_outputs: false,
            max_inflight: 32,
            bus_bytes: 16,
            dram_latency: 40,
            freq_mhz: 150,
            dsp_packing: true,
            disabled: BTreeSet::new(),
        }
    }

    /// 16x16 array, 256 KiB scratchpad, 100 MHz.
    pub fn baseline() -> Self {
        AcceleratorConfig {
            name: "baseline".into(),
            dim: 16,
            spad_kib: 256,
            acc_kib: 64,
            spad_ports: 1,
            spad_read_delay: 4,
            output_bits: 20,
            max_inflight: 16,
            freq_mhz: 100,
            dsp_packing: false,
            ..Self::ours()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "ours" => Ok(Self::ours()),
            "baseline" => Ok(Self::baseline()),
            _ => Err(Error::Config(format!("unknown accelerator preset `{name}`"))),
        }
    }

    pub fn spad_bytes(&self) -> usize {
        self.spad_kib * 1024
    }

    pub fn acc_bytes(&self) -> usize {
        self.acc_kib * 1024
    }

    /// Scratchpad rows of `dim` i8 values.
    pub fn spad_rows(&self) -> usize {
        self.spad_bytes() / self.dim
    }

    /// Accumulator rows of `dim` i32 values.
    pub fn acc_rows(&self) -> usize {
        self.acc_bytes() / (4 * self.dim)
    }

    pub fn spad_bank_rows(&self) -> usize {
        self.spad_rows() / self.spad_banks
    }

    pub fn is_enabled(&self, f: Feature) -> bool {
        !self.disabled.contains(&f)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.dim < 2 {
            return bad(format!("dim must be at least 2, got {}", self.dim));
        }
        if self.spad_kib == 0 || self.acc_kib == 0 {
            return bad("memory capacities must be positive".into());
        }
        if self.spad_bytes() % self.dim != 0 || self.acc_bytes() % (4 * self.dim) != 0 {
            return bad("capacities must hold a whole number of rows".into());
        }
        if self.spad_banks == 0 || self.spad_rows() % self.spad_banks != 0 {
            return bad(format!("{} scratchpad rows do not split into {} banks", self.spad_rows(), self.spad_banks));
        }
        if self.acc_banks == 0 || self.acc_rows() % self.acc_banks != 0 {
            return bad(format!("{} accumulator rows do not split into {} banks", self.acc_rows(), self.acc_banks));
        }
        if self.spad_rows() < 2 * self.dim || self.acc_rows() < self.dim {
            return bad("memories must hold at least one tile".into());
        }
        if self.spad_ports == 0 || self.max_inflight == 0 || self.bus_bytes == 0 || self.freq_mhz == 0 {
            return bad("ports, in-flight slots, bus width and frequency must be positive".into());
        }
        if !(8..=32).contains(&self.output_bits) {
            return bad(format!("output_bits {} outside [8, 32]", self.output_bits));
        }
        if self.dsp_packing && self.dim % 2 != 0 {
            return bad("DSP packing pairs columns and needs an even dim".into());
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        hex_digest(text.as_bytes())
    }

    pub fn cycles_to_ms(&self, cycles: u64) -> f64 {
        cycles as f64 / (self.freq_mhz as f64 * 1e3)
    }
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Copy of `cfg` with the given features compiled out.
pub fn feature_flags(cfg: &AcceleratorConfig, disable: &[Feature]) -> AcceleratorConfig {
    let mut out = cfg.clone();
    out.disabled.extend(disable.iter().copied());
    out
}
