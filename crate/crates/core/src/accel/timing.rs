//! Cycle accounting for the three decoupled controllers.
//!
//! Instructions are scheduled greedily in program order. Each controller
//! issues in order; DMA controllers keep up to `max_inflight` transfers in
//! flight, all sharing one DRAM bus. A per-row scoreboard on both local
//! memories orders dependent instructions across controllers, and a
//! per-line scoreboard does the same for DRAM.

use std::collections::{BTreeMap, HashMap};
use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::config::AcceleratorConfig;
use super::isa::{Controller, Space};

/// DRAM dependency tracking granularity in bytes.
pub const DRAM_LINE: u64 = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub index: usize,
    pub controller: Option<Controller>,
    pub start: u64,
    pub end: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CycleReport {
    pub load_busy: u64,
    pub exec_busy: u64,
    pub store_busy: u64,
    /// Cycle at which the last instruction retires.
    pub total: u64,
    /// Distinct scratchpad rows written.
    pub spad_rows_touched: usize,
    /// Distinct accumulator rows written.
    pub acc_rows_touched: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<Vec<TraceEntry>>,
}

impl CycleReport {
    /// Sum of two reports run back to back.
    pub fn then(&self, next: &CycleReport) -> CycleReport {
        CycleReport {
            load_busy: self.load_busy + next.load_busy,
            exec_busy: self.exec_busy + next.exec_busy,
            store_busy: self.store_busy + next.store_busy,
            total: self.total + next.total,
            spad_rows_touched: self.spad_rows_touched.max(next.spad_rows_touched),
            acc_rows_touched: self.acc_rows_touched.max(next.acc_rows_touched),
            trace: None,
        }
    }
}

/// Disjoint busy intervals, `start -> end`.
#[derive(Debug, Default)]
struct Timeline {
    busy: BTreeMap<u64, u64>,
}

impl Timeline {
    /// Earliest `t >= earliest` with `[t, t + len)` free.
    fn first_fit(&self, earliest: u64, len: u64) -> u64 {
        if len == 0 {
            return earliest;
        }
        let mut t = earliest;
        let from = self.busy.range(..=t).next_back().map_or(t, |(&s, _)| s);
        for (&s, &e) in self.busy.range(from..) {
            if s >= t + len {
                break;
            }
            if e > t {
                t = e;
            }
        }
        t
    }

    fn reserve(&mut self, start: u64, len: u64) {
        if len == 0 {
            return;
        }
        let mut s = start;
        let mut e = start + len;
        if let Some((&ps, &pe)) = self.busy.range(..=s).next_back() {
            if pe == s {
                s = ps;
                self.busy.remove(&ps);
            }
        }
        if let Some(ne) = self.busy.remove(&e) {
            e = ne;
        }
        self.busy.insert(s, e);
    }
}

/// Union of intervals whose starts arrive in nondecreasing order.
#[derive(Debug, Default)]
struct BusyUnion {
    done: u64,
    lo: u64,
    hi: u64,
}

impl BusyUnion {
    fn add(&mut self, start: u64, end: u64) {
        if start > self.hi {
            self.done += self.hi - self.lo;
            self.lo = start;
            self.hi = end;
        } else {
            self.hi = self.hi.max(end);
        }
    }

    fn total(&self) -> u64 {
        self.done + self.hi - self.lo
    }
}

#[derive(Debug)]
struct DmaQueue {
    slots: Vec<u64>,
    next_issue: u64,
    busy: BusyUnion,
}

impl DmaQueue {
    fn new(n: usize) -> Self {
        DmaQueue {
            slots: vec![0; n],
            next_issue: 0,
            busy: BusyUnion::default(),
        }
    }

    fn free_slot(&self) -> (usize, u64) {
        self.slots
            .iter()
            .copied()
            .enumerate()
            .min_by_key(|&(i, t)| (t, i))
            .unwrap()
    }
}

/// What an instruction touches, for dependency tracking.
#[derive(Debug, Default)]
pub(crate) struct Footprint {
    pub reads: Vec<(Space, Range<usize>)>,
    pub writes: Vec<(Space, Range<usize>)>,
    /// `(first byte, byte length)` DRAM spans.
    pub dram_reads: Vec<(u64, u64)>,
    pub dram_writes: Vec<(u64, u64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Kind {
    Config,
    /// DRAM transfer of the given byte count.
    Dma(u64),
    /// Fixed duration on the execute pipeline.
    Exec(u64),
    Fence,
    /// Requantizing store that must observe the latest execute config.
    DmaAfterConfig(u64),
}

#[derive(Debug, Default, Clone, Copy)]
struct RowState {
    written: u64,
    read: u64,
}

pub(crate) struct TimingModel {
    dim: u64,
    latency: u64,
    bus_bytes: u64,
    bank_rows: usize,
    single_port: bool,
    spad: Vec<RowState>,
    acc: Vec<RowState>,
    spad_touched: Vec<bool>,
    acc_touched: Vec<bool>,
    dram: HashMap<u64, RowState>,
    bus: Timeline,
    banks: Vec<Timeline>,
    load: DmaQueue,
    store: DmaQueue,
    exec_free: u64,
    exec_busy: BusyUnion,
    config_ex_done: u64,
    horizon: u64,
    trace: Option<Vec<TraceEntry>>,
}

impl TimingModel {
    pub fn new(cfg: &AcceleratorConfig, trace: bool) -> Self {
        TimingModel {
            dim: cfg.dim as u64,
            latency: cfg.dram_latency,
            bus_bytes: cfg.bus_bytes as u64,
            bank_rows: cfg.spad_bank_rows(),
            single_port: cfg.spad_ports < 2,
            spad: vec![RowState::default(); cfg.spad_rows()],
            acc: vec![RowState::default(); cfg.acc_rows()],
            spad_touched: vec![false; cfg.spad_rows()],
            acc_touched: vec![false; cfg.acc_rows()],
            dram: HashMap::new(),
            bus: Timeline::default(),
            banks: (0..cfg.spad_banks).map(|_| Timeline::default()).collect(),
            load: DmaQueue::new(cfg.max_inflight),
            store: DmaQueue::new(cfg.max_inflight),
            exec_free: 0,
            exec_busy: BusyUnion::default(),
            config_ex_done: 0,
            horizon: 0,
            trace: trace.then(Vec::new),
        }
    }

    pub fn preload_cycles(&self, spad_read_delay: u64, with_weights: bool) -> u64 {
        if with_weights {
            self.dim + spad_read_delay
        } else {
            1
        }
    }

    pub fn compute_cycles(&self, spad_read_delay: u64, rows: usize) -> u64 {
        rows as u64 + 2 * self.dim + spad_read_delay
    }

    fn rows(&self, space: Space) -> &[RowState] {
        match space {
            Space::Spad => &self.spad,
            Space::Acc => &self.acc,
        }
    }

    fn ready(&self, fp: &Footprint) -> u64 {
        let mut t = 0;
        for (space, r) in &fp.reads {
            for s in &self.rows(*space)[r.clone()] {
                t = t.max(s.written);
            }
        }
        for (space, r) in &fp.writes {
            for s in &self.rows(*space)[r.clone()] {
                t = t.max(s.written).max(s.read);
            }
        }
        for &(a, n) in &fp.dram_reads {
            for line in lines(a, n) {
                if let Some(s) = self.dram.get(&line) {
                    t = t.max(s.written);
                }
            }
        }
        for &(a, n) in &fp.dram_writes {
            for line in lines(a, n) {
                if let Some(s) = self.dram.get(&line) {
                    t = t.max(s.written).max(s.read);
                }
            }
        }
        t
    }

    fn spad_banks_of(&self, fp: &Footprint) -> Vec<usize> {
        let mut banks: Vec<usize> = fp
            .reads
            .iter()
            .chain(&fp.writes)
            .filter(|(s, r)| *s == Space::Spad && !r.is_empty())
            .flat_map(|(_, r)| r.start / self.bank_rows..=(r.end - 1) / self.bank_rows)
            .collect();
        banks.sort_unstable();
        banks.dedup();
        banks
    }

    /// Earliest `t >= earliest` where the bus (if used) and every touched
    /// bank are free for `len` cycles.
    fn fit(&self, earliest: u64, len: u64, use_bus: bool, banks: &[usize]) -> u64 {
        let mut t = earliest;
        loop {
            let mut next = t;
            if use_bus {
                next = self.bus.first_fit(next, len);
            }
            if self.single_port {
                for &b in banks {
                    next = self.banks[b].first_fit(next, len);
                }
            }
            if next == t {
                return t;
            }
            t = next;
        }
    }

    fn retire(&mut self, fp: &Footprint, end: u64) {
        for (space, r) in &fp.reads {
            let rows = match space {
                Space::Spad => &mut self.spad,
                Space::Acc => &mut self.acc,
            };
            for s in &mut rows[r.clone()] {
                s.read = s.read.max(end);
            }
        }
        for (space, r) in &fp.writes {
            let (rows, touched) = match space {
                Space::Spad => (&mut self.spad, &mut self.spad_touched),
                Space::Acc => (&mut self.acc, &mut self.acc_touched),
            };
            for s in &mut rows[r.clone()] {
                s.written = s.written.max(end);
            }
            touched[r.clone()].iter_mut().for_each(|t| *t = true);
        }
        for &(a, n) in &fp.dram_reads {
            for line in lines(a, n) {
                let s = self.dram.entry(line).or_default();
                s.read = s.read.max(end);
            }
        }
        for &(a, n) in &fp.dram_writes {
            for line in lines(a, n) {
                let s = self.dram.entry(line).or_default();
                s.written = s.written.max(end);
            }
        }
        self.horizon = self.horizon.max(end);
    }

    pub fn issue(&mut self, index: usize, ctrl: Option<Controller>, kind: Kind, fp: &Footprint) {
        let banks = self.spad_banks_of(fp);
        let (start, end) = match (ctrl, kind) {
            (_, Kind::Fence) => {
                let t = self.horizon;
                self.exec_free = self.exec_free.max(t);
                self.load.next_issue = self.load.next_issue.max(t);
                self.store.next_issue = self.store.next_issue.max(t);
                (t, t)
            }
            (Some(Controller::Execute), Kind::Config) => {
                let s = self.exec_free;
                self.exec_free = s + 1;
                self.config_ex_done = s + 1;
                self.exec_busy.add(s, s + 1);
                (s, s + 1)
            }
            (Some(Controller::Execute), Kind::Exec(len)) => {
                let earliest = self.exec_free.max(self.ready(fp));
                let s = self.fit(earliest, len, false, &banks);
                if self.single_port {
                    for &b in &banks {
                        self.banks[b].reserve(s, len);
                    }
                }
                self.exec_free = s + len;
                self.exec_busy.add(s, s + len);
                (s, s + len)
            }
            (Some(c @ (Controller::Load | Controller::Store)), kind) => {
                let after_cfg = matches!(kind, Kind::DmaAfterConfig(_));
                let q = if c == Controller::Load {
                    &self.load
                } else {
                    &self.store
                };
                let (slot, slot_free) = q.free_slot();
                let mut earliest = q.next_issue.max(slot_free);
                let (s, e) = match kind {
                    Kind::Config => (earliest, earliest + 1),
                    Kind::Dma(bytes) | Kind::DmaAfterConfig(bytes) => {
                        earliest = earliest.max(self.ready(fp));
                        if after_cfg {
                            earliest = earliest.max(self.config_ex_done);
                        }
                        let xfer = bytes.div_ceil(self.bus_bytes);
                        let t = self.fit(earliest + self.latency, xfer, true, &banks);
                        self.bus.reserve(t, xfer);
                        if self.single_port {
                            for &b in &banks {
                                self.banks[b].reserve(t, xfer);
                            }
                        }
                        (earliest, t + xfer)
                    }
                    _ => unreachable!("execute kinds never reach a DMA queue"),
                };
                let q = if c == Controller::Load {
                    &mut self.load
                } else {
                    &mut self.store
                };
                if matches!(kind, Kind::Dma(_) | Kind::DmaAfterConfig(_)) {
                    q.slots[slot] = e;
                }
                q.next_issue = s + 1;
                q.busy.add(s, e);
                (s, e)
            }
            _ => unreachable!("instruction kind does not match its controller"),
        };
        self.retire(fp, end);
        if let Some(t) = &mut self.trace {
            t.push(TraceEntry {
                index,
                controller: ctrl,
                start,
                end,
            });
        }
    }

    pub fn finish(self) -> CycleReport {
        CycleReport {
            load_busy: self.load.busy.total(),
            exec_busy: self.exec_busy.total(),
            store_busy: self.store.busy.total(),
            total: self.horizon,
            spad_rows_touched: self.spad_touched.iter().filter(|&&t| t).count(),
            acc_rows_touched: self.acc_touched.iter().filter(|&&t| t).count(),
            trace: self.trace,
        }
    }
}

fn lines(addr: u64, len: u64) -> Range<u64> {
    if len == 0 {
        return 0..0;
    }
    addr / DRAM_LINE..(addr + len - 1) / DRAM_LINE + 1
}
