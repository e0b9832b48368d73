//! Mixed accelerator + host execution, the host latency proxy and run
//! reports.

use std::collections::HashMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::partition::Partition;
use super::postprocess::{detections_from_rows, Detection};
use super::reference::{eval_node, execute};
use super::tensor::{Tensor, TensorData};
use crate::accel::{run, AcceleratorConfig, InstructionStream, SimOptions};
use crate::autotuner::ScheduleTable;
use crate::error::{Error, Result};
use crate::graph_ir::{count_gop, Bias, DataType, Graph, Op, OpClass, Weights};
use crate::scheduler::{lower_aux, lower_conv, ConvDram, ConvLayer};

pub const REPORT_FORMAT: &str = "gemflow.run_report";
pub const REPORT_VERSION: u32 = 1;

/// Scalar CPU latency proxy: cycles per counted operation for each op
/// class, at a fixed clock.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HostModel {
    pub freq_mhz: f64,
    /// Per op, where a multiply-accumulate is two ops.
    pub conv_cycles_per_op: f64,
    pub elementwise_cycles: f64,
    pub convert_cycles: f64,
    pub post_process_cycles: f64,
    /// Cost of moving boundary tensors between the two sides.
    #[serde(default)]
    pub transfer_ns_per_byte: f64,
}

impl Default for HostModel {
    fn default() -> Self {
        HostModel {
            freq_mhz: 1200.0,
            conv_cycles_per_op: 0.5,
            elementwise_cycles: 1.0,
            convert_cycles: 2.0,
            post_process_cycles: 8.0,
            transfer_ns_per_byte: 0.0,
        }
    }
}

impl HostModel {
    fn cycles_per_op(&self, class: OpClass) -> f64 {
        match class {
            OpClass::Conv => self.conv_cycles_per_op,
            OpClass::Elementwise => self.elementwise_cycles,
            OpClass::Convert => self.convert_cycles,
            OpClass::PostProcess => self.post_process_cycles,
        }
    }

    /// Latency of running the nodes of `g` selected by `pick`.
    pub fn ms(&self, g: &Graph, pick: impl Fn(&str) -> bool) -> f64 {
        let report = count_gop(g);
        let cycles: f64 = g
            .nodes()
            .iter()
            .zip(&report.per_node)
            .filter(|(n, _)| pick(&n.id))
            .map(|(n, o)| o.ops as f64 * self.cycles_per_op(n.op.class()))
            .sum();
        cycles / (self.freq_mhz * 1e3)
    }

    pub fn transfer_ms(&self, bytes: usize) -> f64 {
        bytes as f64 * self.transfer_ns_per_byte / 1e6
    }

    /// The same cost table on a different clock.
    pub fn at_clock(&self, freq_mhz: f64) -> HostModel {
        HostModel {
            freq_mhz,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub format: String,
    pub version: u32,
    pub accel_hash: String,
    pub accel_cycles: u64,
    pub accel_ms: f64,
    pub host_ms: f64,
    pub transfer_ms: f64,
    pub total_ms: f64,
    pub gop: f64,
    pub gop_per_s: f64,
    pub power_w: f64,
    pub energy_j: f64,
    /// GOP per joule, equal to `gop_per_s / power_w`.
    pub efficiency: f64,
}

impl RunReport {
    pub fn new(cfg_hash: &str, accel_cycles: u64, accel_ms: f64, host_ms: f64, transfer_ms: f64, gop: f64, power_w: f64) -> Result<Self> {
        if !(power_w > 0.0) {
            return Err(Error::Config(format!("power must be positive, got {power_w}")));
        }
        let total_ms = accel_ms + host_ms + transfer_ms;
        let total_s = total_ms / 1e3;
        let gop_per_s = if total_s > 0.0 { gop / total_s } else { 0.0 };
        Ok(RunReport {
            format: REPORT_FORMAT.into(),
            version: REPORT_VERSION,
            accel_hash: cfg_hash.into(),
            accel_cycles,
            accel_ms,
            host_ms,
            transfer_ms,
            total_ms,
            gop,
            gop_per_s,
            power_w,
            energy_j: power_w * total_s,
            efficiency: gop_per_s / power_w,
        })
    }

    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.serialize(self)?;
        wr.flush().map_err(|e| Error::io("<run report>", e))?;
        Ok(())
    }
}

/// Detections as JSON lines behind a header line.
pub fn write_detections(mut w: impl Write, dets: &[Detection]) -> Result<()> {
    let io = |e| Error::io("<detections>", e);
    writeln!(w, r#"{{"format":"gemflow.detections","version":1,"count":{}}}"#, dets.len()).map_err(io)?;
    for d in dets {
        writeln!(w, "{}", serde_json::to_string(d)?).map_err(io)?;
    }
    Ok(())
}

/// DRAM placement and instruction streams for the accelerator part.
struct AccelPlan {
    addr: HashMap<String, u64>,
    /// Per conv: weights and bias addresses.
    params: HashMap<String, (u64, u64)>,
    streams: Vec<(String, InstructionStream)>,
    size: usize,
}

fn align(x: u64) -> u64 {
    x.div_ceil(64) * 64
}

fn plan_accel(g: &Graph, cfg: &AcceleratorConfig, schedules: Option<&ScheduleTable>) -> Result<AccelPlan> {
    let mut next = 64u64;
    let mut alloc = |bytes: usize| {
        let at = next;
        next = align(next + bytes as u64);
        at
    };
    let mut addr = HashMap::new();
    for i in g.inputs() {
        if i.spec.dtype == DataType::I8 {
            addr.insert(i.id.clone(), alloc(i.spec.size_bytes()));
        }
    }
    let mut params = HashMap::new();
    let mut scratch_need = 0usize;
    for n in g.nodes() {
        addr.insert(n.id.clone(), alloc(n.output.size_bytes()));
        if let Some(p) = &n.params {
            let w = alloc(p.weights.len());
            let b = alloc(4 * p.bias.len());
            params.insert(n.id.clone(), (w, b));
            scratch_need = scratch_need.max(4 * n.output.num_elements());
        }
    }
    let scratch = alloc(scratch_need);
    let mut streams = Vec::new();
    for n in g.nodes() {
        let out = addr[&n.id];
        let stream = match &n.op {
            Op::Quantize => continue,
            Op::Conv2d(_) => {
                let in_spec = g.spec(&n.inputs[0]).unwrap();
                let layer = ConvLayer::from_node(n, in_spec)?;
                let sched = schedules.and_then(|t| t.schedule_for(&n.id));
                if let Some(s) = &sched {
                    s.check(cfg).map_err(|e| {
                        Error::Lowering(format!("schedule {s} does not fit conv `{}`: {e}", n.id))
                    })?;
                }
                let (weights, bias) = params[&n.id];
                let dram = ConvDram {
                    input: addr[&n.inputs[0]],
                    weights,
                    bias,
                    output: out,
                    scratch,
                };
                lower_conv(&layer, cfg, sched.as_ref(), &dram)?
            }
            _ => {
                let specs: Vec<_> = n.inputs.iter().map(|i| g.spec(i).unwrap()).collect();
                let ins: Vec<u64> = n.inputs.iter().map(|i| addr[i]).collect();
                lower_aux(n, &specs, cfg, &ins, out)?
            }
        };
        streams.push((n.id.clone(), stream));
    }
    Ok(AccelPlan {
        addr,
        params,
        streams,
        size: next as usize,
    })
}

fn i8_bytes(t: &Tensor) -> Vec<u8> {
    t.as_i8().unwrap().iter().map(|&v| v as u8).collect()
}

/// Cycles of the accelerator part, from the timing model alone.
pub fn accel_cycles(p: &Partition, cfg: &AcceleratorConfig, schedules: Option<&ScheduleTable>) -> Result<u64> {
    let plan = plan_accel(&p.accel, cfg, schedules)?;
    let opts = SimOptions {
        timing_only: true,
        trace: false,
    };
    let mut total = 0;
    for (_, s) in &plan.streams {
        total += run(cfg, s, None, opts)?.total;
    }
    Ok(total)
}

#[derive(Debug, Clone)]
pub struct EndToEnd {
    /// Outputs of the unsplit graph, in declaration order.
    pub outputs: Vec<Tensor>,
    pub detections: Vec<Detection>,
    pub report: RunReport,
}

/// Run the accelerator part layer by layer over one modeled DRAM image,
/// then the host part on the boundary tensors.
pub fn run_end_to_end(
    p: &Partition,
    cfg: &AcceleratorConfig,
    schedules: Option<&ScheduleTable>,
    inputs: &[Tensor],
    power_w: f64,
    host: &HostModel,
) -> Result<EndToEnd> {
    if inputs.len() != p.inputs.len() {
        return Err(Error::Simulation(format!(
            "graph takes {} inputs, got {}",
            p.inputs.len(),
            inputs.len()
        )));
    }
    let mut values: HashMap<String, Tensor> = p
        .inputs
        .iter()
        .zip(inputs)
        .map(|(i, t)| (i.id.clone(), t.clone()))
        .collect();

    let plan = plan_accel(&p.accel, cfg, schedules)?;
    let mut dram = vec![0u8; plan.size];
    let put = |dram: &mut [u8], at: u64, bytes: &[u8]| {
        dram[at as usize..at as usize + bytes.len()].copy_from_slice(bytes);
    };
    for i in p.accel.inputs() {
        if i.spec.dtype == DataType::I8 {
            put(&mut dram, plan.addr[&i.id], &i8_bytes(&values[&i.id]));
        }
    }
    for n in p.accel.nodes() {
        if let (Some(params), Some(&(w, b))) = (&n.params, plan.params.get(&n.id)) {
            let (Weights::I8(wv), Bias::I32(bv)) = (&params.weights, &params.bias) else {
                return Err(Error::Simulation(format!("conv `{}` is not quantized", n.id)));
            };
            put(&mut dram, w, &wv.iter().map(|&v| v as u8).collect::<Vec<_>>());
            put(&mut dram, b, &bv.iter().flat_map(|v| v.to_le_bytes()).collect::<Vec<_>>());
        }
    }
    // inputs are quantized by the host while staging them into DRAM
    for n in p.accel.nodes().iter().filter(|n| matches!(n.op, Op::Quantize)) {
        let arg = &values[&n.inputs[0]];
        let spec = p.accel.spec(&n.inputs[0]).unwrap();
        let q = eval_node(n, &[arg], &[spec])?;
        put(&mut dram, plan.addr[&n.id], &i8_bytes(&q));
    }
    let mut cycles = 0u64;
    for (_, stream) in &plan.streams {
        let r = run(cfg, stream, Some(&mut dram), SimOptions::default())?;
        cycles += r.total;
    }
    for o in p.accel.outputs() {
        let spec = p.accel.spec(o).unwrap();
        let at = plan.addr[o] as usize;
        let data = dram[at..at + spec.size_bytes()].iter().map(|&v| v as i8).collect();
        values.insert(o.clone(), Tensor::i8(spec.shape, data));
    }

    let host_in: Vec<Tensor> = p.host.inputs().iter().map(|i| values[&i.id].clone()).collect();
    let host_out = execute(&p.host, &host_in)?;
    for (o, t) in p.host.outputs().iter().zip(host_out) {
        values.insert(o.clone(), t);
    }
    let outputs: Vec<Tensor> = p.outputs.iter().map(|o| values[o].clone()).collect();

    let mut detections = Vec::new();
    for n in p.host.nodes().iter().filter(|n| matches!(n.op, Op::Nms(_))) {
        if let Some(t) = values.get(&n.id) {
            if let TensorData::F32(rows) = &t.data {
                detections.extend(detections_from_rows(rows));
            }
        }
    }

    let staging = host.ms(&p.accel, |id| {
        matches!(p.accel.node(id).map(|n| &n.op), Some(Op::Quantize))
    });
    let host_ms = staging + host.ms(&p.host, |_| true);
    let gop = count_gop(&p.accel).gop() + count_gop(&p.host).gop();
    let report = RunReport::new(
        &cfg.hash(),
        cycles,
        cfg.cycles_to_ms(cycles),
        host_ms,
        host.transfer_ms(p.boundary_bytes()),
        gop,
        power_w,
    )?;
    Ok(EndToEnd {
        outputs,
        detections,
        report,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacementRow {
    pub placement: String,
    pub accel_ms: f64,
    pub host_ms: f64,
    pub transfer_ms: f64,
    pub total_ms: f64,
}

/// Latency of three placements of the same quantized graph:
/// everything on the accelerator side (float work on its control core,
/// clocked with the array), everything on the host, and the dtype split.
pub fn compare_placements(
    p: &Partition,
    cfg: &AcceleratorConfig,
    schedules: Option<&ScheduleTable>,
    host: &HostModel,
) -> Result<Vec<PlacementRow>> {
    let accel_ms = cfg.cycles_to_ms(accel_cycles(p, cfg, schedules)?);
    let is_quantize = |id: &str| matches!(p.accel.node(id).map(|n| &n.op), Some(Op::Quantize));
    let row = |name: &str, a: f64, h: f64, t: f64| PlacementRow {
        placement: name.into(),
        accel_ms: a,
        host_ms: h,
        transfer_ms: t,
        total_ms: a + h + t,
    };
    let core = host.at_clock(cfg.freq_mhz as f64);
    let float_on = |m: &HostModel| m.ms(&p.accel, is_quantize) + m.ms(&p.host, |_| true);
    let all_host = host.ms(&p.accel, |_| true) + host.ms(&p.host, |_| true);
    Ok(vec![
        row("only-accel", accel_ms, float_on(&core), 0.0),
        row("only-host", 0.0, all_host, 0.0),
        row("mixed", accel_ms, float_on(host), host.transfer_ms(p.boundary_bytes())),
    ])
}
