//! Dtype-based split of a quantized graph into accelerator and host parts.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph_ir::{DataType, Graph, GraphInput, Node, Op};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Accel,
    Host,
}

/// Integer nodes go to the accelerator, everything float (and every
/// Dequantize) to the host.
pub fn side_of(n: &Node) -> Side {
    if n.output.dtype == DataType::I8 && !matches!(n.op, Op::Dequantize) {
        Side::Accel
    } else {
        Side::Host
    }
}

/// A tensor produced on the accelerator and read by the host.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundaryTensor {
    pub id: String,
    pub bytes: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    pub accel: Graph,
    pub host: Graph,
    pub boundary: Vec<BoundaryTensor>,
    /// Inputs and outputs of the unsplit graph.
    pub inputs: Vec<GraphInput>,
    pub outputs: Vec<String>,
}

impl Partition {
    pub fn boundary_bytes(&self) -> usize {
        self.boundary.iter().map(|b| b.bytes).sum()
    }
}

/// Split `g` so the accelerator part runs first and the host part after
/// it. Fails if a host node feeds an accelerator node.
pub fn partition(g: &Graph) -> Result<Partition> {
    let side: HashMap<&str, Side> = g.nodes().iter().map(|n| (n.id.as_str(), side_of(n))).collect();
    let mut bad = Vec::new();
    for n in g.nodes().iter().filter(|n| side[n.id.as_str()] == Side::Accel) {
        for i in &n.inputs {
            if side.get(i.as_str()) == Some(&Side::Host) {
                bad.push(format!("{i} -> {}", n.id));
            }
        }
    }
    if !bad.is_empty() {
        return Err(Error::Partition(format!(
            "host results feed accelerator nodes, so the split is not a cut: {}",
            bad.join(", ")
        )));
    }

    let side = &side;
    let on = |s: Side| g.nodes().iter().filter(move |n| side[n.id.as_str()] == s);
    let read_by = |s: Side| -> BTreeSet<&str> {
        on(s).flat_map(|n| n.inputs.iter().map(String::as_str)).collect()
    };
    let accel_reads = read_by(Side::Accel);
    let host_reads = read_by(Side::Host);
    let outputs: BTreeSet<&str> = g.outputs().iter().map(String::as_str).collect();

    let boundary: Vec<BoundaryTensor> = on(Side::Accel)
        .filter(|n| host_reads.contains(n.id.as_str()))
        .map(|n| BoundaryTensor {
            id: n.id.clone(),
            bytes: n.output.size_bytes(),
        })
        .collect();

    let accel = Graph::new(
        g.inputs()
            .iter()
            .filter(|i| accel_reads.contains(i.id.as_str()))
            .cloned()
            .collect(),
        on(Side::Accel)
            .filter(|n| host_reads.contains(n.id.as_str()) || outputs.contains(n.id.as_str()))
            .map(|n| n.id.clone())
            .collect(),
        on(Side::Accel).cloned().collect(),
    )?;
    let mut host_inputs: Vec<GraphInput> = g
        .inputs()
        .iter()
        .filter(|i| host_reads.contains(i.id.as_str()))
        .cloned()
        .collect();
    host_inputs.extend(boundary.iter().map(|b| GraphInput {
        id: b.id.clone(),
        spec: g.spec(&b.id).unwrap().clone(),
    }));
    let host = Graph::new(
        host_inputs,
        g.outputs()
            .iter()
            .filter(|o| side.get(o.as_str()) != Some(&Side::Accel))
            .cloned()
            .collect(),
        on(Side::Host).cloned().collect(),
    )?;
    Ok(Partition {
        accel,
        host,
        boundary,
        inputs: g.inputs().to_vec(),
        outputs: g.outputs().to_vec(),
    })
}
