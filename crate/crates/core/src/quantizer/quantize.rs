use std::collections::{BTreeMap, HashMap, HashSet};

use super::calibrate::{CalibrationStats, TensorRange, DEGENERATE_WIDTH};
use super::f16::f16_round;
use super::requant::{quantize_value, RequantSpec};
use crate::error::{Error, Result};
use crate::graph_ir::{
    Activation, Bias, ConvParams, DataType, Graph, Node, Op, QuantParams, TensorSpec, Weights,
};

/// Symmetric per-tensor weight parameters: `scale = max|w| / 127`.
pub fn weight_params(w: &[f32]) -> QuantParams {
    let max_abs = w.iter().fold(0.0f32, |m, v| m.max(v.abs()));
    let max_abs = if max_abs > 0.0 { max_abs } else { DEGENERATE_WIDTH };
    QuantParams::symmetric(max_abs / 127.0).expect("positive weight scale")
}

/// Asymmetric per-tensor activation parameters over `[min, max]`.
pub fn activation_params(r: TensorRange) -> Result<QuantParams> {
    let scale = (r.max - r.min) / 255.0;
    if !(scale.is_finite() && scale > 0.0) {
        return Err(Error::Quantization(format!(
            "range [{}, {}] is degenerate",
            r.min, r.max
        )));
    }
    let zp = (-128.0 - r.min / scale).round_ties_even().clamp(-128.0, 127.0) as i32;
    QuantParams::new(scale, zp)
}

fn quantize_weight(w: f32, scale: f32) -> i8 {
    (w / scale).round_ties_even().clamp(-127.0, 127.0) as i8
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // smaller root wins, keeps classes independent of merge order
            let (lo, hi) = (ra.min(rb), ra.max(rb));
            self.parent[hi] = lo;
        }
    }
}

fn fresh_id(base: String, taken: &mut HashSet<String>) -> String {
    let mut id = base;
    while taken.contains(&id) {
        id.push('_');
    }
    taken.insert(id.clone());
    id
}

/// Convert every accelerator-eligible node to int8, inserting Quantize and
/// Dequantize nodes exactly where float and integer tensors meet.
///
/// Tensors that must share one scale are grouped first: pooling and resize
/// pass their input scale through, concat inputs share the output scale,
/// and add inputs share one scale.
pub fn quantize_graph(g: &Graph, stats: &CalibrationStats) -> Result<Graph> {
    let mut int_nodes: HashSet<&str> = HashSet::new();
    for n in g.nodes() {
        if n.output.dtype != DataType::F32 || matches!(n.op, Op::Quantize | Op::Dequantize) {
            return Err(Error::Quantization(format!(
                "graph is already quantized (node `{}`)",
                n.id
            )));
        }
        if let Op::Conv2d(c) = &n.op {
            if let Activation::LeakyRelu { .. } = c.activation {
                return Err(Error::Quantization(format!(
                    "conv `{}` uses leaky_relu, which has no integer clamp; replace activations first",
                    n.id
                )));
            }
        }
        if n.op.is_accelerator_eligible() {
            int_nodes.insert(&n.id);
        }
    }

    // integer-domain tensors: eligible outputs plus float tensors they read
    let mut domain: Vec<&str> = Vec::new();
    let mut slot: HashMap<&str, usize> = HashMap::new();
    let mut sources: Vec<&str> = Vec::new();
    for n in g.nodes().iter().filter(|n| int_nodes.contains(n.id.as_str())) {
        for i in &n.inputs {
            if !int_nodes.contains(i.as_str()) && !slot.contains_key(i.as_str()) {
                slot.insert(i, domain.len());
                domain.push(i);
                sources.push(i);
            }
        }
        slot.insert(&n.id, domain.len());
        domain.push(&n.id);
    }
    let mut uf = UnionFind {
        parent: (0..domain.len()).collect(),
    };
    for n in g.nodes().iter().filter(|n| int_nodes.contains(n.id.as_str())) {
        let me = slot[n.id.as_str()];
        match &n.op {
            Op::MaxPool2d(_) | Op::ResizeNearest { .. } | Op::Concat => {
                for i in &n.inputs {
                    uf.union(me, slot[i.as_str()]);
                }
            }
            Op::Add { .. } => uf.union(slot[n.inputs[0].as_str()], slot[n.inputs[1].as_str()]),
            _ => {}
        }
    }
    let mut class_range: BTreeMap<usize, TensorRange> = BTreeMap::new();
    for (i, id) in domain.iter().enumerate() {
        let r = stats.get(id).ok_or_else(|| {
            Error::Quantization(format!("no calibration range for tensor `{id}`"))
        })?;
        let root = uf.find(i);
        class_range
            .entry(root)
            .and_modify(|e| {
                e.min = e.min.min(r.min);
                e.max = e.max.max(r.max);
            })
            .or_insert(r);
    }
    let mut class_q: BTreeMap<usize, QuantParams> = BTreeMap::new();
    for (root, r) in &class_range {
        class_q.insert(*root, activation_params(*r)?);
    }
    let mut qparams_of = |id: &str| -> QuantParams { class_q[&uf.find(slot[id])] };
    let q_of: HashMap<&str, QuantParams> = domain.iter().map(|id| (*id, qparams_of(id))).collect();

    let mut taken: HashSet<String> = g.nodes().iter().map(|n| n.id.clone()).collect();
    taken.extend(g.inputs().iter().map(|i| i.id.clone()));
    let mut nodes: Vec<Node> = Vec::new();
    let mut quant_name: HashMap<&str, String> = HashMap::new();
    for &s in &sources {
        let id = fresh_id(format!("{s}_quant"), &mut taken);
        let spec = g.spec(s).unwrap();
        nodes.push(Node {
            id: id.clone(),
            op: Op::Quantize,
            inputs: vec![s.to_string()],
            output: TensorSpec::i8(spec.shape, q_of[s]),
            params: None,
        });
        quant_name.insert(s, id);
    }

    let mut dequant_name: HashMap<String, String> = HashMap::new();
    let mut dequant_for = |t: &str, nodes: &mut Vec<Node>, taken: &mut HashSet<String>| -> String {
        if let Some(d) = dequant_name.get(t) {
            return d.clone();
        }
        let id = fresh_id(format!("{t}_dequant"), taken);
        nodes.push(Node {
            id: id.clone(),
            op: Op::Dequantize,
            inputs: vec![t.to_string()],
            output: TensorSpec::f32(g.spec(t).unwrap().shape),
            params: None,
        });
        dequant_name.insert(t.to_string(), id.clone());
        id
    };

    for n in g.nodes() {
        if int_nodes.contains(n.id.as_str()) {
            let inputs: Vec<String> = n
                .inputs
                .iter()
                .map(|i| quant_name.get(i.as_str()).cloned().unwrap_or_else(|| i.clone()))
                .collect();
            let out_q = q_of[n.id.as_str()];
            let in_q: Vec<QuantParams> = n.inputs.iter().map(|i| q_of[i.as_str()]).collect();
            let (op, params) = match &n.op {
                Op::Conv2d(c) => {
                    let (op, p) = quantize_conv(n, c, in_q[0], out_q)?;
                    (Op::Conv2d(op), Some(p))
                }
                Op::Add { .. } => {
                    let m = (in_q[0].scale() as f64 / out_q.scale() as f64) as f32;
                    let requant = RequantSpec::new(f16_round(m), out_q.zero_point(), None)
                        .map_err(|e| Error::Quantization(format!("add `{}`: {e}", n.id)))?;
                    (Op::Add { requant: Some(requant) }, None)
                }
                op => (op.clone(), None),
            };
            nodes.push(Node {
                id: n.id.clone(),
                op,
                inputs,
                output: TensorSpec::i8(n.output.shape, out_q),
                params,
            });
        } else {
            let mut inputs = Vec::with_capacity(n.inputs.len());
            for i in &n.inputs {
                if int_nodes.contains(i.as_str()) {
                    inputs.push(dequant_for(i, &mut nodes, &mut taken));
                } else {
                    inputs.push(i.clone());
                }
            }
            nodes.push(Node {
                inputs,
                ..n.clone()
            });
        }
    }
    let mut outputs = Vec::with_capacity(g.outputs().len());
    for o in g.outputs() {
        if int_nodes.contains(o.as_str()) {
            outputs.push(dequant_for(o, &mut nodes, &mut taken));
        } else {
            outputs.push(o.clone());
        }
    }
    Graph::new(g.inputs().to_vec(), outputs, nodes)
}

fn quantize_conv(
    n: &Node,
    c: &crate::graph_ir::Conv2d,
    in_q: QuantParams,
    out_q: QuantParams,
) -> Result<(crate::graph_ir::Conv2d, ConvParams)> {
    let p = n.params.as_ref().unwrap();
    let (Weights::F32(w), Bias::F32(b)) = (&p.weights, &p.bias) else {
        return Err(Error::Quantization(format!("conv `{}` has non-f32 parameters", n.id)));
    };
    let w_q = weight_params(w);
    let wq: Vec<i8> = w.iter().map(|&v| quantize_weight(v, w_q.scale())).collect();
    let cout = b.len();
    let mut wsum = vec![0i64; cout];
    for (i, &v) in wq.iter().enumerate() {
        wsum[i % cout] += v as i64;
    }
    let acc_scale = in_q.scale() as f64 * w_q.scale() as f64;
    let z_in = in_q.zero_point() as i64;
    let bias: Vec<i32> = b
        .iter()
        .zip(&wsum)
        .map(|(&bv, &s)| {
            let q = (bv as f64 / acc_scale).round_ties_even() as i64 - z_in * s;
            i32::try_from(q).map_err(|_| {
                Error::Quantization(format!("conv `{}` bias {bv} overflows i32 after scaling", n.id))
            })
        })
        .collect::<Result<_>>()?;
    let m = (acc_scale / out_q.scale() as f64) as f32;
    let clamp = match c.activation {
        Activation::Relu6 => Some((out_q.zero_point(), quantize_value(6.0, &out_q) as i32)),
        _ => None,
    };
    let requant = RequantSpec::new(f16_round(m), out_q.zero_point(), clamp)
        .map_err(|e| Error::Quantization(format!("conv `{}`: {e}", n.id)))?;
    let mut conv = c.clone();
    conv.weight_qparams = Some(w_q);
    conv.requant = Some(requant);
    Ok((
        conv,
        ConvParams {
            weights: Weights::I8(wq),
            bias: Bias::I32(bias),
        },
    ))
}
