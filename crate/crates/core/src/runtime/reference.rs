//! Functional reference executor for f32 and quantized graphs.
//!
//! Quantized operators use the same requantize and quantize kernels as the
//! accelerator model, so an accelerator run and a reference run of the same
//! graph agree bit for bit.

use std::collections::HashMap;

use rayon::prelude::*;

use super::postprocess::{box_decode, nms};
use super::tensor::{Tensor, TensorData};
use crate::error::{Error, Result};
use crate::graph_ir::{pad_before, Bias, Conv2d, Graph, Node, Op, Pool2d, Shape, TensorSpec, Weights};
use crate::quantizer::{dequantize_value, quantize_value, requantize};

/// Run `g` and return its outputs in declaration order.
pub fn execute(g: &Graph, inputs: &[Tensor]) -> Result<Vec<Tensor>> {
    execute_observed(g, inputs, |_, _| {})
}

/// Run `g`, calling `observe` on every graph input and node output as it
/// is produced.
pub fn execute_observed(
    g: &Graph,
    inputs: &[Tensor],
    mut observe: impl FnMut(&str, &Tensor),
) -> Result<Vec<Tensor>> {
    if inputs.len() != g.inputs().len() {
        return Err(Error::Simulation(format!(
            "graph takes {} inputs, got {}",
            g.inputs().len(),
            inputs.len()
        )));
    }
    // last consumer position of every tensor, so values can be dropped early
    let mut last_use: HashMap<&str, usize> = HashMap::new();
    for (pos, n) in g.nodes().iter().enumerate() {
        for i in &n.inputs {
            last_use.insert(i.as_str(), pos);
        }
    }
    let keep: std::collections::HashSet<&str> = g.outputs().iter().map(String::as_str).collect();

    let mut values: HashMap<&str, Tensor> = HashMap::new();
    for (gi, t) in g.inputs().iter().zip(inputs) {
        check_value(&gi.id, &gi.spec, t)?;
        observe(&gi.id, t);
        values.insert(&gi.id, t.clone());
    }
    for (pos, n) in g.nodes().iter().enumerate() {
        let args: Vec<&Tensor> = n.inputs.iter().map(|i| &values[i.as_str()]).collect();
        let specs: Vec<&TensorSpec> = n.inputs.iter().map(|i| g.spec(i).unwrap()).collect();
        let out = eval_node(n, &args, &specs)?;
        observe(&n.id, &out);
        values.insert(&n.id, out);
        for i in &n.inputs {
            if last_use.get(i.as_str()) == Some(&pos) && !keep.contains(i.as_str()) {
                values.remove(i.as_str());
            }
        }
    }
    Ok(g.outputs().iter().map(|o| values[o.as_str()].clone()).collect())
}

fn check_value(id: &str, spec: &TensorSpec, t: &Tensor) -> Result<()> {
    if t.shape != spec.shape || t.dtype() != spec.dtype {
        return Err(Error::Simulation(format!(
            "tensor `{id}` expects {:?} {:?}, got {:?} {:?}",
            spec.dtype,
            spec.shape,
            t.dtype(),
            t.shape
        )));
    }
    Ok(())
}

/// Evaluate a single node on concrete inputs.
pub fn eval_node(n: &Node, args: &[&Tensor], specs: &[&TensorSpec]) -> Result<Tensor> {
    let out_spec = &n.output;
    let data = match (&n.op, &args[0].data) {
        (Op::Conv2d(c), TensorData::F32(x)) => {
            let p = n.params.as_ref().unwrap();
            let (Weights::F32(w), Bias::F32(b)) = (&p.weights, &p.bias) else {
                return Err(Error::Simulation(format!("conv `{}` has non-f32 parameters", n.id)));
            };
            TensorData::F32(conv_f32(x, args[0].shape, c, w, b, out_spec.shape))
        }
        (Op::Conv2d(c), TensorData::I8(x)) => {
            let p = n.params.as_ref().unwrap();
            let (Weights::I8(w), Bias::I32(b)) = (&p.weights, &p.bias) else {
                return Err(Error::Simulation(format!("conv `{}` has non-integer parameters", n.id)));
            };
            let z_in = specs[0].qparams.unwrap().zero_point();
            let acc = conv_i32(x, args[0].shape, c, w, b, z_in, out_spec.shape);
            let rq = c.requant.unwrap();
            TensorData::I8(acc.into_iter().map(|a| requantize(a, &rq)).collect())
        }
        (Op::MaxPool2d(p), TensorData::F32(x)) => {
            TensorData::F32(max_pool(x, args[0].shape, p, out_spec.shape, f32::NEG_INFINITY, f32::max))
        }
        (Op::MaxPool2d(p), TensorData::I8(x)) => {
            TensorData::I8(max_pool(x, args[0].shape, p, out_spec.shape, i8::MIN, Ord::max))
        }
        (Op::ResizeNearest { factor }, TensorData::F32(x)) => {
            TensorData::F32(resize_nearest(x, args[0].shape, *factor))
        }
        (Op::ResizeNearest { factor }, TensorData::I8(x)) => {
            TensorData::I8(resize_nearest(x, args[0].shape, *factor))
        }
        (Op::Concat, TensorData::F32(_)) => {
            let parts: Vec<(&[f32], usize)> = args
                .iter()
                .map(|t| (t.as_f32().unwrap(), t.shape[3]))
                .collect();
            TensorData::F32(concat_channels(&parts, out_spec.shape))
        }
        (Op::Concat, TensorData::I8(_)) => {
            let parts: Vec<(&[i8], usize)> = args
                .iter()
                .map(|t| (t.as_i8().unwrap(), t.shape[3]))
                .collect();
            TensorData::I8(concat_channels(&parts, out_spec.shape))
        }
        (Op::Add { .. }, TensorData::F32(a)) => {
            let b = args[1].as_f32().unwrap();
            TensorData::F32(a.iter().zip(b).map(|(x, y)| x + y).collect())
        }
        (Op::Add { requant }, TensorData::I8(a)) => {
            let b = args[1].as_i8().unwrap();
            let za = specs[0].qparams.unwrap().zero_point();
            let zb = specs[1].qparams.unwrap().zero_point();
            let rq = requant.unwrap();
            TensorData::I8(
                a.iter()
                    .zip(b)
                    .map(|(&x, &y)| requantize((x as i32 - za) + (y as i32 - zb), &rq))
                    .collect(),
            )
        }
        (Op::Quantize, TensorData::F32(x)) => {
            let q = out_spec.qparams.unwrap();
            TensorData::I8(x.iter().map(|&v| quantize_value(v, &q)).collect())
        }
        (Op::Dequantize, TensorData::I8(x)) => {
            let q = specs[0].qparams.unwrap();
            TensorData::F32(x.iter().map(|&v| dequantize_value(v, &q)).collect())
        }
        (Op::Sigmoid, TensorData::F32(x)) => TensorData::F32(x.iter().map(|&v| sigmoid(v)).collect()),
        (Op::BoxDecode(d), TensorData::F32(x)) => TensorData::F32(box_decode(x, args[0].shape, d)),
        (Op::Nms(cfg), TensorData::F32(_)) => {
            let lists: Vec<(&[f32], usize)> = args
                .iter()
                .map(|t| (t.as_f32().unwrap(), t.shape[2]))
                .collect();
            TensorData::F32(nms(&lists, args[0].shape[3], cfg))
        }
        (op, _) => {
            return Err(Error::Simulation(format!(
                "node `{}`: {} is not defined for {:?} inputs",
                n.id,
                op.name(),
                args[0].dtype()
            )))
        }
    };
    Ok(Tensor {
        shape: out_spec.shape,
        data,
    })
}

pub fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

struct ConvGeom {
    h: usize,
    w: usize,
    cin: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    dil: usize,
    pad_top: usize,
    pad_left: usize,
    wo: usize,
    cout: usize,
}

impl ConvGeom {
    fn new(in_shape: Shape, c: &Conv2d, out_shape: Shape) -> Self {
        let [ekh, ekw] = c.effective_kernel();
        ConvGeom {
            h: in_shape[1],
            w: in_shape[2],
            cin: in_shape[3],
            kh: c.kernel[0],
            kw: c.kernel[1],
            stride: c.stride,
            dil: c.dilation,
            pad_top: pad_before(in_shape[1], ekh, c.stride, c.padding),
            pad_left: pad_before(in_shape[2], ekw, c.stride, c.padding),
            wo: out_shape[2],
            cout: out_shape[3],
        }
    }

    /// Input pixel offset for output (oy, ox) and tap (ky, kx), or None in
    /// the padding.
    fn tap(&self, oy: usize, ox: usize, ky: usize, kx: usize) -> Option<usize> {
        let iy = (oy * self.stride + ky * self.dil).checked_sub(self.pad_top)?;
        let ix = (ox * self.stride + kx * self.dil).checked_sub(self.pad_left)?;
        (iy < self.h && ix < self.w).then(|| (iy * self.w + ix) * self.cin)
    }
}

fn conv_f32(x: &[f32], in_shape: Shape, c: &Conv2d, w: &[f32], b: &[f32], out_shape: Shape) -> Vec<f32> {
    let g = ConvGeom::new(in_shape, c, out_shape);
    let mut out = vec![0.0f32; out_shape.iter().product()];
    out.par_chunks_mut(g.wo * g.cout).enumerate().for_each(|(oy, row)| {
        for ox in 0..g.wo {
            let acc = &mut row[ox * g.cout..(ox + 1) * g.cout];
            acc.copy_from_slice(b);
            for ky in 0..g.kh {
                for kx in 0..g.kw {
                    let Some(base) = g.tap(oy, ox, ky, kx) else { continue };
                    for ci in 0..g.cin {
                        let a = x[base + ci];
                        if a == 0.0 {
                            continue;
                        }
                        let wrow = &w[((ky * g.kw + kx) * g.cin + ci) * g.cout..][..g.cout];
                        for (o, &wv) in acc.iter_mut().zip(wrow) {
                            *o += a * wv;
                        }
                    }
                }
            }
            for o in acc.iter_mut() {
                *o = c.activation.apply(*o);
            }
        }
    });
    out
}

/// Integer conv with padding filled by the input zero point. The bias is
/// expected to carry the folded `-z_in * sum(w)` term.
fn conv_i32(x: &[i8], in_shape: Shape, c: &Conv2d, w: &[i8], b: &[i32], z_in: i32, out_shape: Shape) -> Vec<i32> {
    let g = ConvGeom::new(in_shape, c, out_shape);
    let mut out = vec![0i32; out_shape.iter().product()];
    out.par_chunks_mut(g.wo * g.cout).enumerate().for_each(|(oy, row)| {
        for ox in 0..g.wo {
            let acc = &mut row[ox * g.cout..(ox + 1) * g.cout];
            acc.copy_from_slice(b);
            for ky in 0..g.kh {
                for kx in 0..g.kw {
                    let base = g.tap(oy, ox, ky, kx);
                    for ci in 0..g.cin {
                        let a = match base {
                            Some(p) => x[p + ci] as i32,
                            None => z_in,
                        };
                        if a == 0 {
                            continue;
                        }
                        let wrow = &w[((ky * g.kw + kx) * g.cin + ci) * g.cout..][..g.cout];
                        for (o, &wv) in acc.iter_mut().zip(wrow) {
                            *o = o.wrapping_add(a * wv as i32);
                        }
                    }
                }
            }
        }
    });
    out
}

fn max_pool<T: Copy>(x: &[T], in_shape: Shape, p: &Pool2d, out_shape: Shape, lowest: T, max: fn(T, T) -> T) -> Vec<T> {
    let [_, h, w, ch] = in_shape;
    let [_, ho, wo, _] = out_shape;
    let pt = pad_before(h, p.kernel, p.stride, p.padding);
    let pl = pad_before(w, p.kernel, p.stride, p.padding);
    let mut out = Vec::with_capacity(ho * wo * ch);
    for oy in 0..ho {
        for ox in 0..wo {
            for c in 0..ch {
                let mut m = lowest;
                for ky in 0..p.kernel {
                    for kx in 0..p.kernel {
                        let (Some(iy), Some(ix)) = ((oy * p.stride + ky).checked_sub(pt), (ox * p.stride + kx).checked_sub(pl)) else {
                            continue;
                        };
                        if iy < h && ix < w {
                            m = max(m, x[(iy * w + ix) * ch + c]);
                        }
                    }
                }
                out.push(m);
            }
        }
    }
    out
}

fn resize_nearest<T: Copy>(x: &[T], in_shape: Shape, f: usize) -> Vec<T> {
    let [_, h, w, ch] = in_shape;
    let mut out = Vec::with_capacity(h * w * ch * f * f);
    for oy in 0..h * f {
        for ox in 0..w * f {
            let base = ((oy / f) * w + ox / f) * ch;
            out.extend_from_slice(&x[base..base + ch]);
        }
    }
    out
}

fn concat_channels<T: Copy>(parts: &[(&[T], usize)], out_shape: Shape) -> Vec<T> {
    let pixels = out_shape[1] * out_shape[2];
    let mut out = Vec::with_capacity(pixels * out_shape[3]);
    for p in 0..pixels {
        for (data, ch) in parts {
            out.extend_from_slice(&data[p * ch..(p + 1) * ch]);
        }
    }
    out
}
