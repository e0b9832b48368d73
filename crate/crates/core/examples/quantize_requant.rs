//! Calibrate and quantize the toy detector, then look at the requant path.

use gemflow::graph_ir::{replace_activations, Op};
use gemflow::models::toy_detector;
use gemflow::quantizer::{calibrate, quantize_graph, requantize};
use gemflow::runtime::random_inputs;

fn main() -> gemflow::Result<()> {
    let g = replace_activations(&toy_detector(64, 0)?);
    let stats = calibrate(&g, &random_inputs([1, 64, 64, 3], 8, 1, 0.0, 1.0))?;
    let q = quantize_graph(&g, &stats)?;

    for n in q.nodes() {
        let Op::Conv2d(c) = &n.op else { continue };
        let qp = n.output.qparams.unwrap();
        let rq = c.requant.unwrap();
        println!(
            "{:10} out scale {:.5} zp {:4}  multiplier f16 {:.6}  clamp {:?}",
            n.id,
            qp.scale(),
            qp.zero_point(),
            rq.multiplier_f16().to_f32(),
            rq.activation_clamp()
        );
        let outs: Vec<i8> = [-20_000, 0, 5_000, 40_000].iter().map(|&acc| requantize(acc, &rq)).collect();
        println!("{:10} acc -20000, 0, 5000, 40000 -> {outs:?}", "");
    }
    let boundary = q.nodes().iter().filter(|n| matches!(n.op, Op::Quantize | Op::Dequantize)).count();
    println!("{boundary} quantize/dequantize boundary nodes");
    Ok(())
}
