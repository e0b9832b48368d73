//! Split the quantized detector at the dtype frontier and run both halves.

use gemflow::accel::AcceleratorConfig;
use gemflow::graph_ir::replace_activations;
use gemflow::models::toy_detector;
use gemflow::quantizer::{calibrate, quantize_graph};
use gemflow::runtime::{compare_placements, partition, random_inputs, run_end_to_end, HostModel};

fn main() -> gemflow::Result<()> {
    let g = replace_activations(&toy_detector(128, 0)?);
    let q = quantize_graph(&g, &calibrate(&g, &random_inputs([1, 128, 128, 3], 4, 0, 0.0, 1.0))?)?;
    let p = partition(&q)?;
    println!(
        "accel {} nodes, host {} nodes, boundary {:?} ({} bytes)",
        p.accel.nodes().len(),
        p.host.nodes().len(),
        p.boundary.iter().map(|b| b.id.as_str()).collect::<Vec<_>>(),
        p.boundary_bytes()
    );

    let cfg = AcceleratorConfig::ours();
    let host = HostModel::default();
    let x = random_inputs([1, 128, 128, 3], 1, 7, 0.0, 1.0);
    let run = run_end_to_end(&p, &cfg, None, &x, 3.68, &host)?;
    println!("{} detections", run.detections.len());
    println!("{}", serde_json::to_string_pretty(&run.report).unwrap());
    for row in compare_placements(&p, &cfg, None, &host)? {
        println!("{:10} {:8.3} ms", row.placement, row.total_ms);
    }
    Ok(())
}
