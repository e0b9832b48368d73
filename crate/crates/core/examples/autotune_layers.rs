//! Schedule search over a 58-layer synthetic network.

use gemflow::accel::AcceleratorConfig;
use gemflow::autotuner::{replay, tune_graph};
use gemflow::graph_ir::replace_activations;
use gemflow::models::synthetic_convnet;
use gemflow::quantizer::{calibrate, quantize_graph};
use gemflow::runtime::random_inputs;

fn main() -> gemflow::Result<()> {
    let g = replace_activations(&synthetic_convnet(58, 64, 1)?);
    let q = quantize_graph(&g, &calibrate(&g, &random_inputs([1, 64, 64, 3], 2, 0, 0.0, 1.0))?)?;
    let cfg = AcceleratorConfig::ours();
    let (table, records) = tune_graph(&q, &cfg, 24, 0)?;

    for l in table.layers.iter().take(8) {
        println!(
            "{:7} {:8} -> {:8} cycles ({:+.1}%)",
            l.node,
            l.choice.cycles_default,
            l.choice.cycles_best,
            -100.0 * l.choice.reduction()
        );
    }
    let s = &table.summary;
    println!(
        "{} layers ({} distinct), {} improved, mean reduction {:.1}%, total {} -> {} cycles, {} records",
        s.layers,
        s.distinct_layers,
        s.improved,
        100.0 * s.mean_reduction,
        s.cycles_default,
        s.cycles_best,
        records.len()
    );
    assert_eq!(replay(&q, &cfg, &records)?, table);
    Ok(())
}
