//! Lower one matmul to instructions and run it on both presets.

use gemflow::accel::{execute_stream, AcceleratorConfig, Instruction};
use gemflow::quantizer::{f16_round, RequantSpec};
use gemflow::scheduler::{default_schedule, lower_conv, ConvDram, ConvLayer};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> gemflow::Result<()> {
    let (m, k, n) = (96, 160, 80);
    let layer = ConvLayer::matmul(m, k, n, RequantSpec::new(f16_round(0.002), 0, None)?);
    let (lay, end) = ConvDram::contiguous(&layer, 64);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut image = vec![0u8; end as usize];
    rng.fill(&mut image[lay.input as usize..lay.bias as usize]);

    let mut outputs = Vec::new();
    for cfg in [AcceleratorConfig::baseline(), AcceleratorConfig::ours()] {
        let sched = default_schedule(&layer, &cfg);
        let stream = lower_conv(&layer, &cfg, Some(&sched), &lay)?;
        let mut dram = image.clone();
        let rep = execute_stream(&cfg, &stream, &mut dram)?;
        let computes = stream.count(|i| matches!(i, Instruction::Compute { .. }));
        println!(
            "dim {:2}: {} instructions ({computes} computes), {} cycles = {:.4} ms (load {} exec {} store {})",
            cfg.dim,
            stream.len(),
            rep.total,
            cfg.cycles_to_ms(rep.total),
            rep.load_busy,
            rep.exec_busy,
            rep.store_busy
        );
        outputs.push(dram[lay.output as usize..lay.output as usize + m * n].to_vec());
    }
    assert_eq!(outputs[0], outputs[1]);
    Ok(())
}
