//! Fourteen rounds of structured pruning on YOLOv7-tiny at two rates.

use gemflow::graph_ir::count_gop;
use gemflow::models::{yolov7_tiny, yolov7_tiny_plan, PLAN_RATE_40, PLAN_RATE_88};
use gemflow::pruner::{build_connectivity, run_plan, write_stats_csv};

fn main() -> gemflow::Result<()> {
    let g = yolov7_tiny(640, 0)?;
    let groups = build_connectivity(&g)?;
    let prunable = groups.iter().filter(|gr| gr.prunable).count();
    println!("{} groups, {prunable} prunable, {} params, {:.2} GOP", groups.len(), g.param_count(), count_gop(&g).gop());

    for rate in [PLAN_RATE_40, PLAN_RATE_88] {
        let (p, stats) = run_plan(&g, &yolov7_tiny_plan(&g, rate)?)?;
        println!("# rate {rate} per round -> {} params, {:.2} GOP", p.param_count(), count_gop(&p).gop());
        write_stats_csv(std::io::stdout(), &g, &stats)?;
    }
    Ok(())
}
