//! The whole flow from a bundled model to a run report, in a temp directory.

use gemflow::pipeline::{run_pipeline, PipelineConfig};

fn main() -> gemflow::Result<()> {
    let out = std::env::temp_dir().join("gemflow-full-pipeline");
    let cfg = PipelineConfig {
        input_size: Some(96),
        budget: 8,
        ..PipelineConfig::default()
    };
    let outcome = run_pipeline(&cfg, &out, None)?;
    for f in &outcome.files {
        println!("{}", out.join(f).display());
    }
    for a in &outcome.audits {
        println!("{:20} {} {}", a.name, if a.passed { "ok" } else { "FAILED" }, a.detail);
    }
    Ok(())
}
