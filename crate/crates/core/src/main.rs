use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gemflow::pipeline::{
    analyze_input_size, load_model_source, run_pipeline, write_size_rows, AccelSpec, Emit, PipelineConfig,
};
use gemflow::{Error, Result};

#[derive(Parser)]
#[command(name = "gemflow", version, about = "Deploy small CNN detectors onto a simulated systolic-array accelerator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// GOP of the model at each square input size.
    AnalyzeInputSize {
        /// Model manifest or bundled name (toy-detector, conv-only, yolov7-tiny).
        #[arg(long)]
        model: String,
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', required = true)]
        sizes: Vec<usize>,
        #[arg(long, value_enum, default_value_t = Emit::Csv)]
        emit: Emit,
        /// Write here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Optimize, prune, quantize, partition, tune and run a model.
    Pipeline(PipelineArgs),
}

#[derive(Args)]
struct PipelineArgs {
    /// JSON pipeline config; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    weights: Option<PathBuf>,
    /// `ours`, `baseline` or a JSON accelerator config file.
    #[arg(long)]
    accel: Option<String>,
    #[arg(long)]
    input_size: Option<usize>,
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    power_w: Option<f64>,
    #[arg(long)]
    plan: Option<PathBuf>,
    #[arg(long)]
    records: Option<PathBuf>,
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    skip_prune: bool,
    #[arg(long)]
    skip_tune: bool,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, value_enum)]
    emit: Option<Emit>,
}

impl PipelineArgs {
    fn config(&self) -> Result<PipelineConfig> {
        let mut c = match &self.config {
            Some(p) => PipelineConfig::from_file(p)?,
            None => PipelineConfig::default(),
        };
        if let Some(v) = &self.model {
            c.model = v.clone();
        }
        if let Some(v) = &self.weights {
            c.weights = Some(v.clone());
        }
        if let Some(v) = &self.accel {
            c.accel = AccelSpec::Named(v.clone());
        }
        if let Some(v) = self.input_size {
            c.input_size = Some(v);
        }
        if let Some(v) = self.budget {
            c.budget = v;
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = self.power_w {
            c.power_w = v;
        }
        if let Some(v) = &self.plan {
            c.plan = Some(v.clone());
        }
        if let Some(v) = &self.records {
            c.records = Some(v.clone());
        }
        if let Some(v) = self.emit {
            c.emit = v;
        }
        c.skip_prune |= self.skip_prune;
        c.skip_tune |= self.skip_tune;
        Ok(c)
    }
}

fn analyze(model: &str, weights: Option<&Path>, sizes: &[usize], emit: Emit, out: Option<&Path>) -> Result<()> {
    let g = load_model_source(model, weights, 0)?;
    let rows = analyze_input_size(&g, sizes);
    let mut buf = Vec::new();
    write_size_rows(&mut buf, &rows, emit)?;
    match out {
        Some(p) => fs::write(p, buf).map_err(|e| Error::io(p, e)),
        None => std::io::stdout().write_all(&buf).map_err(|e| Error::io("<stdout>", e)),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match &cli.cmd {
        Cmd::AnalyzeInputSize {
            model,
            weights,
            sizes,
            emit,
            out,
        } => analyze(model, weights.as_deref(), sizes, *emit, out.as_deref()),
        Cmd::Pipeline(a) => a.config().and_then(|c| {
            let done = run_pipeline(&c, &a.out_dir, a.jobs)?;
            for f in &done.files {
                println!("{}", a.out_dir.join(f).display());
            }
            Ok(())
        }),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("gemflow: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
