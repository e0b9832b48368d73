//! End-to-end deployment flow: optimize, prune, quantize, partition, tune
//! and run, writing one artifact per stage.

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::accel::{hex_digest, AcceleratorConfig};
use crate::autotuner::{read_records, replay, tune_graph, write_records, ScheduleTable};
use crate::error::{Error, Result};
use crate::graph_ir::{
    count_gop, load_model_with_weights, replace_activations, rescale_input, serialize_model_with, Graph,
};
use crate::models;
use crate::pruner::{run_plan, uniform_plan, write_stats_csv, PruningPlan};
use crate::quantizer::{calibrate, quantize_graph};
use crate::runtime::{compare_placements, execute, partition, random_inputs, run_end_to_end, HostModel};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Bundled model names accepted wherever a model path is.
pub const BUNDLED: [&str; 3] = ["toy-detector", "conv-only", "yolov7-tiny"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Emit {
    #[default]
    Json,
    Csv,
}

/// A preset name, a path to a JSON config, or an inline config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AccelSpec {
    Named(String),
    Inline(AcceleratorConfig),
}

impl Default for AccelSpec {
    fn default() -> Self {
        AccelSpec::Named("ours".into())
    }
}

impl AccelSpec {
    pub fn resolve(&self) -> Result<AcceleratorConfig> {
        let cfg = match self {
            AccelSpec::Inline(c) => c.clone(),
            AccelSpec::Named(n) if n == "ours" || n == "baseline" => AcceleratorConfig::preset(n)?,
            AccelSpec::Named(path) => {
                let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                let de = &mut serde_json::Deserializer::from_str(&text);
                serde_path_to_error::deserialize(de).map_err(|e| Error::Parse {
                    node: path.clone(),
                    field: e.path().to_string(),
                    message: e.inner().to_string(),
                })?
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    /// Model manifest path or one of [`BUNDLED`].
    pub model: String,
    pub weights: Option<PathBuf>,
    pub accel: AccelSpec,
    /// Square input size to rescale to.
    pub input_size: Option<usize>,
    pub budget: usize,
    pub seed: u64,
    pub power_w: f64,
    pub calibration_samples: usize,
    /// Pruning plan; without one, a single 25% round over every prunable
    /// group.
    pub plan: Option<PathBuf>,
    /// Tuning log to replay instead of searching.
    pub records: Option<PathBuf>,
    pub skip_prune: bool,
    pub skip_tune: bool,
    pub host: HostModel,
    pub emit: Emit,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            model: "toy-detector".into(),
            weights: None,
            accel: AccelSpec::default(),
            input_size: None,
            budget: 32,
            seed: 0,
            power_w: 3.68,
            calibration_samples: 8,
            plan: None,
            records: None,
            skip_prune: false,
            skip_tune: false,
            host: HostModel::default(),
            emit: Emit::Json,
        }
    }
}

impl PipelineConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let de = &mut serde_json::Deserializer::from_str(&text);
        serde_path_to_error::deserialize(de).map_err(|e| Error::Parse {
            node: path.display().to_string(),
            field: e.path().to_string(),
            message: e.inner().to_string(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.power_w > 0.0) {
            return Err(Error::Config(format!("power_w must be positive, got {}", self.power_w)));
        }
        if self.budget == 0 {
            return Err(Error::Config("tuning budget must be at least 1".into()));
        }
        if self.calibration_samples == 0 {
            return Err(Error::Config("need at least one calibration sample".into()));
        }
        if !BUNDLED.contains(&self.model.as_str()) && !Path::new(&self.model).exists() {
            return Err(Error::io(&self.model, std::io::ErrorKind::NotFound.into()));
        }
        for p in [&self.weights, &self.plan, &self.records].into_iter().flatten() {
            if !p.exists() {
                return Err(Error::io(p, std::io::ErrorKind::NotFound.into()));
            }
        }
        Ok(())
    }

    /// sha256 of the resolved configuration.
    pub fn hash(&self, accel: &AcceleratorConfig) -> String {
        let doc = json!({ "pipeline": self, "accel": accel });
        hex_digest(doc.to_string().as_bytes())
    }
}

/// A bundled model at its native size, or a model file.
pub fn load_model_source(model: &str, weights: Option<&Path>, seed: u64) -> Result<Graph> {
    match model {
        "toy-detector" => models::toy_detector(128, seed),
        "conv-only" => models::conv_only(640, seed),
        "yolov7-tiny" => models::yolov7_tiny(640, seed),
        path => load_model_with_weights(Path::new(path), weights),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeRow {
    pub size: usize,
    /// Exact operation count outside post-processing.
    pub ops: Option<u64>,
    pub gop: Option<f64>,
    pub post_gop: Option<f64>,
    pub error: Option<String>,
}

/// GOP of `g` rescaled to each square size; sizes the model cannot take
/// produce a row with the reason.
pub fn analyze_input_size(g: &Graph, sizes: &[usize]) -> Vec<SizeRow> {
    sizes
        .iter()
        .map(|&size| match rescale_input(g, (size, size)) {
            Ok(r) => {
                let rep = count_gop(&r);
                SizeRow {
                    size,
                    ops: Some(rep.main_ops),
                    gop: Some(rep.gop()),
                    post_gop: Some(rep.post_gop()),
                    error: None,
                }
            }
            Err(e) => SizeRow {
                size,
                ops: None,
                gop: None,
                post_gop: None,
                error: Some(e.to_string()),
            },
        })
        .collect()
}

pub fn write_size_rows(w: impl std::io::Write, rows: &[SizeRow], emit: Emit) -> Result<()> {
    match emit {
        Emit::Json => {
            let mut w = w;
            serde_json::to_writer_pretty(&mut w, rows)?;
            w.write_all(b"\n").map_err(|e| Error::io("<output>", e))?;
        }
        Emit::Csv => {
            let mut wr = csv::Writer::from_writer(w);
            wr.write_record(["size", "ops", "gop", "post_gop", "error"])?;
            for r in rows {
                let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
                wr.write_record([
                    r.size.to_string(),
                    r.ops.map(|x| x.to_string()).unwrap_or_default(),
                    opt(r.gop),
                    opt(r.post_gop),
                    r.error.clone().unwrap_or_default(),
                ])?;
            }
            wr.flush().map_err(|e| Error::io("<output>", e))?;
        }
    }
    Ok(())
}

/// Writes every file as `<name>.partial` and renames them all once the run
/// succeeds.
struct Artifacts {
    dir: PathBuf,
    header: serde_json::Value,
    files: Vec<(String, String)>,
}

impl Artifacts {
    fn put(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.dir.join(format!("{name}.partial"));
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        self.files.push((name.to_string(), hex_digest(bytes)));
        Ok(())
    }

    /// JSON document with the provenance header merged in.
    fn put_json(&mut self, name: &str, kind: &str, body: serde_json::Value) -> Result<()> {
        let mut doc = json!({ "format": format!("gemflow.{kind}") });
        doc.as_object_mut().unwrap().extend(self.header.as_object().unwrap().clone());
        doc.as_object_mut().unwrap().insert("data".into(), body);
        let mut text = serde_json::to_string_pretty(&doc)?;
        text.push('\n');
        self.put(name, text.as_bytes())
    }

    /// CSV prefixed by a `#` provenance line.
    fn put_csv(&mut self, name: &str, kind: &str, body: Vec<u8>) -> Result<()> {
        let mut out = format!(
            "# format=gemflow.{kind} tool_version={} config_hash={}\n",
            TOOL_VERSION, self.header["config_hash"].as_str().unwrap()
        )
        .into_bytes();
        out.extend(body);
        self.put(name, &out)
    }

    fn jsonl_header(&self, kind: &str) -> String {
        let mut h = json!({ "format": format!("gemflow.{kind}") });
        h.as_object_mut().unwrap().extend(self.header.as_object().unwrap().clone());
        format!("{h}\n")
    }

    fn commit(self) -> Result<Vec<String>> {
        let mut names = Vec::new();
        for (name, _) in &self.files {
            let from = self.dir.join(format!("{name}.partial"));
            let to = self.dir.join(name);
            fs::rename(&from, &to).map_err(|e| Error::io(&to, e))?;
            names.push(name.clone());
        }
        Ok(names)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Audit {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub files: Vec<String>,
    pub audits: Vec<Audit>,
}

fn stage<T>(name: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::in_stage(name, e))
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<Vec<u8>> {
    let mut v = Vec::new();
    f(&mut v)?;
    Ok(v)
}

/// Run the whole flow into `out_dir`. `jobs` bounds tuning parallelism and
/// never changes the artifacts.
pub fn run_pipeline(cfg: &PipelineConfig, out_dir: &Path, jobs: Option<usize>) -> Result<PipelineOutcome> {
    stage("config", cfg.validate())?;
    let accel = stage("config", cfg.accel.resolve())?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| pipeline_stages(cfg, &accel, out_dir))
}

fn pipeline_stages(cfg: &PipelineConfig, accel: &AcceleratorConfig, out_dir: &Path) -> Result<PipelineOutcome> {
    let hash = cfg.hash(accel);
    let mut art = Artifacts {
        dir: out_dir.to_path_buf(),
        header: json!({ "tool_version": TOOL_VERSION, "config_hash": hash }),
        files: Vec::new(),
    };
    let mut audits = Vec::new();
    art.put_json("config.json", "pipeline_config", json!({ "pipeline": cfg, "accel": accel }))?;

    let g = stage("load_model", load_model_source(&cfg.model, cfg.weights.as_deref(), cfg.seed))?;
    let g = replace_activations(&g);
    let g = match cfg.input_size {
        Some(s) => stage("rescale_input", rescale_input(&g, (s, s)))?,
        None => g,
    };

    let g = if cfg.skip_prune {
        g
    } else {
        let plan: PruningPlan = match &cfg.plan {
            Some(p) => stage("prune", read_json(p))?,
            None => stage("prune", uniform_plan(&g, 1, 0.25))?,
        };
        let (pruned, stats) = stage("prune", run_plan(&g, &plan))?;
        art.put_json("pruning_plan.json", "pruning_plan", serde_json::to_value(&plan)?)?;
        let body = csv_bytes(|v| write_stats_csv(v, &g, &stats))?;
        art.put_csv("pruning_stats.csv", "pruning_stats", body)?;
        let ok = stats.iter().all(|s| s.params_after <= s.params_before && s.gop_after <= s.gop_before);
        audits.push(Audit {
            name: "pruning_accounting".into(),
            passed: ok,
            detail: format!(
                "sparsity {:.4}, gop reduction {:.4}",
                stats.last().map_or(0.0, |s| s.sparsity),
                stats.last().map_or(0.0, |s| s.gop_reduction)
            ),
        });
        pruned
    };

    let shape = g
        .inputs()
        .first()
        .ok_or_else(|| Error::in_stage("calibrate", Error::Graph("model has no inputs".into())))?
        .spec
        .shape;
    let samples = random_inputs(shape, cfg.calibration_samples, cfg.seed, 0.0, 1.0);
    let stats = stage("calibrate", calibrate(&g, &samples))?;
    art.put_json("calibration.json", "calibration", serde_json::to_value(&stats)?)?;
    let q = stage("quantize", quantize_graph(&g, &stats))?;
    let (text, blob) = serialize_model_with(&q, "model.quant.bin", Some(art.header.clone()))?;
    art.put("model.quant.json", text.as_bytes())?;
    art.put("model.quant.bin", &blob)?;

    let p = stage("partition", partition(&q))?;
    let ids = |g: &Graph| g.nodes().iter().map(|n| n.id.clone()).collect::<Vec<_>>();
    art.put_json(
        "partition.json",
        "partition",
        json!({
            "accel_nodes": ids(&p.accel),
            "host_nodes": ids(&p.host),
            "boundary": p.boundary,
            "boundary_bytes": p.boundary_bytes(),
        }),
    )?;

    let table: Option<ScheduleTable> = if cfg.skip_tune {
        None
    } else if let Some(path) = &cfg.records {
        let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let recs = stage("tune", read_records(BufReader::new(f)))?;
        Some(stage("tune", replay(&q, accel, &recs))?)
    } else {
        let (table, recs) = stage("tune", tune_graph(&q, accel, cfg.budget, cfg.seed))?;
        let mut log = art.jsonl_header("tuning_records").into_bytes();
        write_records(&mut log, &recs)?;
        art.put("tuning_records.jsonl", &log)?;
        Some(table)
    };
    if let Some(t) = &table {
        art.put_json("schedules.json", "schedule_table", serde_json::to_value(t)?)?;
        let ok = t.layers.iter().all(|l| l.choice.cycles_best <= l.choice.cycles_default);
        audits.push(Audit {
            name: "tuning_fallback".into(),
            passed: ok,
            detail: format!("{} of {} layers improved", t.summary.improved, t.summary.layers),
        });
    }

    let input = random_inputs(shape, 1, cfg.seed.wrapping_add(1), 0.0, 1.0);
    let run = stage(
        "run",
        run_end_to_end(&p, accel, table.as_ref(), &input, cfg.power_w, &cfg.host),
    )?;
    let mono = stage("run", execute(&q, &input))?;
    let same = mono.len() == run.outputs.len() && mono.iter().zip(&run.outputs).all(|(a, b)| a.bit_eq(b));
    audits.push(Audit {
        name: "recomposition".into(),
        passed: same,
        detail: format!("{} outputs compared bit for bit", mono.len()),
    });
    let r = &run.report;
    let identity = r.total_ms == r.accel_ms + r.host_ms + r.transfer_ms
        && (r.efficiency * r.power_w - r.gop_per_s).abs() <= 1e-9 * r.gop_per_s.abs().max(1.0);
    audits.push(Audit {
        name: "report_identity".into(),
        passed: identity,
        detail: format!("{:.3} ms, {:.3} GOP/s/W", r.total_ms, r.efficiency),
    });

    let mut dets = art.jsonl_header("detections").into_bytes();
    for d in &run.detections {
        dets.extend(serde_json::to_string(d)?.into_bytes());
        dets.push(b'\n');
    }
    art.put("detections.jsonl", &dets)?;
    let placements = stage("report", compare_placements(&p, accel, table.as_ref(), &cfg.host))?;
    match cfg.emit {
        Emit::Json => {
            art.put_json("run_report.json", "run_report", serde_json::to_value(r)?)?;
            art.put_json("placements.json", "placements", serde_json::to_value(&placements)?)?;
        }
        Emit::Csv => {
            art.put_csv("run_report.csv", "run_report", csv_bytes(|v| r.write_csv(v))?)?;
            let body = csv_bytes(|v| {
                let mut wr = csv::Writer::from_writer(v);
                for row in &placements {
                    wr.serialize(row)?;
                }
                wr.flush().map_err(|e| Error::io("<placements>", e))?;
                Ok(())
            })?;
            art.put_csv("placements.csv", "placements", body)?;
        }
    }
    art.put_json("audit.json", "audit", serde_json::to_value(&audits)?)?;
    let files: Vec<_> = art.files.iter().map(|(n, h)| json!({ "file": n, "sha256": h })).collect();
    art.put_json("manifest.json", "manifest", json!(files))?;

    let failed: Vec<&str> = audits.iter().filter(|a| !a.passed).map(|a| a.name.as_str()).collect();
    if !failed.is_empty() {
        return Err(Error::Audit(failed.join(", ")));
    }
    let files = art.commit()?;
    Ok(PipelineOutcome { files, audits })
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|e| Error::Parse {
        node: path.display().to_string(),
        field: e.path().to_string(),
        message: e.inner().to_string(),
    })
}
