//! Per-layer schedule search with simulated cycles as the cost.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::accel::{hex_digest, run, AcceleratorConfig, SimOptions};
use crate::error::{Error, Result};
use crate::graph_ir::{DataType, Graph, Op};
use crate::scheduler::{default_schedule, legal_schedules, lower_conv, ConvDram, ConvLayer, Schedule};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TuningRecord {
    pub fingerprint: String,
    pub schedule: Schedule,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cycles: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
    /// Position in the log; logical so that logs are reproducible.
    pub timestamp: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Tuned,
    Default,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BestChoice {
    pub source: Source,
    pub schedule: Schedule,
    pub cycles_default: u64,
    pub cycles_best: u64,
}

impl BestChoice {
    pub fn improved(&self) -> bool {
        self.cycles_best < self.cycles_default
    }

    /// Fractional cycle reduction against the default schedule.
    pub fn reduction(&self) -> f64 {
        1.0 - self.cycles_best as f64 / self.cycles_default as f64
    }
}

/// Stable identity of a layer on a given accelerator.
pub fn fingerprint(layer: &ConvLayer, cfg: &AcceleratorConfig) -> String {
    let mut text = serde_json::to_string(layer).expect("layer serializes");
    text.push('|');
    text.push_str(&cfg.hash());
    hex_digest(text.as_bytes())
}

/// Legal schedules to try. Everything when it fits in `budget`, otherwise
/// the default plus a seeded sample; a larger budget always yields a
/// superset.
pub fn enumerate_space(layer: &ConvLayer, cfg: &AcceleratorConfig, budget: usize, seed: u64) -> Vec<Schedule> {
    let budget = budget.max(1);
    let all = legal_schedules(layer, cfg);
    if all.len() <= budget {
        return all;
    }
    let def = default_schedule(layer, cfg);
    let mut rest: Vec<Schedule> = all.into_iter().filter(|s| *s != def).collect();
    rest.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    rest.truncate(budget - 1);
    let mut out = vec![def];
    out.extend(rest);
    out
}

/// Simulated cycles of one schedule.
pub fn simulate_cycles(layer: &ConvLayer, cfg: &AcceleratorConfig, schedule: Option<&Schedule>) -> Result<u64> {
    let (dram, _) = ConvDram::contiguous(layer, 0);
    let stream = lower_conv(layer, cfg, schedule, &dram)?;
    let rep = run(
        cfg,
        &stream,
        None,
        SimOptions {
            timing_only: true,
            trace: false,
        },
    )?;
    Ok(rep.total)
}

fn layer_seed(seed: u64, fp: &str) -> u64 {
    seed ^ u64::from_str_radix(&fp[..16], 16).unwrap_or(0)
}

fn choose(def: Schedule, cycles_default: u64, evaluated: &[(Schedule, u64)]) -> BestChoice {
    let best = evaluated.iter().copied().min_by_key(|&(s, c)| (c, s));
    match best {
        Some((schedule, cycles_best)) if cycles_best < cycles_default => BestChoice {
            source: Source::Tuned,
            schedule,
            cycles_default,
            cycles_best,
        },
        _ => BestChoice {
            source: Source::Default,
            schedule: def,
            cycles_default,
            cycles_best: cycles_default,
        },
    }
}

/// Search one layer. Records carry timestamps starting at `t0`.
pub fn tune_layer(
    layer: &ConvLayer,
    cfg: &AcceleratorConfig,
    budget: usize,
    seed: u64,
    t0: u64,
) -> Result<(BestChoice, Vec<TuningRecord>)> {
    let fp = fingerprint(layer, cfg);
    let space = enumerate_space(layer, cfg, budget, layer_seed(seed, &fp));
    let def = default_schedule(layer, cfg);
    let cycles_default = simulate_cycles(layer, cfg, Some(&def))?;
    let results: Vec<Result<u64>> = space
        .par_iter()
        .map(|s| {
            if *s == def {
                Ok(cycles_default)
            } else {
                simulate_cycles(layer, cfg, Some(s))
            }
        })
        .collect();
    let mut records = Vec::with_capacity(space.len());
    let mut ok = Vec::new();
    for (i, (s, r)) in space.iter().zip(results).enumerate() {
        let (cycles, failure) = match r {
            Ok(c) => {
                ok.push((*s, c));
                (Some(c), None)
            }
            Err(e) => (None, Some(e.to_string())),
        };
        records.push(TuningRecord {
            fingerprint: fp.clone(),
            schedule: *s,
            cycles,
            failure,
            timestamp: t0 + i as u64,
        });
    }
    Ok((choose(def, cycles_default, &ok), records))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerChoice {
    pub node: String,
    pub fingerprint: String,
    pub choice: BestChoice,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningSummary {
    pub layers: usize,
    pub distinct_layers: usize,
    pub improved: usize,
    pub fraction_improved: f64,
    pub mean_reduction: f64,
    pub cycles_default: u64,
    pub cycles_best: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleTable {
    pub layers: Vec<LayerChoice>,
    pub summary: TuningSummary,
}

impl ScheduleTable {
    pub fn schedule_for(&self, node: &str) -> Option<Schedule> {
        self.layers.iter().find(|l| l.node == node).map(|l| l.choice.schedule)
    }

    pub fn schedules(&self) -> BTreeMap<String, Schedule> {
        self.layers.iter().map(|l| (l.node.clone(), l.choice.schedule)).collect()
    }

    fn from_layers(layers: Vec<LayerChoice>) -> Self {
        let n = layers.len();
        let distinct = layers
            .iter()
            .map(|l| l.fingerprint.as_str())
            .collect::<std::collections::BTreeSet<_>>()
            .len();
        let improved = layers.iter().filter(|l| l.choice.improved()).count();
        let mean = if n == 0 {
            0.0
        } else {
            layers.iter().map(|l| l.choice.reduction()).sum::<f64>() / n as f64
        };
        let summary = TuningSummary {
            layers: n,
            distinct_layers: distinct,
            improved,
            fraction_improved: if n == 0 { 0.0 } else { improved as f64 / n as f64 },
            mean_reduction: mean,
            cycles_default: layers.iter().map(|l| l.choice.cycles_default).sum(),
            cycles_best: layers.iter().map(|l| l.choice.cycles_best).sum(),
        };
        ScheduleTable { layers, summary }
    }
}

/// The accelerator conv layers of a quantized graph, in node order.
pub fn conv_layers(g: &Graph) -> Result<Vec<(String, ConvLayer)>> {
    g.nodes()
        .iter()
        .filter(|n| matches!(n.op, Op::Conv2d(_)) && n.output.dtype == DataType::I8)
        .map(|n| {
            let spec = g.spec(&n.inputs[0]).unwrap();
            Ok((n.id.clone(), ConvLayer::from_node(n, spec)?))
        })
        .collect()
}

/// Tune every conv layer; identical layers are tuned once.
pub fn tune_graph(
    g: &Graph,
    cfg: &AcceleratorConfig,
    budget: usize,
    seed: u64,
) -> Result<(ScheduleTable, Vec<TuningRecord>)> {
    let mut cache: BTreeMap<String, BestChoice> = BTreeMap::new();
    let mut records = Vec::new();
    let mut layers = Vec::new();
    for (node, layer) in conv_layers(g)? {
        let fp = fingerprint(&layer, cfg);
        let choice = match cache.get(&fp) {
            Some(c) => *c,
            None => {
                let (c, recs) = tune_layer(&layer, cfg, budget, seed, records.len() as u64)?;
                records.extend(recs);
                cache.insert(fp.clone(), c);
                c
            }
        };
        layers.push(LayerChoice {
            node,
            fingerprint: fp,
            choice,
        });
    }
    Ok((ScheduleTable::from_layers(layers), records))
}

/// Rebuild the schedule table from logged records, without simulating.
pub fn replay(g: &Graph, cfg: &AcceleratorConfig, records: &[TuningRecord]) -> Result<ScheduleTable> {
    let mut by_fp: BTreeMap<&str, Vec<&TuningRecord>> = BTreeMap::new();
    for r in records {
        by_fp.entry(r.fingerprint.as_str()).or_default().push(r);
    }
    let mut layers = Vec::new();
    for (node, layer) in conv_layers(g)? {
        let fp = fingerprint(&layer, cfg);
        let recs = by_fp
            .get(fp.as_str())
            .ok_or_else(|| Error::Config(format!("no tuning records for layer `{node}`")))?;
        let def = default_schedule(&layer, cfg);
        let ok: Vec<(Schedule, u64)> = recs.iter().filter_map(|r| r.cycles.map(|c| (r.schedule, c))).collect();
        let cycles_default = ok
            .iter()
            .find(|(s, _)| *s == def)
            .map(|&(_, c)| c)
            .ok_or_else(|| Error::Config(format!("tuning records for `{node}` lack the default schedule")))?;
        layers.push(LayerChoice {
            node,
            fingerprint: fp,
            choice: choose(def, cycles_default, &ok),
        });
    }
    Ok(ScheduleTable::from_layers(layers))
}

pub fn write_records(mut w: impl Write, records: &[TuningRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io("<tuning log>", e))?;
    }
    Ok(())
}

/// Parse a JSON-lines log; lines that are not records (such as a header)
/// must carry a `format` field and are skipped.
pub fn read_records(r: impl BufRead) -> Result<Vec<TuningRecord>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<tuning log>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let v: serde_json::Value = serde_json::from_str(&line)?;
        if v.get("format").is_some() {
            continue;
        }
        out.push(serde_json::from_value(v).map_err(|e| Error::Parse {
            node: format!("tuning log line {}", i + 1),
            field: String::new(),
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantizer::RequantSpec;

    fn layer(m: usize, k: usize, n: usize) -> ConvLayer {
        ConvLayer::matmul(m, k, n, RequantSpec::identity())
    }

    #[test]
    fn single_block_space_has_twelve_variants() {
        let cfg = AcceleratorConfig::ours();
        let space = enumerate_space(&layer(32, 32, 32), &cfg, 1000, 0);
        assert_eq!(space.len(), 12);
        let mut d = space.clone();
        d.dedup();
        assert_eq!(d.len(), 12);
    }

    #[test]
    fn budget_one_is_default() {
        let cfg = AcceleratorConfig::ours();
        let l = layer(256, 512, 256);
        let space = enumerate_space(&l, &cfg, 1, 7);
        assert_eq!(space, vec![default_schedule(&l, &cfg)]);
        let (c, recs) = tune_layer(&l, &cfg, 1, 7, 0).unwrap();
        assert_eq!(c.source, Source::Default);
        assert_eq!(c.cycles_best, c.cycles_default);
        assert_eq!(recs.len(), 1);
    }

    #[test]
    fn larger_budget_is_superset() {
        let cfg = AcceleratorConfig::ours();
        let l = layer(512, 512, 256);
        let small = enumerate_space(&l, &cfg, 10, 3);
        let big = enumerate_space(&l, &cfg, 40, 3);
        assert!(small.iter().all(|s| big.contains(s)));
    }

    #[test]
    fn ties_prefer_smaller_schedule() {
        let def = Schedule::new(2, 2, 2);
        let a = Schedule::new(1, 2, 2);
        let b = Schedule::new(1, 1, 2);
        let c = choose(def, 100, &[(def, 100), (a, 50), (b, 50)]);
        assert_eq!((c.source, c.schedule, c.cycles_best), (Source::Tuned, b, 50));
        let c = choose(def, 100, &[(a, 100), (def, 100)]);
        assert_eq!(c.source, Source::Default);
    }

    #[test]
    fn records_round_trip() {
        let cfg = AcceleratorConfig::ours();
        let (_, recs) = tune_layer(&layer(64, 64, 64), &cfg, 5, 1, 10).unwrap();
        let mut buf = b"{\"format\":\"gemflow-tuning-log\"}\n".to_vec();
        write_records(&mut buf, &recs).unwrap();
        assert_eq!(read_records(&buf[..]).unwrap(), recs);
        assert_eq!(recs[0].timestamp, 10);
    }
}
