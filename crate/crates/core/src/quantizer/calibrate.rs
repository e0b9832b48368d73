use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph_ir::Graph;
use crate::runtime::{execute_observed, Tensor};

/// Width given to ranges that collapse to a single point.
pub const DEGENERATE_WIDTH: f32 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorRange {
    #[serde(with = "crate::decimal")]
    pub min: f32,
    #[serde(with = "crate::decimal")]
    pub max: f32,
}

impl TensorRange {
    fn merge(self, other: TensorRange) -> TensorRange {
        TensorRange {
            min: self.min.min(other.min),
            max: self.max.max(other.max),
        }
    }
}

/// Observed value ranges per tensor id, zero-included.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationStats {
    pub ranges: BTreeMap<String, TensorRange>,
}

impl CalibrationStats {
    pub fn get(&self, id: &str) -> Option<TensorRange> {
        self.ranges.get(id).copied()
    }

    fn merge(mut self, other: CalibrationStats) -> CalibrationStats {
        for (k, r) in other.ranges {
            self.ranges
                .entry(k)
                .and_modify(|e| *e = e.merge(r))
                .or_insert(r);
        }
        self
    }
}

/// Run every sample through the f32 reference executor and collect the
/// range of each float tensor.
pub fn calibrate(g: &Graph, samples: &[Tensor]) -> Result<CalibrationStats> {
    if samples.is_empty() {
        return Err(Error::Quantization("calibration needs at least one sample".into()));
    }
    let per_sample: Vec<CalibrationStats> = samples
        .par_iter()
        .map(|s| {
            let mut stats = CalibrationStats::default();
            execute_observed(g, std::slice::from_ref(s), |id, t| {
                if let Some((lo, hi)) = t.range() {
                    stats.ranges.insert(id.to_string(), TensorRange { min: lo, max: hi });
                }
            })?;
            Ok(stats)
        })
        .collect::<Result<_>>()?;
    let mut stats = per_sample
        .into_iter()
        .reduce(CalibrationStats::merge)
        .unwrap_or_default();
    for r in stats.ranges.values_mut() {
        r.min = r.min.min(0.0);
        r.max = r.max.max(0.0);
        if r.max == r.min {
            r.max = r.min + DEGENERATE_WIDTH;
        }
    }
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph_ir::{GraphBuilder, Op};

    fn identity_graph() -> Graph {
        let mut b = GraphBuilder::new();
        b.input("x", [1, 1, 1, 2]);
        b.op("s", Op::Sigmoid, &["x"]).unwrap();
        b.finish(&["s"]).unwrap()
    }

    #[test]
    fn single_and_running_ranges() {
        let g = identity_graph();
        let one = calibrate(&g, &[Tensor::f32([1, 1, 1, 2], vec![-1.5, 2.0])]).unwrap();
        assert_eq!(one.get("x").unwrap(), TensorRange { min: -1.5, max: 2.0 });
        let two = calibrate(
            &g,
            &[
                Tensor::f32([1, 1, 1, 2], vec![-1.0, 0.5]),
                Tensor::f32([1, 1, 1, 2], vec![-0.2, 3.0]),
            ],
        )
        .unwrap();
        assert_eq!(two.get("x").unwrap(), TensorRange { min: -1.0, max: 3.0 });
    }

    #[test]
    fn zero_is_included_and_points_widened() {
        let g = identity_graph();
        let s = calibrate(&g, &[Tensor::f32([1, 1, 1, 2], vec![0.0, 0.0])]).unwrap();
        assert_eq!(s.get("x").unwrap(), TensorRange { min: 0.0, max: DEGENERATE_WIDTH });
        let s = calibrate(&g, &[Tensor::f32([1, 1, 1, 2], vec![1.0, 2.0])]).unwrap();
        assert_eq!(s.get("x").unwrap().min, 0.0);
        assert!(calibrate(&g, &[]).is_err());
    }

    #[test]
    fn stats_json_round_trip() {
        let g = identity_graph();
        let s = calibrate(&g, &[Tensor::f32([1, 1, 1, 2], vec![-0.1, 0.3])]).unwrap();
        let text = serde_json::to_string(&s).unwrap();
        assert!(text.contains("\"-0.1\""), "{text}");
        assert_eq!(serde_json::from_str::<CalibrationStats>(&text).unwrap(), s);
    }
}
