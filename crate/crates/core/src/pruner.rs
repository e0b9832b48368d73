//! Structured filter pruning over a connectivity graph of convolutions.
//!
//! Channels of a tensor are tracked as segments, each produced by one conv.
//! Concat lays segments side by side, Add ties the segments of its two
//! inputs index to index. Convs whose channels are tied end up in one
//! group and lose the same channel indices.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph_ir::{count_gop, Bias, ConvParams, Graph, Op, Weights};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Member {
    pub node: String,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConnectivityGroup {
    /// The member conv that comes first in node order.
    pub id: String,
    pub members: Vec<Member>,
    /// `(consumer conv, offset of the group's channels in its input)`.
    pub consumers: Vec<(String, usize)>,
    /// False when the channels reach a graph output or post-processing.
    pub prunable: bool,
}

impl ConnectivityGroup {
    pub fn channels(&self) -> usize {
        self.members[0].end - self.members[0].start
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanStep {
    pub targets: Vec<String>,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PruningPlan {
    pub iterations: Vec<PlanStep>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruningStats {
    pub iteration: usize,
    pub params_before: usize,
    pub params_after: usize,
    pub gop_before: f64,
    pub gop_after: f64,
    /// `1 - params_after / params_before`.
    pub sparsity: f64,
    pub gop_reduction: f64,
}

impl PruningStats {
    fn between(iteration: usize, before: &Graph, after: &Graph) -> Self {
        let (pb, pa) = (before.param_count(), after.param_count());
        let (gb, ga) = (count_gop(before).gop(), count_gop(after).gop());
        PruningStats {
            iteration,
            params_before: pb,
            params_after: pa,
            gop_before: gb,
            gop_after: ga,
            sparsity: 1.0 - pa as f64 / pb as f64,
            gop_reduction: 1.0 - ga / gb,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Seg {
    src: Option<usize>,
    len: usize,
}

struct Sets {
    parent: Vec<usize>,
    fixed: Vec<bool>,
}

impl Sets {
    fn find(&mut self, x: usize) -> usize {
        let mut r = x;
        while self.parent[r] != r {
            r = self.parent[r];
        }
        let mut c = x;
        while self.parent[c] != r {
            let next = self.parent[c];
            self.parent[c] = r;
            c = next;
        }
        r
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = (ra.min(rb), ra.max(rb));
            self.parent[hi] = lo;
            self.fixed[lo] |= self.fixed[hi];
        }
    }

    fn fix(&mut self, a: usize) {
        let r = self.find(a);
        self.fixed[r] = true;
    }
}

/// Group every conv's output channels by the pruning constraints.
pub fn build_connectivity(g: &Graph) -> Result<Vec<ConnectivityGroup>> {
    let convs: Vec<&str> = g
        .nodes()
        .iter()
        .filter(|n| matches!(n.op, Op::Conv2d(_)))
        .map(|n| n.id.as_str())
        .collect();
    let index: HashMap<&str, usize> = convs.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    let mut sets = Sets {
        parent: (0..convs.len()).collect(),
        fixed: vec![false; convs.len()],
    };
    let mut segs: HashMap<&str, Vec<Seg>> = HashMap::new();
    for i in g.inputs() {
        segs.insert(&i.id, vec![Seg { src: None, len: i.spec.channels() }]);
    }
    let mut consumers: Vec<Vec<(String, usize)>> = vec![Vec::new(); convs.len()];
    for n in g.nodes() {
        let ins: Vec<&Vec<Seg>> = n.inputs.iter().map(|i| &segs[i.as_str()]).collect();
        let out = match &n.op {
            Op::Conv2d(_) => {
                let mut off = 0;
                for s in ins[0] {
                    if let Some(u) = s.src {
                        consumers[u].push((n.id.clone(), off));
                    }
                    off += s.len;
                }
                vec![Seg {
                    src: Some(index[n.id.as_str()]),
                    len: n.output.channels(),
                }]
            }
            Op::Concat => ins.iter().flat_map(|s| s.iter().cloned()).collect(),
            Op::Add { .. } => {
                let (a, b) = (ins[0].clone(), ins[1].clone());
                let aligned = a.len() == b.len() && a.iter().zip(&b).all(|(x, y)| x.len == y.len);
                if !aligned {
                    return Err(Error::Pruning(format!(
                        "add `{}` combines channel segments that do not line up",
                        n.id
                    )));
                }
                for (x, y) in a.iter().zip(&b) {
                    match (x.src, y.src) {
                        (Some(p), Some(q)) => sets.union(p, q),
                        (Some(p), None) | (None, Some(p)) => sets.fix(p),
                        (None, None) => {}
                    }
                }
                a
            }
            op if op.is_post_process() => {
                for s in ins.iter().flat_map(|s| s.iter()) {
                    if let Some(u) = s.src {
                        sets.fix(u);
                    }
                }
                vec![Seg { src: None, len: n.output.channels() }]
            }
            _ => ins[0].clone(),
        };
        segs.insert(&n.id, out);
    }
    for o in g.outputs() {
        for s in &segs[o.as_str()] {
            if let Some(u) = s.src {
                sets.fix(u);
            }
        }
    }

    let mut groups: BTreeMap<usize, ConnectivityGroup> = BTreeMap::new();
    for (i, &c) in convs.iter().enumerate() {
        let r = sets.find(i);
        let channels = g.node(c).unwrap().output.channels();
        let grp = groups.entry(r).or_insert_with(|| ConnectivityGroup {
            id: convs[r].to_string(),
            members: Vec::new(),
            consumers: Vec::new(),
            prunable: true,
        });
        grp.members.push(Member {
            node: c.to_string(),
            start: 0,
            end: channels,
        });
        grp.consumers.extend(consumers[i].iter().cloned());
    }
    let mut out: Vec<ConnectivityGroup> = groups
        .into_iter()
        .map(|(r, mut grp)| {
            grp.prunable = !sets.fixed[r];
            grp.consumers.sort();
            grp.consumers.dedup();
            grp
        })
        .collect();
    for grp in &out {
        if grp.members.iter().any(|m| m.end != grp.channels()) {
            return Err(Error::Pruning(format!("group `{}` ties convs of different widths", grp.id)));
        }
    }
    out.sort_by_key(|grp| index[grp.id.as_str()]);
    Ok(out)
}

/// Per-channel sum of filter L1 norms across the group's members.
fn channel_scores(g: &Graph, grp: &ConnectivityGroup) -> Result<Vec<f64>> {
    let c = grp.channels();
    let mut score = vec![0.0f64; c];
    for m in &grp.members {
        let n = g.node(&m.node).unwrap();
        let Some(ConvParams {
            weights: Weights::F32(w),
            ..
        }) = &n.params
        else {
            return Err(Error::Pruning(format!("conv `{}` is not a float conv", m.node)));
        };
        for (i, &v) in w.iter().enumerate() {
            score[i % c] += v.abs() as f64;
        }
    }
    Ok(score)
}

/// Remove the `floor(rate * C)` weakest channels of each targeted group
/// from its members and from every consumer.
pub fn prune_step(
    g: &Graph,
    groups: &[ConnectivityGroup],
    targets: &[String],
    rate: f64,
) -> Result<(Graph, PruningStats)> {
    if !(rate > 0.0 && rate < 1.0) {
        return Err(Error::Pruning(format!("rate {rate} outside (0, 1)")));
    }
    let mut keep: HashMap<String, Vec<usize>> = HashMap::new();
    for t in targets {
        let grp = groups
            .iter()
            .find(|grp| &grp.id == t)
            .ok_or_else(|| Error::Pruning(format!("unknown group `{t}`")))?;
        if !grp.prunable {
            return Err(Error::Pruning(format!("group `{t}` feeds outputs and cannot be pruned")));
        }
        let c = grp.channels();
        let remove = (rate * c as f64).floor() as usize;
        if remove >= c {
            return Err(Error::Pruning(format!("rate {rate} would remove all {c} channels of `{t}`")));
        }
        let score = channel_scores(g, grp)?;
        let mut order: Vec<usize> = (0..c).collect();
        order.sort_by(|&a, &b| score[a].total_cmp(&score[b]).then(a.cmp(&b)));
        let mut kept: Vec<usize> = order[remove..].to_vec();
        kept.sort_unstable();
        for m in &grp.members {
            keep.insert(m.node.clone(), kept.clone());
        }
    }
    let out = apply_keep(g, &keep)?;
    let stats = PruningStats::between(1, g, &out);
    Ok((out, stats))
}

/// Rebuild `g` keeping, for each listed conv, only the given output
/// channels.
fn apply_keep(g: &Graph, keep: &HashMap<String, Vec<usize>>) -> Result<Graph> {
    let mut kept: HashMap<String, Vec<usize>> = HashMap::new();
    for i in g.inputs() {
        kept.insert(i.id.clone(), (0..i.spec.channels()).collect());
    }
    let mut nodes = Vec::with_capacity(g.nodes().len());
    for n in g.nodes() {
        let mut n = n.clone();
        let ins: Vec<&Vec<usize>> = n.inputs.iter().map(|i| &kept[i]).collect();
        let out: Vec<usize> = match &n.op {
            Op::Conv2d(c) => {
                let cin_old = g.spec(&n.inputs[0]).unwrap().channels();
                let cout_old = n.output.channels();
                let out_keep = keep.get(&n.id).cloned().unwrap_or_else(|| (0..cout_old).collect());
                let in_keep = ins[0];
                if in_keep.len() != cin_old || out_keep.len() != cout_old {
                    let Some(ConvParams {
                        weights: Weights::F32(w),
                        bias: Bias::F32(b),
                    }) = &n.params
                    else {
                        return Err(Error::Pruning(format!("conv `{}` is not a float conv", n.id)));
                    };
                    let taps = c.kernel[0] * c.kernel[1];
                    let mut nw = Vec::with_capacity(taps * in_keep.len() * out_keep.len());
                    for t in 0..taps {
                        for &ci in in_keep {
                            let row = (t * cin_old + ci) * cout_old;
                            nw.extend(out_keep.iter().map(|&co| w[row + co]));
                        }
                    }
                    let nb = out_keep.iter().map(|&co| b[co]).collect();
                    n.params = Some(ConvParams {
                        weights: Weights::F32(nw),
                        bias: Bias::F32(nb),
                    });
                    n.output.shape[3] = out_keep.len();
                }
                out_keep
            }
            Op::Concat => {
                let mut v = Vec::new();
                let mut off = 0;
                for (i, k) in n.inputs.iter().zip(&ins) {
                    v.extend(k.iter().map(|&c| c + off));
                    off += g.spec(i).unwrap().channels();
                }
                v
            }
            Op::Add { .. } => {
                if ins[0] != ins[1] {
                    return Err(Error::Pruning(format!("add `{}` inputs were pruned differently", n.id)));
                }
                ins[0].clone()
            }
            op if op.is_post_process() => {
                for (i, k) in n.inputs.iter().zip(&ins) {
                    if k.len() != g.spec(i).unwrap().channels() {
                        return Err(Error::Pruning(format!("post-processing input `{i}` lost channels")));
                    }
                }
                (0..n.output.channels()).collect()
            }
            _ => ins[0].clone(),
        };
        kept.insert(n.id.clone(), out);
        nodes.push(n);
    }
    let (inputs, outputs, _) = g.clone().into_parts();
    Graph::reshaped(inputs, outputs, nodes)
}

pub fn validate_plan(g: &Graph, plan: &PruningPlan) -> Result<()> {
    let groups = build_connectivity(g)?;
    for (i, step) in plan.iterations.iter().enumerate() {
        if !(step.rate > 0.0 && step.rate < 1.0) {
            return Err(Error::Pruning(format!("iteration {}: rate {} outside (0, 1)", i + 1, step.rate)));
        }
        for t in &step.targets {
            match groups.iter().find(|grp| &grp.id == t) {
                Some(grp) if grp.prunable => {}
                Some(_) => return Err(Error::Pruning(format!("iteration {}: group `{t}` is not prunable", i + 1))),
                None => return Err(Error::Pruning(format!("iteration {}: unknown group `{t}`", i + 1))),
            }
        }
    }
    Ok(())
}

/// Apply the plan's iterations in order, rebuilding the connectivity after
/// each. Stats are cumulative against the input graph.
pub fn run_plan(g: &Graph, plan: &PruningPlan) -> Result<(Graph, Vec<PruningStats>)> {
    validate_plan(g, plan)?;
    let mut cur = g.clone();
    let mut stats = Vec::with_capacity(plan.iterations.len());
    for (i, step) in plan.iterations.iter().enumerate() {
        let groups = build_connectivity(&cur)?;
        let (next, _) = prune_step(&cur, &groups, &step.targets, step.rate)?;
        cur = next;
        stats.push(PruningStats::between(i + 1, g, &cur));
    }
    Ok((cur, stats))
}

/// Every prunable group at the same rate for `iterations` rounds.
pub fn uniform_plan(g: &Graph, iterations: usize, rate: f64) -> Result<PruningPlan> {
    let targets: Vec<String> = build_connectivity(g)?
        .into_iter()
        .filter(|grp| grp.prunable)
        .map(|grp| grp.id)
        .collect();
    Ok(PruningPlan {
        iterations: (0..iterations)
            .map(|_| PlanStep {
                targets: targets.clone(),
                rate,
            })
            .collect(),
    })
}

/// CSV with one `iteration,sparsity,gop` row per iteration; iteration 0 is
/// the unpruned graph.
pub fn write_stats_csv(w: impl Write, g: &Graph, stats: &[PruningStats]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["iteration", "sparsity", "gop"])?;
    wr.write_record(["0".to_string(), "0".to_string(), count_gop(g).gop().to_string()])?;
    for s in stats {
        wr.write_record([s.iteration.to_string(), s.sparsity.to_string(), s.gop_after.to_string()])?;
    }
    wr.flush().map_err(|e| Error::io("<pruning stats>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph_ir::{Activation, GraphBuilder, Padding};
    use crate::runtime::{execute, random_inputs};

    fn conv_seq(b: &mut GraphBuilder, id: &str, x: &str, cout: usize, seed: usize) -> String {
        b.conv(id, x, [1, 1], 1, cout, Activation::Relu6, |i| ((i * 7 + seed * 13) % 11) as f32 * 0.1 - 0.5)
            .unwrap()
    }

    #[test]
    fn concat_offsets() {
        let mut b = GraphBuilder::new();
        let x = b.input("x", [1, 4, 4, 3]);
        let a = conv_seq(&mut b, "a", &x, 32, 1);
        let bb = conv_seq(&mut b, "b", &x, 32, 2);
        let cat = b.concat("cat", &[&a, &bb]).unwrap();
        let c = conv_seq(&mut b, "c", &cat, 8, 3);
        let g = b.finish(&[&c]).unwrap();
        let groups = build_connectivity(&g).unwrap();
        assert_eq!(groups.len(), 3);
        assert_eq!(groups[0].consumers, vec![("c".to_string(), 0)]);
        assert_eq!(groups[1].consumers, vec![("c".to_string(), 32)]);
        assert!(!groups[2].prunable);
    }

    #[test]
    fn add_merges_groups() {
        let mut b = GraphBuilder::new();
        let x = b.input("x", [1, 2, 2, 3]);
        let a = conv_seq(&mut b, "a", &x, 4, 1);
        let bb = conv_seq(&mut b, "b", &x, 4, 2);
        let s = b.add("s", &a, &bb).unwrap();
        let c = conv_seq(&mut b, "c", &s, 2, 3);
        let g = b.finish(&[&c]).unwrap();
        let groups = build_connectivity(&g).unwrap();
        assert_eq!(groups.len(), 2);
        assert_eq!(groups[0].members.len(), 2);
        let (p, _) = prune_step(&g, &groups, &["a".into()], 0.5).unwrap();
        assert_eq!(p.node("a").unwrap().output.channels(), 2);
        assert_eq!(p.node("b").unwrap().output.channels(), 2);
        assert_eq!(p.node("c").unwrap().params.as_ref().unwrap().weights.len(), 2 * 2);
    }

    #[test]
    fn rate_bounds() {
        let mut b = GraphBuilder::new();
        let x = b.input("x", [1, 2, 2, 3]);
        let a = conv_seq(&mut b, "a", &x, 4, 1);
        let c = conv_seq(&mut b, "c", &a, 2, 3);
        let g = b.finish(&[&c]).unwrap();
        let groups = build_connectivity(&g).unwrap();
        let (same, st) = prune_step(&g, &groups, &["a".into()], 0.1).unwrap();
        assert_eq!(same, g);
        assert_eq!(st.sparsity, 0.0);
        assert!(prune_step(&g, &groups, &["a".into()], 1.0).is_err());
        assert!(prune_step(&g, &groups, &["zz".into()], 0.5).is_err());
        assert!(prune_step(&g, &groups, &["c".into()], 0.5).is_err());
    }

    #[test]
    fn pruned_channels_with_zero_weights_change_nothing() {
        // channels 1 and 3 of `a` have zero filters, zero bias, so they
        // carry zeros and rank lowest
        let mut b = GraphBuilder::new();
        let x = b.input("x", [1, 5, 5, 3]);
        let a = b
            .conv("a", &x, [3, 3], 1, 4, Activation::Relu6, |i| {
                let co = i % 4;
                if co == 1 || co == 3 || i >= 27 * 4 {
                    0.0
                } else {
                    ((i * 5) % 9) as f32 * 0.1 - 0.3
                }
            })
            .unwrap();
        let p = b.max_pool("p", &a, 2, 2, Padding::Same).unwrap();
        let c = b
            .conv("c", &p, [3, 3], 1, 3, Activation::None, |i| ((i * 3) % 7) as f32 * 0.1 - 0.2)
            .unwrap();
        let g = b.finish(&[&c]).unwrap();
        let groups = build_connectivity(&g).unwrap();
        let (pg, _) = prune_step(&g, &groups, &["a".into()], 0.5).unwrap();
        assert_eq!(pg.node("a").unwrap().output.channels(), 2);
        for t in random_inputs([1, 5, 5, 3], 4, 1, -1.0, 1.0) {
            let y0 = execute(&g, std::slice::from_ref(&t)).unwrap();
            let y1 = execute(&pg, &[t]).unwrap();
            assert!(y0[0].bit_eq(&y1[0]));
        }
    }
}
