use gemflow::graph_ir::{Activation, Graph, GraphBuilder, Op, Weights};
use gemflow::models::{yolov7_tiny, yolov7_tiny_plan, PLAN_RATE_40};
use gemflow::pruner::{build_connectivity, prune_step, run_plan, PruningPlan};
use gemflow::runtime::{execute, random_inputs};
use proptest::prelude::*;

fn weights(g: &Graph, id: &str) -> Vec<f32> {
    match &g.node(id).unwrap().params.as_ref().unwrap().weights {
        Weights::F32(w) => w.clone(),
        _ => unreachable!(),
    }
}

/// Parameter count from weight and bias tensor sizes.
fn direct_params(g: &Graph) -> usize {
    g.nodes()
        .iter()
        .filter_map(|n| n.params.as_ref())
        .map(|p| p.weights.len() + p.bias.len())
        .sum()
}

fn pseudo(seed: usize) -> impl FnMut(usize) -> f32 {
    move |i| (((i + 1) * 2654435761 + seed * 40503) % 1000) as f32 / 1000.0 - 0.5
}

#[test]
fn quarter_of_64_filters() {
    let mut b = GraphBuilder::new();
    let x = b.input("x", [1, 4, 4, 8]);
    let a = b.conv("a", &x, [3, 3], 1, 64, Activation::Relu6, pseudo(1)).unwrap();
    let c = b.conv("c", &a, [1, 1], 1, 10, Activation::None, pseudo(2)).unwrap();
    let g = b.finish(&[&c]).unwrap();
    let groups = build_connectivity(&g).unwrap();
    assert_eq!(groups.len(), 2);
    assert_eq!(groups[0].consumers, vec![("c".to_string(), 0)]);
    let (p, st) = prune_step(&g, &groups, &["a".into()], 0.25).unwrap();
    assert_eq!(p.node("a").unwrap().output.channels(), 48);
    assert_eq!(weights(&p, "c").len(), 48 * 10);
    assert_eq!(st.params_after, direct_params(&p));
    assert_eq!(st.params_before, direct_params(&g));
    assert!((st.sparsity - (1.0 - st.params_after as f64 / st.params_before as f64)).abs() < 1e-15);
}

/// convA and convB (32 each) concatenated into convC; channel 5 of the
/// pruned producer has an all-zero filter so it ranks last.
fn concat_case(zero_in: &str) -> (Graph, Graph) {
    let cin = 3;
    let zero5 = |name: &'static str| {
        let mut f = pseudo(name.len());
        let hit = name == zero_in;
        move |i: usize| {
            let v = f(i);
            if hit && i < 9 * cin * 32 && i % 32 == 5 {
                0.0
            } else {
                v + 0.6f32.copysign(v)
            }
        }
    };
    let mut b = GraphBuilder::new();
    let x = b.input("x", [1, 6, 6, cin]);
    let a = b.conv("A", &x, [3, 3], 1, 32, Activation::Relu6, zero5("A")).unwrap();
    let bb = b.conv("B", &x, [3, 3], 1, 32, Activation::Relu6, zero5("BB")).unwrap();
    let cat = b.concat("cat", &[&a, &bb]).unwrap();
    let c = b.conv("C", &cat, [1, 1], 1, 4, Activation::None, pseudo(9)).unwrap();
    let g = b.finish(&[&c]).unwrap();
    let groups = build_connectivity(&g).unwrap();
    let target = if zero_in == "A" { "A" } else { "B" };
    let (p, _) = prune_step(&g, &groups, &[target.into()], 1.0 / 32.0).unwrap();
    (g, p)
}

fn without_input_row(w: &[f32], cout: usize, row: usize) -> Vec<f32> {
    w.chunks(cout)
        .enumerate()
        .filter(|(i, _)| *i != row)
        .flat_map(|(_, r)| r.iter().copied())
        .collect()
}

#[test]
fn concat_offsets_route_removed_channels() {
    let (g, p) = concat_case("A");
    let groups = build_connectivity(&g).unwrap();
    assert_eq!(groups[0].consumers, vec![("C".to_string(), 0)]);
    assert_eq!(groups[1].consumers, vec![("C".to_string(), 32)]);
    assert_eq!(weights(&p, "C"), without_input_row(&weights(&g, "C"), 4, 5));

    let (g, p) = concat_case("BB");
    assert_eq!(p.node("B").unwrap().output.channels(), 31);
    assert_eq!(weights(&p, "C"), without_input_row(&weights(&g, "C"), 4, 37));
}

#[test]
fn add_tied_group_drops_same_indices() {
    let mut b = GraphBuilder::new();
    let x = b.input("x", [1, 3, 3, 2]);
    let a = b.conv("a", &x, [1, 1], 1, 4, Activation::Relu6, pseudo(3)).unwrap();
    let bb = b.conv("b", &x, [1, 1], 1, 4, Activation::Relu6, pseudo(4)).unwrap();
    let s = b.add("s", &a, &bb).unwrap();
    let c = b.conv("c", &s, [1, 1], 1, 2, Activation::None, pseudo(5)).unwrap();
    let g = b.finish(&[&c]).unwrap();

    // brute force: summed absolute weights per output channel
    let wa = weights(&g, "a");
    let wb = weights(&g, "b");
    let mut score = [0.0f64; 4];
    for co in 0..4 {
        for ci in 0..2 {
            score[co] += wa[ci * 4 + co].abs() as f64 + wb[ci * 4 + co].abs() as f64;
        }
    }
    let mut order = [0usize, 1, 2, 3];
    order.sort_by(|&i, &j| score[i].partial_cmp(&score[j]).unwrap().then(i.cmp(&j)));
    let mut kept = order[2..].to_vec();
    kept.sort();

    let groups = build_connectivity(&g).unwrap();
    let (p, _) = prune_step(&g, &groups, &[groups[0].id.clone()], 0.5).unwrap();
    for (id, w) in [("a", &wa), ("b", &wb)] {
        let expect: Vec<f32> = (0..2).flat_map(|ci| kept.iter().map(move |&co| w[ci * 4 + co])).collect();
        assert_eq!(weights(&p, id), expect, "{id}");
    }
}

#[test]
fn misaligned_add_is_rejected() {
    let mut b = GraphBuilder::new();
    let x = b.input("x", [1, 2, 2, 8]);
    let a = b.conv("a", &x, [1, 1], 1, 4, Activation::None, pseudo(1)).unwrap();
    let c = b.conv("c", &x, [1, 1], 1, 4, Activation::None, pseudo(2)).unwrap();
    let cat = b.concat("cat", &[&a, &c]).unwrap();
    let s = b.add("s", &cat, &x).unwrap();
    let g = b.finish(&[&s]).unwrap();
    assert!(build_connectivity(&g).is_err());
}

#[test]
fn empty_plan_is_identity() {
    let g = yolov7_tiny(64, 0).unwrap();
    let (p, stats) = run_plan(&g, &PruningPlan::default()).unwrap();
    assert_eq!(p, g);
    assert!(stats.is_empty());
}

#[test]
fn forty_percent_plan() {
    let g = yolov7_tiny(160, 0).unwrap();
    let plan = yolov7_tiny_plan(&g, PLAN_RATE_40).unwrap();
    assert_eq!(plan.iterations.len(), 14);
    let (p, stats) = run_plan(&g, &plan).unwrap();
    let last = stats.last().unwrap();
    assert!((0.39..=0.41).contains(&last.sparsity), "{}", last.sparsity);
    assert_eq!(last.params_after, p.param_count());
    assert!(stats.windows(2).all(|w| w[1].sparsity >= w[0].sparsity));
    // detection heads keep their width
    for d in ["det3", "det4", "det5"] {
        assert_eq!(p.node(d).unwrap().output.channels(), 255);
    }
    let y = execute(&p, &random_inputs([1, 160, 160, 3], 1, 0, 0.0, 1.0)).unwrap();
    assert_eq!(y.len(), 1);
}

fn random_net(widths: Vec<usize>, kinds: Vec<u8>) -> Graph {
    let mut b = GraphBuilder::new();
    let mut x = b.input("x", [1, 6, 6, 3]);
    let mut prev: Option<String> = None;
    for (i, (w, k)) in widths.into_iter().zip(kinds).enumerate() {
        let c = b.conv(&format!("c{i}"), &x, [3, 3], 1, w, Activation::Relu6, pseudo(i)).unwrap();
        x = match (k % 3, &prev) {
            (1, Some(p)) => {
                let q = b.conv(&format!("q{i}"), p, [1, 1], 1, w, Activation::None, pseudo(i + 50)).unwrap();
                b.add(&format!("s{i}"), &c, &q).unwrap()
            }
            (2, Some(p)) => b.concat(&format!("k{i}"), &[&c, p]).unwrap(),
            _ => c,
        };
        prev = Some(x.clone());
    }
    let out = b.conv("out", &x, [1, 1], 1, 5, Activation::None, pseudo(99)).unwrap();
    b.finish(&[&out]).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn pruned_graphs_stay_valid(
        widths in prop::collection::vec(2usize..12, 1..5),
        kinds in prop::collection::vec(0u8..3, 5),
        rate in 0.05f64..0.9,
    ) {
        let g = random_net(widths, kinds);
        let groups = build_connectivity(&g).unwrap();
        // every conv sits in exactly one group
        let mut members: Vec<&str> = groups.iter().flat_map(|gr| gr.members.iter().map(|m| m.node.as_str())).collect();
        members.sort();
        let convs = g.nodes().iter().filter(|n| matches!(n.op, Op::Conv2d(_))).count();
        prop_assert_eq!(members.len(), convs);
        members.dedup();
        prop_assert_eq!(members.len(), convs);

        let targets: Vec<String> = groups.iter().filter(|gr| gr.prunable).map(|gr| gr.id.clone()).collect();
        let (p, st) = prune_step(&g, &groups, &targets, rate).unwrap();
        prop_assert_eq!(st.params_after, direct_params(&p));
        prop_assert!(st.params_after <= st.params_before);
        for gr in &groups {
            let c = gr.channels();
            let expect = if gr.prunable { c - (rate * c as f64).floor() as usize } else { c };
            for m in &gr.members {
                prop_assert_eq!(p.node(&m.node).unwrap().output.channels(), expect);
            }
        }
        let y = execute(&p, &random_inputs([1, 6, 6, 3], 1, 1, -1.0, 1.0)).unwrap();
        prop_assert_eq!(y[0].shape, [1, 6, 6, 5]);
    }
}
