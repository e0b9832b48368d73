use serde::Serialize;

use super::graph::Graph;
use super::op::Op;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct NodeOps {
    pub id: String,
    pub op: &'static str,
    pub ops: u64,
    pub post_process: bool,
}

/// Exact operation counts. A multiply-accumulate counts as two operations.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GopReport {
    /// Operations outside detection post-processing.
    pub main_ops: u64,
    pub post_ops: u64,
    pub per_node: Vec<NodeOps>,
}

impl GopReport {
    pub fn gop(&self) -> f64 {
        self.main_ops as f64 / 1e9
    }

    pub fn post_gop(&self) -> f64 {
        self.post_ops as f64 / 1e9
    }

    pub fn total_ops(&self) -> u64 {
        self.main_ops + self.post_ops
    }
}

pub fn count_gop(g: &Graph) -> GopReport {
    let mut per_node = Vec::with_capacity(g.nodes().len());
    let (mut main_ops, mut post_ops) = (0u64, 0u64);
    for n in g.nodes() {
        let out = &n.output.shape;
        let elems = (out[1] * out[2] * out[3]) as u64;
        let ops = match &n.op {
            Op::Conv2d(c) => {
                let cin = g.spec(&n.inputs[0]).unwrap().channels() as u64;
                2 * elems * (c.kernel[0] * c.kernel[1]) as u64 * cin
            }
            // one comparison per candidate box
            Op::Nms(_) => n
                .inputs
                .iter()
                .map(|i| g.spec(i).unwrap().shape[2] as u64)
                .sum(),
            _ => elems,
        };
        let post = n.op.is_post_process();
        if post {
            post_ops += ops;
        } else {
            main_ops += ops;
        }
        per_node.push(NodeOps {
            id: n.id.clone(),
            op: n.op.name(),
            ops,
            post_process: post,
        });
    }
    GopReport {
        main_ops,
        post_ops,
        per_node,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph_ir::{rescale_input, Activation, GraphBuilder};

    #[test]
    fn conv_mac_count() {
        let mut b = GraphBuilder::new();
        b.input("x", [1, 240, 240, 16]);
        b.conv("c", "x", [3, 3], 1, 32, Activation::None, |_| 0.0).unwrap();
        let r = count_gop(&b.finish(&["c"]).unwrap());
        // independent count: every output element needs kh*kw*cin MACs
        let oracle: u64 = (0..240u64 * 240 * 32).map(|_| 9 * 16 * 2).sum();
        assert_eq!(r.main_ops, oracle);
        assert_eq!(r.main_ops, 530_841_600);
        assert!((r.gop() - 0.5308416).abs() < 1e-12);
    }

    #[test]
    fn empty_graph_is_zero() {
        let mut b = GraphBuilder::new();
        b.input("x", [1, 4, 4, 3]);
        let g = b.finish(&["x"]).unwrap();
        assert_eq!(count_gop(&g).total_ops(), 0);
    }

    #[test]
    fn scales_with_area() {
        let mut b = GraphBuilder::new();
        b.input("x", [1, 640, 640, 3]);
        b.conv("a", "x", [3, 3], 2, 8, Activation::None, |_| 0.0).unwrap();
        b.conv("b", "a", [1, 1], 1, 8, Activation::None, |_| 0.0).unwrap();
        let g = b.finish(&["b"]).unwrap();
        let big = count_gop(&g).main_ops;
        let small = count_gop(&rescale_input(&g, (480, 480)).unwrap()).main_ops;
        assert_eq!(small * 16, big * 9);
    }
}
