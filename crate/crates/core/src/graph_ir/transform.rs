use std::collections::HashMap;

use super::graph::{Graph, GraphInput};
use super::op::{Activation, Op};
use crate::error::{Error, Result};

/// Swap every leaky ReLU conv activation for ReLU6.
pub fn replace_activations(g: &Graph) -> Graph {
    let (inputs, outputs, mut nodes) = g.clone().into_parts();
    for n in &mut nodes {
        if let Op::Conv2d(c) = &mut n.op {
            if matches!(c.activation, Activation::LeakyRelu { .. }) {
                c.activation = Activation::Relu6;
            }
        }
    }
    Graph::new(inputs, outputs, nodes).expect("activation swap keeps the graph valid")
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Smallest input extent multiple that keeps every feature map an exact
/// fraction of the input: the lcm over tensors of the reduced cumulative
/// downsampling numerator.
pub fn downsampling_factor(g: &Graph) -> usize {
    let mut ratio: HashMap<&str, (usize, usize)> =
        g.inputs().iter().map(|i| (i.id.as_str(), (1, 1))).collect();
    let mut required = 1;
    for n in g.nodes() {
        let (mut num, mut den) = n
            .inputs
            .iter()
            .map(|i| ratio[i.as_str()])
            .max_by(|a, b| (a.0 * b.1).cmp(&(b.0 * a.1)))
            .unwrap_or((1, 1));
        let (sn, sd) = n.op.spatial_factor();
        num *= sn;
        den *= sd;
        let d = gcd(num, den);
        num /= d;
        den /= d;
        required = required / gcd(required, num) * num;
        ratio.insert(&n.id, (num, den));
    }
    required
}

/// Re-derive every spatial dimension for a new input size.
pub fn rescale_input(g: &Graph, new_hw: (usize, usize)) -> Result<Graph> {
    let (h, w) = new_hw;
    let multiple = downsampling_factor(g);
    if h == 0 || w == 0 || h % multiple != 0 || w % multiple != 0 {
        return Err(Error::Graph(format!(
            "input size {h}x{w} is not a multiple of the required {multiple}"
        )));
    }
    let (inputs, outputs, nodes) = g.clone().into_parts();
    let inputs: Vec<GraphInput> = inputs
        .into_iter()
        .map(|mut i| {
            i.spec.shape[1] = h;
            i.spec.shape[2] = w;
            i
        })
        .collect();
    Graph::reshaped(inputs, outputs, nodes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph_ir::{GraphBuilder, Padding};

    fn net(act: Activation) -> GraphBuilder {
        let mut b = GraphBuilder::new();
        b.input("x", [1, 64, 64, 3]);
        b.conv("a", "x", [3, 3], 2, 8, act, |_| 0.1).unwrap();
        b.conv("b", "a", [3, 3], 2, 8, Activation::Relu6, |_| 0.1).unwrap();
        b.max_pool("p", "b", 2, 2, Padding::Valid).unwrap();
        b.resize("r", "p", 2).unwrap();
        b.concat("cat", &["r", "b"]).unwrap();
        b
    }

    #[test]
    fn leaky_becomes_relu6_only_where_present() {
        let g = net(Activation::LeakyRelu { alpha: 0.1 }).finish(&["cat"]).unwrap();
        let r = replace_activations(&g);
        assert_eq!(r.nodes().len(), g.nodes().len());
        for n in r.nodes() {
            if let Some(c) = n.conv() {
                assert_eq!(c.activation, Activation::Relu6);
            }
        }
        assert_eq!(replace_activations(&r), r);
        let plain = net(Activation::None).finish(&["cat"]).unwrap();
        assert_eq!(replace_activations(&plain), plain);
    }

    #[test]
    fn factor_accounts_for_resize() {
        let g = net(Activation::None).finish(&["cat"]).unwrap();
        assert_eq!(downsampling_factor(&g), 8);
    }

    #[test]
    fn rescale_scales_maps_and_checks_divisibility() {
        let g = net(Activation::None).finish(&["cat"]).unwrap();
        let r = rescale_input(&g, (48, 48)).unwrap();
        assert_eq!(r.spec("b").unwrap().shape, [1, 12, 12, 8]);
        assert_eq!(r.spec("cat").unwrap().shape, [1, 12, 12, 16]);
        assert_eq!(rescale_input(&g, (64, 64)).unwrap(), g);
        let err = rescale_input(&g, (60, 64)).unwrap_err();
        assert!(err.to_string().contains("multiple of the required 8"), "{err}");
    }
}
