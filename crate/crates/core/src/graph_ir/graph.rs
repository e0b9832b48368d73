use std::collections::{BTreeMap, HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use super::op::{infer_shape, Activation, Conv2d, Op, Padding, Pool2d};
use super::types::{DataType, Shape, TensorSpec};
use crate::error::{Error, Result};

/// Conv weights in `[kh, kw, cin, cout]` order.
#[derive(Debug, Clone, PartialEq)]
pub enum Weights {
    F32(Vec<f32>),
    I8(Vec<i8>),
}

impl Weights {
    pub fn len(&self) -> usize {
        match self {
            Weights::F32(v) => v.len(),
            Weights::I8(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dtype(&self) -> DataType {
        match self {
            Weights::F32(_) => DataType::F32,
            Weights::I8(_) => DataType::I8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Bias {
    F32(Vec<f32>),
    I32(Vec<i32>),
}

impl Bias {
    pub fn len(&self) -> usize {
        match self {
            Bias::F32(v) => v.len(),
            Bias::I32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams {
    pub weights: Weights,
    /// Always `cout` long; zeros when the conv has no bias.
    pub bias: Bias,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub id: String,
    pub op: Op,
    pub inputs: Vec<String>,
    pub output: TensorSpec,
    pub params: Option<ConvParams>,
}

impl Node {
    pub fn conv(&self) -> Option<&Conv2d> {
        match &self.op {
            Op::Conv2d(c) => Some(c),
            _ => None,
        }
    }

    /// Number of learned scalars (weights plus bias entries).
    pub fn param_count(&self) -> usize {
        match (&self.op, &self.params) {
            (Op::Conv2d(c), Some(p)) => {
                p.weights.len() + if c.has_bias { p.bias.len() } else { 0 }
            }
            _ => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphInput {
    pub id: String,
    pub spec: TensorSpec,
}

/// A validated, topologically ordered operator graph. Every node produces
/// exactly one tensor, named by the node id.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    inputs: Vec<GraphInput>,
    outputs: Vec<String>,
    nodes: Vec<Node>,
    index: HashMap<String, usize>,
}

impl Graph {
    /// Validate and topologically sort. Output specs must match the shape
    /// rules exactly.
    pub fn new(inputs: Vec<GraphInput>, outputs: Vec<String>, nodes: Vec<Node>) -> Result<Graph> {
        let mut producers: HashMap<&str, ()> = HashMap::new();
        for i in &inputs {
            i.spec.validate(&i.id)?;
            if producers.insert(&i.id, ()).is_some() {
                return Err(Error::Graph(format!("tensor id `{}` defined twice", i.id)));
            }
        }
        for n in &nodes {
            if producers.insert(&n.id, ()).is_some() {
                return Err(Error::Graph(format!("tensor id `{}` defined twice", n.id)));
            }
        }
        for n in &nodes {
            for inp in &n.inputs {
                if !producers.contains_key(inp.as_str()) {
                    return Err(Error::DanglingRef {
                        node: n.id.clone(),
                        input: inp.clone(),
                    });
                }
            }
        }
        for o in &outputs {
            if !producers.contains_key(o.as_str()) {
                return Err(Error::Graph(format!("graph output `{o}` has no producer")));
            }
        }

        let order = topo_order(&nodes)?;
        let mut sorted: Vec<Option<Node>> = nodes.into_iter().map(Some).collect();
        let nodes: Vec<Node> = order.into_iter().map(|i| sorted[i].take().unwrap()).collect();
        let index = nodes
            .iter()
            .enumerate()
            .map(|(i, n)| (n.id.clone(), i))
            .collect();
        let g = Graph {
            inputs,
            outputs,
            nodes,
            index,
        };
        for n in &g.nodes {
            g.check_node(n)?;
        }
        Ok(g)
    }

    fn check_node(&self, n: &Node) -> Result<()> {
        n.output.validate(&n.id)?;
        let in_shapes: Vec<Shape> = n
            .inputs
            .iter()
            .map(|i| self.spec(i).unwrap().shape)
            .collect();
        let expect = infer_shape(&n.op, &in_shapes, Some(n.output.channels())).map_err(|message| {
            Error::Shape {
                node: n.id.clone(),
                message,
            }
        })?;
        if expect != n.output.shape {
            return Err(Error::Shape {
                node: n.id.clone(),
                message: format!("declared output {:?} but rule gives {:?}", n.output.shape, expect),
            });
        }
        self.check_dtypes(n)?;
        if let Op::Conv2d(c) = &n.op {
            let p = n.params.as_ref().ok_or_else(|| Error::Graph(format!(
                "conv `{}` has no weights",
                n.id
            )))?;
            let cin = in_shapes[0][3];
            let cout = n.output.channels();
            let want = c.kernel[0] * c.kernel[1] * cin * cout;
            if p.weights.len() != want || p.bias.len() != cout {
                return Err(Error::Shape {
                    node: n.id.clone(),
                    message: format!(
                        "weights hold {} values / bias {} but [{},{},{},{}] needs {want} / {cout}",
                        p.weights.len(),
                        p.bias.len(),
                        c.kernel[0],
                        c.kernel[1],
                        cin,
                        cout
                    ),
                });
            }
        } else if n.params.is_some() {
            return Err(Error::Graph(format!("`{}` ({}) cannot carry weights", n.id, n.op.name())));
        }
        Ok(())
    }

    fn check_dtypes(&self, n: &Node) -> Result<()> {
        let in_types: Vec<DataType> = n.inputs.iter().map(|i| self.spec(i).unwrap().dtype).collect();
        let bad = |msg: String| Err(Error::Graph(format!("node `{}`: {msg}", n.id)));
        let out = n.output.dtype;
        match &n.op {
            Op::Quantize => {
                if in_types[0] != DataType::F32 || out != DataType::I8 {
                    return bad("quantize maps f32 to i8".into());
                }
            }
            Op::Dequantize => {
                if in_types[0] != DataType::I8 || out != DataType::F32 {
                    return bad("dequantize maps i8 to f32".into());
                }
            }
            Op::Sigmoid | Op::BoxDecode(_) | Op::Nms(_) => {
                if in_types.iter().any(|&t| t != DataType::F32) || out != DataType::F32 {
                    return bad(format!("{} runs in f32 only", n.op.name()));
                }
            }
            op => {
                if in_types.iter().any(|&t| t != out) {
                    return bad(format!("{} inputs {in_types:?} differ from output {out:?}", op.name()));
                }
                if out == DataType::I8 {
                    match op {
                        Op::Conv2d(c) => {
                            if c.weight_qparams.is_none() || c.requant.is_none() {
                                return bad("quantized conv needs weight qparams and requant".into());
                            }
                            let ok = matches!(
                                n.params.as_ref().map(|p| (&p.weights, &p.bias)),
                                Some((Weights::I8(_), super::graph::Bias::I32(_)))
                            );
                            if !ok {
                                return bad("quantized conv needs i8 weights and i32 bias".into());
                            }
                        }
                        Op::Add { requant } if requant.is_none() => {
                            return bad("quantized add needs a requant spec".into());
                        }
                        _ => {}
                    }
                } else if out == DataType::F32 {
                    if let Some(p) = &n.params {
                        if !matches!((&p.weights, &p.bias), (Weights::F32(_), Bias::F32(_))) {
                            return bad("f32 conv needs f32 weights and bias".into());
                        }
                    }
                } else {
                    return bad(format!("unsupported tensor type {out:?}"));
                }
            }
        }
        Ok(())
    }

    pub fn inputs(&self) -> &[GraphInput] {
        &self.inputs
    }

    pub fn outputs(&self) -> &[String] {
        &self.outputs
    }

    /// Nodes in topological order.
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: &str) -> Option<&Node> {
        self.index.get(id).map(|&i| &self.nodes[i])
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Spec of any tensor: a graph input or a node output.
    pub fn spec(&self, id: &str) -> Option<&TensorSpec> {
        self.node(id)
            .map(|n| &n.output)
            .or_else(|| self.inputs.iter().find(|i| i.id == id).map(|i| &i.spec))
    }

    /// Map from tensor id to the nodes consuming it, in topological order.
    pub fn consumers(&self) -> BTreeMap<&str, Vec<&Node>> {
        let mut map: BTreeMap<&str, Vec<&Node>> = BTreeMap::new();
        for n in &self.nodes {
            for i in &n.inputs {
                map.entry(i.as_str()).or_default().push(n);
            }
        }
        map
    }

    pub fn param_count(&self) -> usize {
        self.nodes.iter().map(Node::param_count).sum()
    }

    pub fn into_parts(self) -> (Vec<GraphInput>, Vec<String>, Vec<Node>) {
        (self.inputs, self.outputs, self.nodes)
    }

    /// Rebuild with every output spec re-derived from the shape rules,
    /// keeping dtypes and quantization parameters.
    pub fn reshaped(inputs: Vec<GraphInput>, outputs: Vec<String>, nodes: Vec<Node>) -> Result<Graph> {
        let order = topo_order(&nodes)?;
        let mut shapes: HashMap<String, Shape> =
            inputs.iter().map(|i| (i.id.clone(), i.spec.shape)).collect();
        let mut slots: Vec<Option<Node>> = nodes.into_iter().map(Some).collect();
        let mut sorted = Vec::with_capacity(slots.len());
        for i in order {
            let mut n = slots[i].take().unwrap();
            let in_shapes: Vec<Shape> = n
                .inputs
                .iter()
                .map(|i| {
                    shapes.get(i).copied().ok_or_else(|| Error::DanglingRef {
                        node: n.id.clone(),
                        input: i.clone(),
                    })
                })
                .collect::<Result<_>>()?;
            let shape = infer_shape(&n.op, &in_shapes, Some(n.output.channels())).map_err(|message| {
                Error::Shape {
                    node: n.id.clone(),
                    message,
                }
            })?;
            n.output.shape = shape;
            shapes.insert(n.id.clone(), shape);
            sorted.push(n);
        }
        Graph::new(inputs, outputs, sorted)
    }
}

fn topo_order(nodes: &[Node]) -> Result<Vec<usize>> {
    let ids: HashMap<&str, usize> = nodes.iter().enumerate().map(|(i, n)| (n.id.as_str(), i)).collect();
    let mut indegree = vec![0usize; nodes.len()];
    let mut users: Vec<Vec<usize>> = vec![Vec::new(); nodes.len()];
    for (i, n) in nodes.iter().enumerate() {
        for inp in &n.inputs {
            if let Some(&p) = ids.get(inp.as_str()) {
                indegree[i] += 1;
                users[p].push(i);
            }
        }
    }
    // ready queue in declaration order keeps the sort stable
    let mut ready: VecDeque<usize> = (0..nodes.len()).filter(|&i| indegree[i] == 0).collect();
    let mut order = Vec::with_capacity(nodes.len());
    while let Some(i) = ready.pop_front() {
        order.push(i);
        for &u in &users[i] {
            indegree[u] -= 1;
            if indegree[u] == 0 {
                ready.push_back(u);
            }
        }
    }
    if order.len() != nodes.len() {
        let stuck: Vec<&str> = (0..nodes.len())
            .filter(|&i| indegree[i] > 0)
            .map(|i| nodes[i].id.as_str())
            .collect();
        return Err(Error::Graph(format!("cycle through nodes {stuck:?}")));
    }
    Ok(order)
}

/// Incremental construction of f32 graphs with shapes inferred on the fly.
#[derive(Debug, Default)]
pub struct GraphBuilder {
    inputs: Vec<GraphInput>,
    nodes: Vec<Node>,
    shapes: HashMap<String, Shape>,
}

impl GraphBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn input(&mut self, id: &str, shape: Shape) -> String {
        self.inputs.push(GraphInput {
            id: id.to_string(),
            spec: TensorSpec::f32(shape),
        });
        self.shapes.insert(id.to_string(), shape);
        id.to_string()
    }

    pub fn shape(&self, id: &str) -> Shape {
        self.shapes[id]
    }

    fn push(&mut self, id: &str, op: Op, inputs: Vec<String>, channels: Option<usize>, params: Option<ConvParams>) -> Result<String> {
        let in_shapes: Vec<Shape> = inputs
            .iter()
            .map(|i| {
                self.shapes.get(i).copied().ok_or_else(|| Error::DanglingRef {
                    node: id.to_string(),
                    input: i.clone(),
                })
            })
            .collect::<Result<_>>()?;
        let shape = infer_shape(&op, &in_shapes, channels).map_err(|message| Error::Shape {
            node: id.to_string(),
            message,
        })?;
        self.shapes.insert(id.to_string(), shape);
        self.nodes.push(Node {
            id: id.to_string(),
            op,
            inputs,
            output: TensorSpec::f32(shape),
            params,
        });
        Ok(id.to_string())
    }

    /// Conv with explicit `[kh, kw, cin, cout]` weights and `cout` biases.
    #[allow(clippy::too_many_arguments)]
    pub fn conv_with(
        &mut self,
        id: &str,
        input: &str,
        kernel: [usize; 2],
        stride: usize,
        padding: Padding,
        activation: Activation,
        weights: Vec<f32>,
        bias: Vec<f32>,
    ) -> Result<String> {
        let cout = bias.len();
        let op = Op::Conv2d(Conv2d::new(kernel, stride, padding, activation));
        self.push(
            id,
            op,
            vec![input.to_string()],
            Some(cout),
            Some(ConvParams {
                weights: Weights::F32(weights),
                bias: Bias::F32(bias),
            }),
        )
    }

    /// Conv whose weights come from `init(index)` over the flattened
    /// `[kh, kw, cin, cout]` tensor; biases from `bias_init(c)`.
    #[allow(clippy::too_many_arguments)]
    pub fn conv(
        &mut self,
        id: &str,
        input: &str,
        kernel: [usize; 2],
        stride: usize,
        cout: usize,
        activation: Activation,
        mut init: impl FnMut(usize) -> f32,
    ) -> Result<String> {
        let cin = self.shapes.get(input).map(|s| s[3]).ok_or_else(|| Error::DanglingRef {
            node: id.to_string(),
            input: input.to_string(),
        })?;
        let n = kernel[0] * kernel[1] * cin * cout;
        let weights: Vec<f32> = (0..n).map(&mut init).collect();
        let bias: Vec<f32> = (0..cout).map(|c| init(n + c)).collect();
        self.conv_with(id, input, kernel, stride, Padding::Same, activation, weights, bias)
    }

    pub fn max_pool(&mut self, id: &str, input: &str, kernel: usize, stride: usize, padding: Padding) -> Result<String> {
        self.push(
            id,
            Op::MaxPool2d(Pool2d {
                kernel,
                stride,
                padding,
            }),
            vec![input.to_string()],
            None,
            None,
        )
    }

    pub fn resize(&mut self, id: &str, input: &str, factor: usize) -> Result<String> {
        self.push(id, Op::ResizeNearest { factor }, vec![input.to_string()], None, None)
    }

    pub fn concat(&mut self, id: &str, inputs: &[&str]) -> Result<String> {
        self.push(id, Op::Concat, inputs.iter().map(|s| s.to_string()).collect(), None, None)
    }

    pub fn add(&mut self, id: &str, a: &str, b: &str) -> Result<String> {
        self.push(id, Op::Add { requant: None }, vec![a.to_string(), b.to_string()], None, None)
    }

    pub fn op(&mut self, id: &str, op: Op, inputs: &[&str]) -> Result<String> {
        self.push(id, op, inputs.iter().map(|s| s.to_string()).collect(), None, None)
    }

    pub fn finish(self, outputs: &[&str]) -> Result<Graph> {
        Graph::new(
            self.inputs,
            outputs.iter().map(|s| s.to_string()).collect(),
            self.nodes,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> GraphBuilder {
        let mut b = GraphBuilder::new();
        b.input("x", [1, 8, 8, 3]);
        b
    }

    #[test]
    fn builder_infers_shapes() {
        let mut b = small();
        b.conv("c", "x", [3, 3], 1, 4, Activation::None, |_| 0.1).unwrap();
        let g = b.finish(&["c"]).unwrap();
        assert_eq!(g.nodes().len(), 1);
        assert_eq!(g.spec("c").unwrap().shape, [1, 8, 8, 4]);
        assert_eq!(g.param_count(), 3 * 3 * 3 * 4 + 4);
    }

    #[test]
    fn rejects_dangling_and_duplicate() {
        let mut b = small();
        b.conv("c", "x", [1, 1], 1, 4, Activation::None, |_| 0.1).unwrap();
        let (inputs, outputs, mut nodes) = b.finish(&["c"]).unwrap().into_parts();
        nodes[0].inputs = vec!["nope".into()];
        assert!(matches!(
            Graph::new(inputs.clone(), outputs.clone(), nodes.clone()),
            Err(Error::DanglingRef { .. })
        ));
        nodes[0].inputs = vec!["x".into()];
        let mut dup = nodes.clone();
        dup.push(nodes[0].clone());
        assert!(Graph::new(inputs, outputs, dup).is_err());
    }

    #[test]
    fn rejects_wrong_declared_shape() {
        let mut b = small();
        b.conv("c", "x", [3, 3], 1, 4, Activation::None, |_| 0.1).unwrap();
        let (inputs, outputs, mut nodes) = b.finish(&["c"]).unwrap().into_parts();
        nodes[0].output.shape = [1, 7, 8, 4];
        assert!(matches!(Graph::new(inputs, outputs, nodes), Err(Error::Shape { .. })));
    }

    #[test]
    fn rejects_cycles_and_sorts_out_of_order_nodes() {
        let mut b = small();
        b.conv("a", "x", [1, 1], 1, 3, Activation::None, |_| 0.1).unwrap();
        b.conv("b", "a", [1, 1], 1, 3, Activation::None, |_| 0.1).unwrap();
        let (inputs, outputs, mut nodes) = b.finish(&["b"]).unwrap().into_parts();
        nodes.reverse();
        let g = Graph::new(inputs.clone(), outputs.clone(), nodes.clone()).unwrap();
        assert_eq!(g.nodes()[0].id, "a");
        nodes[1].inputs = vec!["b".into()];
        assert!(Graph::new(inputs, outputs, nodes).is_err());
    }
}
