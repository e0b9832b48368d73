//! Bundled model descriptions with seeded random weights.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::graph_ir::{Activation, BoxDecode, Graph, GraphBuilder, Nms, Op, Padding};
use crate::pruner::{uniform_plan, PruningPlan};

const LEAKY: Activation = Activation::LeakyRelu { alpha: 0.1 };

struct Net {
    b: GraphBuilder,
    rng: ChaCha8Rng,
}

impl Net {
    fn new(seed: u64) -> Self {
        Net {
            b: GraphBuilder::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Same-padded conv with uniform fan-in scaled weights.
    fn conv(&mut self, id: &str, input: &str, k: usize, s: usize, cout: usize, act: Activation) -> Result<String> {
        let cin = self.b.shape(input)[3];
        let n = k * k * cin * cout;
        let bound = (6.0 / (k * k * cin) as f32).sqrt();
        let rng = &mut self.rng;
        self.b.conv(id, input, [k, k], s, cout, act, |i| {
            if i < n {
                rng.gen_range(-bound..bound)
            } else {
                rng.gen_range(-0.1..0.1)
            }
        })
    }

    fn head(&mut self, convs: &[(&str, usize, [(f32, f32); 3])], classes: usize, nms: Nms) -> Result<Vec<String>> {
        let mut decoded = Vec::new();
        for (i, &(src, stride, anchors)) in convs.iter().enumerate() {
            let sig = self.b.op(&format!("sigmoid{i}"), Op::Sigmoid, &[src])?;
            let d = self.b.op(
                &format!("decode{i}"),
                Op::BoxDecode(BoxDecode {
                    stride,
                    anchors: anchors.to_vec(),
                    num_classes: classes,
                }),
                &[&sig],
            )?;
            decoded.push(d);
        }
        let refs: Vec<&str> = decoded.iter().map(String::as_str).collect();
        Ok(vec![self.b.op("nms", Op::Nms(nms), &refs)?])
    }
}

pub fn default_nms() -> Nms {
    Nms {
        iou_thresh: 0.45,
        conf_thresh: 0.25,
        max_det: 100,
    }
}

/// Five stride-2 3x3 convs and a 1x1 projection; input must be a
/// multiple of 32.
pub fn conv_only(hw: usize, seed: u64) -> Result<Graph> {
    let mut n = Net::new(seed);
    let mut x = n.b.input("images", [1, hw, hw, 3]);
    for (i, c) in [16, 32, 64, 128, 256].into_iter().enumerate() {
        x = n.conv(&format!("conv{i}"), &x, 3, 2, c, Activation::Relu6)?;
    }
    let y = n.conv("proj", &x, 1, 1, 64, Activation::None)?;
    n.b.finish(&[&y])
}

/// Six convs, two concats, one max pool, one resize and a single
/// detection head with three anchors and two classes.
pub fn toy_detector(hw: usize, seed: u64) -> Result<Graph> {
    let mut n = Net::new(seed);
    let x = n.b.input("images", [1, hw, hw, 3]);
    let c1 = n.conv("c1", &x, 3, 2, 16, LEAKY)?;
    let c2 = n.conv("c2", &c1, 3, 2, 32, LEAKY)?;
    let p1 = n.b.max_pool("p1", &c2, 2, 2, Padding::Valid)?;
    let c3 = n.conv("c3", &p1, 3, 1, 32, LEAKY)?;
    let r1 = n.b.resize("r1", &c3, 2)?;
    let cat1 = n.b.concat("cat1", &[&r1, &c2])?;
    let c4 = n.conv("c4", &cat1, 1, 1, 32, LEAKY)?;
    let c5 = n.conv("c5", &c4, 3, 1, 32, LEAKY)?;
    let cat2 = n.b.concat("cat2", &[&c4, &c5])?;
    let head = n.conv("head", &cat2, 1, 1, 3 * 7, Activation::None)?;
    let outs = n.head(&[(&head, 4, [(6.0, 8.0), (12.0, 14.0), (20.0, 24.0)])], 2, default_nms())?;
    let refs: Vec<&str> = outs.iter().map(String::as_str).collect();
    n.b.finish(&refs)
}

/// The YOLOv7-tiny topology (58 convs, 80 classes) at a square input.
pub fn yolov7_tiny(hw: usize, seed: u64) -> Result<Graph> {
    let mut n = Net::new(seed);
    let x = n.b.input("images", [1, hw, hw, 3]);

    // efficient aggregation block: two 1x1 branches, two chained 3x3,
    // concat of all four, 1x1 fuse
    fn elan(n: &mut Net, tag: &str, x: &str, c: usize, out: usize) -> Result<String> {
        let a = n.conv(&format!("{tag}_a"), x, 1, 1, c, LEAKY)?;
        let b = n.conv(&format!("{tag}_b"), x, 1, 1, c, LEAKY)?;
        let c1 = n.conv(&format!("{tag}_c"), &b, 3, 1, c, LEAKY)?;
        let c2 = n.conv(&format!("{tag}_d"), &c1, 3, 1, c, LEAKY)?;
        let cat = n.b.concat(&format!("{tag}_cat"), &[&c2, &c1, &b, &a])?;
        n.conv(&format!("{tag}_out"), &cat, 1, 1, out, LEAKY)
    }

    let s0 = n.conv("stem0", &x, 3, 2, 32, LEAKY)?;
    let s1 = n.conv("stem1", &s0, 3, 2, 64, LEAKY)?;
    let e1 = elan(&mut n, "b1", &s1, 32, 64)?;
    let m1 = n.b.max_pool("mp1", &e1, 2, 2, Padding::Valid)?;
    let p3 = elan(&mut n, "b2", &m1, 64, 128)?;
    let m2 = n.b.max_pool("mp2", &p3, 2, 2, Padding::Valid)?;
    let p4 = elan(&mut n, "b3", &m2, 128, 256)?;
    let m3 = n.b.max_pool("mp3", &p4, 2, 2, Padding::Valid)?;
    let p5 = elan(&mut n, "b4", &m3, 256, 512)?;

    // spatial pyramid pooling with a cross-stage shortcut
    let sa = n.conv("sppcsp_a", &p5, 1, 1, 256, LEAKY)?;
    let sb = n.conv("sppcsp_b", &p5, 1, 1, 256, LEAKY)?;
    let k5 = n.b.max_pool("sp5", &sb, 5, 1, Padding::Same)?;
    let k9 = n.b.max_pool("sp9", &sb, 9, 1, Padding::Same)?;
    let k13 = n.b.max_pool("sp13", &sb, 13, 1, Padding::Same)?;
    let spp = n.b.concat("spp_cat", &[&k13, &k9, &k5, &sb])?;
    let sc = n.conv("sppcsp_c", &spp, 1, 1, 256, LEAKY)?;
    let csp = n.b.concat("sppcsp_cat", &[&sc, &sa])?;
    let neck5 = n.conv("sppcsp_out", &csp, 1, 1, 256, LEAKY)?;

    let u1 = n.conv("up1_conv", &neck5, 1, 1, 128, LEAKY)?;
    let u1 = n.b.resize("up1", &u1, 2)?;
    let l4 = n.conv("lat4", &p4, 1, 1, 128, LEAKY)?;
    let cat4 = n.b.concat("cat4", &[&l4, &u1])?;
    let neck4 = elan(&mut n, "h1", &cat4, 64, 128)?;

    let u2 = n.conv("up2_conv", &neck4, 1, 1, 64, LEAKY)?;
    let u2 = n.b.resize("up2", &u2, 2)?;
    let l3 = n.conv("lat3", &p3, 1, 1, 64, LEAKY)?;
    let cat3 = n.b.concat("cat3", &[&l3, &u2])?;
    let out3 = elan(&mut n, "h2", &cat3, 32, 64)?;

    let d1 = n.conv("down1", &out3, 3, 2, 128, LEAKY)?;
    let cat5 = n.b.concat("cat5", &[&d1, &neck4])?;
    let out4 = elan(&mut n, "h3", &cat5, 64, 128)?;

    let d2 = n.conv("down2", &out4, 3, 2, 256, LEAKY)?;
    let cat6 = n.b.concat("cat6", &[&d2, &neck5])?;
    let out5 = elan(&mut n, "h4", &cat6, 128, 256)?;

    let f3 = n.conv("pre3", &out3, 3, 1, 128, LEAKY)?;
    let f4 = n.conv("pre4", &out4, 3, 1, 256, LEAKY)?;
    let f5 = n.conv("pre5", &out5, 3, 1, 512, LEAKY)?;
    let per = 3 * (5 + 80);
    let h3 = n.conv("det3", &f3, 1, 1, per, Activation::None)?;
    let h4 = n.conv("det4", &f4, 1, 1, per, Activation::None)?;
    let h5 = n.conv("det5", &f5, 1, 1, per, Activation::None)?;
    let outs = n.head(
        &[
            (&h3, 8, [(10.0, 13.0), (16.0, 30.0), (33.0, 23.0)]),
            (&h4, 16, [(30.0, 61.0), (62.0, 45.0), (59.0, 119.0)]),
            (&h5, 32, [(116.0, 90.0), (156.0, 198.0), (373.0, 326.0)]),
        ],
        80,
        default_nms(),
    )?;
    let refs: Vec<&str> = outs.iter().map(String::as_str).collect();
    n.b.finish(&refs)
}

/// A chain of `convs` convolutions with seeded kernel sizes, widths and
/// strides, for tuning at network scale.
pub fn synthetic_convnet(convs: usize, hw: usize, seed: u64) -> Result<Graph> {
    let mut n = Net::new(seed);
    let mut x = n.b.input("images", [1, hw, hw, 3]);
    let widths = [16, 32, 48, 64, 96, 128, 192, 256];
    for i in 0..convs {
        let spatial = n.b.shape(&x)[1];
        let k = if n.rng.gen_bool(0.5) { 3 } else { 1 };
        let s = if spatial > 8 && n.rng.gen_bool(0.15) { 2 } else { 1 };
        let c = widths[n.rng.gen_range(0..widths.len())];
        x = n.conv(&format!("conv{i:02}"), &x, k, s, c, Activation::Relu6)?;
    }
    n.b.finish(&[&x])
}

/// Per-iteration rates of the 14-round uniform plans that bring
/// [`yolov7_tiny`] to about 40% and 88% parameter sparsity.
pub const PLAN_RATE_40: f64 = 0.021;
pub const PLAN_RATE_88: f64 = 0.08;
pub const PLAN_ITERATIONS: usize = 14;

/// Uniform plan over every prunable group of `g`.
pub fn yolov7_tiny_plan(g: &Graph, rate: f64) -> Result<PruningPlan> {
    uniform_plan(g, PLAN_ITERATIONS, rate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph_ir::{count_gop, downsampling_factor};

    fn convs(g: &Graph) -> usize {
        g.nodes().iter().filter(|n| matches!(n.op, Op::Conv2d(_))).count()
    }

    #[test]
    fn structures() {
        let t = toy_detector(64, 0).unwrap();
        assert_eq!(convs(&t), 6);
        let count = |name: &str| t.nodes().iter().filter(|n| n.op.name() == name).count();
        assert_eq!((count("concat"), count("max_pool2d"), count("resize_nearest")), (2, 1, 1));
        assert_eq!(downsampling_factor(&t), 8);

        let y = yolov7_tiny(160, 0).unwrap();
        assert_eq!(convs(&y), 58);
        assert_eq!(downsampling_factor(&y), 32);
        assert_eq!(convs(&synthetic_convnet(58, 64, 1).unwrap()), 58);
        assert_eq!(downsampling_factor(&conv_only(64, 0).unwrap()), 32);
    }

    #[test]
    fn yolov7_tiny_size() {
        let y = yolov7_tiny(640, 0).unwrap();
        // about six million parameters, about 13 GOP at 640
        assert!((5_900_000..6_300_000).contains(&y.param_count()), "{}", y.param_count());
        let gop = count_gop(&y).gop();
        assert!((12.0..14.5).contains(&gop), "{gop}");
    }
}
