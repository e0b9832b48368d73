//! Detection-head decoding and non-maximum suppression.

use serde::{Deserialize, Serialize};

use crate::graph_ir::{BoxDecode, Nms, Shape, NMS_ROW};

/// One kept box in input-pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub x1: f32,
    pub y1: f32,
    pub x2: f32,
    pub y2: f32,
    pub score: f32,
    pub class: usize,
}

impl Detection {
    pub fn area(&self) -> f32 {
        (self.x2 - self.x1) * (self.y2 - self.y1)
    }

    pub fn iou(&self, other: &Detection) -> f32 {
        let w = (self.x2.min(other.x2) - self.x1.max(other.x1)).max(0.0);
        let h = (self.y2.min(other.y2) - self.y1.max(other.y1)).max(0.0);
        let inter = w * h;
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }

    pub fn bit_eq(&self, other: &Detection) -> bool {
        self.class == other.class
            && [self.x1, self.y1, self.x2, self.y2, self.score]
                .iter()
                .zip([other.x1, other.y1, other.x2, other.y2, other.score])
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// Decode sigmoid-activated head outputs `[1, H, W, A * (5 + C)]` into rows
/// `[x1, y1, x2, y2, obj, cls_0 .. cls_C-1]`, ordered by (y, x, anchor).
///
/// Centres follow `(2 s - 0.5 + cell) * stride`, sizes `(2 s)^2 * anchor`.
pub fn box_decode(x: &[f32], shape: Shape, d: &BoxDecode) -> Vec<f32> {
    let [_, h, w, _] = shape;
    let row = d.row_len();
    let a_count = d.anchors.len();
    let stride = d.stride as f32;
    let mut out = Vec::with_capacity(h * w * a_count * row);
    for gy in 0..h {
        for gx in 0..w {
            let pixel = &x[(gy * w + gx) * a_count * row..][..a_count * row];
            for (a, &(aw, ah)) in d.anchors.iter().enumerate() {
                let s = &pixel[a * row..(a + 1) * row];
                let cx = (2.0 * s[0] - 0.5 + gx as f32) * stride;
                let cy = (2.0 * s[1] - 0.5 + gy as f32) * stride;
                let bw = (2.0 * s[2]).powi(2) * aw;
                let bh = (2.0 * s[3]).powi(2) * ah;
                out.extend_from_slice(&[cx - bw / 2.0, cy - bh / 2.0, cx + bw / 2.0, cy + bh / 2.0]);
                out.extend_from_slice(&s[4..]);
            }
        }
    }
    out
}

/// Score and class of a decoded row: objectness times the best class
/// probability, first maximum on ties.
fn score_row(r: &[f32]) -> (f32, usize) {
    let mut best = 0;
    for c in 1..r.len() - 5 {
        if r[5 + c] > r[5 + best] {
            best = c;
        }
    }
    (r[4] * r[5 + best], best)
}

/// Greedy class-agnostic NMS over the concatenation of `lists` (each a
/// flattened `[n, row_len]` matrix with its row count). Returns
/// `max_det` rows of `[x1, y1, x2, y2, score, class]`; unused rows are
/// zero with class -1.
pub fn nms(lists: &[(&[f32], usize)], row_len: usize, cfg: &Nms) -> Vec<f32> {
    let mut cands: Vec<Detection> = Vec::new();
    for (data, rows) in lists {
        for r in data.chunks_exact(row_len).take(*rows) {
            let (score, class) = score_row(r);
            let d = Detection {
                x1: r[0],
                y1: r[1],
                x2: r[2],
                y2: r[3],
                score,
                class,
            };
            if score.is_finite() && score >= cfg.conf_thresh && d.x2 > d.x1 && d.y2 > d.y1 {
                cands.push(d);
            }
        }
    }
    // stable: equal scores keep input order
    cands.sort_by(|a, b| b.score.total_cmp(&a.score));
    let mut kept: Vec<Detection> = Vec::new();
    for d in cands {
        if kept.len() == cfg.max_det {
            break;
        }
        if kept.iter().all(|k| k.iou(&d) <= cfg.iou_thresh) {
            kept.push(d);
        }
    }
    let mut out = Vec::with_capacity(cfg.max_det * NMS_ROW);
    for d in &kept {
        out.extend_from_slice(&[d.x1, d.y1, d.x2, d.y2, d.score, d.class as f32]);
    }
    for _ in kept.len()..cfg.max_det {
        out.extend_from_slice(&[0.0, 0.0, 0.0, 0.0, 0.0, -1.0]);
    }
    out
}

/// Kept rows of an NMS output tensor.
pub fn detections_from_rows(data: &[f32]) -> Vec<Detection> {
    data.chunks_exact(NMS_ROW)
        .filter(|r| r[5] >= 0.0)
        .map(|r| Detection {
            x1: r[0],
            y1: r[1],
            x2: r[2],
            y2: r[3],
            score: r[4],
            class: r[5] as usize,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn row(b: [f32; 4], score: f32) -> Vec<f32> {
        vec![b[0], b[1], b[2], b[3], score, 1.0]
    }

    fn cfg(iou: f32) -> Nms {
        Nms {
            iou_thresh: iou,
            conf_thresh: 0.25,
            max_det: 10,
        }
    }

    #[test]
    fn low_overlap_boxes_both_survive() {
        let mut data = row([0.0, 0.0, 2.0, 2.0], 0.9);
        data.extend(row([1.0, 1.0, 3.0, 3.0], 0.8));
        let a = Detection { x1: 0.0, y1: 0.0, x2: 2.0, y2: 2.0, score: 0.9, class: 0 };
        let b = Detection { x1: 1.0, y1: 1.0, x2: 3.0, y2: 3.0, score: 0.8, class: 0 };
        assert!((a.iou(&b) - 1.0 / 7.0).abs() < 1e-7);
        let kept = detections_from_rows(&nms(&[(&data, 2)], 6, &cfg(0.5)));
        assert_eq!(kept.len(), 2);
        assert_eq!(kept[0].score, 0.9);
    }

    #[test]
    fn duplicates_collapse() {
        let mut data = row([0.0, 0.0, 2.0, 2.0], 0.9);
        data.extend(row([0.0, 0.0, 2.0, 2.0], 0.7));
        data.extend(row([5.0, 5.0, 6.0, 6.0], 0.1));
        let kept = detections_from_rows(&nms(&[(&data, 3)], 6, &cfg(0.5)));
        assert_eq!(kept.len(), 1);
    }

    #[test]
    fn decode_centre_at_half_sigmoid() {
        let d = BoxDecode {
            stride: 8,
            anchors: vec![(10.0, 20.0)],
            num_classes: 1,
        };
        let x = vec![0.5; 2 * 6];
        let out = box_decode(&x, [1, 1, 2, 6], &d);
        // cell 1: centre (1 + 0.5) * 8 = 12, size (2*0.5)^2 * anchor
        assert_eq!(&out[6..10], &[12.0 - 5.0, 4.0 - 10.0, 12.0 + 5.0, 4.0 + 10.0]);
    }

    proptest! {
        #[test]
        fn order_independent_with_distinct_scores(
            boxes in prop::collection::vec((0f32..50.0, 0f32..50.0, 1f32..30.0, 1f32..30.0), 1..30),
            seed in any::<u64>(),
        ) {
            let mut rows: Vec<Vec<f32>> = boxes
                .iter()
                .enumerate()
                .map(|(i, &(x, y, w, h))| row([x, y, x + w, y + h], 0.3 + i as f32 * 0.02))
                .collect();
            let flat = |rs: &Vec<Vec<f32>>| rs.concat();
            let before = nms(&[(&flat(&rows), rows.len())], 6, &cfg(0.45));
            let n = rows.len();
            rows.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let after = nms(&[(&flat(&rows), n)], 6, &cfg(0.45));
            prop_assert_eq!(before, after);
        }
    }
}
