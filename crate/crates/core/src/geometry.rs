//! Axis-aligned boxes, anchors, IoU, offset parameterisation and NMS.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Float;

/// Axis-aligned rectangle in pixel coordinates. Width is `x2 − x1` (no +1).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x1: Float,
    pub y1: Float,
    pub x2: Float,
    pub y2: Float,
}

impl BBox {
    pub fn new(x1: Float, y1: Float, x2: Float, y2: Float) -> Self {
        BBox { x1, y1, x2, y2 }
    }

    pub fn from_center(cx: Float, cy: Float, w: Float, h: Float) -> Self {
        BBox::new(cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h)
    }

    pub fn width(&self) -> Float {
        (self.x2 - self.x1).max(0.0)
    }

    pub fn height(&self) -> Float {
        (self.y2 - self.y1).max(0.0)
    }

    pub fn area(&self) -> Float {
        self.width() * self.height()
    }

    pub fn center(&self) -> (Float, Float) {
        (0.5 * (self.x1 + self.x2), 0.5 * (self.y1 + self.y2))
    }

    pub fn is_valid(&self) -> bool {
        self.x2 >= self.x1 && self.y2 >= self.y1 && [self.x1, self.y1, self.x2, self.y2].iter().all(|v| v.is_finite())
    }

    /// Scale x and y coordinates independently.
    pub fn scaled(&self, sx: Float, sy: Float) -> BBox {
        BBox::new(self.x1 * sx, self.y1 * sy, self.x2 * sx, self.y2 * sy)
    }

    pub fn union(&self, o: &BBox) -> BBox {
        BBox::new(self.x1.min(o.x1), self.y1.min(o.y1), self.x2.max(o.x2), self.y2.max(o.y2))
    }

    pub fn contains(&self, o: &BBox) -> bool {
        o.x1 >= self.x1 && o.y1 >= self.y1 && o.x2 <= self.x2 && o.y2 <= self.y2
    }
}

/// Scale-invariant centre shift and log-space size shift of a box relative
/// to a reference box.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BoxDelta {
    pub dx: Float,
    pub dy: Float,
    pub dw: Float,
    pub dh: Float,
}

impl BoxDelta {
    pub fn new(dx: Float, dy: Float, dw: Float, dh: Float) -> Self {
        BoxDelta { dx, dy, dw, dh }
    }

    pub fn to_array(self) -> [Float; 4] {
        [self.dx, self.dy, self.dw, self.dh]
    }

    pub fn from_slice(v: &[Float]) -> Self {
        BoxDelta::new(v[0], v[1], v[2], v[3])
    }
}

/// Anchor layout: `scales` are box areas, `ratios` are width/height.
#[derive(Clone, Debug, PartialEq)]
pub struct AnchorSet {
    pub scales: Vec<Float>,
    pub ratios: Vec<Float>,
    pub stride: usize,
}

impl Default for AnchorSet {
    fn default() -> Self {
        AnchorSet {
            scales: vec![16.0 * 16.0, 32.0 * 32.0, 64.0 * 64.0, 80.0 * 80.0],
            ratios: vec![1.0, 2.0, 3.0, 5.0, 7.0, 10.0],
            stride: 8,
        }
    }
}

impl AnchorSet {
    pub fn per_cell(&self) -> usize {
        self.scales.len() * self.ratios.len()
    }

    /// `(width, height)` of every anchor shape, scale-major.
    pub fn shapes(&self) -> Vec<(Float, Float)> {
        let mut out = Vec::with_capacity(self.per_cell());
        for &a in &self.scales {
            for &r in &self.ratios {
                out.push(((a * r).sqrt(), (a / r).sqrt()));
            }
        }
        out
    }
}

/// Anchors for every cell of a `feat_h × feat_w` grid, centred at
/// `((j+0.5)·stride, (i+0.5)·stride)`. Index is `(i·feat_w + j)·k + a`.
pub fn generate_anchors(feat_h: usize, feat_w: usize, set: &AnchorSet) -> Vec<BBox> {
    let shapes = set.shapes();
    let s = set.stride as Float;
    let mut out = Vec::with_capacity(feat_h * feat_w * shapes.len());
    for i in 0..feat_h {
        for j in 0..feat_w {
            let (cx, cy) = ((j as Float + 0.5) * s, (i as Float + 0.5) * s);
            for &(w, h) in &shapes {
                out.push(BBox::from_center(cx, cy, w, h));
            }
        }
    }
    out
}

pub fn iou(a: &BBox, b: &BBox) -> Float {
    let iw = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let ih = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

pub fn encode_offsets(gt: &BBox, anchor: &BBox) -> Result<BoxDelta> {
    let (wa, ha) = (anchor.width(), anchor.height());
    if wa <= 0.0 || ha <= 0.0 {
        return Err(Error::contract(format!("encode_offsets: anchor {anchor:?} has non-positive size")));
    }
    let (wg, hg) = (gt.width(), gt.height());
    if wg <= 0.0 || hg <= 0.0 {
        return Err(Error::contract(format!("encode_offsets: ground truth {gt:?} has non-positive size")));
    }
    let (cxa, cya) = anchor.center();
    let (cxg, cyg) = gt.center();
    Ok(BoxDelta {
        dx: (cxg - cxa) / wa,
        dy: (cyg - cya) / ha,
        dw: (wg / wa).ln(),
        dh: (hg / ha).ln(),
    })
}

pub fn decode_offsets(delta: &BoxDelta, anchor: &BBox) -> Result<BBox> {
    let (wa, ha) = (anchor.width(), anchor.height());
    if wa <= 0.0 || ha <= 0.0 {
        return Err(Error::contract(format!("decode_offsets: anchor {anchor:?} has non-positive size")));
    }
    let (cxa, cya) = anchor.center();
    Ok(BBox::from_center(
        cxa + delta.dx * wa,
        cya + delta.dy * ha,
        wa * delta.dw.exp(),
        ha * delta.dh.exp(),
    ))
}

/// Log-space shift cap applied to predicted deltas before decoding.
pub const MAX_LOG_SHIFT: Float = 4.135_166_556_742_356; // ln(1000/16)

/// Decode a network-predicted delta, capping the log-size shifts so that an
/// untrained regressor cannot overflow.
pub fn decode_predicted(delta: &BoxDelta, anchor: &BBox) -> Result<BBox> {
    let d = BoxDelta {
        dw: delta.dw.min(MAX_LOG_SHIFT),
        dh: delta.dh.min(MAX_LOG_SHIFT),
        ..*delta
    };
    decode_offsets(&d, anchor)
}

/// Greedy NMS: descending score (ties by lower index); a box is kept iff
/// its IoU with every kept box is `≤ iou_threshold`.
pub fn nms(boxes: &[(BBox, Float)], iou_threshold: Float) -> Vec<usize> {
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&a, &b| boxes[b].1.total_cmp(&boxes[a].1).then(a.cmp(&b)));
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        if kept.iter().all(|&k| iou(&boxes[k].0, &boxes[i].0) <= iou_threshold) {
            kept.push(i);
        }
    }
    kept
}

pub fn clip_box(b: &BBox, img_w: usize, img_h: usize) -> BBox {
    let (w, h) = (img_w as Float, img_h as Float);
    BBox::new(b.x1.clamp(0.0, w), b.y1.clamp(0.0, h), b.x2.clamp(0.0, w), b.y2.clamp(0.0, h))
}
