//! Text proposal network: rectangle-filter branches over the feature map,
//! per-anchor text/non-text logits and box offsets, anchor sampling and
//! proposal ranking.

use rand::seq::index::sample;
use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{decode_predicted, encode_offsets, iou, clip_box, AnchorSet, BBox, BoxDelta};
use crate::nn::{Conv, Init};
use crate::tensor::{Float, Graph, ParamId, ParamStore, Var};

/// Branch A kernel (height, width) and padding.
pub const BRANCH_A: ((usize, usize), (usize, usize)) = ((3, 5), (1, 2));
/// Branch B kernel (height, width) and padding.
pub const BRANCH_B: ((usize, usize), (usize, usize)) = ((1, 3), (0, 1));

#[derive(Clone, Debug, PartialEq)]
pub struct TpnConfig {
    /// Filters per rectangle branch; the concatenated width is twice this.
    pub width: usize,
    pub anchors: AnchorSet,
}

impl Default for TpnConfig {
    fn default() -> Self {
        TpnConfig { width: 256, anchors: AnchorSet::default() }
    }
}

#[derive(Clone, Debug)]
pub struct Tpn {
    pub config: TpnConfig,
    pub conv_a: Conv,
    pub conv_b: Conv,
    pub cls: Conv,
    pub reg: Conv,
}

/// Layout of per-anchor outputs over a `fh×fw` grid with `k` anchors per
/// cell. Anchor index is `(i·fw + j)·k + a`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AnchorGrid {
    pub fh: usize,
    pub fw: usize,
    pub k: usize,
}

impl AnchorGrid {
    pub fn len(&self) -> usize {
        self.fh * self.fw * self.k
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flat indices of anchor `idx`'s two logits (non-text, text).
    pub fn score_index(&self, idx: usize) -> [usize; 2] {
        let (cell, a) = (idx / self.k, idx % self.k);
        let plane = self.fh * self.fw;
        [2 * a * plane + cell, (2 * a + 1) * plane + cell]
    }

    /// Flat indices of anchor `idx`'s four offsets.
    pub fn delta_index(&self, idx: usize) -> [usize; 4] {
        let (cell, a) = (idx / self.k, idx % self.k);
        let plane = self.fh * self.fw;
        [0, 1, 2, 3].map(|c| (4 * a + c) * plane + cell)
    }
}

/// Graph handles of one TPN pass: `scores [2k×fh×fw]`, `deltas [4k×fh×fw]`.
#[derive(Clone, Copy, Debug)]
pub struct TpnOutput {
    pub scores: Var,
    pub deltas: Var,
    pub grid: AnchorGrid,
}

impl Tpn {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, in_channels: usize, config: TpnConfig, rng: &mut R) -> Self {
        let t = config.width;
        let k = config.anchors.per_cell();
        let head = Init::Fixed { std: 0.01 };
        let conv_a = Conv::new(store, "tpn.conv_a", in_channels, t, BRANCH_A.0, BRANCH_A.1, Init::he(), rng);
        let conv_b = Conv::new(store, "tpn.conv_b", in_channels, t, BRANCH_B.0, BRANCH_B.1, Init::he(), rng);
        let cls = Conv::new(store, "tpn.cls", 2 * t, 2 * k, (1, 1), (0, 0), head, rng);
        let reg = Conv::new(store, "tpn.reg", 2 * t, 4 * k, (1, 1), (0, 0), head, rng);
        Tpn { config, conv_a, conv_b, cls, reg }
    }

    pub fn params(&self) -> Vec<ParamId> {
        [self.conv_a, self.conv_b, self.cls, self.reg].iter().flat_map(|c| c.params()).collect()
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, features: Var) -> Result<TpnOutput> {
        let s = g.shape(features).to_vec();
        if s.len() != 3 {
            return Err(Error::dim(format!("tpn_forward: expected [C×fh×fw], got {s:?}")));
        }
        let (fh, fw) = (s[1], s[2]);
        if fh < BRANCH_A.0 .0 || fw < BRANCH_A.0 .1 {
            return Err(Error::dim(format!(
                "tpn_forward: feature map {fh}×{fw} smaller than the {}×{} filter",
                BRANCH_A.0 .0, BRANCH_A.0 .1
            )));
        }
        let a = self.conv_a.forward(g, store, features)?;
        let a = g.relu(a);
        let b = self.conv_b.forward(g, store, features)?;
        let b = g.relu(b);
        let cat = g.concat(&[a, b])?;
        let cat = g.reshape(cat, vec![2 * self.config.width, fh, fw])?;
        let scores = self.cls.forward(g, store, cat)?;
        let deltas = self.reg.forward(g, store, cat)?;
        Ok(TpnOutput { scores, deltas, grid: AnchorGrid { fh, fw, k: self.config.anchors.per_cell() } })
    }
}

/// Text probability of a logit pair `(non-text, text)`.
pub fn textness(non_text: Float, text: Float) -> Float {
    let d = text - non_text;
    if d >= 0.0 {
        1.0 / (1.0 + (-d).exp())
    } else {
        let e = d.exp();
        e / (1.0 + e)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AnchorSampling {
    pub batch: usize,
    pub max_positives: usize,
    pub pos_iou: Float,
    pub neg_iou: Float,
}

impl Default for AnchorSampling {
    fn default() -> Self {
        AnchorSampling { batch: 256, max_positives: 128, pos_iou: 0.7, neg_iou: 0.3 }
    }
}

/// Sampled anchors; `labels[i]` is 1 for text and 0 for background, and
/// `targets[i]` is zero for negatives.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AnchorBatch {
    pub indices: Vec<usize>,
    pub labels: Vec<u8>,
    pub targets: Vec<BoxDelta>,
    /// Neither positives nor negatives were available.
    pub empty: bool,
}

impl AnchorBatch {
    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&l| l == 1).count()
    }
}

/// Per-anchor assignment before sampling.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Assignment {
    Positive(usize),
    Negative,
    Ignored,
}

/// Label every anchor: IoU above `pos_iou` with some box, or being a box's
/// best anchor, makes it positive; max IoU below `neg_iou` makes it
/// negative.
pub fn assign_anchors(anchors: &[BBox], gts: &[BBox], pos_iou: Float, neg_iou: Float) -> Vec<Assignment> {
    let mut best_gt = vec![(0.0 as Float, usize::MAX); anchors.len()];
    let mut best_anchor = vec![(0.0 as Float, usize::MAX); gts.len()];
    for (i, a) in anchors.iter().enumerate() {
        for (j, b) in gts.iter().enumerate() {
            let o = iou(a, b);
            if o > best_gt[i].0 || best_gt[i].1 == usize::MAX {
                best_gt[i] = (o, j);
            }
            if o > best_anchor[j].0 {
                best_anchor[j] = (o, i);
            }
        }
    }
    let mut out: Vec<Assignment> = best_gt
        .iter()
        .map(|&(o, j)| {
            if j != usize::MAX && o > pos_iou {
                Assignment::Positive(j)
            } else if o < neg_iou {
                Assignment::Negative
            } else {
                Assignment::Ignored
            }
        })
        .collect();
    for (j, &(o, i)) in best_anchor.iter().enumerate() {
        if i != usize::MAX && o > 0.0 && !matches!(out[i], Assignment::Positive(_)) {
            out[i] = Assignment::Positive(j);
        }
    }
    out
}

pub fn sample_anchors<R: Rng + ?Sized>(
    anchors: &[BBox],
    gts: &[BBox],
    cfg: &AnchorSampling,
    rng: &mut R,
) -> Result<AnchorBatch> {
    if anchors.is_empty() {
        return Err(Error::contract("sample_anchors: no anchors"));
    }
    let assign = assign_anchors(anchors, gts, cfg.pos_iou, cfg.neg_iou);
    let pos: Vec<usize> = (0..anchors.len()).filter(|&i| matches!(assign[i], Assignment::Positive(_))).collect();
    let neg: Vec<usize> = (0..anchors.len()).filter(|&i| assign[i] == Assignment::Negative).collect();
    if pos.is_empty() && neg.is_empty() {
        return Ok(AnchorBatch { empty: true, ..Default::default() });
    }
    let n_pos = pos.len().min(cfg.max_positives).min(cfg.batch);
    let n_neg = neg.len().min(cfg.batch - n_pos);
    let mut batch = AnchorBatch::default();
    for k in sample(rng, pos.len(), n_pos) {
        let i = pos[k];
        let Assignment::Positive(j) = assign[i] else { unreachable!() };
        batch.indices.push(i);
        batch.labels.push(1);
        batch.targets.push(encode_offsets(&gts[j], &anchors[i])?);
    }
    for k in sample(rng, neg.len(), n_neg) {
        batch.indices.push(neg[k]);
        batch.labels.push(0);
        batch.targets.push(BoxDelta::default());
    }
    Ok(batch)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Proposal {
    pub bbox: BBox,
    pub textness: Float,
    pub anchor: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProposalConfig {
    pub top_n: usize,
    pub min_size: Float,
}

impl Default for ProposalConfig {
    fn default() -> Self {
        ProposalConfig { top_n: 300, min_size: 4.0 }
    }
}

/// Decode every anchor, clip, drop boxes thinner than `min_size`, and keep
/// the `top_n` most text-like (ties by anchor index).
pub fn generate_proposals(
    scores: &[Float],
    deltas: &[Float],
    grid: &AnchorGrid,
    anchors: &[BBox],
    img_w: usize,
    img_h: usize,
    cfg: &ProposalConfig,
) -> Result<Vec<Proposal>> {
    let n = grid.len();
    if anchors.len() != n || scores.len() != 2 * n || deltas.len() != 4 * n {
        return Err(Error::dim(format!(
            "generate_proposals: {} anchors for a {}×{}×{} grid",
            anchors.len(),
            grid.fh,
            grid.fw,
            grid.k
        )));
    }
    let mut props = Vec::with_capacity(n);
    for (i, anchor) in anchors.iter().enumerate() {
        let [s0, s1] = grid.score_index(i);
        let d = grid.delta_index(i).map(|j| deltas[j]);
        let b = clip_box(&decode_predicted(&BoxDelta::from_slice(&d), anchor)?, img_w, img_h);
        if b.width() < cfg.min_size || b.height() < cfg.min_size {
            continue;
        }
        props.push(Proposal { bbox: b, textness: textness(scores[s0], scores[s1]), anchor: i });
    }
    props.sort_by(|a, b| b.textness.total_cmp(&a.textness).then(a.anchor.cmp(&b.anchor)));
    props.truncate(cfg.top_n);
    Ok(props)
}
