//! Text detection network: region-code classifier and second box
//! regression, plus proposal sampling with hard-negative mining.

use rand::seq::index::sample;
use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::{clip_box, decode_predicted, encode_offsets, iou, BBox, BoxDelta};
use crate::nn::{Init, Linear};
use crate::tensor::{Float, Graph, ParamId, ParamStore, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TdnConfig {
    /// Width of both hidden fully connected layers.
    pub fc: usize,
}

impl Default for TdnConfig {
    fn default() -> Self {
        TdnConfig { fc: 256 }
    }
}

#[derive(Clone, Debug)]
pub struct Tdn {
    pub config: TdnConfig,
    pub fc1: Linear,
    pub fc2: Linear,
    pub cls: Linear,
    pub reg: Linear,
}

impl Tdn {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, code_size: usize, config: TdnConfig, rng: &mut R) -> Self {
        let f = config.fc;
        let fc1 = Linear::new(store, "tdn.fc1", code_size, f, Init::he(), rng);
        let fc2 = Linear::new(store, "tdn.fc2", f, f, Init::he(), rng);
        let cls = Linear::new(store, "tdn.cls", f, 2, Init::Fixed { std: 0.01 }, rng);
        let reg = Linear::new(store, "tdn.reg", f, 4, Init::Fixed { std: 0.001 }, rng);
        Tdn { config, fc1, fc2, cls, reg }
    }

    pub fn params(&self) -> Vec<ParamId> {
        [self.fc1, self.fc2, self.cls, self.reg].iter().flat_map(|l| l.params()).collect()
    }

    /// Codes `[N×R]` to class logits `[N×2]` and offsets `[N×4]`.
    pub fn forward_rows(&self, g: &mut Graph, store: &ParamStore, codes: Var) -> Result<(Var, Var)> {
        let s = g.shape(codes).to_vec();
        if s.len() != 2 || s[1] != self.fc1.inputs {
            return Err(Error::dim(format!(
                "tdn_forward: codes {s:?} do not match code size {}",
                self.fc1.inputs
            )));
        }
        let h = self.fc1.forward_rows(g, store, codes)?;
        let h = g.relu(h);
        let h = self.fc2.forward_rows(g, store, h)?;
        let h = g.relu(h);
        Ok((self.cls.forward_rows(g, store, h)?, self.reg.forward_rows(g, store, h)?))
    }

    /// Single code `[R]` to logits `[2]` and offsets `[4]`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, code: Var) -> Result<(Var, Var)> {
        let s = g.shape(code).to_vec();
        if s.len() != 1 {
            return Err(Error::dim(format!("tdn_forward: code must be rank 1, got {s:?}")));
        }
        let row = g.reshape(code, vec![1, s[0]])?;
        let (l, d) = self.forward_rows(g, store, row)?;
        Ok((g.reshape(l, vec![2])?, g.reshape(d, vec![4])?))
    }
}

/// Second-stage box: the TDN offset applied to an already refined proposal.
pub fn refine(proposal: &BBox, delta: &BoxDelta, img_w: usize, img_h: usize) -> Result<BBox> {
    Ok(clip_box(&decode_predicted(delta, proposal)?, img_w, img_h))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProposalSampling {
    pub batch: usize,
    pub max_positives: usize,
    pub pos_iou: Float,
    pub neg_iou: Float,
    pub mine_pool: usize,
}

impl Default for ProposalSampling {
    fn default() -> Self {
        ProposalSampling { batch: 128, max_positives: 64, pos_iou: 0.6, neg_iou: 0.4, mine_pool: 1000 }
    }
}

/// Sampled proposals: positives first, then mined negatives. `gt[i]` is the
/// matched ground truth of a positive.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ProposalBatch {
    pub indices: Vec<usize>,
    pub labels: Vec<u8>,
    pub targets: Vec<BoxDelta>,
    pub gt: Vec<Option<usize>>,
    /// Negatives that were scored while mining, with their textness.
    pub scored: Vec<(usize, Float)>,
    /// No negative proposal was available.
    pub no_negatives: bool,
}

impl ProposalBatch {
    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&l| l == 1).count()
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Label proposals against `gts`, draw positives uniformly, then fill the
/// batch with the highest-textness negatives among up to `mine_pool`
/// randomly drawn ones. `score` maps proposal indices to textness.
pub fn sample_proposals<R, S>(
    proposals: &[BBox],
    gts: &[BBox],
    cfg: &ProposalSampling,
    rng: &mut R,
    mut score: S,
) -> Result<ProposalBatch>
where
    R: Rng + ?Sized,
    S: FnMut(&[usize]) -> Result<Vec<Float>>,
{
    if proposals.is_empty() {
        return Err(Error::contract("sample_proposals: no proposals"));
    }
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    let mut matched = vec![0usize; proposals.len()];
    for (i, p) in proposals.iter().enumerate() {
        let (best, j) = gts
            .iter()
            .enumerate()
            .map(|(j, g)| (iou(p, g), j))
            .fold((0.0 as Float, usize::MAX), |acc, x| if x.0 > acc.0 || acc.1 == usize::MAX { x } else { acc });
        if j != usize::MAX && best > cfg.pos_iou {
            pos.push(i);
            matched[i] = j;
        } else if best < cfg.neg_iou {
            neg.push(i);
        }
    }
    let n_pos = pos.len().min(cfg.max_positives).min(cfg.batch);
    let mut batch = ProposalBatch { no_negatives: neg.is_empty(), ..Default::default() };
    for k in sample(rng, pos.len(), n_pos) {
        let i = pos[k];
        batch.indices.push(i);
        batch.labels.push(1);
        batch.targets.push(encode_offsets(&gts[matched[i]], &proposals[i])?);
        batch.gt.push(Some(matched[i]));
    }
    let need = cfg.batch - n_pos;
    if need > 0 && !neg.is_empty() {
        let pool: Vec<usize> = sample(rng, neg.len(), neg.len().min(cfg.mine_pool)).into_iter().map(|k| neg[k]).collect();
        let scores = score(&pool)?;
        if scores.len() != pool.len() {
            return Err(Error::dim(format!("mining scorer returned {} scores for {}", scores.len(), pool.len())));
        }
        let mut ranked: Vec<(usize, Float)> = pool.into_iter().zip(scores).collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        for &(i, _) in ranked.iter().take(need) {
            batch.indices.push(i);
            batch.labels.push(0);
            batch.targets.push(BoxDelta::default());
            batch.gt.push(None);
        }
        batch.scored = ranked;
    }
    Ok(batch)
}
