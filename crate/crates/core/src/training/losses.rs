//! Classification, box-regression and recognition losses, and their
//! per-batch normalisations.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::BoxDelta;
use crate::tensor::{smooth_l1_scalar, Float, Graph, Var};
use crate::tpn::{AnchorBatch, TpnOutput};

/// `−log softmax(logits)[label]` for a logit pair.
pub fn binary_logistic_loss(logits: [Float; 2], label: u8) -> Float {
    let m = logits[0].max(logits[1]);
    let lse = m + ((logits[0] - m).exp() + (logits[1] - m).exp()).ln();
    lse - logits[label as usize]
}

/// `Σ φ(pred − target)` over the four offsets.
pub fn smooth_l1_loss(pred: &BoxDelta, target: &BoxDelta) -> Float {
    pred.to_array().iter().zip(target.to_array()).map(|(p, t)| smooth_l1_scalar(p - t)).sum()
}

/// `−Σ_t log y_t(s_t)` over distributions `y_1 … y_{T+1}`.
pub fn rec_loss(dists: &[Vec<Float>], targets: &[usize]) -> Result<Float> {
    if dists.len() != targets.len() {
        return Err(Error::contract(format!(
            "rec_loss: {} distributions for {} targets",
            dists.len(),
            targets.len()
        )));
    }
    dists
        .iter()
        .zip(targets)
        .map(|(y, &s)| {
            y.get(s).map(|p| -p.ln()).ok_or_else(|| Error::contract(format!("rec_loss: target {s} out of range")))
        })
        .sum()
}

/// Graph form of the summed logistic loss over `logits [N×2]`.
pub fn cls_loss_sum(g: &mut Graph, logits: Var, labels: &[u8]) -> Result<Var> {
    if g.shape(logits) != [labels.len(), 2] {
        return Err(Error::dim(format!("cls_loss: logits {:?} for {} labels", g.shape(logits), labels.len())));
    }
    let lp = g.log_softmax_rows(logits)?;
    let idx: Vec<usize> = labels.iter().enumerate().map(|(i, &l)| 2 * i + l as usize).collect();
    let picked = g.gather(lp, idx)?;
    let s = g.sum(picked);
    Ok(g.scale(s, -1.0))
}

/// Graph form of the summed smooth-L1 loss; `pred` holds `4·targets.len()`
/// values in offset order.
pub fn reg_loss_sum(g: &mut Graph, pred: Var, targets: &[BoxDelta]) -> Result<Var> {
    let flat: Vec<Float> = targets.iter().flat_map(|t| t.to_array()).collect();
    if g.value(pred).len() != flat.len() {
        return Err(Error::dim(format!(
            "reg_loss: {} predictions for {} targets",
            g.value(pred).len(),
            targets.len()
        )));
    }
    let n = flat.len();
    let p = g.reshape(pred, vec![n])?;
    let t = g.constant_vec(flat);
    let d = g.sub(p, t)?;
    Ok(g.smooth_l1(d))
}

/// Graph form of the recognition loss over `log_probs [(T+2)×38]` of a
/// teacher-forced decode of `tokens = [START, s_1 … s_{T+1}]`; step 0 is
/// excluded.
pub fn rec_loss_sum(g: &mut Graph, log_probs: Var, tokens: &[usize]) -> Result<Var> {
    let s = g.shape(log_probs).to_vec();
    if s.len() != 2 || s[0] != tokens.len() {
        return Err(Error::contract(format!("rec_loss: {s:?} log-probabilities for {} tokens", tokens.len())));
    }
    let cols = s[1];
    let idx: Vec<usize> = tokens.iter().enumerate().skip(1).map(|(t, &tok)| t * cols + tok).collect();
    let picked = g.gather(log_probs, idx)?;
    let sum = g.sum(picked);
    Ok(g.scale(sum, -1.0))
}

/// Normalised loss parts of one training step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct LossReport {
    pub l_tpn_cls: Float,
    pub l_tpn_reg: Float,
    pub l_tdn_cls: Float,
    pub l_tdn_reg: Float,
    pub l_rec: Float,
    pub total: Float,
    pub n: usize,
    pub n_pos: usize,
    pub n_hat: usize,
    pub n_hat_pos: usize,
    /// The detection branch had no usable proposals this step.
    pub no_proposals: bool,
}

/// Loss terms as graph nodes, `None` where a term is identically zero.
#[derive(Clone, Copy, Debug, Default)]
pub struct LossTerms {
    pub cls: Option<Var>,
    pub reg: Option<Var>,
    pub rec: Option<Var>,
}

impl LossTerms {
    pub fn total(&self, g: &mut Graph) -> Result<Option<Var>> {
        let mut acc: Option<Var> = None;
        for t in [self.cls, self.reg, self.rec].into_iter().flatten() {
            acc = Some(match acc {
                Some(a) => g.add(a, t)?,
                None => t,
            });
        }
        Ok(acc)
    }

    fn value(g: &Graph, v: Option<Var>) -> Float {
        v.map_or(0.0, |v| g.scalar(v))
    }
}

/// `(1/N) Σ L_cls + (1/N+) Σ_{pos} L_reg` over a sampled anchor batch.
pub fn loss_tpn(g: &mut Graph, out: &TpnOutput, batch: &AnchorBatch) -> Result<LossTerms> {
    let n = batch.indices.len();
    if n == 0 {
        return Ok(LossTerms::default());
    }
    let score_idx: Vec<usize> = batch.indices.iter().flat_map(|&i| out.grid.score_index(i)).collect();
    let logits = g.gather(out.scores, score_idx)?;
    let logits = g.reshape(logits, vec![n, 2])?;
    let cls = cls_loss_sum(g, logits, &batch.labels)?;
    let cls = g.scale(cls, 1.0 / n as Float);
    let pos: Vec<usize> = (0..n).filter(|&k| batch.labels[k] == 1).collect();
    let reg = if pos.is_empty() {
        None
    } else {
        let idx: Vec<usize> = pos.iter().flat_map(|&k| out.grid.delta_index(batch.indices[k])).collect();
        let pred = g.gather(out.deltas, idx)?;
        let targets: Vec<BoxDelta> = pos.iter().map(|&k| batch.targets[k]).collect();
        let r = reg_loss_sum(g, pred, &targets)?;
        Some(g.scale(r, 1.0 / pos.len() as Float))
    };
    Ok(LossTerms { cls: Some(cls), reg, rec: None })
}

/// `(1/N̂) Σ L_cls + (1/N̂+) Σ L_reg + (1/N̂+) Σ L_rec`. `logits [N̂×2]` and
/// `deltas [N̂×4]` follow the batch order; `rec` holds the summed
/// recognition loss of each positive (empty when recognition is locked).
pub fn loss_drn(
    g: &mut Graph,
    logits: Var,
    deltas: Var,
    labels: &[u8],
    targets: &[BoxDelta],
    rec: &[Var],
) -> Result<LossTerms> {
    let n = labels.len();
    if n == 0 {
        return Ok(LossTerms::default());
    }
    if targets.len() != n || g.shape(deltas) != [n, 4] {
        return Err(Error::dim(format!("loss_drn: {n} labels, {} targets, deltas {:?}", targets.len(), g.shape(deltas))));
    }
    let cls = cls_loss_sum(g, logits, labels)?;
    let cls = g.scale(cls, 1.0 / n as Float);
    let pos: Vec<usize> = (0..n).filter(|&k| labels[k] == 1).collect();
    if pos.is_empty() {
        return Ok(LossTerms { cls: Some(cls), reg: None, rec: None });
    }
    let np = pos.len() as Float;
    let idx: Vec<usize> = pos.iter().flat_map(|&k| (0..4).map(move |c| 4 * k + c)).collect();
    let pred = g.gather(deltas, idx)?;
    let pt: Vec<BoxDelta> = pos.iter().map(|&k| targets[k]).collect();
    let reg = reg_loss_sum(g, pred, &pt)?;
    let reg = g.scale(reg, 1.0 / np);
    let rec = if rec.is_empty() {
        None
    } else {
        if rec.len() != pos.len() {
            return Err(Error::contract(format!("loss_drn: {} recognition terms for {} positives", rec.len(), pos.len())));
        }
        let s = g.concat(rec)?;
        let s = g.sum(s);
        Some(g.scale(s, 1.0 / np))
    };
    Ok(LossTerms { cls: Some(cls), reg: Some(reg), rec })
}

/// Fill the report's loss fields from evaluated terms.
pub fn report(g: &Graph, tpn: &LossTerms, drn: &LossTerms, report: &mut LossReport) {
    report.l_tpn_cls = LossTerms::value(g, tpn.cls);
    report.l_tpn_reg = LossTerms::value(g, tpn.reg);
    report.l_tdn_cls = LossTerms::value(g, drn.cls);
    report.l_tdn_reg = LossTerms::value(g, drn.reg);
    report.l_rec = LossTerms::value(g, drn.rec);
    report.total = report.l_tpn_cls + report.l_tpn_reg + report.l_tdn_cls + report.l_tdn_reg + report.l_rec;
}
