//! Losses, the approximate joint training step and the staged curriculum.

pub mod ablation;
pub mod augment;
pub mod curriculum;
pub mod losses;

use std::collections::HashMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::{generate_anchors, BBox};
use crate::image::Image;
use crate::model::{Group, Model};
use crate::rfe::RegionCode;
use crate::synthdata::Annotation;
use crate::tdn::{sample_proposals, ProposalBatch, ProposalSampling};
use crate::tensor::{adam_step, AdamConfig, AdamState, Float, Graph, ParamId, Var};
use crate::tpn::{generate_proposals, sample_anchors, textness, AnchorBatch, AnchorSampling, ProposalConfig};
use crate::trn::Vocab;
use losses::{loss_drn, loss_tpn, rec_loss_sum, LossReport, LossTerms};

/// Sampling knobs of one step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepOptions {
    pub anchors: AnchorSampling,
    pub proposals: ProposalSampling,
    /// Proposals kept from the TPN before sampling.
    pub proposal_cfg: ProposalConfig,
    /// Append the ground-truth boxes to the proposals.
    pub include_gt: bool,
}

impl Default for StepOptions {
    fn default() -> Self {
        StepOptions {
            anchors: AnchorSampling::default(),
            proposals: ProposalSampling::default(),
            proposal_cfg: ProposalConfig::default(),
            include_gt: true,
        }
    }
}

/// Forward pass of one step with its loss terms still on the tape.
pub struct StepForward {
    pub graph: Graph,
    pub tpn: LossTerms,
    pub drn: LossTerms,
    pub report: LossReport,
    pub anchor_batch: AnchorBatch,
    pub proposal_batch: ProposalBatch,
    /// Candidate boxes the proposal batch indexes into.
    pub candidates: Vec<BBox>,
}

impl StepForward {
    pub fn total(&mut self) -> Result<Option<Var>> {
        let a = self.tpn.total(&mut self.graph)?;
        let b = self.drn.total(&mut self.graph)?;
        Ok(match (a, b) {
            (Some(a), Some(b)) => Some(self.graph.add(a, b)?),
            (a, b) => a.or(b),
        })
    }
}

/// Backbone → TPN → anchor loss; proposals (box values only, so no
/// gradient reaches the TPN through their coordinates) → RFE → TDN with
/// hard-negative mining → detection loss, plus recognition when `recognize`.
pub fn forward_losses<R: Rng + ?Sized>(
    model: &Model,
    image: &Image,
    anns: &[Annotation],
    recognize: bool,
    opts: &StepOptions,
    rng: &mut R,
) -> Result<StepForward> {
    let store = &model.store;
    let mut g = Graph::new();
    let x = g.input(image.to_tensor(crate::backbone::STRIDE));
    let feats = model.backbone.extract_features(&mut g, store, x)?;
    let tpn_out = model.tpn.forward(&mut g, store, feats)?;
    let grid = tpn_out.grid;
    let anchors = generate_anchors(grid.fh, grid.fw, &model.config.tpn.anchors);
    let gts: Vec<BBox> = anns.iter().map(|a| a.bbox).collect();
    let anchor_batch = sample_anchors(&anchors, &gts, &opts.anchors, rng)?;
    let tpn = loss_tpn(&mut g, &tpn_out, &anchor_batch)?;

    let props = generate_proposals(
        g.value(tpn_out.scores),
        g.value(tpn_out.deltas),
        &grid,
        &anchors,
        image.width(),
        image.height(),
        &opts.proposal_cfg,
    )?;
    let mut candidates: Vec<BBox> = props.iter().map(|p| p.bbox).collect();
    if opts.include_gt {
        candidates.extend(gts.iter().copied());
    }
    let mut report = LossReport { n: anchor_batch.indices.len(), n_pos: anchor_batch.positives(), ..Default::default() };
    let mut out = StepForward {
        graph: Graph::new(),
        tpn,
        drn: LossTerms::default(),
        report,
        anchor_batch,
        proposal_batch: ProposalBatch::default(),
        candidates: Vec::new(),
    };
    if candidates.is_empty() {
        out.report.no_proposals = true;
        losses::report(&g, &out.tpn, &out.drn, &mut out.report);
        out.graph = g;
        return Ok(out);
    }

    let mut codes: HashMap<usize, RegionCode> = HashMap::new();
    let batch = sample_proposals(&candidates, &gts, &opts.proposals, rng, |pool| {
        if pool.is_empty() {
            return Ok(Vec::new());
        }
        let mut rows = Vec::with_capacity(pool.len());
        for &i in pool {
            let rc = model.rfe.encode_box(&mut g, store, feats, &candidates[i])?;
            rows.push(rc.code);
            codes.insert(i, rc);
        }
        let m = g.stack_rows(&rows)?;
        let (logits, _) = model.tdn.forward_rows(&mut g, store, m)?;
        let v = g.value(logits);
        Ok((0..pool.len()).map(|k| textness(v[2 * k], v[2 * k + 1])).collect())
    })?;
    if batch.is_empty() {
        out.report.no_proposals = true;
        losses::report(&g, &out.tpn, &out.drn, &mut out.report);
        out.graph = g;
        out.candidates = candidates;
        return Ok(out);
    }
    let mut batch_codes = Vec::with_capacity(batch.len());
    for &i in &batch.indices {
        let rc = match codes.get(&i) {
            Some(rc) => *rc,
            None => model.rfe.encode_box(&mut g, store, feats, &candidates[i])?,
        };
        batch_codes.push(rc);
    }
    let rows: Vec<Var> = batch_codes.iter().map(|c| c.code).collect();
    let m = g.stack_rows(&rows)?;
    let (logits, deltas) = model.tdn.forward_rows(&mut g, store, m)?;
    let mut rec = Vec::new();
    if recognize {
        for (k, rc) in batch_codes.iter().enumerate() {
            let Some(j) = batch.gt[k] else { continue };
            let text = Vocab::normalize(&anns[j].text);
            let tokens = Vocab::training_sequence(&text)?;
            let ctx = model.trn.encode_context(&mut g, store, rc.context)?;
            let dec = model.trn.decode_train(&mut g, store, &ctx, &tokens)?;
            rec.push(rec_loss_sum(&mut g, dec.log_probs, &tokens)?);
        }
    }
    out.drn = loss_drn(&mut g, logits, deltas, &batch.labels, &batch.targets, &rec)?;
    report = out.report;
    report.n_hat = batch.len();
    report.n_hat_pos = batch.positives();
    losses::report(&g, &out.tpn, &out.drn, &mut report);
    out.report = report;
    out.graph = g;
    out.proposal_batch = batch;
    out.candidates = candidates;
    Ok(out)
}

/// Learning rate per parameter group; zero means the group is not updated.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GroupRates {
    pub conv: Float,
    pub new: Float,
    pub trn: Float,
}

impl GroupRates {
    pub fn get(&self, g: Group) -> Float {
        match g {
            Group::FrozenConv => 0.0,
            Group::Conv => self.conv,
            Group::New => self.new,
            Group::Trn => self.trn,
        }
    }
}

/// ADAM moments for every parameter.
#[derive(Clone, Debug, Default)]
pub struct Optimizer {
    pub config: AdamConfig,
    states: HashMap<ParamId, AdamState>,
}

impl Optimizer {
    pub fn new(config: AdamConfig) -> Self {
        Optimizer { config, states: HashMap::new() }
    }

    /// Update every parameter of `ids` from its accumulated gradient.
    pub fn step(&mut self, model: &mut Model, ids: &[ParamId], lr: Float) -> Result<()> {
        for &id in ids {
            let p = model.store.get_mut(id);
            let state = self.states.entry(id).or_insert_with(|| AdamState::new(p.numel(), self.config));
            let grad = std::mem::take(&mut p.grad);
            let r = adam_step(p.data_mut(), &grad, state, lr);
            p.grad = grad;
            r?;
        }
        Ok(())
    }
}

/// Make only groups with a positive rate differentiable so the tape skips
/// the rest.
pub fn apply_rates(model: &mut Model, rates: &GroupRates) {
    for g in [Group::FrozenConv, Group::Conv, Group::New, Group::Trn] {
        let on = rates.get(g) > 0.0;
        for id in model.group(g) {
            model.store.set_requires_grad(id, on);
        }
    }
}

/// One image, one combined backward over both losses, one ADAM update per
/// group with a positive rate. Recognition runs only when `rates.trn > 0`.
pub fn train_step<R: Rng + ?Sized>(
    model: &mut Model,
    opt: &mut Optimizer,
    image: &Image,
    anns: &[Annotation],
    rates: &GroupRates,
    opts: &StepOptions,
    rng: &mut R,
) -> Result<LossReport> {
    apply_rates(model, rates);
    let mut fwd = forward_losses(model, image, anns, rates.trn > 0.0, opts, rng)?;
    if !fwd.report.total.is_finite() {
        return Err(Error::Numeric(format!("train_step: non-finite loss {:?}", fwd.report)));
    }
    let Some(total) = fwd.total()? else { return Ok(fwd.report) };
    fwd.graph.backward(total)?;
    model.store.zero_grad();
    fwd.graph.accumulate_param_grads(&mut model.store);
    for g in [Group::Conv, Group::New, Group::Trn] {
        let lr = rates.get(g);
        if lr > 0.0 {
            let ids = model.group(g);
            opt.step(model, &ids, lr)?;
        }
    }
    Ok(fwd.report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::synthdata::{generate_image, SceneSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_opts() -> StepOptions {
        StepOptions {
            anchors: AnchorSampling { batch: 64, max_positives: 32, ..Default::default() },
            proposals: ProposalSampling { batch: 16, max_positives: 8, mine_pool: 24, ..Default::default() },
            proposal_cfg: ProposalConfig { top_n: 24, ..Default::default() },
            include_gt: true,
        }
    }

    fn scene(seed: u64) -> crate::synthdata::Scene {
        let spec = SceneSpec { width: 96, height: 48, words: (1, 2), scale: (2, 2), ..SceneSpec::default() };
        generate_image(&spec, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    fn snapshot(m: &Model, g: Group) -> Vec<Vec<Float>> {
        m.group(g).iter().map(|&id| m.store.get(id).data().to_vec()).collect()
    }

    #[test]
    fn empty_mining_pool_samples_positives_only() {
        let m = Model::new(ModelConfig::desk(), 1).unwrap();
        let s = scene(4);
        let mut opts = small_opts();
        opts.proposals.mine_pool = 0;
        let fwd = forward_losses(&m, &s.image, &s.annotations, true, &opts, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(fwd.proposal_batch.labels.iter().all(|&l| l == 1));
        assert!(!fwd.proposal_batch.labels.is_empty());
    }

    #[test]
    fn locked_groups_stay_bit_identical() {
        let mut m = Model::new(ModelConfig::desk(), 1).unwrap();
        let s = scene(2);
        let (frozen, trn, conv) = (snapshot(&m, Group::FrozenConv), snapshot(&m, Group::Trn), snapshot(&m, Group::Conv));
        let mut opt = Optimizer::default();
        let rates = GroupRates { conv: 1e-5, new: 1e-3, trn: 0.0 };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..2 {
            train_step(&mut m, &mut opt, &s.image, &s.annotations, &rates, &small_opts(), &mut rng).unwrap();
        }
        assert_eq!(snapshot(&m, Group::FrozenConv), frozen);
        assert_eq!(snapshot(&m, Group::Trn), trn);
        assert_ne!(snapshot(&m, Group::Conv), conv);
    }

    #[test]
    fn detection_losses_do_not_reach_tpn() {
        let m = Model::new(ModelConfig::desk(), 3).unwrap();
        let s = scene(4);
        let mut fwd = forward_losses(&m, &s.image, &s.annotations, true, &small_opts(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert!(fwd.proposal_batch.positives() > 0);
        let drn = fwd.drn.total(&mut fwd.graph).unwrap().unwrap();
        fwd.graph.backward(drn).unwrap();
        let mut store = m.store.clone();
        store.zero_grad();
        fwd.graph.accumulate_param_grads(&mut store);
        for id in m.tpn.params() {
            assert!(store.get(id).grad.iter().all(|&v| v == 0.0), "{}", store.get(id).name);
        }
        let any = |ids: Vec<ParamId>| ids.iter().any(|&id| store.get(id).grad.iter().any(|&v| v != 0.0));
        assert!(any(m.tdn.params()) && any(m.rfe.params()) && any(m.trn.params()));
    }

    #[test]
    fn report_parts_sum_and_are_non_negative() {
        let m = Model::new(ModelConfig::desk(), 5).unwrap();
        for seed in 0..3 {
            let s = scene(seed);
            let f = forward_losses(&m, &s.image, &s.annotations, true, &small_opts(), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let r = f.report;
            let parts = [r.l_tpn_cls, r.l_tpn_reg, r.l_tdn_cls, r.l_tdn_reg, r.l_rec];
            assert!(parts.iter().all(|&p| p >= 0.0 && p.is_finite()));
            assert!((parts.iter().sum::<Float>() - r.total).abs() < 1e-12);
            assert!(r.n_hat_pos <= 8 && r.n_hat <= 16 && r.n <= 64);
        }
    }

    #[test]
    fn empty_image_trains_tpn_only() {
        let mut m = Model::new(ModelConfig::desk(), 6).unwrap();
        let img = Image::new(64, 32, [10, 200, 30]);
        let mut opt = Optimizer::default();
        let rates = GroupRates { conv: 1e-5, new: 1e-3, trn: 1e-3 };
        let r = train_step(&mut m, &mut opt, &img, &[], &rates, &small_opts(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(r.n_pos, 0);
        assert_eq!((r.l_tpn_reg, r.l_tdn_reg, r.l_rec), (0.0, 0.0, 0.0));
    }
}
