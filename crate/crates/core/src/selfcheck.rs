//! Finite-difference verification of every component on tiny random
//! instances.

use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::backbone::{Backbone, BackboneConfig};
use crate::error::{Error, Result};
use crate::geometry::{AnchorSet, BBox};
use crate::model::{Model, ModelConfig};
use crate::nn::Init;
use crate::rfe::{Rfe, RfeConfig};
use crate::synthdata::{generate_image, SceneSpec};
use crate::tdn::{ProposalSampling, Tdn, TdnConfig};
use crate::tensor::gradcheck::{check_params, GradcheckOptions, TensorCheck};
use crate::tensor::{Graph, ParamStore, Tensor, Var};
use crate::tpn::{AnchorSampling, ProposalConfig, Tpn, TpnConfig};
use crate::training::losses::rec_loss_sum;
use crate::training::{forward_losses, StepOptions};
use crate::trn::{Trn, TrnConfig, Vocab};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Component {
    Backbone,
    Tpn,
    Rfe,
    Tdn,
    Trn,
    Losses,
}

impl Component {
    pub const ALL: [Component; 6] =
        [Component::Backbone, Component::Tpn, Component::Rfe, Component::Tdn, Component::Trn, Component::Losses];

    pub fn name(self) -> &'static str {
        match self {
            Component::Backbone => "backbone",
            Component::Tpn => "tpn",
            Component::Rfe => "rfe",
            Component::Tdn => "tdn",
            Component::Trn => "trn",
            Component::Losses => "losses",
        }
    }

    /// `all` expands to every component.
    pub fn parse_list(s: &str) -> Result<Vec<Component>> {
        if s == "all" {
            return Ok(Component::ALL.to_vec());
        }
        Ok(vec![s.parse()?])
    }
}

impl FromStr for Component {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Component::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown component `{s}` (backbone, tpn, rfe, tdn, trn, losses, all)")))
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ComponentReport {
    pub component: Component,
    pub tensors: Vec<TensorCheck>,
    pub max_rel_error: f64,
    pub passed: bool,
}

fn random_input<R: Rng + ?Sized>(rng: &mut R, shape: Vec<usize>) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("shape matches")
}

/// `Σ w ⊙ y` with weights drawn from `seed`, identical on every call.
fn project(g: &mut Graph, y: Var, seed: u64) -> Result<Var> {
    let n = g.value(y).len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let flat = g.reshape(y, vec![n])?;
    let c = g.constant_vec(w);
    let p = g.mul(flat, c)?;
    Ok(g.sum(p))
}

/// Move every parameter off its initial value: zero biases on inputs that
/// are exactly zero would otherwise sit on ReLU kinks.
fn jitter<R: Rng + ?Sized>(store: &mut ParamStore, rng: &mut R) {
    for id in store.ids().collect::<Vec<_>>() {
        for v in store.get_mut(id).data_mut() {
            *v += rng.random_range(-JITTER..JITTER);
        }
    }
}

const JITTER: crate::tensor::Float = 0.1;

fn report(component: Component, r: crate::tensor::gradcheck::GradcheckReport) -> ComponentReport {
    ComponentReport { component, max_rel_error: r.max_rel_error(), passed: r.passed(), tensors: r.tensors }
}

/// Checker settings used by the command line: step 1e-5, tolerance 1e-4,
/// elements below 1e-6 ignored.
pub fn default_options() -> GradcheckOptions {
    GradcheckOptions { kink_tolerance: Some(1e-3), ..GradcheckOptions::default() }
}

pub fn check(component: Component, seed: u64, opts: GradcheckOptions) -> Result<ComponentReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let r = match component {
        Component::Backbone => {
            let cfg = BackboneConfig { channels: vec![3, 3, 4, 4, 4, 4, 4, 5, 5, 5, 5, 5, 4], frozen_prefix: 0, init: Init::he() };
            let bb = Backbone::new(&mut store, cfg, &mut rng)?;
            jitter(&mut store, &mut rng);
            let x = random_input(&mut rng, vec![3, 16, 24]);
            check_params(&mut store, opts, |g, s| {
                let xi = g.input(x.clone());
                let f = bb.extract_features(g, s, xi)?;
                project(g, f, seed)
            })?
        }
        Component::Tpn => {
            let anchors = AnchorSet { scales: vec![256.0, 1024.0], ratios: vec![1.0, 3.0], stride: 8 };
            let tpn = Tpn::new(&mut store, 3, TpnConfig { width: 4, anchors }, &mut rng);
            jitter(&mut store, &mut rng);
            let x = random_input(&mut rng, vec![3, 4, 6]);
            check_params(&mut store, opts, |g, s| {
                let xi = g.input(x.clone());
                let out = tpn.forward(g, s, xi)?;
                let a = project(g, out.scores, seed)?;
                let b = project(g, out.deltas, seed + 1)?;
                g.add(a, b)
            })?
        }
        Component::Rfe => {
            let rfe = Rfe::new(&mut store, 3, RfeConfig { hidden: 5, ..RfeConfig::default() }, &mut rng);
            jitter(&mut store, &mut rng);
            let x = random_input(&mut rng, vec![3, 4, 10]);
            let b = BBox::new(3.0, 2.0, 70.0, 30.0);
            check_params(&mut store, opts, |g, s| {
                let xi = g.input(x.clone());
                let rc = rfe.encode_box(g, s, xi, &b)?;
                project(g, rc.context, seed)
            })?
        }
        Component::Tdn => {
            let tdn = Tdn::new(&mut store, 5, TdnConfig { fc: 6 }, &mut rng);
            jitter(&mut store, &mut rng);
            let x = random_input(&mut rng, vec![3, 5]);
            check_params(&mut store, opts, |g, s| {
                let xi = g.input(x.clone());
                let (l, d) = tdn.forward_rows(g, s, xi)?;
                let a = project(g, l, seed)?;
                let b = project(g, d, seed + 1)?;
                g.add(a, b)
            })?
        }
        Component::Trn => {
            let trn = Trn::new(&mut store, 5, TrnConfig { dec_hidden: 6, attn: 4, max_len: 30 }, &mut rng);
            jitter(&mut store, &mut rng);
            let x = random_input(&mut rng, vec![4, 5]);
            let tokens = Vocab::training_sequence("ab")?;
            check_params(&mut store, opts, |g, s| {
                let xi = g.input(x.clone());
                let ctx = trn.encode_context(g, s, xi)?;
                let dec = trn.decode_train(g, s, &ctx, &tokens)?;
                rec_loss_sum(g, dec.log_probs, &tokens)
            })?
        }
        Component::Losses => {
            let cfg = ModelConfig {
                backbone: BackboneConfig { channels: vec![3, 3, 4, 4, 4, 4, 4, 4, 4, 4, 4, 4, 4], frozen_prefix: 0, init: Init::he() },
                tpn: TpnConfig { width: 4, anchors: AnchorSet::default() },
                rfe: RfeConfig { hidden: 4, ..RfeConfig::default() },
                tdn: TdnConfig { fc: 4 },
                trn: TrnConfig { dec_hidden: 4, attn: 3, max_len: 30 },
            };
            let mut model = Model::new(cfg, seed)?;
            for id in model.store.ids().collect::<Vec<_>>() {
                model.store.set_requires_grad(id, true);
            }
            jitter(&mut model.store, &mut rng);
            let spec = SceneSpec { width: 96, height: 40, words: (1, 1), scale: (2, 2), ..SceneSpec::default() };
            let scene = generate_image(&spec, &mut rng)?;
            // Ground-truth boxes only, so the candidate set cannot change
            // under parameter perturbations.
            let step = StepOptions {
                anchors: AnchorSampling { batch: 32, max_positives: 8, ..Default::default() },
                proposals: ProposalSampling { batch: 4, max_positives: 4, ..Default::default() },
                proposal_cfg: ProposalConfig { top_n: 0, ..Default::default() },
                include_gt: true,
            };
            let opts = GradcheckOptions { max_elems: opts.max_elems.or(Some(6)), ..opts };
            let mut store = model.store.clone();
            check_params(&mut store, opts, |g, s| {
                model.store = s.clone();
                let mut fwd = forward_losses(&model, &scene.image, &scene.annotations, true, &step, &mut ChaCha8Rng::seed_from_u64(seed))?;
                let total = fwd.total()?.ok_or_else(|| Error::contract("gradcheck: empty loss"))?;
                // Rebuild the graph inside the caller's so the harness can
                // read the scalar and run backward on it.
                *g = std::mem::take(&mut fwd.graph);
                Ok(total)
            })?
        }
    };
    Ok(report(component, r))
}
