//! The assembled spotting network and its parameter groups.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::backbone::{Backbone, BackboneConfig};
use crate::error::{Error, Result};
use crate::geometry::AnchorSet;
use crate::rfe::{PoolMode, Rfe, RfeConfig};
use crate::tdn::{Tdn, TdnConfig};
use crate::tensor::{Float, ParamId, ParamStore};
use crate::tpn::{Tpn, TpnConfig};
use crate::trn::{Trn, TrnConfig};

/// Architecture hyper-parameters of every component.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ModelConfig {
    pub backbone: BackboneConfig,
    pub tpn: TpnConfig,
    pub rfe: RfeConfig,
    pub tdn: TdnConfig,
    pub trn: TrnConfig,
}

impl ModelConfig {
    /// Small configuration that trains on one CPU core in minutes.
    pub fn desk() -> Self {
        ModelConfig {
            backbone: BackboneConfig::scaled(1.0 / 16.0),
            tpn: TpnConfig { width: 32, anchors: AnchorSet::default() },
            rfe: RfeConfig { hidden: 64, ..RfeConfig::default() },
            tdn: TdnConfig { fc: 64 },
            trn: TrnConfig { dec_hidden: 64, attn: 32, max_len: 30 },
        }
    }

    /// Flat numeric encoding stored alongside checkpoints.
    pub fn to_vec(&self) -> Vec<Float> {
        let mut v: Vec<Float> = self.backbone.channels.iter().map(|&c| c as Float).collect();
        v.push(self.backbone.frozen_prefix as Float);
        v.push(self.tpn.width as Float);
        let a = &self.tpn.anchors;
        v.push(a.scales.len() as Float);
        v.extend(&a.scales);
        v.push(a.ratios.len() as Float);
        v.extend(&a.ratios);
        v.push(a.stride as Float);
        let r = &self.rfe;
        v.extend([r.pool_h, r.w_max].map(|x| x as Float));
        match r.mode {
            PoolMode::Varying => v.extend([0.0, 0.0]),
            PoolMode::Fixed { width } => v.extend([1.0, width as Float]),
        }
        v.extend([r.hidden, r.stride, self.tdn.fc, self.trn.dec_hidden, self.trn.attn, self.trn.max_len].map(|x| x as Float));
        v
    }

    pub fn from_vec(v: &[Float]) -> Result<Self> {
        let mut rd = Reader(v.iter());
        let mut channels = Vec::with_capacity(13);
        for _ in 0..13 {
            channels.push(rd.count("channels")?);
        }
        let frozen_prefix = rd.count("frozen_prefix")?;
        let width = rd.count("tpn.width")?;
        let ns = rd.count("anchor scales")?;
        let scales = (0..ns).map(|_| rd.float("scale")).collect::<Result<Vec<_>>>()?;
        let nr = rd.count("anchor ratios")?;
        let ratios = (0..nr).map(|_| rd.float("ratio")).collect::<Result<Vec<_>>>()?;
        let stride = rd.count("anchor stride")?;
        let (pool_h, w_max) = (rd.count("pool_h")?, rd.count("w_max")?);
        let mode = match (rd.count("mode")?, rd.count("w_fixed")?) {
            (0, _) => PoolMode::Varying,
            (1, width) => PoolMode::Fixed { width },
            (m, _) => return Err(Error::Config(format!("unknown pooling mode {m}"))),
        };
        let (hidden, rstride, fc) = (rd.count("hidden")?, rd.count("stride")?, rd.count("tdn.fc")?);
        let (dec_hidden, attn, max_len) = (rd.count("dec_hidden")?, rd.count("attn")?, rd.count("max_len")?);
        let cfg = ModelConfig {
            backbone: BackboneConfig { channels, frozen_prefix, ..BackboneConfig::default() },
            tpn: TpnConfig { width, anchors: AnchorSet { scales, ratios, stride } },
            rfe: RfeConfig { pool_h, w_max, mode, hidden, stride: rstride },
            tdn: TdnConfig { fc },
            trn: TrnConfig { dec_hidden, attn, max_len },
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        let positive = [
            ("tpn.width", self.tpn.width),
            ("rfe.pool_h", self.rfe.pool_h),
            ("rfe.w_max", self.rfe.w_max),
            ("rfe.hidden", self.rfe.hidden),
            ("tdn.fc", self.tdn.fc),
            ("trn.dec_hidden", self.trn.dec_hidden),
            ("trn.attn", self.trn.attn),
            ("trn.max_len", self.trn.max_len),
        ];
        if let Some((k, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{k} must be positive")));
        }
        if let PoolMode::Fixed { width: 0 } = self.rfe.mode {
            return Err(Error::Config("fixed pooling width must be positive".into()));
        }
        if self.tpn.anchors.per_cell() == 0 {
            return Err(Error::Config("anchor set is empty".into()));
        }
        if self.rfe.stride != crate::backbone::STRIDE || self.tpn.anchors.stride != crate::backbone::STRIDE {
            return Err(Error::Config("feature stride must be 8".into()));
        }
        Ok(())
    }
}

struct Reader<'a>(std::slice::Iter<'a, Float>);

impl Reader<'_> {
    fn float(&mut self, what: &str) -> Result<Float> {
        self.0.next().copied().ok_or_else(|| Error::Config(format!("model config truncated at {what}")))
    }

    fn count(&mut self, what: &str) -> Result<usize> {
        let x = self.float(what)?;
        if x < 0.0 || x.fract() != 0.0 || !x.is_finite() {
            return Err(Error::Config(format!("model config field {what} = {x} is not a count")));
        }
        Ok(x as usize)
    }
}

/// Parameter groups with distinct learning-rate schedules.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Group {
    /// Leading convolutions that are never updated.
    FrozenConv,
    Conv,
    /// TPN, RFE and TDN.
    New,
    Trn,
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub backbone: Backbone,
    pub tpn: Tpn,
    pub rfe: Rfe,
    pub tdn: Tdn,
    pub trn: Trn,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let backbone = Backbone::new(&mut store, config.backbone.clone(), &mut rng)?;
        let c = config.backbone.out_channels();
        let tpn = Tpn::new(&mut store, c, config.tpn.clone(), &mut rng);
        let rfe = Rfe::new(&mut store, c, config.rfe, &mut rng);
        let tdn = Tdn::new(&mut store, config.rfe.hidden, config.tdn, &mut rng);
        let trn = Trn::new(&mut store, config.rfe.hidden, config.trn, &mut rng);
        let mut m = Model { config, store, backbone, tpn, rfe, tdn, trn };
        for id in m.group(Group::FrozenConv) {
            m.store.set_requires_grad(id, false);
        }
        Ok(m)
    }

    pub fn group(&self, g: Group) -> Vec<ParamId> {
        match g {
            Group::FrozenConv => self.backbone.frozen_params(),
            Group::Conv => self.backbone.trainable_params(),
            Group::New => {
                let mut v = self.tpn.params();
                v.extend(self.rfe.params());
                v.extend(self.tdn.params());
                v
            }
            Group::Trn => self.trn.params(),
        }
    }

    pub fn group_of(&self, id: ParamId) -> Group {
        [Group::FrozenConv, Group::Conv, Group::New, Group::Trn]
            .into_iter()
            .find(|&g| self.group(g).contains(&id))
            .expect("every parameter belongs to a group")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_roundtrip() {
        for cfg in [ModelConfig::default(), ModelConfig::desk()] {
            let back = ModelConfig::from_vec(&cfg.to_vec()).unwrap();
            assert_eq!(back, cfg);
        }
        let mut fixed = ModelConfig::desk();
        fixed.rfe.mode = PoolMode::Fixed { width: 20 };
        assert_eq!(ModelConfig::from_vec(&fixed.to_vec()).unwrap(), fixed);
        assert!(ModelConfig::from_vec(&fixed.to_vec()[..20]).is_err());
    }

    #[test]
    fn groups_partition_params() {
        let m = Model::new(ModelConfig::desk(), 0).unwrap();
        let mut all: Vec<ParamId> = [Group::FrozenConv, Group::Conv, Group::New, Group::Trn]
            .into_iter()
            .flat_map(|g| m.group(g))
            .collect();
        assert_eq!(all.len(), m.store.len());
        all.sort();
        all.dedup();
        assert_eq!(all.len(), m.store.len());
        assert_eq!(m.group(Group::FrozenConv).len(), 8);
        assert!(m.group(Group::FrozenConv).iter().all(|&id| !m.store.get(id).requires_grad));
    }
}
