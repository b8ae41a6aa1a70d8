//! Four-stage schedule of data difficulty and per-group learning rates.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;

use super::augment::{augment, AugmentConfig};
use super::losses::LossReport;
use super::{train_step, GroupRates, Optimizer, StepOptions};
use crate::backbone::BackboneConfig;
use crate::error::{Error, Result};
use crate::kv::KvFile;
use crate::model::{Model, ModelConfig};
use crate::rfe::PoolMode;
use crate::synthdata::Dataset;
use crate::tensor::{AdamConfig, Float};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DataSource {
    /// Pure-colour synthetic images.
    Pure,
    /// Cluttered synthetic images.
    Cluttered,
    /// Held-out harder synthetic split standing in for real images.
    Hard,
}

impl DataSource {
    pub fn key(self) -> &'static str {
        match self {
            DataSource::Pure => "data_pure",
            DataSource::Cluttered => "data_cluttered",
            DataSource::Hard => "data_hard",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurriculumStage {
    pub id: u8,
    pub iters: usize,
    pub data: DataSource,
    pub rates: GroupRates,
}

impl CurriculumStage {
    pub fn trn_enabled(&self) -> bool {
        self.rates.trn > 0.0
    }
}

pub const BASE_ITERS: [usize; 4] = [30_000, 30_000, 50_000, 20_000];

/// The reference schedule with budgets multiplied by `scale`.
pub fn stage_table(scale: Float) -> [CurriculumStage; 4] {
    let iters = |i: usize| (BASE_ITERS[i] as Float * scale).round() as usize;
    [
        CurriculumStage { id: 1, iters: iters(0), data: DataSource::Pure, rates: GroupRates { conv: 1e-5, new: 1e-3, trn: 0.0 } },
        CurriculumStage { id: 2, iters: iters(1), data: DataSource::Pure, rates: GroupRates { conv: 1e-5, new: 5e-4, trn: 1e-3 } },
        CurriculumStage { id: 3, iters: iters(2), data: DataSource::Cluttered, rates: GroupRates { conv: 1e-5, new: 1e-4, trn: 1e-4 } },
        CurriculumStage { id: 4, iters: iters(3), data: DataSource::Hard, rates: GroupRates { conv: 0.0, new: 1e-5, trn: 1e-5 } },
    ]
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub seed: u64,
    pub stages: Vec<CurriculumStage>,
    pub data_pure: Option<PathBuf>,
    pub data_cluttered: Option<PathBuf>,
    pub data_hard: Option<PathBuf>,
    pub augment: AugmentConfig,
    pub step: StepOptions,
    pub adam: AdamConfig,
    pub loss_csv: Option<PathBuf>,
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelConfig::desk(),
            seed: 0,
            stages: stage_table(0.01).to_vec(),
            data_pure: None,
            data_cluttered: None,
            data_hard: None,
            augment: AugmentConfig::default(),
            step: StepOptions::default(),
            adam: AdamConfig::default(),
            loss_csv: None,
            log_every: 50,
        }
    }
}

impl TrainConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let base = path.parent().unwrap_or(Path::new("."));
        TrainConfig::parse(KvFile::load(path)?, base)
    }

    /// Parse `key = value` settings; paths resolve against `base`.
    pub fn parse(mut kv: KvFile, base: &Path) -> Result<Self> {
        let d = TrainConfig::default();
        let mut model = match kv.raw("model").as_deref() {
            None | Some("desk") => ModelConfig::desk(),
            Some("full") => ModelConfig::default(),
            Some(other) => return Err(Error::Config(format!("model must be desk or full, got `{other}`"))),
        };
        if let Some(s) = kv.get::<Float>("channel_scale")? {
            model.backbone = BackboneConfig::scaled(s);
        }
        model.tpn.width = kv.get_or("tpn_width", model.tpn.width)?;
        model.rfe.hidden = kv.get_or("rfe_hidden", model.rfe.hidden)?;
        model.rfe.w_max = kv.get_or("w_max", model.rfe.w_max)?;
        let pool_width = kv.get::<usize>("pool_width")?;
        match kv.raw("pool").as_deref() {
            None | Some("varying") => {}
            Some("fixed") => model.rfe.mode = PoolMode::Fixed { width: pool_width.unwrap_or(20) },
            Some(other) => return Err(Error::Config(format!("pool must be varying or fixed, got `{other}`"))),
        }
        model.tdn.fc = kv.get_or("tdn_fc", model.tdn.fc)?;
        model.trn.dec_hidden = kv.get_or("trn_hidden", model.trn.dec_hidden)?;
        model.trn.attn = kv.get_or("trn_attn", model.trn.attn)?;
        model.trn.max_len = kv.get_or("max_len", model.trn.max_len)?;
        model.validate()?;

        let scale = kv.get_or("budget_scale", 0.01 as Float)?;
        if !(scale >= 0.0) {
            return Err(Error::Config("budget_scale must be non-negative".into()));
        }
        let mut table = stage_table(scale);
        for st in table.iter_mut() {
            let n = st.id;
            st.iters = kv.get_or(&format!("iters{n}"), st.iters)?;
            st.rates.conv = kv.get_or(&format!("lr{n}_conv"), st.rates.conv)?;
            st.rates.new = kv.get_or(&format!("lr{n}_new"), st.rates.new)?;
            st.rates.trn = kv.get_or(&format!("lr{n}_trn"), st.rates.trn)?;
            let r = st.rates;
            if [r.conv, r.new, r.trn].iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
                return Err(Error::Config(format!("stage {n}: learning rates must be finite and non-negative")));
            }
        }
        let ids: Vec<u8> = kv.list("stages")?.unwrap_or_else(|| vec![1, 2, 3, 4]);
        let mut stages = Vec::new();
        for id in ids {
            let st = table
                .iter()
                .find(|s| s.id == id)
                .ok_or_else(|| Error::Config(format!("unknown stage {id}")))?;
            stages.push(*st);
        }
        let path = |kv: &mut KvFile, k: &str| kv.raw(k).map(|p| base.join(p));

        let mut augment = d.augment.clone();
        if !kv.get_or("augment", true)? {
            augment = AugmentConfig::none();
        }
        if let Some(r) = kv.list::<Float>("width_ratios")? {
            augment.ratios = r;
        }
        augment.crop_prob = kv.get_or("crop_prob", augment.crop_prob)?;
        augment.pad = kv.get_or("crop_pad", augment.pad)?;
        augment.short_side = kv.get_or("short_side", augment.short_side)?;
        augment.max_long = kv.get_or("max_long", augment.max_long)?;

        let mut step = d.step.clone();
        step.anchors.batch = kv.get_or("anchor_batch", step.anchors.batch)?;
        step.anchors.max_positives = kv.get_or("anchor_max_pos", step.anchors.max_positives)?;
        step.anchors.pos_iou = kv.get_or("anchor_pos_iou", step.anchors.pos_iou)?;
        step.anchors.neg_iou = kv.get_or("anchor_neg_iou", step.anchors.neg_iou)?;
        step.proposals.batch = kv.get_or("proposal_batch", step.proposals.batch)?;
        step.proposals.max_positives = kv.get_or("proposal_max_pos", step.proposals.max_positives)?;
        step.proposals.pos_iou = kv.get_or("proposal_pos_iou", step.proposals.pos_iou)?;
        step.proposals.neg_iou = kv.get_or("proposal_neg_iou", step.proposals.neg_iou)?;
        step.proposals.mine_pool = kv.get_or("mine_pool", step.proposals.mine_pool)?;
        step.proposal_cfg.top_n = kv.get_or("train_top_n", step.proposal_cfg.top_n)?;
        step.proposal_cfg.min_size = kv.get_or("min_size", step.proposal_cfg.min_size)?;
        step.include_gt = kv.get_or("include_gt", step.include_gt)?;

        let cfg = TrainConfig {
            model,
            seed: kv.get_or("seed", d.seed)?,
            stages,
            data_pure: path(&mut kv, "data_pure"),
            data_cluttered: path(&mut kv, "data_cluttered"),
            data_hard: path(&mut kv, "data_hard"),
            augment,
            step,
            adam: d.adam,
            loss_csv: path(&mut kv, "loss_csv"),
            log_every: kv.get_or("log_every", d.log_every)?,
        };
        kv.finish()?;
        for st in &cfg.stages {
            if st.iters > 0 && cfg.data_dir(st.data).is_none() {
                return Err(Error::Config(format!("stage {} needs `{}`", st.id, st.data.key())));
            }
        }
        Ok(cfg)
    }

    pub fn data_dir(&self, src: DataSource) -> Option<&Path> {
        match src {
            DataSource::Pure => self.data_pure.as_deref(),
            DataSource::Cluttered => self.data_cluttered.as_deref(),
            DataSource::Hard => self.data_hard.as_deref(),
        }
    }

    pub fn total_iters(&self) -> usize {
        self.stages.iter().map(|s| s.iters).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurveRow {
    pub iteration: usize,
    pub stage: u8,
    pub report: LossReport,
}

pub const CURVE_HEADER: &str = "iteration,stage,l_tpn_cls,l_tpn_reg,l_tdn_cls,l_tdn_reg,l_rec,total";

impl CurveRow {
    pub fn csv(&self) -> String {
        let r = &self.report;
        format!(
            "{},{},{},{},{},{},{},{}",
            self.iteration, self.stage, r.l_tpn_cls, r.l_tpn_reg, r.l_tdn_cls, r.l_tdn_reg, r.l_rec, r.total
        )
    }
}

pub fn curve_csv(rows: &[CurveRow]) -> String {
    let mut s = String::from(CURVE_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(s, "{}", r.csv());
    }
    s
}

/// Datasets indexed by source, loaded on demand.
#[derive(Default)]
pub struct StageData {
    sets: Vec<(DataSource, Dataset)>,
}

impl StageData {
    pub fn insert(&mut self, src: DataSource, ds: Dataset) {
        self.sets.retain(|(s, _)| *s != src);
        self.sets.push((src, ds));
    }

    pub fn get(&self, src: DataSource) -> Option<&Dataset> {
        self.sets.iter().find(|(s, _)| *s == src).map(|(_, d)| d)
    }

    pub fn load(cfg: &TrainConfig) -> Result<Self> {
        let mut out = StageData::default();
        for st in cfg.stages.iter().filter(|s| s.iters > 0) {
            if out.get(st.data).is_none() {
                let dir = cfg.data_dir(st.data).ok_or_else(|| Error::Config(format!("missing `{}`", st.data.key())))?;
                out.insert(st.data, Dataset::load(dir)?);
            }
        }
        Ok(out)
    }
}

/// Run every configured stage, one random augmented image per iteration.
/// `on_row` sees each loss row as it is produced.
pub fn run_curriculum<R: Rng + ?Sized>(
    model: &mut Model,
    cfg: &TrainConfig,
    data: &StageData,
    rng: &mut R,
    mut on_row: impl FnMut(&CurveRow),
) -> Result<Vec<CurveRow>> {
    let mut opt = Optimizer::new(cfg.adam);
    let mut rows = Vec::with_capacity(cfg.total_iters());
    let mut it = 0;
    let start = Instant::now();
    for st in &cfg.stages {
        if st.iters == 0 {
            continue;
        }
        let ds = data.get(st.data).ok_or_else(|| Error::Config(format!("no data for stage {}", st.id)))?;
        if ds.is_empty() {
            return Err(Error::Config(format!("stage {} dataset {} is empty", st.id, ds.root.display())));
        }
        log::info!("stage {}: {} iterations on {}", st.id, st.iters, ds.root.display());
        let mut window: Vec<Float> = Vec::new();
        for k in 0..st.iters {
            let sample = &ds.samples[rng.random_range(0..ds.len())];
            let (img, anns) = augment(&sample.image, &sample.annotations, &cfg.augment, rng)?;
            let report = train_step(model, &mut opt, &img, &anns, &st.rates, &cfg.step, rng)?;
            it += 1;
            let row = CurveRow { iteration: it, stage: st.id, report };
            on_row(&row);
            rows.push(row);
            window.push(report.total);
            if cfg.log_every > 0 && ((k + 1) % cfg.log_every == 0 || k + 1 == st.iters) {
                let mean = window.iter().sum::<Float>() / window.len() as Float;
                log::info!(
                    "stage {} iter {}/{} mean loss {:.4} ({:.1}s)",
                    st.id,
                    k + 1,
                    st.iters,
                    mean,
                    start.elapsed().as_secs_f64()
                );
                window.clear();
            }
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rates_match_reference_at_unit_scale() {
        let t = stage_table(1.0);
        assert_eq!(t.map(|s| s.iters), BASE_ITERS);
        assert_eq!(t[0].rates, GroupRates { conv: 1e-5, new: 1e-3, trn: 0.0 });
        assert!(!t[0].trn_enabled());
        assert_eq!(t[1].rates, GroupRates { conv: 1e-5, new: 5e-4, trn: 1e-3 });
        assert_eq!(t[2].rates.new, 1e-4);
        assert_eq!(t[2].data, DataSource::Cluttered);
        assert_eq!(t[3].rates.conv, 0.0);
        assert_eq!((t[3].rates.new, t[3].rates.trn), (1e-5, 1e-5));
        assert_eq!(stage_table(0.01).map(|s| s.iters), [300, 300, 500, 200]);
    }

    #[test]
    fn config_parsing() {
        let text = "model = desk\nstages = 1,2\niters1 = 7\nlr2_trn = 0.002\npool = fixed\npool_width = 20\n\
                    data_pure = d1\naugment = false\ntrain_top_n = 40";
        let cfg = TrainConfig::parse(KvFile::parse(text, "t").unwrap(), Path::new("/x")).unwrap();
        assert_eq!(cfg.stages.len(), 2);
        assert_eq!(cfg.stages[0].iters, 7);
        assert_eq!(cfg.stages[1].rates.trn, 0.002);
        assert_eq!(cfg.model.rfe.mode, PoolMode::Fixed { width: 20 });
        assert_eq!(cfg.data_pure.as_deref(), Some(Path::new("/x/d1")));
        assert_eq!(cfg.augment, AugmentConfig::none());
        assert_eq!(cfg.step.proposal_cfg.top_n, 40);
        for bad in ["stages = 1\nlearning_rate = 1", "stages = 3\ndata_pure = d", "stages = 5\n", "model = huge", "lr1_new = -1\nstages=1\ndata_pure=d"] {
            assert!(TrainConfig::parse(KvFile::parse(bad, "t").unwrap(), Path::new(".")).is_err(), "{bad}");
        }
    }

    #[test]
    fn csv_rows() {
        let rows = vec![CurveRow { iteration: 1, stage: 2, report: LossReport { total: 1.5, l_rec: 0.5, ..Default::default() } }];
        let s = curve_csv(&rows);
        let lines: Vec<&str> = s.lines().collect();
        assert_eq!(lines[0], CURVE_HEADER);
        assert_eq!(lines[1], "1,2,0,0,0,0,0.5,1.5");
    }
}
