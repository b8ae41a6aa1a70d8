//! Varying-width versus fixed-width region pooling on long words: two
//! models that differ only in pooling mode get the same data, seed and
//! budget, and are scored by training-set word accuracy on ground-truth
//! boxes.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::Result;
use crate::evalproto::levenshtein;
use crate::model::{Model, ModelConfig};
use crate::pipeline::read_boxes;
use crate::rfe::PoolMode;
use crate::synthdata::{generate_image, Annotation, Dataset, Sample, SceneSpec};
use crate::tdn::ProposalSampling;
use crate::tensor::Float;
use crate::tpn::{AnchorSampling, ProposalConfig};
use crate::trn::Vocab;

use super::augment::AugmentConfig;
use super::curriculum::{run_curriculum, stage_table, DataSource, StageData, TrainConfig};
use super::StepOptions;

const LONG_WORDS: &str = include_str!("../../data/long_words.txt");

/// `n` strings of 14-17 random lowercase letters.
pub fn random_words(n: usize, seed: u64) -> Vec<String> {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let len = rng.random_range(14..=17);
            (0..len).map(|_| (b'a' + rng.random_range(0..26u8)) as char).collect()
        })
        .collect()
}

pub fn long_words() -> Vec<String> {
    LONG_WORDS.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect()
}

#[derive(Clone, Debug)]
pub struct AblationConfig {
    pub images: usize,
    pub width: usize,
    pub height: usize,
    pub iters: (usize, usize),
    pub fixed_width: usize,
    pub seed: u64,
    /// Rendered vocabulary; every entry should be long enough that fixed
    /// pooling compresses it.
    pub words: Vec<String>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig { images: 40, width: 352, height: 40, iters: (300, 5700), fixed_width: 20, seed: 9, words: long_words() }
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct AblationReport {
    pub varying: Float,
    pub fixed: Float,
    /// Mean `1 - edit distance / word length`, floored at 0.
    pub varying_chars: Float,
    pub fixed_chars: Float,
    pub words: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct Accuracy {
    pub words: Float,
    pub chars: Float,
    pub count: usize,
}

fn corpus(cfg: &AblationConfig) -> Result<Dataset> {
    let spec = SceneSpec { width: cfg.width, height: cfg.height, words: (1, 1), scale: (3, 3), ..SceneSpec::default() }
        .with_lexicon(cfg.words.clone(), "long_words")?;
    let samples = (0..cfg.images)
        .map(|i| {
            let scene = generate_image(&spec, &mut ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(i as u64)))?;
            Ok(Sample { name: format!("long_{i:03}"), image: scene.image, annotations: scene.annotations })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset { root: "long_words".into(), samples })
}

/// Exact-word and character accuracy of transcriptions read from the
/// ground-truth boxes.
pub fn word_accuracy(model: &Model, data: &Dataset) -> Result<Accuracy> {
    let per: Vec<Vec<(bool, Float)>> = data
        .samples
        .par_iter()
        .map(|s| {
            let boxes: Vec<_> = s.annotations.iter().map(|a: &Annotation| a.bbox).collect();
            let read = read_boxes(model, &s.image, &boxes)?;
            Ok(read
                .iter()
                .zip(&s.annotations)
                .map(|(r, a)| {
                    let want = Vocab::normalize(&a.text);
                    let n = want.chars().count().max(1) as Float;
                    (*r == want, (1.0 - levenshtein(r, &want) as Float / n).max(0.0))
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    let all: Vec<(bool, Float)> = per.into_iter().flatten().collect();
    if all.is_empty() {
        return Ok(Accuracy::default());
    }
    let n = all.len() as Float;
    Ok(Accuracy {
        words: all.iter().filter(|a| a.0).count() as Float / n,
        chars: all.iter().map(|a| a.1).sum::<Float>() / n,
        count: all.len(),
    })
}

fn train(mode: PoolMode, data: &StageData, cfg: &AblationConfig) -> Result<Model> {
    let mut config = ModelConfig::desk();
    config.rfe.mode = mode;
    let mut model = Model::new(config, cfg.seed)?;
    let mut stages = stage_table(0.0);
    stages[0].iters = cfg.iters.0;
    stages[1].iters = cfg.iters.1;
    for st in &mut stages[..2] {
        st.rates.conv = 1e-3;
        st.rates.new = 1e-3;
    }
    stages[1].rates.trn = 2e-3;
    let tc = TrainConfig {
        stages: stages[..2].to_vec(),
        augment: AugmentConfig::none(),
        step: StepOptions {
            anchors: AnchorSampling { batch: 64, max_positives: 16, ..AnchorSampling::default() },
            proposals: ProposalSampling { batch: 64, max_positives: 32, pos_iou: 0.7, mine_pool: 64, ..ProposalSampling::default() },
            proposal_cfg: ProposalConfig { top_n: 64, ..ProposalConfig::default() },
            include_gt: true,
        },
        seed: cfg.seed,
        log_every: 0,
        ..TrainConfig::default()
    };
    run_curriculum(&mut model, &tc, data, &mut ChaCha8Rng::seed_from_u64(cfg.seed), |_| {})?;
    Ok(model)
}

pub fn word_accuracy_ablation(cfg: &AblationConfig) -> Result<AblationReport> {
    let ds = corpus(cfg)?;
    let mut data = StageData::default();
    data.insert(DataSource::Pure, ds.clone());
    let varying = train(PoolMode::Varying, &data, cfg)?;
    let fixed = train(PoolMode::Fixed { width: cfg.fixed_width }, &data, cfg)?;
    let v = word_accuracy(&varying, &ds)?;
    let f = word_accuracy(&fixed, &ds)?;
    Ok(AblationReport { varying: v.words, fixed: f.words, varying_chars: v.chars, fixed_chars: f.chars, words: v.count })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpus_holds_only_long_words() {
        let ds = corpus(&AblationConfig { images: 6, ..AblationConfig::default() }).unwrap();
        assert_eq!(ds.samples.len(), 6);
        for s in &ds.samples {
            assert_eq!(s.annotations.len(), 1);
            assert!(s.annotations[0].text.chars().count() >= 14);
        }
    }

    #[test]
    fn untrained_accuracy_is_a_fraction() {
        let ds = corpus(&AblationConfig { images: 2, ..AblationConfig::default() }).unwrap();
        let m = Model::new(ModelConfig::desk(), 0).unwrap();
        let acc = word_accuracy(&m, &ds).unwrap();
        assert_eq!(acc.count, 2);
        assert!((0.0..=1.0).contains(&acc.words) && (0.0..=1.0).contains(&acc.chars));
    }
}
