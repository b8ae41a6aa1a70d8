//! Short in-memory curriculum on a handful of synthetic scenes, then an
//! end-to-end score on the same scenes. Pass an iteration count to train
//! longer (default 60; a real desk run uses `txspot train`).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use txspot::evalproto::EvalConfig;
use txspot::model::{Model, ModelConfig};
use txspot::pipeline::{evaluate, SpotConfig};
use txspot::synthdata::{generate_image, Dataset, Sample, SceneSpec};
use txspot::training::augment::AugmentConfig;
use txspot::training::curriculum::{run_curriculum, stage_table, DataSource, StageData, TrainConfig};

fn main() -> txspot::Result<()> {
    let iters: usize = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(60);
    let spec = SceneSpec { width: 128, height: 64, words: (1, 2), scale: (2, 2), ..SceneSpec::default() };
    let samples = (0..8)
        .map(|i| {
            let s = generate_image(&spec, &mut ChaCha8Rng::seed_from_u64(i))?;
            Ok(Sample { name: format!("s{i}"), image: s.image, annotations: s.annotations })
        })
        .collect::<txspot::Result<Vec<_>>>()?;
    let ds = Dataset { root: "memory".into(), samples };
    let mut data = StageData::default();
    data.insert(DataSource::Pure, ds.clone());

    let mut stages = stage_table(0.0);
    stages[0].iters = iters / 4;
    stages[1].iters = iters - iters / 4;
    for st in &mut stages {
        st.rates.conv = 1e-3;
    }
    let cfg = TrainConfig { stages: stages[..2].to_vec(), augment: AugmentConfig::none(), log_every: 0, ..TrainConfig::default() };
    let mut model = Model::new(ModelConfig::desk(), 0)?;
    let rows = run_curriculum(&mut model, &cfg, &data, &mut ChaCha8Rng::seed_from_u64(1), |r| {
        if r.iteration % 10 == 0 {
            println!("iter {:>4} stage {} total {:.4}", r.iteration, r.stage, r.report.total);
        }
    })?;
    println!("{} iterations", rows.len());
    let spot_cfg = SpotConfig { scales: vec![64], ..SpotConfig::default() };
    let r = evaluate(&model, &ds, &spot_cfg, &EvalConfig::default())?;
    println!("P {:.3} R {:.3} F {:.3}", r.precision, r.recall, r.f);
    Ok(())
}
