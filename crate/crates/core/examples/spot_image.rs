//! Detect and read words in one image: `spot_image [CKPT] [IMAGE.ppm]`.
//! Without arguments a fresh model reads a generated scene, which shows
//! the output shape (an untrained model reads garbage).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use txspot::checkpoint;
use txspot::image::Image;
use txspot::model::{Model, ModelConfig};
use txspot::pipeline::{spot, SpotConfig};
use txspot::synthdata::{generate_image, SceneSpec};

fn main() -> txspot::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let model = match args.first() {
        Some(p) => checkpoint::load(p.as_ref())?,
        None => Model::new(ModelConfig::desk(), 0)?,
    };
    let image = match args.get(1) {
        Some(p) => Image::read_ppm(p.as_ref())?,
        None => {
            let scene = generate_image(&SceneSpec::default(), &mut ChaCha8Rng::seed_from_u64(3))?;
            for a in &scene.annotations {
                println!("truth {:?} {}", a.bbox, a.text);
            }
            scene.image
        }
    };
    let short = image.width().min(image.height());
    let cfg = SpotConfig { scales: vec![short], dump_attention: true, ..SpotConfig::default() };
    let r = spot(&model, &image, &cfg)?;
    for w in &r.words {
        let steps = w.attention.as_ref().map_or(0, Vec::len);
        println!("{:.3} {:?} `{}` ({steps} attention rows)", w.score, w.bbox, w.text);
    }
    println!("{} words in {:.3}s", r.words.len(), r.timing.total);
    Ok(())
}
