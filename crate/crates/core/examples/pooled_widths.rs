//! How region width adapts to aspect ratio, and what the encoder emits.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use txspot::geometry::BBox;
use txspot::rfe::{pooled_width, PoolMode, Rfe, RfeConfig};
use txspot::tensor::{Graph, ParamStore, Tensor};

fn main() -> txspot::Result<()> {
    println!("  h     w  -> columns (H=4, W_max=35)");
    for (h, w) in [(16.0, 16.0), (16.0, 64.0), (20.0, 150.0), (10.0, 300.0), (32.0, 24.0)] {
        println!("{h:>4} {w:>5}  -> {}", pooled_width(h, w, 4, 35)?);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (mut store, mut other) = (ParamStore::new(), ParamStore::new());
    let varying = Rfe::new(&mut store, 8, RfeConfig { hidden: 16, ..RfeConfig::default() }, &mut rng);
    let fixed = Rfe::new(&mut other, 8, RfeConfig { hidden: 16, mode: PoolMode::Fixed { width: 20 }, ..RfeConfig::default() }, &mut rng);
    let features = Tensor::new(vec![8, 8, 40], vec![0.1; 8 * 8 * 40])?;
    for b in [BBox::new(0.0, 0.0, 48.0, 16.0), BBox::new(0.0, 0.0, 300.0, 24.0)] {
        let mut g = Graph::new();
        let f = g.input(features.clone());
        let v = varying.encode_box(&mut g, &store, f, &b)?;
        let x = fixed.encode_box(&mut g, &other, f, &b)?;
        println!("box {:.0}x{:.0}: varying {} steps, fixed {} steps", b.width(), b.height(), v.width, x.width);
    }
    Ok(())
}
