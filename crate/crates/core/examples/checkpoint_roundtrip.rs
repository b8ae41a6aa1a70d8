//! Save, reload and re-save a model; the two files are byte-identical.

use txspot::checkpoint;
use txspot::model::{Model, ModelConfig};

fn main() -> txspot::Result<()> {
    let dir = std::env::temp_dir().join("txspot_ckpt_example");
    std::fs::create_dir_all(&dir).map_err(|e| txspot::Error::io(&dir, e))?;
    let (a, b) = (dir.join("a.ckpt"), dir.join("b.ckpt"));
    let model = Model::new(ModelConfig::desk(), 5)?;
    checkpoint::save(&model, &a)?;
    let back = checkpoint::load(&a)?;
    checkpoint::save(&back, &b)?;
    let (x, y) = (std::fs::read(&a).map_err(|e| txspot::Error::io(&a, e))?, std::fs::read(&b).map_err(|e| txspot::Error::io(&b, e))?);
    println!("{} tensors, {} bytes, identical: {}", model.store.len(), x.len(), x == y);

    let mut bad = x.clone();
    bad[x.len() / 2] ^= 1;
    std::fs::write(&a, &bad).map_err(|e| txspot::Error::io(&a, e))?;
    println!("corrupted: {}", checkpoint::load(&a).err().map(|e| e.to_string()).unwrap_or_default());
    Ok(())
}
