//! Render a small cluttered corpus and summarise its manifest.
//!
//!     cargo run --example synth_corpus -- /tmp/corpus 20

use std::path::PathBuf;

use txspot::synthdata::{generate_dataset, Dataset, SceneSpec};

fn main() -> txspot::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "synth_corpus".into()));
    let count: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(20);

    let spec = SceneSpec { level: 2, words: (2, 4), ..SceneSpec::default() };
    let manifest = generate_dataset(&spec, count, 42, &out)?;
    println!(
        "{} images, {} words (mean {:.2}), lexicon {} words sha256 {}",
        manifest.count,
        manifest.total_words(),
        manifest.total_words() as f64 / manifest.count.max(1) as f64,
        manifest.lexicon_size,
        &manifest.lexicon_sha256[..12]
    );

    let ds = Dataset::load(&out)?;
    for s in ds.samples.iter().take(3) {
        let words: Vec<_> = s.annotations.iter().map(|a| a.text.as_str()).collect();
        println!("{} {}x{} {:?}", s.name, s.image.width(), s.image.height(), words);
    }
    Ok(())
}
