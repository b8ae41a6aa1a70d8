//! Varying-width versus fixed 4×20 region pooling, trained with the same
//! budget on long words. `pooling_ablation [lexicon|random] [ITERS]`: the
//! bundled lexicon of 14-17 letter words, or random letter strings that
//! cannot be recalled from a small vocabulary.

use txspot::training::ablation::{long_words, random_words, word_accuracy_ablation, AblationConfig};

fn main() -> txspot::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let words = match args.first().map(String::as_str) {
        Some("random") => random_words(40, 5),
        _ => long_words(),
    };
    let iters: usize = args.get(1).and_then(|a| a.parse().ok()).unwrap_or(2000);
    let cfg = AblationConfig { iters: (iters / 10, iters - iters / 10), words, ..AblationConfig::default() };
    let r = word_accuracy_ablation(&cfg)?;
    println!("{} words, {} iterations per model", r.words, iters);
    println!("varying  words {:.3} chars {:.3}", r.varying, r.varying_chars);
    println!("fixed    words {:.3} chars {:.3}", r.fixed, r.fixed_chars);
    Ok(())
}
