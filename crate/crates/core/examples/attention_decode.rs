//! Greedy attention decoding from an untrained recogniser. Every attention
//! row is a distribution over region columns.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use txspot::tensor::{Float, Graph, ParamStore, Tensor};
use txspot::trn::{Trn, TrnConfig};

fn main() -> txspot::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut store = ParamStore::new();
    let trn = Trn::new(&mut store, 12, TrnConfig { dec_hidden: 16, attn: 8, max_len: 8 }, &mut rng);
    let width = 6;
    let data: Vec<Float> = (0..width * 12).map(|i| ((i * 7919) % 13) as Float / 13.0 - 0.5).collect();
    let mut g = Graph::new();
    let x = g.input(Tensor::new(vec![width, 12], data)?);
    let ctx = trn.encode_context(&mut g, &store, x)?;
    let out = trn.decode_greedy(&mut g, &store, &ctx)?;
    println!("decoded {:?} ({} tokens)", out.text, out.tokens.len());
    for (t, row) in out.attention.iter().enumerate() {
        let cells: Vec<String> = row.iter().map(|a| format!("{a:.2}")).collect();
        println!("step {:>2}: [{}] sum {:.6}", t + 1, cells.join(" "), row.iter().sum::<Float>());
    }
    Ok(())
}
