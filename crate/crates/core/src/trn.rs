//! Text recognition network: context encoder LSTM, additive attention and
//! an attention-conditioned decoder LSTM over a 38-symbol output space.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{Init, Linear, Lstm};
use crate::tensor::{Float, Graph, ParamId, ParamStore, Var};

/// Output classes: 26 letters, 10 digits, punctuation, END.
pub const NUM_CLASSES: usize = 38;
pub const PUNCT: usize = 36;
pub const END: usize = 37;
/// Input-only start symbol (embedding row).
pub const START: usize = 38;
pub const PUNCT_CHAR: char = '#';

/// Case-folding tokenizer over the output alphabet.
pub struct Vocab;

impl Vocab {
    pub fn token(ch: char) -> Option<usize> {
        let c = ch.to_ascii_lowercase();
        match c {
            'a'..='z' => Some(c as usize - 'a' as usize),
            '0'..='9' => Some(26 + c as usize - '0' as usize),
            _ if c.is_ascii_punctuation() => Some(PUNCT),
            _ => None,
        }
    }

    pub fn symbol(tok: usize) -> Option<char> {
        match tok {
            0..=25 => Some((b'a' + tok as u8) as char),
            26..=35 => Some((b'0' + (tok - 26) as u8) as char),
            PUNCT => Some(PUNCT_CHAR),
            _ => None,
        }
    }

    /// Tokens of `text` without START/END.
    pub fn encode(text: &str) -> Result<Vec<usize>> {
        text.chars()
            .map(|c| Vocab::token(c).ok_or_else(|| Error::contract(format!("character {c:?} has no token"))))
            .collect()
    }

    /// `[START, t_1 … t_T, END]`.
    pub fn training_sequence(text: &str) -> Result<Vec<usize>> {
        let mut seq = vec![START];
        seq.extend(Vocab::encode(text)?);
        seq.push(END);
        Ok(seq)
    }

    pub fn decode(tokens: &[usize]) -> String {
        tokens.iter().take_while(|&&t| t != END).filter_map(|&t| Vocab::symbol(t)).collect()
    }

    /// Lowercase canonical form of `text` in the output alphabet.
    pub fn normalize(text: &str) -> String {
        text.chars().filter_map(|c| Vocab::token(c).and_then(Vocab::symbol)).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TrnConfig {
    /// Decoder hidden size `R'`.
    pub dec_hidden: usize,
    /// Attention hidden size `A`.
    pub attn: usize,
    pub max_len: usize,
}

impl Default for TrnConfig {
    fn default() -> Self {
        TrnConfig { dec_hidden: 256, attn: 256, max_len: 30 }
    }
}

#[derive(Clone, Debug)]
pub struct Trn {
    pub config: TrnConfig,
    /// Encoder hidden size, equal to the region code size `R`.
    pub hidden: usize,
    pub enc: Lstm,
    pub w_v: ParamId,
    pub w_h: ParamId,
    pub w_g: ParamId,
    pub emb_w: ParamId,
    pub emb_b: ParamId,
    pub dec: Lstm,
    pub out: Linear,
}

/// Encoded context `V [W×R]` with its attention projection `W_v V`.
#[derive(Clone, Copy, Debug)]
pub struct Context {
    pub v: Var,
    pub v_last: Var,
    projected: Var,
    pub width: usize,
}

/// Teacher-forced decode: `log_probs [(T+2)×38]` plus each step's `α`.
#[derive(Clone, Debug)]
pub struct TrainDecode {
    pub log_probs: Var,
    pub alphas: Vec<Var>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GreedyDecode {
    pub text: String,
    pub tokens: Vec<usize>,
    /// One attention row per decoding step after the first.
    pub attention: Vec<Vec<Float>>,
}

impl Trn {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, hidden: usize, config: TrnConfig, rng: &mut R) -> Self {
        let (a, rd) = (config.attn, config.dec_hidden);
        let enc = Lstm::new(store, "trn.enc", hidden, hidden, Init::lecun(), rng);
        let init = Init::lecun();
        let w_v = store.add("trn.att.wv", vec![a, hidden], init.sample(a * hidden, hidden, rng));
        let w_h = store.add("trn.att.wh", vec![a, rd], init.sample(a * rd, rd, rng));
        let w_g = store.add("trn.att.wg", vec![a], init.sample(a, a, rng));
        let emb_w = store.add("trn.emb.w", vec![NUM_CLASSES + 1, hidden], init.sample((NUM_CLASSES + 1) * hidden, 1, rng));
        let emb_b = store.add("trn.emb.b", vec![hidden], vec![0.0; hidden]);
        let dec = Lstm::new(store, "trn.dec", 2 * hidden, rd, init, rng);
        let out = Linear::new(store, "trn.out", rd, NUM_CLASSES, init, rng);
        Trn { config, hidden, enc, w_v, w_h, w_g, emb_w, emb_b, dec, out }
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut p = self.enc.params().to_vec();
        p.extend([self.w_v, self.w_h, self.w_g, self.emb_w, self.emb_b]);
        p.extend(self.dec.params());
        p.extend(self.out.params());
        p
    }

    /// Second LSTM pass over a region's per-column states `[W×R]`.
    pub fn encode_context(&self, g: &mut Graph, store: &ParamStore, context: Var) -> Result<Context> {
        let s = g.shape(context).to_vec();
        if s.len() != 2 || s[0] == 0 || s[1] != self.hidden {
            return Err(Error::contract(format!(
                "encode_context: context {s:?} must be non-empty [W×{}]",
                self.hidden
            )));
        }
        let p = self.enc.vars(g, store);
        let v = g.lstm_sequence(context, p)?;
        self.context_from(g, store, v)
    }

    /// Wrap an already encoded `V [W×R]`.
    pub fn context_from(&self, g: &mut Graph, store: &ParamStore, v: Var) -> Result<Context> {
        let s = g.shape(v).to_vec();
        if s.len() != 2 || s[0] == 0 || s[1] != self.hidden {
            return Err(Error::contract(format!("attend: V {s:?} must be non-empty [W×{}]", self.hidden)));
        }
        let wv = g.param(store, self.w_v);
        let wvt = g.transpose(wv)?;
        let projected = g.matmul(v, wvt)?;
        let v_last = g.row(v, s[0] - 1)?;
        Ok(Context { v, v_last, projected, width: s[0] })
    }

    /// Additive attention; `None` is the zero guide. Returns `(c, α)`.
    pub fn attend(&self, g: &mut Graph, store: &ParamStore, ctx: &Context, guide: Option<Var>) -> Result<(Var, Var)> {
        let pre = match guide {
            Some(h) => {
                let wh = g.param(store, self.w_h);
                let u = g.matvec(wh, h)?;
                g.add_row(ctx.projected, u)?
            }
            None => ctx.projected,
        };
        let t = g.tanh(pre);
        let wg = g.param(store, self.w_g);
        let e = g.matvec(t, wg)?;
        let alpha = g.softmax(e)?;
        let vt = g.transpose(ctx.v)?;
        let c = g.matvec(vt, alpha)?;
        Ok((c, alpha))
    }

    fn embed(&self, g: &mut Graph, store: &ParamStore, tok: usize) -> Result<Var> {
        let w = g.param(store, self.emb_w);
        let row = g.row(w, tok)?;
        let b = g.param(store, self.emb_b);
        let z = g.add(row, b)?;
        Ok(g.tanh(z))
    }

    fn step(&self, g: &mut Graph, store: &ParamStore, ctx: &Context, input: Var, state: (Var, Var)) -> Result<((Var, Var), Var)> {
        let (c, alpha) = self.attend(g, store, ctx, Some(state.0))?;
        let x = g.concat(&[input, c])?;
        let p = self.dec.vars(g, store);
        Ok((g.lstm_cell(x, state.0, state.1, p)?, alpha))
    }

    fn first_step(&self, g: &mut Graph, store: &ParamStore, ctx: &Context) -> Result<((Var, Var), Var)> {
        let (c, alpha) = self.attend(g, store, ctx, None)?;
        let x = g.concat(&[ctx.v_last, c])?;
        let zero = g.constant_vec(vec![0.0; self.config.dec_hidden]);
        let p = self.dec.vars(g, store);
        Ok((g.lstm_cell(x, zero, zero, p)?, alpha))
    }

    /// Teacher forcing over `tokens = [START, s_1 … s_T, END]`.
    pub fn decode_train(&self, g: &mut Graph, store: &ParamStore, ctx: &Context, tokens: &[usize]) -> Result<TrainDecode> {
        if tokens.len() < 2 || tokens[0] != START || tokens[tokens.len() - 1] != END {
            return Err(Error::contract("decode_train: tokens must be START … END"));
        }
        if let Some(&bad) = tokens[1..tokens.len() - 1].iter().find(|&&t| t >= END) {
            return Err(Error::contract(format!("decode_train: interior token {bad} out of range")));
        }
        let (mut state, a0) = self.first_step(g, store, ctx)?;
        let mut hs = vec![state.0];
        let mut alphas = vec![a0];
        for &tok in &tokens[..tokens.len() - 1] {
            let psi = self.embed(g, store, tok)?;
            let (next, alpha) = self.step(g, store, ctx, psi, state)?;
            state = next;
            hs.push(state.0);
            alphas.push(alpha);
        }
        let h = g.stack_rows(&hs)?;
        let logits = self.out.forward_rows(g, store, h)?;
        Ok(TrainDecode { log_probs: g.log_softmax_rows(logits)?, alphas })
    }

    /// Greedy decoding until END or `max_len` symbols.
    pub fn decode_greedy(&self, g: &mut Graph, store: &ParamStore, ctx: &Context) -> Result<GreedyDecode> {
        let (mut state, _) = self.first_step(g, store, ctx)?;
        let mut prev = START;
        let mut tokens = Vec::new();
        let mut attention = Vec::new();
        for _ in 0..=self.config.max_len {
            let psi = self.embed(g, store, prev)?;
            let (next, alpha) = self.step(g, store, ctx, psi, state)?;
            state = next;
            attention.push(g.value(alpha).to_vec());
            let logits = self.out.forward_vec(g, store, state.0)?;
            let tok = argmax(g.value(logits));
            if tok == END || tokens.len() == self.config.max_len {
                break;
            }
            tokens.push(tok);
            prev = tok;
        }
        Ok(GreedyDecode { text: Vocab::decode(&tokens), tokens, attention })
    }
}

/// Index of the first maximum.
pub fn argmax(v: &[Float]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small(hidden: usize) -> (ParamStore, Trn) {
        let mut store = ParamStore::new();
        let cfg = TrnConfig { dec_hidden: 5, attn: 4, max_len: 30 };
        let t = Trn::new(&mut store, hidden, cfg, &mut ChaCha8Rng::seed_from_u64(21));
        (store, t)
    }

    fn random_v(g: &mut Graph, w: usize, r: usize, seed: u64) -> Var {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        g.input(Tensor::matrix(w, r, (0..w * r).map(|_| rng.random::<Float>() - 0.5).collect()).unwrap())
    }

    #[test]
    fn vocab_roundtrip() {
        assert_eq!(Vocab::encode("Ab9!").unwrap(), vec![0, 1, 35, PUNCT]);
        assert_eq!(Vocab::decode(&[7, 8, PUNCT, END, 3]), "hi#");
        assert!(Vocab::encode("a b").is_err());
        assert_eq!(Vocab::normalize("St0P?"), "st0p#");
        for t in 0..END {
            assert_eq!(Vocab::token(Vocab::symbol(t).unwrap()), Some(t));
        }
    }

    #[test]
    fn encode_context_lengths_and_zero() {
        let (mut store, trn) = small(6);
        let mut g = Graph::new();
        for w in [1, 3, 7] {
            let h = random_v(&mut g, w, 6, w as u64);
            let ctx = trn.encode_context(&mut g, &store, h).unwrap();
            assert_eq!(ctx.width, w);
            assert_eq!(g.shape(ctx.v), &[w, 6]);
        }
        for id in trn.enc.params() {
            store.get_mut(id).data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let mut g = Graph::new();
        let h = random_v(&mut g, 4, 6, 9);
        let ctx = trn.encode_context(&mut g, &store, h).unwrap();
        assert!(g.value(ctx.v).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn attention_contracts() {
        let (store, trn) = small(6);
        let mut g = Graph::new();
        let v = random_v(&mut g, 1, 6, 1);
        let ctx = trn.context_from(&mut g, &store, v).unwrap();
        let guide = g.constant_vec(vec![0.3, -0.1, 0.2, 0.9, -0.4]);
        let (c, a) = trn.attend(&mut g, &store, &ctx, Some(guide)).unwrap();
        assert_eq!(g.value(a), &[1.0]);
        assert_eq!(g.value(c), g.value(v));

        let row = [0.1, 0.2, -0.3, 0.4, 0.0, 0.6];
        let v = g.input(Tensor::matrix(4, 6, row.iter().copied().cycle().take(24).collect()).unwrap());
        let ctx = trn.context_from(&mut g, &store, v).unwrap();
        let (c, a) = trn.attend(&mut g, &store, &ctx, None).unwrap();
        assert!(g.value(a).iter().all(|&x| (x - 0.25).abs() < 1e-15));
        for (x, y) in g.value(c).iter().zip(row) {
            assert!((x - y).abs() < 1e-15);
        }

        let v = random_v(&mut g, 4, 6, 2);
        let ctx = trn.context_from(&mut g, &store, v).unwrap();
        let (c, a) = trn.attend(&mut g, &store, &ctx, Some(guide)).unwrap();
        let alpha = g.value(a).to_vec();
        assert!((alpha.iter().sum::<Float>() - 1.0).abs() < 1e-9);
        let vv = g.value(v).to_vec();
        for j in 0..6 {
            let manual: Float = (0..4).map(|i| alpha[i] * vv[i * 6 + j]).sum();
            assert!((manual - g.value(c)[j]).abs() < 1e-12);
        }
        let empty = g.input(Tensor::zeros(vec![0, 6]));
        assert!(trn.context_from(&mut g, &store, empty).is_err());
    }

    #[test]
    fn train_decode_shapes() {
        let (store, trn) = small(6);
        let mut g = Graph::new();
        let v = random_v(&mut g, 3, 6, 3);
        let ctx = trn.context_from(&mut g, &store, v).unwrap();
        let out = trn.decode_train(&mut g, &store, &ctx, &[START, END]).unwrap();
        assert_eq!(g.shape(out.log_probs), &[2, NUM_CLASSES]);
        let seq = Vocab::training_sequence("ab1").unwrap();
        let out = trn.decode_train(&mut g, &store, &ctx, &seq).unwrap();
        let lp = g.value(out.log_probs).to_vec();
        for row in lp.chunks(NUM_CLASSES) {
            assert!((row.iter().map(|x| x.exp()).sum::<Float>() - 1.0).abs() < 1e-9);
        }
        assert!(trn.decode_train(&mut g, &store, &ctx, &[START, 40, END]).is_err());
        assert!(trn.decode_train(&mut g, &store, &ctx, &[0, END]).is_err());
    }

    #[test]
    fn rigged_end_gives_empty_string() {
        let (mut store, trn) = small(6);
        let b = store.get_mut(trn.out.b).data_mut();
        b[END] = 100.0;
        let mut g = Graph::new();
        let v = random_v(&mut g, 3, 6, 4);
        let ctx = trn.context_from(&mut g, &store, v).unwrap();
        let d = trn.decode_greedy(&mut g, &store, &ctx).unwrap();
        assert_eq!(d.text, "");
        assert_eq!(d.attention.len(), 1);
    }

    #[test]
    fn greedy_alphabet_and_consistency() {
        let (mut store, trn) = small(6);
        // bias towards 'q' keeps emitting until max_len
        store.get_mut(trn.out.b).data_mut()[16] = 50.0;
        let mut g = Graph::new();
        let v = random_v(&mut g, 5, 6, 5);
        let ctx = trn.context_from(&mut g, &store, v).unwrap();
        let d = trn.decode_greedy(&mut g, &store, &ctx).unwrap();
        assert_eq!(d.text.len(), 30);
        assert!(d.text.chars().all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '#'));

        let (store, trn) = small(6);
        let ctx = trn.context_from(&mut g, &store, v).unwrap();
        let d = trn.decode_greedy(&mut g, &store, &ctx).unwrap();
        let mut seq = vec![START];
        seq.extend(&d.tokens);
        seq.push(END);
        let tf = trn.decode_train(&mut g, &store, &ctx, &seq).unwrap();
        let lp = g.value(tf.log_probs).to_vec();
        for (step, row) in lp.chunks(NUM_CLASSES).enumerate().skip(1) {
            let expect = if step <= d.tokens.len() { d.tokens[step - 1] } else { argmax(row) };
            assert_eq!(argmax(row), expect);
        }
        for (i, a) in tf.alphas.iter().skip(1).enumerate() {
            assert_eq!(g.value(*a), &d.attention[i][..]);
        }
    }
}
