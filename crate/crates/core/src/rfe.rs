//! Region feature encoder: aspect-preserving RoI max pooling, column
//! flattening and an LSTM pass giving a fixed-length region code.

use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::nn::{Init, Lstm};
use crate::tensor::{Float, Graph, ParamId, ParamStore, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoolMode {
    /// Width follows the region's aspect ratio, capped at `w_max`.
    Varying,
    /// Conventional fixed `pool_h × width` pooling.
    Fixed { width: usize },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RfeConfig {
    pub pool_h: usize,
    pub w_max: usize,
    pub mode: PoolMode,
    /// LSTM hidden size `R`.
    pub hidden: usize,
    pub stride: usize,
}

impl Default for RfeConfig {
    fn default() -> Self {
        RfeConfig { pool_h: 4, w_max: 35, mode: PoolMode::Varying, hidden: 1024, stride: 8 }
    }
}

/// `round(2·H·w/h)` (ties up) clamped to `[1, w_max]`.
pub fn pooled_width(h: Float, w: Float, pool_h: usize, w_max: usize) -> Result<usize> {
    if !(h > 0.0 && w > 0.0) {
        return Err(Error::contract(format!("pooled_width: region {w}×{h} must have positive size")));
    }
    let raw = 2.0 * pool_h as Float * w / h;
    let rounded = (raw + 0.5).floor();
    Ok((rounded.min(w_max as Float) as usize).clamp(1, w_max.max(1)))
}

/// Half-open feature-grid rectangle `rows r0..r1`, `cols c0..c1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GridRect {
    pub r0: usize,
    pub r1: usize,
    pub c0: usize,
    pub c1: usize,
}

impl GridRect {
    pub fn rows(&self) -> usize {
        self.r1 - self.r0
    }

    pub fn cols(&self) -> usize {
        self.c1 - self.c0
    }
}

fn grid_span(lo: Float, hi: Float, stride: usize, n: usize) -> (usize, usize) {
    let s = stride as Float;
    let a = ((lo / s).floor().max(0.0) as usize).min(n);
    let b = ((hi / s).ceil().max(0.0) as usize).min(n);
    if b > a {
        (a, b)
    } else if a >= n {
        (n - 1, n)
    } else {
        (a, a + 1)
    }
}

/// Image box to feature cells: start floored, end ceiled, clamped, never
/// empty.
pub fn map_roi_to_grid(b: &BBox, stride: usize, feat_w: usize, feat_h: usize) -> Result<GridRect> {
    if feat_w == 0 || feat_h == 0 || stride == 0 {
        return Err(Error::dim(format!("map_roi_to_grid: empty {feat_h}×{feat_w} grid")));
    }
    let (c0, c1) = grid_span(b.x1, b.x2, stride, feat_w);
    let (r0, r1) = grid_span(b.y1, b.y2, stride, feat_h);
    Ok(GridRect { r0, r1, c0, c1 })
}

/// Encoded region: `context [W_r×R]` holds every hidden state, `code` is
/// the last one.
#[derive(Clone, Copy, Debug)]
pub struct RegionCode {
    pub context: Var,
    pub code: Var,
    pub width: usize,
}

#[derive(Clone, Debug)]
pub struct Rfe {
    pub config: RfeConfig,
    pub lstm: Lstm,
}

impl Rfe {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, channels: usize, config: RfeConfig, rng: &mut R) -> Self {
        let lstm = Lstm::new(store, "rfe.lstm", channels * config.pool_h, config.hidden, Init::lecun(), rng);
        Rfe { config, lstm }
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.lstm.params().to_vec()
    }

    /// Output width for a region in the configured mode.
    pub fn region_width(&self, b: &BBox) -> Result<usize> {
        match self.config.mode {
            PoolMode::Varying => pooled_width(b.height(), b.width(), self.config.pool_h, self.config.w_max),
            PoolMode::Fixed { width } => Ok(width),
        }
    }

    /// `Q [C × pool_h × W_r]` for box `b` over `features [C×fh×fw]`.
    pub fn roi_pool(&self, g: &mut Graph, features: Var, b: &BBox) -> Result<Var> {
        let s = g.shape(features).to_vec();
        if s.len() != 3 {
            return Err(Error::dim(format!("roi_pool: expected [C×fh×fw], got {s:?}")));
        }
        let w_r = self.region_width(b)?;
        let cell = map_roi_to_grid(b, self.config.stride, s[2], s[1])?;
        g.max_pool_region(features, (cell.r0, cell.r1), (cell.c0, cell.c1), self.config.pool_h, w_r)
    }

    pub fn encode(&self, g: &mut Graph, store: &ParamStore, q: Var) -> Result<RegionCode> {
        let s = g.shape(q).to_vec();
        if s.len() != 3 {
            return Err(Error::dim(format!("encode_region: expected [C×H×W], got {s:?}")));
        }
        let (c, h, w) = (s[0], s[1], s[2]);
        let seq = g.gather(q, column_order(c, h, w))?;
        let seq = g.reshape(seq, vec![w, h * c])?;
        let p = self.lstm.vars(g, store);
        let context = g.lstm_sequence(seq, p)?;
        let code = g.row(context, w - 1)?;
        Ok(RegionCode { context, code, width: w })
    }

    pub fn encode_box(&self, g: &mut Graph, store: &ParamStore, features: Var, b: &BBox) -> Result<RegionCode> {
        let q = self.roi_pool(g, features, b)?;
        self.encode(g, store, q)
    }
}

/// Flat source index of `q_t[r·C + c] = Q[c, r, t]` for every column `t`.
pub fn column_order(c: usize, h: usize, w: usize) -> Vec<usize> {
    let mut idx = Vec::with_capacity(c * h * w);
    for t in 0..w {
        for r in 0..h {
            for ch in 0..c {
                idx.push((ch * h + r) * w + t);
            }
        }
    }
    idx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{LstmVars, Tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn pooled_width_examples() {
        assert_eq!(pooled_width(32.0, 128.0, 4, 35).unwrap(), 32);
        assert_eq!(pooled_width(40.0, 200.0, 4, 35).unwrap(), 35);
        assert_eq!(pooled_width(64.0, 32.0, 4, 35).unwrap(), 4);
        assert_eq!(pooled_width(100.0, 1.0, 4, 35).unwrap(), 1);
        assert_eq!(pooled_width(16.0, 1.0, 4, 35).unwrap(), 1); // 0.5 rounds up
        assert!(pooled_width(0.0, 5.0, 4, 35).is_err());
        assert!(pooled_width(5.0, -1.0, 4, 35).is_err());
    }

    #[test]
    fn grid_mapping_examples() {
        let r = map_roi_to_grid(&BBox::new(0.0, 0.0, 80.0, 32.0), 8, 20, 10).unwrap();
        assert_eq!(r, GridRect { r0: 0, r1: 4, c0: 0, c1: 10 });
        let r = map_roi_to_grid(&BBox::new(3.0, 3.0, 5.0, 5.0), 8, 20, 10).unwrap();
        assert_eq!((r.rows(), r.cols()), (1, 1));
        let r = map_roi_to_grid(&BBox::new(16.0, 8.0, 16.0, 8.0), 8, 20, 10).unwrap();
        assert_eq!((r.rows(), r.cols()), (1, 1));
        let r = map_roi_to_grid(&BBox::new(160.0, 80.0, 160.0, 80.0), 8, 20, 10).unwrap();
        assert_eq!(r, GridRect { r0: 9, r1: 10, c0: 19, c1: 20 });
        let r = map_roi_to_grid(&BBox::new(0.0, 0.0, 160.0, 80.0), 8, 20, 10).unwrap();
        assert_eq!(r, GridRect { r0: 0, r1: 10, c0: 0, c1: 20 });
    }

    fn rfe(c: usize, hidden: usize, mode: PoolMode) -> (ParamStore, Rfe) {
        let mut store = ParamStore::new();
        let cfg = RfeConfig { hidden, mode, ..RfeConfig::default() };
        let r = Rfe::new(&mut store, c, cfg, &mut ChaCha8Rng::seed_from_u64(5));
        (store, r)
    }

    #[test]
    fn identity_and_constant_pooling() {
        let (_, r) = rfe(2, 4, PoolMode::Varying);
        let data: Vec<Float> = (0..2 * 4 * 32).map(|v| v as Float).collect();
        let mut g = Graph::new();
        let f = g.input(Tensor::new(vec![2, 4, 32], data.clone()).unwrap());
        // 32 px tall, 256 px wide → 4×32 grid, width 2·4·256/32 = 64 → capped
        let b = BBox::new(0.0, 0.0, 256.0, 32.0);
        let q = r.roi_pool(&mut g, f, &b).unwrap();
        assert_eq!(g.shape(q), &[2, 4, 35]);
        let (_, fixed32) = rfe(2, 4, PoolMode::Fixed { width: 32 });
        let q = fixed32.roi_pool(&mut g, f, &b).unwrap();
        assert_eq!(g.shape(q), &[2, 4, 32]);
        assert_eq!(g.value(q), &data[..]);

        let f = g.input(Tensor::new(vec![3, 6, 10], vec![1.25; 180]).unwrap());
        let (_, fixed) = rfe(3, 4, PoolMode::Fixed { width: 20 });
        for b in [BBox::new(0.0, 0.0, 80.0, 48.0), BBox::new(8.0, 8.0, 20.0, 12.0)] {
            let q = r.roi_pool(&mut g, f, &b).unwrap();
            assert!(g.value(q).iter().all(|&v| v == 1.25));
            let q = fixed.roi_pool(&mut g, f, &b).unwrap();
            assert_eq!(g.shape(q), &[3, 4, 20]);
        }
    }

    #[test]
    fn pooling_matches_brute_force_bins() {
        let (_, r) = rfe(8, 4, PoolMode::Varying);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let data: Vec<Float> = (0..8 * 6 * 40).map(|_| rng.random::<Float>()).collect();
        let mut g = Graph::new();
        let f = g.input(Tensor::new(vec![8, 6, 40], data.clone()).unwrap());
        let b = BBox::new(13.0, 5.0, 290.0, 43.0);
        let q = r.roi_pool(&mut g, f, &b).unwrap();
        let cell = map_roi_to_grid(&b, 8, 40, 6).unwrap();
        let w_r = pooled_width(b.height(), b.width(), 4, 35).unwrap();
        assert_eq!(g.shape(q), &[8, 4, w_r]);
        let bin = |i: usize, n: usize, out: usize| {
            let a = i * n / out;
            (a, ((i + 1) * n / out).max(a + 1))
        };
        for c in 0..8 {
            for i in 0..4 {
                for j in 0..w_r {
                    let (ra, rz) = bin(i, cell.rows(), 4);
                    let (ca, cz) = bin(j, cell.cols(), w_r);
                    let mut m = Float::NEG_INFINITY;
                    for y in cell.r0 + ra..cell.r0 + rz {
                        for x in cell.c0 + ca..cell.c0 + cz {
                            m = m.max(data[(c * 6 + y) * 40 + x]);
                        }
                    }
                    assert_eq!(g.value(q)[(c * 4 + i) * w_r + j], m);
                }
            }
        }
    }

    #[test]
    fn encode_single_column_is_one_cell_step() {
        let (store, r) = rfe(2, 3, PoolMode::Varying);
        let mut g = Graph::new();
        let q = g.input(Tensor::new(vec![2, 4, 1], vec![0.1, -0.2, 0.3, 0.4, 0.5, -0.6, 0.7, 0.0]).unwrap());
        let code = r.encode(&mut g, &store, q).unwrap();
        assert_eq!(code.width, 1);
        assert_eq!(g.shape(code.context), &[1, 3]);
        // column order: row 0 channels 0,1 then row 1 …
        let x = g.constant_vec(vec![0.1, 0.5, -0.2, -0.6, 0.3, 0.7, 0.4, 0.0]);
        let z = g.constant_vec(vec![0.0; 3]);
        let p: LstmVars = r.lstm.vars(&mut g, &store);
        let (h, _) = g.lstm_cell(x, z, z, p).unwrap();
        for (a, b) in g.value(code.code).iter().zip(g.value(h)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_params_and_order_sensitivity() {
        let (mut store, r) = rfe(2, 5, PoolMode::Varying);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let data: Vec<Float> = (0..2 * 4 * 6).map(|_| rng.random::<Float>() - 0.5).collect();
        let code_of = |store: &ParamStore, d: &[Float]| {
            let mut g = Graph::new();
            let q = g.input(Tensor::new(vec![2, 4, 6], d.to_vec()).unwrap());
            let c = r.encode(&mut g, store, q).unwrap();
            g.value(c.code).to_vec()
        };
        let base = code_of(&store, &data);
        let mut swapped = data.clone();
        for ch in 0..2 {
            for row in 0..4 {
                swapped.swap((ch * 4 + row) * 6, (ch * 4 + row) * 6 + 3);
            }
        }
        let other = code_of(&store, &swapped);
        let norm = |v: &[Float]| v.iter().map(|x| x * x).sum::<Float>().sqrt();
        assert!((norm(&base) - norm(&other)).abs() > 1e-9);

        for id in r.params() {
            store.get_mut(id).data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        assert!(code_of(&store, &data).iter().all(|&v| v == 0.0));
    }
}
