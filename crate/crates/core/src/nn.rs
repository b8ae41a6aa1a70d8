//! Parameter-holding building blocks shared by the network components.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::tensor::{Float, Graph, LstmVars, ParamId, ParamStore, Var};

/// Weight initialisation scheme for freshly created layers.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Zero-mean Gaussian with `std = gain / sqrt(fan_in)`.
    FanIn { gain: Float },
    /// Zero-mean Gaussian with a fixed standard deviation.
    Fixed { std: Float },
    Zeros,
}

impl Init {
    pub fn he() -> Self {
        Init::FanIn { gain: (2.0 as Float).sqrt() }
    }

    pub fn lecun() -> Self {
        Init::FanIn { gain: 1.0 }
    }

    fn std(self, fan_in: usize) -> Float {
        match self {
            Init::FanIn { gain } => gain / (fan_in.max(1) as Float).sqrt(),
            Init::Fixed { std } => std,
            Init::Zeros => 0.0,
        }
    }

    pub fn sample<R: Rng + ?Sized>(self, n: usize, fan_in: usize, rng: &mut R) -> Vec<Float> {
        let std = self.std(fan_in);
        if std == 0.0 {
            return vec![0.0; n];
        }
        let dist = Normal::new(0.0, std as f64).expect("finite std");
        (0..n).map(|_| dist.sample(rng) as Float).collect()
    }
}

/// Fully connected layer `y = W x + b`, `W: [out×in]`.
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub inputs: usize,
    pub outputs: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        inputs: usize,
        outputs: usize,
        init: Init,
        rng: &mut R,
    ) -> Self {
        let w = store.add(format!("{name}.w"), vec![outputs, inputs], init.sample(outputs * inputs, inputs, rng));
        let b = store.add(format!("{name}.b"), vec![outputs], vec![0.0; outputs]);
        Linear { w, b, inputs, outputs }
    }

    pub fn forward_vec(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let (w, b) = (g.param(store, self.w), g.param(store, self.b));
        let y = g.matvec(w, x)?;
        g.add(y, b)
    }

    /// Row-wise application to `x[n×in]`, giving `[n×out]`.
    pub fn forward_rows(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let (w, b) = (g.param(store, self.w), g.param(store, self.b));
        let wt = g.transpose(w)?;
        let y = g.matmul(x, wt)?;
        g.add_row(y, b)
    }

    pub fn params(&self) -> [ParamId; 2] {
        [self.w, self.b]
    }
}

/// Convolution layer with a per-output-channel bias.
#[derive(Clone, Copy, Debug)]
pub struct Conv {
    pub w: ParamId,
    pub b: ParamId,
    pub pad: (usize, usize),
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        (kh, kw): (usize, usize),
        pad: (usize, usize),
        init: Init,
        rng: &mut R,
    ) -> Self {
        let fan_in = cin * kh * kw;
        let w = store.add(format!("{name}.w"), vec![cout, cin, kh, kw], init.sample(cout * fan_in, fan_in, rng));
        let b = store.add(format!("{name}.b"), vec![cout], vec![0.0; cout]);
        Conv { w, b, pad }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let (w, b) = (g.param(store, self.w), g.param(store, self.b));
        g.conv2d_ext(x, w, Some(b), 1, self.pad)
    }

    pub fn params(&self) -> [ParamId; 2] {
        [self.w, self.b]
    }
}

/// One LSTM layer. The forget-gate bias starts at 1.
#[derive(Clone, Copy, Debug)]
pub struct Lstm {
    pub wx: ParamId,
    pub wh: ParamId,
    pub b: ParamId,
    pub inputs: usize,
    pub hidden: usize,
}

impl Lstm {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        inputs: usize,
        hidden: usize,
        init: Init,
        rng: &mut R,
    ) -> Self {
        let g4 = 4 * hidden;
        let wx = store.add(format!("{name}.wx"), vec![g4, inputs], init.sample(g4 * inputs, inputs, rng));
        let wh = store.add(format!("{name}.wh"), vec![g4, hidden], init.sample(g4 * hidden, hidden, rng));
        let mut bias = vec![0.0; g4];
        if init != Init::Zeros {
            bias[hidden..2 * hidden].iter_mut().for_each(|v| *v = 1.0);
        }
        let b = store.add(format!("{name}.b"), vec![g4], bias);
        Lstm { wx, wh, b, inputs, hidden }
    }

    pub fn vars(&self, g: &mut Graph, store: &ParamStore) -> LstmVars {
        LstmVars {
            wx: g.param(store, self.wx),
            wh: g.param(store, self.wh),
            b: g.param(store, self.b),
        }
    }

    pub fn params(&self) -> [ParamId; 3] {
        [self.wx, self.wh, self.b]
    }
}
