//! Tape-based reverse-mode automatic differentiation.
//!
//! Every operation appends a node holding its forward value and enough saved
//! state to run its backward rule. [`Graph::backward`] walks the tape in exact
//! reverse order.

use std::cell::Cell;
use std::collections::HashMap;
use std::sync::Arc;

use super::kernels::{self, axpy};
use super::tensor::{numel, ParamId, ParamStore, Tensor};
use super::Float;
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

thread_local! {
    static CORRUPT_BACKWARD: Cell<bool> = const { Cell::new(false) };
}

/// Deliberately break the ReLU/tanh/sigmoid backward rules on the current
/// thread. Only exists so the gradient checker can prove it detects faults.
#[doc(hidden)]
pub fn set_corrupt_backward(on: bool) {
    CORRUPT_BACKWARD.with(|c| c.set(on));
}

fn corrupted() -> bool {
    CORRUPT_BACKWARD.with(|c| c.get())
}

enum Storage {
    Owned(Vec<Float>),
    Shared(Arc<Vec<Float>>),
}

impl Storage {
    fn as_slice(&self) -> &[Float] {
        match self {
            Storage::Owned(v) => v,
            Storage::Shared(v) => v,
        }
    }
}

enum Op {
    Leaf,
    MatMul { a: Var, b: Var, m: usize, k: usize, n: usize },
    MatVec { a: Var, x: Var, m: usize, n: usize },
    Transpose { a: Var, r: usize, c: usize },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow { m: Var, v: Var, cols: usize },
    Scale(Var, Float),
    Sum(Var),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Ln(Var),
    Softmax(Var),
    LogSoftmaxRows { x: Var, cols: usize },
    Gather { x: Var, idx: Vec<usize> },
    Reshape(Var),
    Concat(Vec<Var>),
    Slice { x: Var, start: usize },
    Conv2d(Box<ConvSaved>),
    MaxPool { x: Var, argmax: Vec<usize> },
    LstmCell(Box<CellSaved>),
    LstmSeq(Box<SeqSaved>),
    SmoothL1(Var),
}

struct ConvSaved {
    x: Var,
    k: Var,
    bias: Option<Var>,
    geom: ConvGeom,
    cols: Option<Vec<Float>>,
}

#[derive(Clone, Copy)]
struct ConvGeom {
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    ph: usize,
    pw: usize,
    oh: usize,
    ow: usize,
}

impl ConvGeom {
    fn pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.ph == 0 && self.pw == 0
    }
}

struct CellSaved {
    x: Var,
    h: Var,
    c: Var,
    p: LstmVars,
    d: usize,
    r: usize,
    gates: Vec<Float>,
    tanh_c: Vec<Float>,
}

struct SeqSaved {
    x: Var,
    p: LstmVars,
    t: usize,
    d: usize,
    r: usize,
    gates: Vec<Float>,
    cells: Vec<Float>,
}

/// Parameter nodes of one LSTM layer. Gate order inside the `4R` axis is
/// input, forget, cell candidate, output.
#[derive(Clone, Copy, Debug)]
pub struct LstmVars {
    pub wx: Var,
    pub wh: Var,
    pub b: Var,
}

struct Node {
    shape: Vec<usize>,
    value: Storage,
    requires_grad: bool,
    op: Op,
}

/// Recorded computation. Not `Sync`-shared: one graph per training step or
/// inference pass.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    leaf_grads: HashMap<usize, Vec<Float>>,
    param_vars: HashMap<ParamId, Var>,
}

fn sigmoid(x: Float) -> Float {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<Float>, op: Op, requires_grad: bool) -> Var {
        debug_assert_eq!(numel(&shape), value.len());
        self.nodes.push(Node {
            shape,
            value: Storage::Owned(value),
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &[Float] {
        self.nodes[v.0].value.as_slice()
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn scalar(&self, v: Var) -> Float {
        self.value(v)[0]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// Accumulated gradient of a leaf after [`Graph::backward`].
    pub fn grad(&self, v: Var) -> Option<&[Float]> {
        self.leaf_grads.get(&v.0).map(|g| g.as_slice())
    }

    /// Reset leaf gradients so the next backward starts from zero.
    pub fn zero_grad(&mut self) {
        self.leaf_grads.clear();
    }

    pub fn input(&mut self, t: Tensor) -> Var {
        let (shape, data, rg) = t.into_parts();
        self.push(shape, data, Op::Leaf, rg)
    }

    pub fn constant(&mut self, shape: Vec<usize>, data: Vec<Float>) -> Result<Var> {
        let t = Tensor::new(shape, data)?;
        Ok(self.input(t))
    }

    pub fn constant_vec(&mut self, data: Vec<Float>) -> Var {
        let n = data.len();
        self.push(vec![n], data, Op::Leaf, false)
    }

    /// Leaf for a stored parameter; repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let p = store.get(id);
        self.nodes.push(Node {
            shape: p.shape.clone(),
            value: Storage::Shared(Arc::clone(&p.data)),
            requires_grad: p.requires_grad,
            op: Op::Leaf,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars.insert(id, v);
        v
    }

    /// Add accumulated parameter gradients into the store.
    pub fn accumulate_param_grads(&self, store: &mut ParamStore) {
        for (&id, &v) in &self.param_vars {
            if let Some(g) = self.leaf_grads.get(&v.0) {
                let p = store.get_mut(id);
                for (a, b) in p.grad.iter_mut().zip(g) {
                    *a += b;
                }
            }
        }
    }

    // ---- linear algebra -------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::dim(format!("matmul: incompatible shapes {sa:?} and {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        kernels::gemm_nn(m, k, n, self.value(a), self.value(b), &mut out);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(vec![m, n], out, Op::MatMul { a, b, m, k, n }, rg))
    }

    pub fn matvec(&mut self, a: Var, x: Var) -> Result<Var> {
        let (sa, sx) = (self.shape(a), self.shape(x));
        if sa.len() != 2 || sx.len() != 1 || sa[1] != sx[0] {
            return Err(Error::dim(format!("matvec: incompatible shapes {sa:?} and {sx:?}")));
        }
        let (m, n) = (sa[0], sa[1]);
        let mut out = vec![0.0; m];
        kernels::gemv(m, n, self.value(a), self.value(x), &mut out);
        let rg = self.rg(a) || self.rg(x);
        Ok(self.push(vec![m], out, Op::MatVec { a, x, m, n }, rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a);
        if s.len() != 2 {
            return Err(Error::dim(format!("transpose: expected rank 2, got {s:?}")));
        }
        let (r, c) = (s[0], s[1]);
        let v = self.value(a);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = v[i * c + j];
            }
        }
        let rg = self.rg(a);
        Ok(self.push(vec![c, r], out, Op::Transpose { a, r, c }, rg))
    }

    // ---- elementwise ----------------------------------------------------

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(format!(
                "{what}: shapes {:?} and {:?} differ",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    fn binary(&mut self, a: Var, b: Var, what: &str, f: impl Fn(Float, Float) -> Float, op: Op) -> Result<Var> {
        self.same_shape(a, b, what)?;
        let out: Vec<Float> = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| f(x, y)).collect();
        let rg = self.rg(a) || self.rg(b);
        let shape = self.shape(a).to_vec();
        Ok(self.push(shape, out, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    /// `m[r×c] + v[c]` broadcast over rows.
    pub fn add_row(&mut self, m: Var, v: Var) -> Result<Var> {
        let (sm, sv) = (self.shape(m), self.shape(v));
        if sm.len() != 2 || sv.len() != 1 || sm[1] != sv[0] {
            return Err(Error::dim(format!("add_row: incompatible shapes {sm:?} and {sv:?}")));
        }
        let cols = sm[1];
        let shape = sm.to_vec();
        let vv = self.value(v);
        let out: Vec<Float> = self
            .value(m)
            .chunks_exact(cols)
            .flat_map(|row| row.iter().zip(vv).map(|(a, b)| a + b))
            .collect();
        let rg = self.rg(m) || self.rg(v);
        Ok(self.push(shape, out, Op::AddRow { m, v, cols }, rg))
    }

    pub fn scale(&mut self, a: Var, k: Float) -> Var {
        let out = self.value(a).iter().map(|x| x * k).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a);
        self.push(shape, out, Op::Scale(a, k), rg)
    }

    /// Sum of all elements as a rank-0 scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let s: Float = self.value(a).iter().sum();
        let rg = self.rg(a);
        self.push(vec![], vec![s], Op::Sum(a), rg)
    }

    fn unary(&mut self, a: Var, f: impl Fn(Float) -> Float, op: Op) -> Var {
        let out = self.value(a).iter().map(|&x| f(x)).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a);
        self.push(shape, out, op, rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Float::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn ln(&mut self, a: Var) -> Var {
        self.unary(a, Float::ln, Op::Ln(a))
    }

    // ---- normalisation --------------------------------------------------

    /// Numerically stable softmax of a rank-1 tensor.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a);
        if s.len() != 1 || s[0] == 0 {
            return Err(Error::dim(format!("softmax: expected non-empty rank-1 input, got {s:?}")));
        }
        let out = softmax_slice(self.value(a));
        let rg = self.rg(a);
        Ok(self.push(vec![out.len()], out, Op::Softmax(a), rg))
    }

    /// Row-wise log-softmax of a rank-2 tensor (rank 1 is treated as one row).
    pub fn log_softmax_rows(&mut self, a: Var) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let cols = match shape.as_slice() {
            [n] if *n > 0 => *n,
            [_, c] if *c > 0 => *c,
            _ => return Err(Error::dim(format!("log_softmax_rows: bad shape {shape:?}"))),
        };
        let mut out = Vec::with_capacity(self.value(a).len());
        for row in self.value(a).chunks_exact(cols) {
            let mx = row.iter().cloned().fold(Float::NEG_INFINITY, Float::max);
            let lse = row.iter().map(|x| (x - mx).exp()).sum::<Float>().ln() + mx;
            out.extend(row.iter().map(|x| x - lse));
        }
        let rg = self.rg(a);
        Ok(self.push(shape, out, Op::LogSoftmaxRows { x: a, cols }, rg))
    }

    // ---- indexing -------------------------------------------------------

    /// Flat gather: `out[i] = a.flat[idx[i]]`.
    pub fn gather(&mut self, a: Var, idx: Vec<usize>) -> Result<Var> {
        let n = self.value(a).len();
        if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
            return Err(Error::dim(format!("gather: index {bad} out of range for {n} elements")));
        }
        if idx.is_empty() {
            return Err(Error::dim("gather: empty index list"));
        }
        let v = self.value(a);
        let out: Vec<Float> = idx.iter().map(|&i| v[i]).collect();
        let rg = self.rg(a);
        Ok(self.push(vec![idx.len()], out, Op::Gather { x: a, idx }, rg))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        if numel(&shape) != self.value(a).len() {
            return Err(Error::dim(format!(
                "reshape: {:?} -> {shape:?} changes element count",
                self.shape(a)
            )));
        }
        let out = self.value(a).to_vec();
        let rg = self.rg(a);
        Ok(self.push(shape, out, Op::Reshape(a), rg))
    }

    /// Flat concatenation into a rank-1 tensor.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::dim("concat: no inputs"));
        }
        let mut out = Vec::new();
        for &p in parts {
            out.extend_from_slice(self.value(p));
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(vec![out.len()], out, Op::Concat(parts.to_vec()), rg))
    }

    /// Flat slice `[start, start+len)` as a rank-1 tensor.
    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let n = self.value(a).len();
        if len == 0 || start + len > n {
            return Err(Error::dim(format!("slice {start}..{} out of range for {n}", start + len)));
        }
        let out = self.value(a)[start..start + len].to_vec();
        let rg = self.rg(a);
        Ok(self.push(vec![len], out, Op::Slice { x: a, start }, rg))
    }

    /// Row `i` of a rank-2 tensor.
    pub fn row(&mut self, a: Var, i: usize) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.len() != 2 || i >= s[0] {
            return Err(Error::dim(format!("row {i} out of range for {s:?}")));
        }
        self.slice(a, i * s[1], s[1])
    }

    /// Stack equal-length rank-1 tensors into a `[n × len]` matrix.
    pub fn stack_rows(&mut self, rows: &[Var]) -> Result<Var> {
        let len = rows.first().map(|&r| self.value(r).len()).unwrap_or(0);
        if rows.iter().any(|&r| self.shape(r) != [len]) {
            return Err(Error::dim("stack_rows: rows must be rank-1 with equal length"));
        }
        let c = self.concat(rows)?;
        self.reshape(c, vec![rows.len(), len])
    }

    // ---- vision ---------------------------------------------------------

    /// 2-D convolution over a `[C_in×H×W]` input with `[C_out×C_in×kh×kw]`
    /// kernels, zero padding `pad`.
    pub fn conv2d(&mut self, x: Var, k: Var, stride: usize, pad: usize) -> Result<Var> {
        self.conv2d_ext(x, k, None, stride, (pad, pad))
    }

    /// Convolution with optional per-output-channel bias and separate
    /// vertical/horizontal padding.
    pub fn conv2d_ext(
        &mut self,
        x: Var,
        k: Var,
        bias: Option<Var>,
        stride: usize,
        (ph, pw): (usize, usize),
    ) -> Result<Var> {
        let (sx, sk) = (self.shape(x).to_vec(), self.shape(k).to_vec());
        if sx.len() != 3 || sk.len() != 4 || sx[0] != sk[1] {
            return Err(Error::dim(format!("conv2d: input {sx:?} incompatible with kernels {sk:?}")));
        }
        if stride == 0 {
            return Err(Error::contract("conv2d: stride must be positive"));
        }
        let (cin, h, w) = (sx[0], sx[1], sx[2]);
        let (cout, kh, kw) = (sk[0], sk[2], sk[3]);
        if kh > h + 2 * ph || kw > w + 2 * pw {
            return Err(Error::dim(format!(
                "conv2d: kernel {kh}×{kw} larger than padded input {}×{}",
                h + 2 * ph,
                w + 2 * pw
            )));
        }
        if let Some(b) = bias {
            if self.shape(b) != [cout] {
                return Err(Error::dim(format!("conv2d: bias shape {:?} != [{cout}]", self.shape(b))));
            }
        }
        let oh = (h + 2 * ph - kh) / stride + 1;
        let ow = (w + 2 * pw - kw) / stride + 1;
        let geom = ConvGeom { cin, h, w, cout, kh, kw, stride, ph, pw, oh, ow };
        let kdim = cin * kh * kw;
        let hw = oh * ow;
        let mut out = vec![0.0; cout * hw];
        let cols = if geom.pointwise() {
            kernels::gemm_nn(cout, kdim, hw, self.value(k), self.value(x), &mut out);
            None
        } else {
            let cols = kernels::im2col(self.value(x), cin, h, w, kh, kw, stride, ph, pw, oh, ow);
            kernels::gemm_nn(cout, kdim, hw, self.value(k), &cols, &mut out);
            Some(cols)
        };
        if let Some(b) = bias {
            let bv = self.value(b);
            for (plane, &bb) in out.chunks_exact_mut(hw).zip(bv) {
                plane.iter_mut().for_each(|v| *v += bb);
            }
        }
        let rg = self.rg(x) || self.rg(k) || bias.is_some_and(|b| self.rg(b));
        // Patch columns are only needed for the kernel gradient.
        let cols = if self.rg(k) { cols } else { None };
        Ok(self.push(
            vec![cout, oh, ow],
            out,
            Op::Conv2d(Box::new(ConvSaved { x, k, bias, geom, cols })),
            rg,
        ))
    }

    /// Even-partition max pooling of a `[C×H×W]` tensor into `rows×cols`
    /// bins. Requires `rows ≤ H` and `cols ≤ W`.
    pub fn max_pool_bins(&mut self, x: Var, rows: usize, cols: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 {
            return Err(Error::dim(format!("max_pool_bins: expected [C×H×W], got {s:?}")));
        }
        if rows == 0 || cols == 0 || rows > s[1] || cols > s[2] {
            return Err(Error::dim(format!(
                "max_pool_bins: {rows}×{cols} bins do not fit a {}×{} input",
                s[1], s[2]
            )));
        }
        self.max_pool_region(x, (0, s[1]), (0, s[2]), rows, cols)
    }

    /// Max pooling of the sub-rectangle `rows_range × cols_range` into
    /// `out_h×out_w` bins. Bin `i` spans `floor(i·n/out) .. max(start+1,
    /// floor((i+1)·n/out))`, which equals the even partition when
    /// `out ≤ n` and repeats single cells when the region is smaller than
    /// the output grid.
    pub fn max_pool_region(
        &mut self,
        x: Var,
        (r0, r1): (usize, usize),
        (c0, c1): (usize, usize),
        out_h: usize,
        out_w: usize,
    ) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 || r0 >= r1 || c0 >= c1 || r1 > s[1] || c1 > s[2] || out_h == 0 || out_w == 0 {
            return Err(Error::dim(format!(
                "max_pool_region: region rows {r0}..{r1} cols {c0}..{c1} invalid for {s:?}"
            )));
        }
        let (ch, h, w) = (s[0], s[1], s[2]);
        let rb = bins(r1 - r0, out_h);
        let cb = bins(c1 - c0, out_w);
        let v = self.value(x);
        let mut out = Vec::with_capacity(ch * out_h * out_w);
        let mut argmax = Vec::with_capacity(ch * out_h * out_w);
        for c in 0..ch {
            for &(ra, rz) in &rb {
                for &(ca, cz) in &cb {
                    let mut best = Float::NEG_INFINITY;
                    let mut bi = 0;
                    for r in r0 + ra..r0 + rz {
                        let base = (c * h + r) * w;
                        for col in c0 + ca..c0 + cz {
                            let val = v[base + col];
                            if val > best {
                                best = val;
                                bi = base + col;
                            }
                        }
                    }
                    out.push(best);
                    argmax.push(bi);
                }
            }
        }
        let rg = self.rg(x);
        Ok(self.push(vec![ch, out_h, out_w], out, Op::MaxPool { x, argmax }, rg))
    }

    // ---- recurrent ------------------------------------------------------

    fn check_lstm(&self, p: LstmVars, d: usize) -> Result<usize> {
        let swx = self.shape(p.wx);
        if swx.len() != 2 || !swx[0].is_multiple_of(4) || swx[1] != d {
            return Err(Error::dim(format!("lstm: W_x shape {swx:?} incompatible with input size {d}")));
        }
        let r = swx[0] / 4;
        if self.shape(p.wh) != [4 * r, r] || self.shape(p.b) != [4 * r] {
            return Err(Error::dim(format!(
                "lstm: W_h {:?} / b {:?} inconsistent with hidden size {r}",
                self.shape(p.wh),
                self.shape(p.b)
            )));
        }
        Ok(r)
    }

    /// One LSTM step. Returns a `[2R]` node holding `[h; c]`.
    pub fn lstm_cell_state(&mut self, x: Var, h: Var, c: Var, p: LstmVars) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        if sx.len() != 1 {
            return Err(Error::dim(format!("lstm_cell: input must be rank 1, got {sx:?}")));
        }
        let d = sx[0];
        let r = self.check_lstm(p, d)?;
        if self.shape(h) != [r] || self.shape(c) != [r] {
            return Err(Error::dim(format!(
                "lstm_cell: state shapes {:?}/{:?} must be [{r}]",
                self.shape(h),
                self.shape(c)
            )));
        }
        let mut z = self.value(p.b).to_vec();
        kernels::gemv(4 * r, d, self.value(p.wx), self.value(x), &mut z);
        kernels::gemv(4 * r, r, self.value(p.wh), self.value(h), &mut z);
        let gates = activate_gates(&z, r);
        let cprev = self.value(c);
        let mut out = vec![0.0; 2 * r];
        let mut tanh_c = vec![0.0; r];
        for j in 0..r {
            let cn = gates[r + j] * cprev[j] + gates[j] * gates[2 * r + j];
            tanh_c[j] = cn.tanh();
            out[j] = gates[3 * r + j] * tanh_c[j];
            out[r + j] = cn;
        }
        let rg = [x, h, c, p.wx, p.wh, p.b].iter().any(|&v| self.rg(v));
        Ok(self.push(
            vec![2 * r],
            out,
            Op::LstmCell(Box::new(CellSaved { x, h, c, p, d, r, gates, tanh_c })),
            rg,
        ))
    }

    /// One LSTM step returning `(h, c)` as separate nodes.
    pub fn lstm_cell(&mut self, x: Var, h: Var, c: Var, p: LstmVars) -> Result<(Var, Var)> {
        let st = self.lstm_cell_state(x, h, c, p)?;
        let r = self.value(st).len() / 2;
        Ok((self.slice(st, 0, r)?, self.slice(st, r, r)?))
    }

    /// Run an LSTM from zero state over the rows of `x[T×D]`; returns all
    /// hidden states as `[T×R]`.
    pub fn lstm_sequence(&mut self, x: Var, p: LstmVars) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        if sx.len() != 2 {
            return Err(Error::dim(format!("lstm_sequence: input must be [T×D], got {sx:?}")));
        }
        let (t, d) = (sx[0], sx[1]);
        let r = self.check_lstm(p, d)?;
        let (wx, wh, b) = (self.value(p.wx), self.value(p.wh), self.value(p.b));
        let mut z = vec![0.0; t * 4 * r];
        for row in z.chunks_exact_mut(4 * r) {
            row.copy_from_slice(b);
        }
        kernels::gemm_nt(t, d, 4 * r, self.value(x), wx, &mut z);
        let mut hs = vec![0.0; t * r];
        let mut cells = vec![0.0; t * r];
        let mut gates = vec![0.0; t * 4 * r];
        let mut hprev = vec![0.0; r];
        let mut cprev = vec![0.0; r];
        for step in 0..t {
            let zt = &mut z[step * 4 * r..(step + 1) * 4 * r];
            kernels::gemv(4 * r, r, wh, &hprev, zt);
            let g = activate_gates(zt, r);
            for j in 0..r {
                let cn = g[r + j] * cprev[j] + g[j] * g[2 * r + j];
                cprev[j] = cn;
                hprev[j] = g[3 * r + j] * cn.tanh();
            }
            hs[step * r..(step + 1) * r].copy_from_slice(&hprev);
            cells[step * r..(step + 1) * r].copy_from_slice(&cprev);
            gates[step * 4 * r..(step + 1) * 4 * r].copy_from_slice(&g);
        }
        let rg = [x, p.wx, p.wh, p.b].iter().any(|&v| self.rg(v));
        let (gates, cells) = if rg { (gates, cells) } else { (Vec::new(), Vec::new()) };
        Ok(self.push(
            vec![t, r],
            hs,
            Op::LstmSeq(Box::new(SeqSaved { x, p, t, d, r, gates, cells })),
            rg,
        ))
    }

    // ---- losses ---------------------------------------------------------

    /// `Σ φ(x_i)` with `φ(x) = 0.5x²` for `|x| < 1`, else `|x| − 0.5`.
    pub fn smooth_l1(&mut self, a: Var) -> Var {
        let s: Float = self.value(a).iter().map(|&x| smooth_l1_scalar(x)).sum();
        let rg = self.rg(a);
        self.push(vec![], vec![s], Op::SmoothL1(a), rg)
    }

    // ---- backward -------------------------------------------------------

    /// Reverse-mode sweep from a scalar loss. Leaf gradients accumulate
    /// across calls until [`Graph::zero_grad`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::contract(format!(
                "backward: loss must be scalar, got shape {:?}",
                self.shape(loss)
            )));
        }
        let nodes = &self.nodes;
        let mut adj: Vec<Option<Vec<Float>>> = Vec::new();
        adj.resize_with(loss.0 + 1, || None);
        adj[loss.0] = Some(vec![1.0]);
        let mut leaves = Vec::new();
        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            if !nodes[i].requires_grad {
                continue;
            }
            if let Op::Leaf = nodes[i].op {
                leaves.push((i, g));
            } else {
                backprop_node(nodes, i, &g, &mut adj);
            }
        }
        for (i, g) in leaves {
            let slot = self.leaf_grads.entry(i).or_insert_with(|| vec![0.0; g.len()]);
            for (a, b) in slot.iter_mut().zip(&g) {
                *a += b;
            }
        }
        Ok(())
    }
}

fn bins(n: usize, out: usize) -> Vec<(usize, usize)> {
    (0..out)
        .map(|i| {
            let a = i * n / out;
            let z = ((i + 1) * n / out).max(a + 1);
            (a, z)
        })
        .collect()
}

pub(crate) fn softmax_slice(x: &[Float]) -> Vec<Float> {
    let mx = x.iter().cloned().fold(Float::NEG_INFINITY, Float::max);
    let mut out: Vec<Float> = x.iter().map(|v| (v - mx).exp()).collect();
    let s: Float = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= s);
    out
}

pub(crate) fn smooth_l1_scalar(x: Float) -> Float {
    if x.abs() < 1.0 {
        0.5 * x * x
    } else {
        x.abs() - 0.5
    }
}

fn activate_gates(z: &[Float], r: usize) -> Vec<Float> {
    let mut g = Vec::with_capacity(4 * r);
    g.extend(z[..r].iter().map(|&v| sigmoid(v)));
    g.extend(z[r..2 * r].iter().map(|&v| sigmoid(v)));
    g.extend(z[2 * r..3 * r].iter().map(|v| v.tanh()));
    g.extend(z[3 * r..].iter().map(|&v| sigmoid(v)));
    g
}

fn slot<'a>(nodes: &[Node], adj: &'a mut [Option<Vec<Float>>], v: Var) -> Option<&'a mut Vec<Float>> {
    if !nodes[v.0].requires_grad {
        return None;
    }
    let n = nodes[v.0].value.as_slice().len();
    Some(adj[v.0].get_or_insert_with(|| vec![0.0; n]))
}

fn add_into(nodes: &[Node], adj: &mut [Option<Vec<Float>>], v: Var, g: &[Float]) {
    if let Some(s) = slot(nodes, adj, v) {
        for (a, b) in s.iter_mut().zip(g) {
            *a += b;
        }
    }
}

/// d(pre-activation) for the four gates given d(h) = `dh`, d(c) flowing in
/// from later steps = `dc_in`. Writes gradient for c_prev into `dc_prev`.
#[allow(clippy::too_many_arguments)]
fn lstm_gate_grads(
    gates: &[Float],
    tanh_c: &[Float],
    cprev: &[Float],
    dh: &[Float],
    dc_in: &[Float],
    r: usize,
    dz: &mut [Float],
    dc_prev: &mut [Float],
) {
    let (gi, gf, gg, go) = (&gates[..r], &gates[r..2 * r], &gates[2 * r..3 * r], &gates[3 * r..]);
    for j in 0..r {
        let d_o = dh[j] * tanh_c[j];
        let dc = dc_in[j] + dh[j] * go[j] * (1.0 - tanh_c[j] * tanh_c[j]);
        let di = dc * gg[j];
        let df = dc * cprev[j];
        let dg = dc * gi[j];
        dc_prev[j] = dc * gf[j];
        dz[j] = di * gi[j] * (1.0 - gi[j]);
        dz[r + j] = df * gf[j] * (1.0 - gf[j]);
        dz[2 * r + j] = dg * (1.0 - gg[j] * gg[j]);
        dz[3 * r + j] = d_o * go[j] * (1.0 - go[j]);
    }
}

fn backprop_node(nodes: &[Node], i: usize, g: &[Float], adj: &mut [Option<Vec<Float>>]) {
    let val = |v: Var| nodes[v.0].value.as_slice();
    let out = nodes[i].value.as_slice();
    match &nodes[i].op {
        Op::Leaf => {}
        &Op::MatMul { a, b, m, k, n } => {
            if let Some(ga) = slot(nodes, adj, a) {
                kernels::gemm_nt(m, n, k, g, val(b), ga);
            }
            if let Some(gb) = slot(nodes, adj, b) {
                kernels::gemm_tn(k, m, n, val(a), g, gb);
            }
        }
        &Op::MatVec { a, x, m, n } => {
            if let Some(ga) = slot(nodes, adj, a) {
                kernels::ger(m, n, g, val(x), ga);
            }
            if let Some(gx) = slot(nodes, adj, x) {
                kernels::gemv_t(m, n, val(a), g, gx);
            }
        }
        &Op::Transpose { a, r, c } => {
            if let Some(ga) = slot(nodes, adj, a) {
                for i in 0..r {
                    for j in 0..c {
                        ga[i * c + j] += g[j * r + i];
                    }
                }
            }
        }
        &Op::Add(a, b) => {
            add_into(nodes, adj, a, g);
            add_into(nodes, adj, b, g);
        }
        &Op::Sub(a, b) => {
            add_into(nodes, adj, a, g);
            if let Some(gb) = slot(nodes, adj, b) {
                for (s, v) in gb.iter_mut().zip(g) {
                    *s -= v;
                }
            }
        }
        &Op::Mul(a, b) => {
            let ca: Vec<Float> = g.iter().zip(val(b)).map(|(x, y)| x * y).collect();
            let cb: Vec<Float> = g.iter().zip(val(a)).map(|(x, y)| x * y).collect();
            add_into(nodes, adj, a, &ca);
            add_into(nodes, adj, b, &cb);
        }
        &Op::AddRow { m, v, cols } => {
            add_into(nodes, adj, m, g);
            if let Some(gv) = slot(nodes, adj, v) {
                for row in g.chunks_exact(cols) {
                    for (s, x) in gv.iter_mut().zip(row) {
                        *s += x;
                    }
                }
            }
        }
        &Op::Scale(a, k) => {
            if let Some(ga) = slot(nodes, adj, a) {
                axpy(k, g, ga);
            }
        }
        &Op::Sum(a) => {
            if let Some(ga) = slot(nodes, adj, a) {
                ga.iter_mut().for_each(|s| *s += g[0]);
            }
        }
        &Op::Tanh(a) => {
            let k = if corrupted() { 1.1 } else { 1.0 };
            if let Some(ga) = slot(nodes, adj, a) {
                for ((s, gv), y) in ga.iter_mut().zip(g).zip(out) {
                    *s += k * gv * (1.0 - y * y);
                }
            }
        }
        &Op::Sigmoid(a) => {
            let k = if corrupted() { 1.1 } else { 1.0 };
            if let Some(ga) = slot(nodes, adj, a) {
                for ((s, gv), y) in ga.iter_mut().zip(g).zip(out) {
                    *s += k * gv * y * (1.0 - y);
                }
            }
        }
        &Op::Relu(a) => {
            let leak = corrupted();
            if let Some(ga) = slot(nodes, adj, a) {
                for ((s, gv), y) in ga.iter_mut().zip(g).zip(out) {
                    if *y > 0.0 || leak {
                        *s += gv;
                    }
                }
            }
        }
        &Op::Ln(a) => {
            let x = val(a);
            if let Some(ga) = slot(nodes, adj, a) {
                for ((s, gv), xv) in ga.iter_mut().zip(g).zip(x) {
                    *s += gv / xv;
                }
            }
        }
        &Op::Softmax(a) => {
            let dotp: Float = g.iter().zip(out).map(|(x, y)| x * y).sum();
            if let Some(ga) = slot(nodes, adj, a) {
                for ((s, gv), y) in ga.iter_mut().zip(g).zip(out) {
                    *s += y * (gv - dotp);
                }
            }
        }
        &Op::LogSoftmaxRows { x, cols } => {
            if let Some(ga) = slot(nodes, adj, x) {
                for ((grow, orow), srow) in g.chunks_exact(cols).zip(out.chunks_exact(cols)).zip(ga.chunks_exact_mut(cols)) {
                    let gs: Float = grow.iter().sum();
                    for j in 0..cols {
                        srow[j] += grow[j] - orow[j].exp() * gs;
                    }
                }
            }
        }
        Op::Gather { x, idx } => {
            if let Some(ga) = slot(nodes, adj, *x) {
                for (&j, gv) in idx.iter().zip(g) {
                    ga[j] += gv;
                }
            }
        }
        &Op::Reshape(a) => add_into(nodes, adj, a, g),
        Op::Concat(parts) => {
            let mut off = 0;
            for &p in parts {
                let n = val(p).len();
                add_into(nodes, adj, p, &g[off..off + n]);
                off += n;
            }
        }
        &Op::Slice { x, start } => {
            if let Some(ga) = slot(nodes, adj, x) {
                for (s, v) in ga[start..start + g.len()].iter_mut().zip(g) {
                    *s += v;
                }
            }
        }
        Op::Conv2d(s) => {
            let ConvGeom { cin, h, w, cout, kh, kw, stride, ph, pw, oh, ow } = s.geom;
            let kdim = cin * kh * kw;
            let hw = oh * ow;
            if let Some(b) = s.bias {
                if let Some(gb) = slot(nodes, adj, b) {
                    for (acc, plane) in gb.iter_mut().zip(g.chunks_exact(hw)) {
                        *acc += plane.iter().sum::<Float>();
                    }
                }
            }
            if let Some(gk) = slot(nodes, adj, s.k) {
                let cols: &[Float] = match &s.cols {
                    Some(c) => c,
                    None => val(s.x),
                };
                kernels::gemm_nt(cout, hw, kdim, g, cols, gk);
            }
            if nodes[s.x.0].requires_grad {
                if s.geom.pointwise() {
                    let gx = slot(nodes, adj, s.x).expect("requires grad");
                    kernels::gemm_tn(kdim, cout, hw, val(s.k), g, gx);
                } else {
                    let mut dcols = vec![0.0; kdim * hw];
                    kernels::gemm_tn(kdim, cout, hw, val(s.k), g, &mut dcols);
                    let gx = slot(nodes, adj, s.x).expect("requires grad");
                    kernels::col2im_add(&dcols, cin, h, w, kh, kw, stride, ph, pw, oh, ow, gx);
                }
            }
        }
        Op::MaxPool { x, argmax } => {
            if let Some(ga) = slot(nodes, adj, *x) {
                for (&j, gv) in argmax.iter().zip(g) {
                    ga[j] += gv;
                }
            }
        }
        Op::LstmCell(s) => {
            let (d, r) = (s.d, s.r);
            let dh = &g[..r];
            let dc_in = &g[r..];
            let mut dz = vec![0.0; 4 * r];
            let mut dc_prev = vec![0.0; r];
            lstm_gate_grads(&s.gates, &s.tanh_c, val(s.c), dh, dc_in, r, &mut dz, &mut dc_prev);
            if let Some(gw) = slot(nodes, adj, s.p.wx) {
                kernels::ger(4 * r, d, &dz, val(s.x), gw);
            }
            if let Some(gw) = slot(nodes, adj, s.p.wh) {
                kernels::ger(4 * r, r, &dz, val(s.h), gw);
            }
            add_into(nodes, adj, s.p.b, &dz);
            if let Some(gx) = slot(nodes, adj, s.x) {
                kernels::gemv_t(4 * r, d, val(s.p.wx), &dz, gx);
            }
            if let Some(gh) = slot(nodes, adj, s.h) {
                kernels::gemv_t(4 * r, r, val(s.p.wh), &dz, gh);
            }
            add_into(nodes, adj, s.c, &dc_prev);
        }
        Op::LstmSeq(s) => {
            let (t, d, r) = (s.t, s.d, s.r);
            let wh = val(s.p.wh);
            let mut dz_all = vec![0.0; t * 4 * r];
            let mut dh_next = vec![0.0; r];
            let mut dc_next = vec![0.0; r];
            let zeros = vec![0.0; r];
            let mut dh = vec![0.0; r];
            let mut dc_prev = vec![0.0; r];
            for step in (0..t).rev() {
                for j in 0..r {
                    dh[j] = g[step * r + j] + dh_next[j];
                }
                let cells = &s.cells[step * r..(step + 1) * r];
                let tanh_c: Vec<Float> = cells.iter().map(|c| c.tanh()).collect();
                let cprev = if step == 0 { &zeros[..] } else { &s.cells[(step - 1) * r..step * r] };
                let dz = &mut dz_all[step * 4 * r..(step + 1) * 4 * r];
                lstm_gate_grads(&s.gates[step * 4 * r..(step + 1) * 4 * r], &tanh_c, cprev, &dh, &dc_next, r, dz, &mut dc_prev);
                dc_next.copy_from_slice(&dc_prev);
                dh_next.iter_mut().for_each(|v| *v = 0.0);
                kernels::gemv_t(4 * r, r, wh, dz, &mut dh_next);
            }
            let hs = out;
            if let Some(gw) = slot(nodes, adj, s.p.wh) {
                // h_{t-1} for steps 1..t are rows 0..t-1 of the output.
                if t > 1 {
                    kernels::gemm_tn(4 * r, t - 1, r, &dz_all[4 * r..], &hs[..(t - 1) * r], gw);
                }
            }
            if let Some(gw) = slot(nodes, adj, s.p.wx) {
                kernels::gemm_tn(4 * r, t, d, &dz_all, val(s.x), gw);
            }
            if let Some(gb) = slot(nodes, adj, s.p.b) {
                for row in dz_all.chunks_exact(4 * r) {
                    for (a, b) in gb.iter_mut().zip(row) {
                        *a += b;
                    }
                }
            }
            if let Some(gx) = slot(nodes, adj, s.x) {
                kernels::gemm_nn(t, 4 * r, d, &dz_all, val(s.p.wx), gx);
            }
        }
        &Op::SmoothL1(a) => {
            let x = val(a);
            if let Some(ga) = slot(nodes, adj, a) {
                for (s, xv) in ga.iter_mut().zip(x) {
                    *s += g[0] * xv.clamp(-1.0, 1.0);
                }
            }
        }
    }
}
