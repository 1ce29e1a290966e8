//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! A [`Tape`] records every operation of one forward pass. Values are 2-D
//! matrices; vectors are `1 × n` rows and scalars are `1 × 1`. Calling
//! [`Tape::backward`] on a scalar node returns [`Gradients`] for every node
//! that transitively depends on a leaf created with [`Tape::leaf`].
//!
//! Binary elementwise ops broadcast their *second* operand: it may have the
//! same shape as the first, or be `1 × n`, `L × 1` or `1 × 1`.
//!
//! Shape errors inside the tape are programming errors and panic. Public
//! model-level operations validate their inputs and return `Result` before
//! touching the tape.

use std::borrow::Cow;

use ndarray::{s, Array2, Axis, Zip};

pub type Mat = Array2<f64>;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Sigmoid(Var),
    Tanh(Var),
    Gelu(Var),
    Exp(Var),
    Log(Var),
    Sqrt(Var),
    SumAll(Var),
    SumRows(Var),
    SumCols(Var),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    RepeatRows(Var),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    MaxPoolRows(Var, Vec<usize>),
    Im2Col(Var, usize),
    GatherRows(Var, Vec<usize>),
    LayerNorm(Var, Vec<f64>),
}

struct Node<'p> {
    value: Cow<'p, Mat>,
    op: Op,
    requires_grad: bool,
}

/// Operation record for a single forward pass.
///
/// The lifetime lets parameter matrices be borrowed instead of copied.
#[derive(Default)]
pub struct Tape<'p> {
    nodes: Vec<Node<'p>>,
}

/// Gradients of a scalar with respect to every node on the tape.
pub struct Gradients {
    grads: Vec<Option<Mat>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Mat> {
        self.grads[v.0].as_ref()
    }

    /// Gradient or a zero matrix of the given shape when the node was not reached.
    pub fn get_or_zeros(&self, v: Var, shape: (usize, usize)) -> Mat {
        self.get(v).cloned().unwrap_or_else(|| Mat::zeros(shape))
    }

    pub fn take(&mut self, v: Var) -> Option<Mat> {
        self.grads[v.0].take()
    }
}

pub const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Tanh approximation of GeLU.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

fn broadcastable(a: (usize, usize), b: (usize, usize)) -> bool {
    (b.0 == a.0 || b.0 == 1) && (b.1 == a.1 || b.1 == 1)
}

/// Sums `g` down to `shape` along broadcast axes.
fn reduce_to(g: &Mat, shape: (usize, usize)) -> Mat {
    let mut out = g.clone();
    if shape.0 == 1 && out.nrows() != 1 {
        out = out.sum_axis(Axis(0)).insert_axis(Axis(0));
    }
    if shape.1 == 1 && out.ncols() != 1 {
        out = out.sum_axis(Axis(1)).insert_axis(Axis(1));
    }
    out
}

fn row_softmax(x: &Mat) -> Mat {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let z = row.sum();
        row.mapv_inplace(|v| v / z);
    }
    out
}

fn row_log_softmax(x: &Mat) -> Mat {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| v - lse);
    }
    out
}

impl<'p> Tape<'p> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Mat, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Input that gradients are not taken with respect to.
    pub fn constant(&mut self, m: Mat) -> Var {
        self.push(m, Op::Leaf, false)
    }

    /// Input that gradients are taken with respect to.
    pub fn leaf(&mut self, m: Mat) -> Var {
        self.push(m, Op::Leaf, true)
    }

    /// Borrowed input; avoids copying parameter matrices into the tape.
    pub fn borrowed(&mut self, m: &'p Mat, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Cow::Borrowed(m),
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn scalar(&mut self, x: f64) -> Var {
        self.constant(Mat::from_elem((1, 1), x))
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).dim()
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        let m = self.value(v);
        assert_eq!(m.dim(), (1, 1), "scalar_value on non-scalar node");
        m[[0, 0]]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(
            va.ncols(),
            vb.nrows(),
            "matmul shape {:?} x {:?}",
            va.dim(),
            vb.dim()
        );
        let out = va.dot(vb);
        let rg = self.rg(&[a, b]);
        self.push(out, Op::MatMul(a, b), rg)
    }

    /// `a · bᵀ`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(
            va.ncols(),
            vb.ncols(),
            "matmul_nt shape {:?} x {:?}ᵀ",
            va.dim(),
            vb.dim()
        );
        let out = va.dot(&vb.t());
        let rg = self.rg(&[a, b]);
        self.push(out, Op::MatMulNT(a, b), rg)
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert!(
            broadcastable(va.dim(), vb.dim()),
            "cannot broadcast {:?} onto {:?}",
            vb.dim(),
            va.dim()
        );
        let vb = vb.broadcast(va.dim()).expect("broadcast");
        let mut out = va.clone();
        Zip::from(&mut out).and(&vb).for_each(|o, &y| *o = f(*o, y));
        let rg = self.rg(&[a, b]);
        self.push(out, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x / y, Op::Div(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a) * c;
        let rg = self.rg(&[a]);
        self.push(out, Op::Scale(a, c), rg)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a) + c;
        let rg = self.rg(&[a]);
        self.push(out, Op::AddScalar(a), rg)
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let out = self.value(a).mapv(f);
        let rg = self.rg(&[a]);
        self.push(out, op, rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        self.unary(a, gelu, Op::Gelu(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn ln(&mut self, a: Var) -> Var {
        self.unary(a, f64::ln, Op::Log(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(a, f64::sqrt, Op::Sqrt(a))
    }

    /// Sum of all entries, `1 × 1`.
    pub fn sum_all(&mut self, a: Var) -> Var {
        let out = Mat::from_elem((1, 1), self.value(a).sum());
        let rg = self.rg(&[a]);
        self.push(out, Op::SumAll(a), rg)
    }

    /// Column totals (sum over rows), `1 × n`.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let out = self.value(a).sum_axis(Axis(0)).insert_axis(Axis(0));
        let rg = self.rg(&[a]);
        self.push(out, Op::SumRows(a), rg)
    }

    /// Row totals (sum over columns), `L × 1`.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let out = self.value(a).sum_axis(Axis(1)).insert_axis(Axis(1));
        let rg = self.rg(&[a]);
        self.push(out, Op::SumCols(a), rg)
    }

    /// Mean over rows, `1 × n`.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let n = self.value(a).nrows() as f64;
        let s = self.sum_rows(a);
        self.scale(s, 1.0 / n)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let out = ndarray::concatenate(Axis(0), &views).expect("concat_rows: column mismatch");
        let rg = self.rg(parts);
        self.push(out, Op::ConcatRows(parts.to_vec()), rg)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let out = ndarray::concatenate(Axis(1), &views).expect("concat_cols: row mismatch");
        let rg = self.rg(parts);
        self.push(out, Op::ConcatCols(parts.to_vec()), rg)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let out = self.value(a).slice(s![start..start + len, ..]).to_owned();
        let rg = self.rg(&[a]);
        self.push(out, Op::SliceRows(a, start), rg)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let out = self.value(a).slice(s![.., start..start + len]).to_owned();
        let rg = self.rg(&[a]);
        self.push(out, Op::SliceCols(a, start), rg)
    }

    /// Replicates a `1 × n` row `times` times.
    pub fn repeat_rows(&mut self, a: Var, times: usize) -> Var {
        let v = self.value(a);
        assert_eq!(v.nrows(), 1, "repeat_rows expects a single row");
        let out = v.broadcast((times, v.ncols())).unwrap().to_owned();
        let rg = self.rg(&[a]);
        self.push(out, Op::RepeatRows(a), rg)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let out = row_softmax(self.value(a));
        let rg = self.rg(&[a]);
        self.push(out, Op::SoftmaxRows(a), rg)
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let out = row_log_softmax(self.value(a));
        let rg = self.rg(&[a]);
        self.push(out, Op::LogSoftmaxRows(a), rg)
    }

    /// Non-overlapping max pooling over the time (row) axis; trailing rows that
    /// do not fill a window are dropped.
    pub fn max_pool_rows(&mut self, a: Var, k: usize) -> Var {
        let v = self.value(a);
        let (l, d) = v.dim();
        let lo = l / k;
        let mut out = Mat::zeros((lo, d));
        let mut src = vec![0usize; lo * d];
        for t in 0..lo {
            for c in 0..d {
                let mut best = t * k;
                for r in t * k + 1..t * k + k {
                    if v[[r, c]] > v[[best, c]] {
                        best = r;
                    }
                }
                out[[t, c]] = v[[best, c]];
                src[t * d + c] = best;
            }
        }
        let rg = self.rg(&[a]);
        self.push(out, Op::MaxPoolRows(a, src), rg)
    }

    /// Unfolds `k` consecutive rows (zero same-padding) into one row of width
    /// `k·d`; column block `j` holds input row `t + j − k/2`.
    pub fn im2col(&mut self, a: Var, k: usize) -> Var {
        let v = self.value(a);
        let (l, d) = v.dim();
        let pad = k / 2;
        let mut out = Mat::zeros((l, k * d));
        for t in 0..l {
            for j in 0..k {
                let src = t as isize + j as isize - pad as isize;
                if src >= 0 && (src as usize) < l {
                    out.slice_mut(s![t, j * d..(j + 1) * d])
                        .assign(&v.row(src as usize));
                }
            }
        }
        let rg = self.rg(&[a]);
        self.push(out, Op::Im2Col(a, k), rg)
    }

    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Var {
        let v = self.value(table);
        let mut out = Mat::zeros((ids.len(), v.ncols()));
        for (i, &id) in ids.iter().enumerate() {
            out.row_mut(i).assign(&v.row(id));
        }
        let rg = self.rg(&[table]);
        self.push(out, Op::GatherRows(table, ids.to_vec()), rg)
    }

    /// Per-row standardisation without affine parameters.
    pub fn layer_norm(&mut self, a: Var, eps: f64) -> Var {
        let v = self.value(a);
        let d = v.ncols() as f64;
        let mut out = v.clone();
        let mut inv_std = Vec::with_capacity(v.nrows());
        for mut row in out.rows_mut() {
            let mean = row.sum() / d;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / d;
            let is = 1.0 / (var + eps).sqrt();
            row.mapv_inplace(|x| (x - mean) * is);
            inv_std.push(is);
        }
        let rg = self.rg(&[a]);
        self.push(out, Op::LayerNorm(a, inv_std), rg)
    }

    /// Reverse sweep from the scalar node `loss`.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.shape(loss), (1, 1), "backward from non-scalar node");
        let mut grads: Vec<Option<Mat>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Mat::from_elem((1, 1), 1.0));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Gradients { grads }
    }

    fn accumulate(&self, grads: &mut [Option<Mat>], v: Var, g: Mat) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => *acc += &g,
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, i: usize, g: &Mat, grads: &mut [Option<Mat>]) {
        let y: &Mat = &self.nodes[i].value;
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                if self.requires_grad(*a) {
                    self.accumulate(grads, *a, g.dot(&vb.t()));
                }
                if self.requires_grad(*b) {
                    self.accumulate(grads, *b, va.t().dot(g));
                }
            }
            Op::MatMulNT(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                if self.requires_grad(*a) {
                    self.accumulate(grads, *a, g.dot(vb));
                }
                if self.requires_grad(*b) {
                    self.accumulate(grads, *b, g.t().dot(va));
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                if self.requires_grad(*b) {
                    self.accumulate(grads, *b, reduce_to(g, self.shape(*b)));
                }
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                if self.requires_grad(*b) {
                    self.accumulate(grads, *b, -reduce_to(g, self.shape(*b)));
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                if self.requires_grad(*a) {
                    self.accumulate(grads, *a, g * vb);
                }
                if self.requires_grad(*b) {
                    self.accumulate(grads, *b, reduce_to(&(g * va), vb.dim()));
                }
            }
            Op::Div(a, b) => {
                let vb = self.value(*b);
                if self.requires_grad(*a) {
                    self.accumulate(grads, *a, g / vb);
                }
                if self.requires_grad(*b) {
                    // d(a/b)/db = -y/b
                    let gb = -(g * y) / vb;
                    self.accumulate(grads, *b, reduce_to(&gb, vb.dim()));
                }
            }
            Op::Scale(a, c) => self.accumulate(grads, *a, g * *c),
            Op::AddScalar(a) => self.accumulate(grads, *a, g.clone()),
            Op::Sigmoid(a) => self.accumulate(grads, *a, g * &y.mapv(|s| s * (1.0 - s))),
            Op::Tanh(a) => self.accumulate(grads, *a, g * &y.mapv(|t| 1.0 - t * t)),
            Op::Gelu(a) => {
                let d = self.value(*a).mapv(gelu_grad);
                self.accumulate(grads, *a, g * &d)
            }
            Op::Exp(a) => self.accumulate(grads, *a, g * y),
            Op::Log(a) => self.accumulate(grads, *a, g / self.value(*a)),
            Op::Sqrt(a) => self.accumulate(grads, *a, g * &y.mapv(|r| 0.5 / r)),
            Op::SumAll(a) => {
                let shape = self.shape(*a);
                self.accumulate(grads, *a, Mat::from_elem(shape, g[[0, 0]]))
            }
            Op::SumRows(a) => {
                let shape = self.shape(*a);
                self.accumulate(grads, *a, g.broadcast(shape).unwrap().to_owned())
            }
            Op::SumCols(a) => {
                let shape = self.shape(*a);
                self.accumulate(grads, *a, g.broadcast(shape).unwrap().to_owned())
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for p in parts {
                    let n = self.shape(*p).0;
                    if self.requires_grad(*p) {
                        self.accumulate(grads, *p, g.slice(s![off..off + n, ..]).to_owned());
                    }
                    off += n;
                }
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for p in parts {
                    let n = self.shape(*p).1;
                    if self.requires_grad(*p) {
                        self.accumulate(grads, *p, g.slice(s![.., off..off + n]).to_owned());
                    }
                    off += n;
                }
            }
            Op::SliceRows(a, start) => {
                let mut full = Mat::zeros(self.shape(*a));
                full.slice_mut(s![*start..*start + g.nrows(), ..]).assign(g);
                self.accumulate(grads, *a, full)
            }
            Op::SliceCols(a, start) => {
                let mut full = Mat::zeros(self.shape(*a));
                full.slice_mut(s![.., *start..*start + g.ncols()]).assign(g);
                self.accumulate(grads, *a, full)
            }
            Op::RepeatRows(a) => {
                self.accumulate(grads, *a, g.sum_axis(Axis(0)).insert_axis(Axis(0)))
            }
            Op::SoftmaxRows(a) => {
                let gy = g * y;
                let dot = gy.sum_axis(Axis(1)).insert_axis(Axis(1));
                self.accumulate(grads, *a, &gy - &(y * &dot))
            }
            Op::LogSoftmaxRows(a) => {
                let sm = y.mapv(f64::exp);
                let tot = g.sum_axis(Axis(1)).insert_axis(Axis(1));
                self.accumulate(grads, *a, g - &(&sm * &tot))
            }
            Op::MaxPoolRows(a, src) => {
                let mut full = Mat::zeros(self.shape(*a));
                let d = g.ncols();
                for t in 0..g.nrows() {
                    for c in 0..d {
                        full[[src[t * d + c], c]] += g[[t, c]];
                    }
                }
                self.accumulate(grads, *a, full)
            }
            Op::Im2Col(a, k) => {
                let (l, d) = self.shape(*a);
                let pad = k / 2;
                let mut full = Mat::zeros((l, d));
                for t in 0..l {
                    for j in 0..*k {
                        let src = t as isize + j as isize - pad as isize;
                        if src >= 0 && (src as usize) < l {
                            let mut row = full.row_mut(src as usize);
                            row += &g.slice(s![t, j * d..(j + 1) * d]);
                        }
                    }
                }
                self.accumulate(grads, *a, full)
            }
            Op::GatherRows(table, ids) => {
                let mut full = Mat::zeros(self.shape(*table));
                for (i, &id) in ids.iter().enumerate() {
                    let mut row = full.row_mut(id);
                    row += &g.row(i);
                }
                self.accumulate(grads, *table, full)
            }
            Op::LayerNorm(a, inv_std) => {
                let d = y.ncols() as f64;
                let mut dx = g.clone();
                for (r, mut row) in dx.rows_mut().into_iter().enumerate() {
                    let gr = g.row(r);
                    let yr = y.row(r);
                    let mean_g = gr.sum() / d;
                    let mean_gy = gr.dot(&yr) / d;
                    for c in 0..row.len() {
                        row[c] = inv_std[r] * (gr[c] - mean_g - yr[c] * mean_gy);
                    }
                }
                self.accumulate(grads, *a, dx)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    // Central differences on a closure that rebuilds the graph from a leaf value.
    fn check<F>(x0: Mat, build: F)
    where
        F: Fn(&mut Tape, Var) -> Var,
    {
        let mut tape = Tape::new();
        let x = tape.leaf(x0.clone());
        let out = build(&mut tape, x);
        let loss = tape.sum_all(out);
        let analytic = tape.backward(loss).get_or_zeros(x, x0.dim());

        let h = 1e-6;
        for idx in 0..x0.len() {
            let eval = |delta: f64| {
                let mut xp = x0.clone();
                xp.as_slice_mut().unwrap()[idx] += delta;
                let mut t = Tape::new();
                let v = t.leaf(xp);
                let o = build(&mut t, v);
                t.value(o).sum()
            };
            let num = (eval(h) - eval(-h)) / (2.0 * h);
            let an = analytic.as_slice().unwrap()[idx];
            assert!(
                (num - an).abs() <= 1e-6 * (1.0 + num.abs()),
                "entry {idx}: analytic {an} vs numeric {num}"
            );
        }
    }

    fn sample() -> Mat {
        array![
            [0.3, -1.2, 0.7],
            [1.1, 0.4, -0.5],
            [-0.8, 0.9, 0.2],
            [0.05, -0.3, 1.4]
        ]
    }

    #[test]
    fn elementwise_grads() {
        check(sample(), |t, x| t.sigmoid(x));
        check(sample(), |t, x| t.tanh(x));
        check(sample(), |t, x| t.gelu(x));
        check(sample(), |t, x| t.exp(x));
        check(sample().mapv(|v| v.abs() + 0.5), |t, x| t.ln(x));
        check(sample().mapv(|v| v.abs() + 0.5), |t, x| t.sqrt(x));
    }

    #[test]
    fn broadcast_binary_grads() {
        let row = array![[0.5, -2.0, 1.5]];
        let col = array![[0.5], [1.5], [-0.7], [2.0]];
        for b in [row, col, array![[1.7]], sample().mapv(|v| v + 3.0)] {
            let b2 = b.clone();
            check(sample(), move |t, x| {
                let c = t.constant(b2.clone());
                let p = t.mul(x, c);
                let q = t.div(p, c);
                let r = t.add(q, c);
                let m = t.mul(r, x);
                t.sub(m, c)
            });
            // gradient through the broadcast operand
            let a = sample();
            check(b.clone(), move |t, x| {
                let c = t.constant(a.clone());
                let p = t.mul(c, x);
                let q = t.div(p, x);
                let r = t.sub(c, x);
                let m = t.mul(r, q);
                let den = t_abs_plus(t, x);
                let o = t.div(m, den);
                t.add(o, x)
            });
        }
    }

    fn t_abs_plus(t: &mut Tape, x: Var) -> Var {
        let sq = t.mul(x, x);
        t.add_scalar(sq, 1.0)
    }

    #[test]
    fn structural_grads() {
        let w = array![[0.2, -0.1], [0.4, 0.3], [-0.6, 0.5]];
        check(sample(), move |t, x| {
            let wv = t.constant(w.clone());
            let y = t.matmul(x, wv);
            let z = t.matmul_nt(y, y);
            t.softmax_rows(z)
        });
        check(sample(), |t, x| {
            let a = t.slice_rows(x, 1, 2);
            let b = t.slice_cols(x, 0, 2);
            let bt = t.slice_rows(b, 0, 2);
            let c = t.concat_cols(&[a, bt]);
            let r = t.sum_rows(x);
            let rr = t.repeat_rows(r, 2);
            let rr = t.concat_cols(&[rr, bt]);
            let k = t.concat_rows(&[c, rr]);
            let m = t.mul(k, k);
            t.log_softmax_rows(m)
        });
        check(sample(), |t, x| {
            let i = t.im2col(x, 3);
            let p = t.max_pool_rows(x, 2);
            let s = t.sum_cols(i);
            let q = t.mul(s, s);
            let ps = t.mean_rows(p);
            let e = t.gather_rows(x, &[3, 0, 3]);
            let e = t.mul(e, ps);
            let ln = t.layer_norm(x, 1e-5);
            let ln2 = t.mul(ln, ln);
            let l3 = t.sum_all(ln2);
            let g = t.mul(e, l3);
            let a = t.sum_all(q);
            let b = t.sum_all(g);
            let c = t.add(a, b);
            let ln = t.sum_all(ln);
            let lsin = t.tanh(ln);
            t.add(c, lsin)
        });
    }

    #[test]
    fn layer_norm_through_weighting() {
        let wts = array![
            [1.0, -2.0, 0.5],
            [0.3, 0.7, -1.1],
            [2.0, 0.1, 0.4],
            [-0.5, 0.9, 1.3]
        ];
        check(sample(), move |t, x| {
            let y = t.layer_norm(x, 1e-5);
            let c = t.constant(wts.clone());
            t.mul(y, c)
        });
    }

    #[test]
    fn constant_branches_get_no_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(sample());
        let c = tape.constant(sample());
        let y = tape.mul(x, c);
        let l = tape.sum_all(y);
        let g = tape.backward(l);
        assert!(g.get(c).is_none());
        assert_eq!(g.get(x).unwrap(), &sample());
    }

    #[test]
    fn im2col_layout() {
        let mut tape = Tape::new();
        let x = tape.constant(array![[1.0], [2.0], [3.0]]);
        let u = tape.im2col(x, 3);
        assert_eq!(
            tape.value(u),
            &array![[0.0, 1.0, 2.0], [1.0, 2.0, 3.0], [2.0, 3.0, 0.0]]
        );
    }
}
