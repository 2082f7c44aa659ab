//! A small reverse-mode tape over dense row-major matrices.
//!
//! Feature maps are stored channels-last: a volume with `n` voxels and `c`
//! channels is an `n x c` matrix whose rows follow x-fastest voxel order.
//! The tape is generic over [`Real`] so training can run in `f32` while
//! gradient checks run in `f64`.

mod kernels;
mod optim;
mod params;
mod real;

use std::sync::Arc;

pub use optim::{clip_grad_norm, Adam, AdamConfig, AdamState};
pub use params::{Bound, Initializer, ParamGrads, ParamId, ParamSet};
pub use real::Real;

use kernels::AttnShape;
use real::{gemm, MatMut, MatRef};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(rows * cols, data.len(), "tensor data does not match shape");
        Tensor { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor::new(rows, cols, vec![T::zero(); rows * cols])
    }

    pub fn scalar(v: T) -> Self {
        Tensor::new(1, 1, vec![v])
    }

    pub fn from_f32(rows: usize, cols: usize, data: &[f32]) -> Self {
        Tensor::new(rows, cols, data.iter().map(|&v| T::of(v as f64)).collect())
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn to_f32(&self) -> Vec<f32> {
        self.data.iter().map(|v| v.f64() as f32).collect()
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor::new(self.rows, self.cols, self.data.iter().map(|v| U::of(v.f64())).collect())
    }
}

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, T),
    Gelu(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Gather {
        x: Var,
        index: Arc<Vec<u32>>,
    },
    ConcatCols(Var, Var),
    Conv3 {
        x: Var,
        w: Var,
        dims: [usize; 3],
        cols: Vec<T>,
    },
    Attention {
        qkv: Var,
        bias: Var,
        shape: AttnShape,
        probs: Vec<T>,
    },
    MeanRows(Var),
    Mean(Var),
    MeanAbsDiff(Var, Var),
    MeanSqDiff(Var, Var),
    Div(Var, Var),
    LinComb(Vec<(Var, T)>),
    Clamp {
        x: Var,
        lo: T,
        hi: T,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Computation tape. Nodes are appended in evaluation order, so reverse
/// insertion order is a valid topological order for backpropagation.
pub struct Graph<T: Real> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Input whose gradient is tracked.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// Scalar value of a `1 x 1` node.
    pub fn scalar(&self, v: Var) -> T {
        let t = self.value(v);
        assert_eq!(t.len(), 1, "not a scalar node");
        t.data[0]
    }

    fn shape(&self, v: Var) -> (usize, usize) {
        let t = self.value(v);
        (t.rows, t.cols)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (m, k) = self.shape(a);
        let (k2, n) = self.shape(b);
        assert_eq!(k, k2, "matmul inner dims {k} vs {k2}");
        let mut out = vec![T::zero(); m * n];
        gemm(
            T::one(),
            MatRef::dense(&self.value(a).data, m, k),
            MatRef::dense(&self.value(b).data, k, n),
            T::zero(),
            MatMut::dense(&mut out, m, n),
        );
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::new(m, n, out), Op::MatMul(a, b), rg)
    }

    fn zip_same(&mut self, a: Var, b: Var, f: impl Fn(T, T) -> T, op: Op<T>) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "elementwise shape mismatch");
        let (r, c) = self.shape(a);
        let data = self
            .value(a)
            .data
            .iter()
            .zip(&self.value(b).data)
            .map(|(&x, &y)| f(x, y))
            .collect();
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::new(r, c, data), op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip_same(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip_same(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip_same(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// `x[r, :] + row[0, :]` for every row `r`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Var {
        let (n, c) = self.shape(x);
        assert_eq!(self.shape(row), (1, c), "row vector shape mismatch");
        let b = &self.value(row).data;
        let data = self
            .value(x)
            .data
            .chunks_exact(c)
            .flat_map(|r| r.iter().zip(b).map(|(&v, &bb)| v + bb))
            .collect();
        let rg = self.rg(x) || self.rg(row);
        self.push(Tensor::new(n, c, data), Op::AddRow(x, row), rg)
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        let t = self.value(x);
        let out = Tensor::new(t.rows, t.cols, t.data.iter().map(|&v| v * s).collect());
        let rg = self.rg(x);
        self.push(out, Op::Scale(x, s), rg)
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let out = Tensor::new(t.rows, t.cols, t.data.iter().map(|&v| kernels::gelu(v)).collect());
        let rg = self.rg(x);
        self.push(out, Op::Gelu(x), rg)
    }

    /// Layer norm over the columns of each row, with affine `gamma`/`beta`
    /// given as `1 x c` rows.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let (n, c) = self.shape(x);
        assert_eq!(self.shape(gamma), (1, c));
        assert_eq!(self.shape(beta), (1, c));
        let (y, xhat, rstd) = kernels::layer_norm_forward(
            &self.value(x).data,
            n,
            c,
            &self.value(gamma).data,
            &self.value(beta).data,
        );
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        let (xhat, rstd) = if rg { (xhat, rstd) } else { (Vec::new(), Vec::new()) };
        self.push(
            Tensor::new(n, c, y),
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            rg,
        )
    }

    /// `out.data[i] = x.data[index[i]]`, reshaped to `rows x cols`.
    pub fn gather(&mut self, x: Var, index: Arc<Vec<u32>>, rows: usize, cols: usize) -> Var {
        assert_eq!(index.len(), rows * cols, "gather index length");
        let src = &self.value(x).data;
        let data = index.iter().map(|&i| src[i as usize]).collect();
        let rg = self.rg(x);
        self.push(Tensor::new(rows, cols, data), Op::Gather { x, index }, rg)
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let (n, ca) = self.shape(a);
        let (n2, cb) = self.shape(b);
        assert_eq!(n, n2, "concat row mismatch");
        let mut data = Vec::with_capacity(n * (ca + cb));
        let (da, db) = (&self.value(a).data, &self.value(b).data);
        for r in 0..n {
            data.extend_from_slice(&da[r * ca..(r + 1) * ca]);
            data.extend_from_slice(&db[r * cb..(r + 1) * cb]);
        }
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::new(n, ca + cb, data), Op::ConcatCols(a, b), rg)
    }

    /// 3x3x3 convolution with zero padding and unit stride. `x` is
    /// `voxels x cin` laid out on `dims`; `w` is `27 * cin x cout`.
    pub fn conv3(&mut self, x: Var, w: Var, dims: [usize; 3]) -> Var {
        let (n, cin) = self.shape(x);
        assert_eq!(n, dims.iter().product::<usize>(), "conv input does not match dims");
        let (k, cout) = self.shape(w);
        assert_eq!(k, kernels::KERNEL_TAPS * cin, "conv weight shape");
        let cols = kernels::im2col(&self.value(x).data, dims, cin);
        let mut out = vec![T::zero(); n * cout];
        gemm(
            T::one(),
            MatRef::dense(&cols, n, k),
            MatRef::dense(&self.value(w).data, k, cout),
            T::zero(),
            MatMut::dense(&mut out, n, cout),
        );
        let rg = self.rg(x) || self.rg(w);
        let cols = if self.rg(w) { cols } else { Vec::new() };
        self.push(Tensor::new(n, cout, out), Op::Conv3 { x, w, dims, cols }, rg)
    }

    /// Multi-head self-attention inside consecutive groups of `window` rows.
    /// `qkv` is `rows x 3c`; `bias` is `heads * window x window` and shared
    /// by all windows.
    pub fn window_attention(&mut self, qkv: Var, bias: Var, heads: usize, window: usize) -> Var {
        let (rows, c3) = self.shape(qkv);
        assert_eq!(c3 % 3, 0);
        let channels = c3 / 3;
        assert_eq!(channels % heads, 0, "channels not divisible by heads");
        assert_eq!(rows % window, 0, "rows not divisible by window");
        assert_eq!(self.shape(bias), (heads * window, window), "attention bias shape");
        let shape = AttnShape {
            windows: rows / window,
            window,
            channels,
            heads,
        };
        let (out, probs) =
            kernels::attention_forward(&self.value(qkv).data, &self.value(bias).data, shape);
        let rg = self.rg(qkv) || self.rg(bias);
        self.push(
            Tensor::new(rows, channels, out),
            Op::Attention {
                qkv,
                bias,
                shape,
                probs,
            },
            rg,
        )
    }

    /// Attention probabilities saved by a [`Graph::window_attention`] node,
    /// laid out `[window index, head, query, key]`.
    pub fn attention_probs(&self, v: Var) -> Option<&[T]> {
        match &self.nodes[v.0].op {
            Op::Attention { probs, .. } => Some(probs),
            _ => None,
        }
    }

    /// Column means, `1 x c`.
    pub fn mean_rows(&mut self, x: Var) -> Var {
        let (n, c) = self.shape(x);
        let mut acc = vec![T::zero(); c];
        for r in self.value(x).data.chunks_exact(c) {
            for (a, &v) in acc.iter_mut().zip(r) {
                *a += v;
            }
        }
        let inv = T::one() / T::of(n as f64);
        acc.iter_mut().for_each(|a| *a *= inv);
        let rg = self.rg(x);
        self.push(Tensor::new(1, c, acc), Op::MeanRows(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let m = t.data.iter().copied().sum::<T>() / T::of(t.len() as f64);
        let rg = self.rg(x);
        self.push(Tensor::scalar(m), Op::Mean(x), rg)
    }

    pub fn mean_abs_diff(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b));
        let (da, db) = (&self.value(a).data, &self.value(b).data);
        let m = da.iter().zip(db).map(|(&x, &y)| (x - y).abs()).sum::<T>() / T::of(da.len() as f64);
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::scalar(m), Op::MeanAbsDiff(a, b), rg)
    }

    pub fn mean_sq_diff(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b));
        let (da, db) = (&self.value(a).data, &self.value(b).data);
        let m = da.iter().zip(db).map(|(&x, &y)| (x - y) * (x - y)).sum::<T>()
            / T::of(da.len() as f64);
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::scalar(m), Op::MeanSqDiff(a, b), rg)
    }

    /// Scalar division `a / b`.
    pub fn div(&mut self, a: Var, b: Var) -> Var {
        let v = self.scalar(a) / self.scalar(b);
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::scalar(v), Op::Div(a, b), rg)
    }

    /// `sum_i c_i * v_i` over same-shaped nodes.
    pub fn lin_comb(&mut self, terms: &[(Var, T)]) -> Var {
        assert!(!terms.is_empty(), "empty linear combination");
        let (r, c) = self.shape(terms[0].0);
        let mut data = vec![T::zero(); r * c];
        for &(v, k) in terms {
            assert_eq!(self.shape(v), (r, c), "lin_comb shape mismatch");
            for (o, &x) in data.iter_mut().zip(&self.value(v).data) {
                *o += k * x;
            }
        }
        let rg = terms.iter().any(|&(v, _)| self.rg(v));
        self.push(Tensor::new(r, c, data), Op::LinComb(terms.to_vec()), rg)
    }

    pub fn add_scalar(&mut self, x: Var, s: T) -> Var {
        let one = self.constant(Tensor::new(
            self.value(x).rows,
            self.value(x).cols,
            vec![s; self.value(x).len()],
        ));
        self.add(x, one)
    }

    pub fn clamp(&mut self, x: Var, lo: T, hi: T) -> Var {
        let t = self.value(x);
        let out = Tensor::new(t.rows, t.cols, t.data.iter().map(|&v| v.max(lo).min(hi)).collect());
        let rg = self.rg(x);
        self.push(out, Op::Clamp { x, lo, hi }, rg)
    }

    /// Reverse-mode sweep from a scalar node.
    pub fn backward(&self, loss: Var) -> Gradients<T> {
        assert_eq!(self.value(loss).len(), 1, "backward needs a scalar loss");
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.rg(loss) {
            return Gradients { grads };
        }
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Gradients { grads }
    }

    fn backprop_node(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let nodes = &self.nodes;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [T])| {
            if nodes[v.0].requires_grad {
                let slot = grads[v.0].get_or_insert_with(|| vec![T::zero(); nodes[v.0].value.len()]);
                f(slot);
            }
        };
        let val = |v: Var| &nodes[v.0].value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (val(*a).rows, val(*a).cols);
                let n = val(*b).cols;
                acc(*a, &mut |da| {
                    gemm(
                        T::one(),
                        MatRef::dense(g, m, n),
                        MatRef::dense(&val(*b).data, k, n).t(),
                        T::one(),
                        MatMut::dense(da, m, k),
                    )
                });
                acc(*b, &mut |db| {
                    gemm(
                        T::one(),
                        MatRef::dense(&val(*a).data, m, k).t(),
                        MatRef::dense(g, m, n),
                        T::one(),
                        MatMut::dense(db, k, n),
                    )
                });
            }
            Op::Add(a, b) => {
                acc(*a, &mut |d| add_into(d, g));
                acc(*b, &mut |d| add_into(d, g));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |d| add_into(d, g));
                acc(*b, &mut |d| d.iter_mut().zip(g).for_each(|(o, &x)| *o -= x));
            }
            Op::Mul(a, b) => {
                acc(*a, &mut |d| {
                    for ((o, &x), &y) in d.iter_mut().zip(g).zip(&val(*b).data) {
                        *o += x * y;
                    }
                });
                acc(*b, &mut |d| {
                    for ((o, &x), &y) in d.iter_mut().zip(g).zip(&val(*a).data) {
                        *o += x * y;
                    }
                });
            }
            Op::AddRow(x, row) => {
                let c = val(*row).cols;
                acc(*x, &mut |d| add_into(d, g));
                acc(*row, &mut |d| {
                    for r in g.chunks_exact(c) {
                        add_into(d, r);
                    }
                });
            }
            Op::Scale(x, s) => {
                acc(*x, &mut |d| d.iter_mut().zip(g).for_each(|(o, &v)| *o += v * *s));
            }
            Op::Gelu(x) => {
                acc(*x, &mut |d| {
                    for ((o, &gg), &xv) in d.iter_mut().zip(g).zip(&val(*x).data) {
                        *o += gg * kernels::gelu_grad(xv);
                    }
                });
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let (n, c) = (val(*x).rows, val(*x).cols);
                let gam = &val(*gamma).data;
                let mut dx = nodes[x.0].requires_grad.then(|| vec![T::zero(); n * c]);
                let mut dg = nodes[gamma.0].requires_grad.then(|| vec![T::zero(); c]);
                let mut db = nodes[beta.0].requires_grad.then(|| vec![T::zero(); c]);
                kernels::layer_norm_backward(
                    g,
                    xhat,
                    rstd,
                    gam,
                    n,
                    c,
                    dx.as_deref_mut(),
                    dg.as_deref_mut(),
                    db.as_deref_mut(),
                );
                if let Some(dx) = dx {
                    acc(*x, &mut |d| add_into(d, &dx));
                }
                if let Some(dg) = dg {
                    acc(*gamma, &mut |d| add_into(d, &dg));
                }
                if let Some(db) = db {
                    acc(*beta, &mut |d| add_into(d, &db));
                }
            }
            Op::Gather { x, index } => {
                acc(*x, &mut |d| {
                    for (&i, &gg) in index.iter().zip(g) {
                        d[i as usize] += gg;
                    }
                });
            }
            Op::ConcatCols(a, b) => {
                let (ca, cb) = (val(*a).cols, val(*b).cols);
                let w = ca + cb;
                acc(*a, &mut |d| {
                    for (r, dr) in d.chunks_exact_mut(ca).enumerate() {
                        add_into(dr, &g[r * w..r * w + ca]);
                    }
                });
                acc(*b, &mut |d| {
                    for (r, dr) in d.chunks_exact_mut(cb).enumerate() {
                        add_into(dr, &g[r * w + ca..(r + 1) * w]);
                    }
                });
            }
            Op::Conv3 { x, w, dims, cols } => {
                let (n, cin) = (val(*x).rows, val(*x).cols);
                let (k, cout) = (val(*w).rows, val(*w).cols);
                acc(*w, &mut |dw| {
                    gemm(
                        T::one(),
                        MatRef::dense(cols, n, k).t(),
                        MatRef::dense(g, n, cout),
                        T::one(),
                        MatMut::dense(dw, k, cout),
                    )
                });
                if nodes[x.0].requires_grad {
                    let mut dcols = vec![T::zero(); n * k];
                    gemm(
                        T::one(),
                        MatRef::dense(g, n, cout),
                        MatRef::dense(&val(*w).data, k, cout).t(),
                        T::zero(),
                        MatMut::dense(&mut dcols, n, k),
                    );
                    acc(*x, &mut |dx| kernels::col2im_acc(&dcols, *dims, cin, dx));
                }
            }
            Op::Attention {
                qkv,
                bias,
                shape,
                probs,
            } => {
                let mut dq = nodes[qkv.0]
                    .requires_grad
                    .then(|| vec![T::zero(); val(*qkv).len()]);
                let mut db = nodes[bias.0]
                    .requires_grad
                    .then(|| vec![T::zero(); val(*bias).len()]);
                kernels::attention_backward(
                    &val(*qkv).data,
                    probs,
                    g,
                    *shape,
                    dq.as_deref_mut(),
                    db.as_deref_mut(),
                );
                if let Some(dq) = dq {
                    acc(*qkv, &mut |d| add_into(d, &dq));
                }
                if let Some(db) = db {
                    acc(*bias, &mut |d| add_into(d, &db));
                }
            }
            Op::MeanRows(x) => {
                let n = val(*x).rows;
                let inv = T::one() / T::of(n as f64);
                acc(*x, &mut |d| {
                    for r in d.chunks_exact_mut(g.len()) {
                        for (o, &gg) in r.iter_mut().zip(g) {
                            *o += gg * inv;
                        }
                    }
                });
            }
            Op::Mean(x) => {
                let s = g[0] / T::of(val(*x).len() as f64);
                acc(*x, &mut |d| d.iter_mut().for_each(|o| *o += s));
            }
            Op::MeanAbsDiff(a, b) => {
                let s = g[0] / T::of(val(*a).len() as f64);
                let (da, db) = (&val(*a).data, &val(*b).data);
                let sign = |x: T, y: T| {
                    if x > y {
                        T::one()
                    } else if x < y {
                        -T::one()
                    } else {
                        T::zero()
                    }
                };
                acc(*a, &mut |d| {
                    for ((o, &x), &y) in d.iter_mut().zip(da).zip(db) {
                        *o += s * sign(x, y);
                    }
                });
                acc(*b, &mut |d| {
                    for ((o, &x), &y) in d.iter_mut().zip(da).zip(db) {
                        *o -= s * sign(x, y);
                    }
                });
            }
            Op::MeanSqDiff(a, b) => {
                let s = T::of(2.0) * g[0] / T::of(val(*a).len() as f64);
                let (da, db) = (&val(*a).data, &val(*b).data);
                acc(*a, &mut |d| {
                    for ((o, &x), &y) in d.iter_mut().zip(da).zip(db) {
                        *o += s * (x - y);
                    }
                });
                acc(*b, &mut |d| {
                    for ((o, &x), &y) in d.iter_mut().zip(da).zip(db) {
                        *o -= s * (x - y);
                    }
                });
            }
            Op::Div(a, b) => {
                let (x, y) = (val(*a).data[0], val(*b).data[0]);
                acc(*a, &mut |d| d[0] += g[0] / y);
                acc(*b, &mut |d| d[0] -= g[0] * x / (y * y));
            }
            Op::LinComb(terms) => {
                for &(v, k) in terms {
                    acc(v, &mut |d| d.iter_mut().zip(g).for_each(|(o, &gg)| *o += k * gg));
                }
            }
            Op::Clamp { x, lo, hi } => {
                acc(*x, &mut |d| {
                    for ((o, &gg), &xv) in d.iter_mut().zip(g).zip(&val(*x).data) {
                        if xv >= *lo && xv <= *hi {
                            *o += gg;
                        }
                    }
                });
            }
        }
    }
}

fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    for (o, &v) in dst.iter_mut().zip(src) {
        *o += v;
    }
}

/// Result of [`Graph::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of the loss with respect to `v`, if any flowed there.
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

#[cfg(test)]
mod tests;
