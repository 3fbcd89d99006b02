//! Tape-based reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! Every operation on a [`Tape`] appends a node holding its output value and
//! enough information to route gradients back to its inputs. Nodes are only
//! ever appended, so creation order is a topological order and
//! [`Tape::backward`] is a single reverse sweep. Gradients reaching a node
//! from several consumers are summed.
//!
//! ```
//! use shgnn::autodiff::{Tape, Tensor};
//!
//! let mut tape = Tape::new();
//! let x = tape.leaf(Tensor::vector(vec![3.0]));
//! let sq = tape.dot(x, x).unwrap();
//! let grads = tape.backward(sq).unwrap();
//! assert_eq!(tape.value(sq).item(), 9.0);
//! assert_eq!(grads.get(x).unwrap().data(), &[6.0]);
//! ```

use std::ops::Range;

use crate::error::{Error, Result};

/// Norms below this make cosine similarity return 0 with a zero gradient.
pub const COSINE_EPS: f64 = 1e-12;

/// Dense row-major tensor of rank 0 (scalar), 1 (vector) or 2 (matrix).
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.len() > 2 {
            return Err(Error::shape("tensor", format!("rank {} unsupported", shape.len())));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(
                "tensor",
                format!("shape {shape:?} needs {n} values, got {}", data.len()),
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn scalar(x: f64) -> Self {
        Tensor {
            shape: vec![],
            data: vec![x],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], data)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::shape("from_rows", "ragged rows"));
        }
        Tensor::matrix(rows.len(), cols, rows.concat())
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Rows of a matrix; a vector counts as a column.
    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    pub fn cols(&self) -> usize {
        if self.shape.len() == 2 {
            self.shape[1]
        } else {
            1
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols() + j]
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on a tensor with {} elements", self.data.len());
        self.data[0]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

/// Row-wise softmax of a matrix (or softmax of a vector), max-shifted.
pub fn softmax_rows(t: &Tensor) -> Tensor {
    let c = t.cols();
    let mut out = t.clone();
    for row in out.data.chunks_mut(c.max(1)) {
        softmax_in_place(row);
    }
    out
}

fn softmax_in_place(xs: &mut [f64]) {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in xs.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in xs.iter_mut() {
        *x /= total;
    }
}

/// `C = A · B` for row-major `A[m,k]`, `B[k,n]`; zero entries of `A` are skipped.
fn gemm(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let x = a[i * k + p];
            if x == 0.0 {
                continue;
            }
            for (cj, bj) in crow.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *cj += x * bj;
            }
        }
    }
    c
}

/// `C = A · Bᵀ` for `A[m,k]`, `B[n,k]`.
fn gemm_bt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            c[i * n + j] = dot(arow, &b[j * k..(j + 1) * k]);
        }
    }
    c
}

/// `C = Aᵀ · B` for `A[k,m]`, `B[k,n]`.
fn gemm_at(a: &[f64], b: &[f64], k: usize, m: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for p in 0..k {
        let brow = &b[p * n..(p + 1) * n];
        for i in 0..m {
            let x = a[p * m + i];
            if x == 0.0 {
                continue;
            }
            for (cj, bj) in c[i * n..(i + 1) * n].iter_mut().zip(brow) {
                *cj += x * bj;
            }
        }
    }
    c
}

fn transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut t = vec![0.0; a.len()];
    for i in 0..rows {
        for j in 0..cols {
            t[j * rows + i] = a[i * cols + j];
        }
    }
    t
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

/// Cosine and the two norms, or `None` inside the guard region.
fn cosine_parts(a: &[f64], b: &[f64]) -> Option<(f64, f64, f64)> {
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na < COSINE_EPS || nb < COSINE_EPS {
        return None;
    }
    Some((dot(a, b) / (na * nb), na, nb))
}

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
    MatVec(Var, Var),
    Linear(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Concat(Vec<Var>, usize),
    Slice(Var, usize, Range<usize>),
    RowMean(Var),
    Sum(Var),
    Tanh(Var),
    Elu(Var),
    Log(Var),
    SoftmaxVec(Var),
    Dot(Var, Var),
    CosineSim(Var, Var),
    RowCosine(Var, Var),
    GatherRows(Var, Vec<usize>),
    SegmentSoftmax(Var, Vec<usize>),
    SegmentWeightedSum(Var, Var, Vec<usize>),
    WeightedSum(Vec<Var>, Var),
    CrossEntropy(Var, Vec<usize>, Tensor),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records a computation for one backward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    guard_hits: usize,
}

/// Gradients from [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros shaped like `like` when nothing reached it.
    pub fn get_or_zeros(&self, v: Var, like: &Tensor) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(like.shape()))
    }
}

fn check_offsets(op: &'static str, offsets: &[usize], len: usize) -> Result<()> {
    let ok = offsets.first() == Some(&0)
        && offsets.last() == Some(&len)
        && offsets.windows(2).all(|w| w[0] <= w[1]);
    if ok {
        Ok(())
    } else {
        Err(Error::shape(op, format!("segment offsets must run 0..={len} non-decreasing")))
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// How many cosine evaluations fell into the zero-norm guard.
    pub fn guard_hits(&self) -> usize {
        self.guard_hits
    }

    /// Trainable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn record(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let rg = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push(value, op, rg)
    }

    fn expect_rank(&self, op: &'static str, v: Var, rank: usize) -> Result<&Tensor> {
        let t = self.value(v);
        if t.rank() != rank {
            return Err(Error::shape(op, format!("expected rank {rank}, got shape {:?}", t.shape())));
        }
        Ok(t)
    }

    /// `A[m,k] · B[k,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.expect_rank("matmul", a, 2)?, self.expect_rank("matmul", b, 2)?);
        let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
        if tb.rows() != k {
            return Err(Error::shape("matmul", format!("{:?} x {:?}", ta.shape(), tb.shape())));
        }
        let out = Tensor::matrix(m, n, gemm(&ta.data, &tb.data, m, k, n))?;
        Ok(self.record(out, Op::MatMul(a, b), &[a, b]))
    }

    /// `A[m,k] · x[k]`.
    pub fn matvec(&mut self, a: Var, x: Var) -> Result<Var> {
        let (ta, tx) = (self.expect_rank("matvec", a, 2)?, self.expect_rank("matvec", x, 1)?);
        let (m, k) = (ta.rows(), ta.cols());
        if tx.len() != k {
            return Err(Error::shape("matvec", format!("{:?} x {:?}", ta.shape(), tx.shape())));
        }
        let out = Tensor::vector(gemm(&ta.data, &tx.data, m, k, 1));
        Ok(self.record(out, Op::MatVec(a, x), &[a, x]))
    }

    /// Applies a weight matrix to every row: `X[m,k] · W[n,k]ᵀ → [m,n]`.
    pub fn linear(&mut self, x: Var, w: Var) -> Result<Var> {
        let (tx, tw) = (self.expect_rank("linear", x, 2)?, self.expect_rank("linear", w, 2)?);
        let (m, k, n) = (tx.rows(), tx.cols(), tw.rows());
        if tw.cols() != k {
            return Err(Error::shape("linear", format!("rows {:?} with weight {:?}", tx.shape(), tw.shape())));
        }
        // X is often a sparse bag-of-words matrix; gemm skips its zeros.
        let wt = transpose(&tw.data, n, k);
        let out = Tensor::matrix(m, n, gemm(&tx.data, &wt, m, k, n))?;
        Ok(self.record(out, Op::Linear(x, w), &[x, w]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape("add", format!("{:?} + {:?}", ta.shape(), tb.shape())));
        }
        let data = ta.data.iter().zip(&tb.data).map(|(x, y)| x + y).collect();
        let out = Tensor::new(ta.shape.clone(), data)?;
        Ok(self.record(out, Op::Add(a, b), &[a, b]))
    }

    /// Adds vector `b[n]` to every row of `A[m,n]`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.expect_rank("add_row", a, 2)?, self.expect_rank("add_row", b, 1)?);
        if ta.cols() != tb.len() {
            return Err(Error::shape("add_row", format!("{:?} + {:?}", ta.shape(), tb.shape())));
        }
        let n = tb.len();
        let mut out = ta.clone();
        for row in out.data.chunks_mut(n.max(1)) {
            for (x, y) in row.iter_mut().zip(&tb.data) {
                *x += y;
            }
        }
        Ok(self.record(out, Op::AddRow(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let mut out = self.value(a).clone();
        out.data.iter_mut().for_each(|x| *x *= c);
        self.record(out, Op::Scale(a, c), &[a])
    }

    /// Joins tensors along `axis`. Scalars and vectors join along axis 0
    /// into a vector; matrices join rows (axis 0) or columns (axis 1).
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::shape("concat", "nothing to concatenate"));
        }
        let first = self.value(parts[0]);
        let out = if first.rank() < 2 {
            if axis != 0 || parts.iter().any(|&p| self.value(p).rank() >= 2) {
                return Err(Error::shape("concat", "scalars and vectors concatenate along axis 0 only"));
            }
            Tensor::vector(parts.iter().flat_map(|&p| self.value(p).data.iter().copied()).collect())
        } else {
            let (r0, c0) = (first.rows(), first.cols());
            for &p in parts {
                let t = self.value(p);
                let ok = t.rank() == 2 && if axis == 0 { t.cols() == c0 } else { t.rows() == r0 };
                if !ok || axis > 1 {
                    return Err(Error::shape("concat", format!("cannot join {:?} along axis {axis}", t.shape())));
                }
            }
            if axis == 0 {
                let rows = parts.iter().map(|&p| self.value(p).rows()).sum();
                let data = parts.iter().flat_map(|&p| self.value(p).data.iter().copied()).collect();
                Tensor::matrix(rows, c0, data)?
            } else {
                let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
                let mut data = Vec::with_capacity(r0 * cols);
                for i in 0..r0 {
                    for &p in parts {
                        data.extend_from_slice(self.value(p).row(i));
                    }
                }
                Tensor::matrix(r0, cols, data)?
            }
        };
        Ok(self.record(out, Op::Concat(parts.to_vec(), axis), parts))
    }

    /// Sub-range along `axis`: vector entries, matrix rows (0) or columns (1).
    pub fn slice(&mut self, a: Var, axis: usize, range: Range<usize>) -> Result<Var> {
        let t = self.value(a);
        let out = match (t.rank(), axis) {
            (1, 0) if range.end <= t.len() && range.start <= range.end => Tensor::vector(t.data[range.clone()].to_vec()),
            (2, 0) if range.end <= t.rows() && range.start <= range.end => {
                let c = t.cols();
                Tensor::matrix(range.len(), c, t.data[range.start * c..range.end * c].to_vec())?
            }
            (2, 1) if range.end <= t.cols() && range.start <= range.end => {
                let mut data = Vec::with_capacity(t.rows() * range.len());
                for i in 0..t.rows() {
                    data.extend_from_slice(&t.row(i)[range.clone()]);
                }
                Tensor::matrix(t.rows(), range.len(), data)?
            }
            _ => {
                return Err(Error::shape(
                    "slice",
                    format!("{range:?} along axis {axis} of {:?}", t.shape()),
                ))
            }
        };
        Ok(self.record(out, Op::Slice(a, axis, range), &[a]))
    }

    /// Mean over rows: `[m,n] → [n]`.
    pub fn row_mean(&mut self, a: Var) -> Result<Var> {
        let t = self.expect_rank("row_mean", a, 2)?;
        if t.rows() == 0 {
            return Err(Error::Contract("row_mean of an empty matrix".into()));
        }
        let (m, n) = (t.rows(), t.cols());
        let mut out = vec![0.0; n];
        for i in 0..m {
            for (o, x) in out.iter_mut().zip(t.row(i)) {
                *o += x;
            }
        }
        out.iter_mut().for_each(|o| *o /= m as f64);
        Ok(self.record(Tensor::vector(out), Op::RowMean(a), &[a]))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data.iter().sum();
        self.record(Tensor::scalar(s), Op::Sum(a), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        out.data.iter_mut().for_each(|x| *x = x.tanh());
        self.record(out, Op::Tanh(a), &[a])
    }

    /// ELU with α = 1.
    pub fn elu(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        out.data.iter_mut().for_each(|x| *x = elu(*x));
        self.record(out, Op::Elu(a), &[a])
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if let Some(bad) = t.data.iter().find(|&&x| !(x > 0.0)) {
            return Err(Error::Domain {
                op: "log",
                detail: format!("non-positive input {bad}"),
            });
        }
        let mut out = t.clone();
        out.data.iter_mut().for_each(|x| *x = x.ln());
        Ok(self.record(out, Op::Log(a), &[a]))
    }

    pub fn softmax_vec(&mut self, a: Var) -> Result<Var> {
        let t = self.expect_rank("softmax_vec", a, 1)?;
        if t.is_empty() {
            return Err(Error::shape("softmax_vec", "empty vector"));
        }
        let mut out = t.clone();
        softmax_in_place(&mut out.data);
        Ok(self.record(out, Op::SoftmaxVec(a), &[a]))
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.expect_rank("dot", a, 1)?, self.expect_rank("dot", b, 1)?);
        if ta.len() != tb.len() {
            return Err(Error::shape("dot", format!("{} vs {}", ta.len(), tb.len())));
        }
        let out = Tensor::scalar(dot(&ta.data, &tb.data));
        Ok(self.record(out, Op::Dot(a, b), &[a, b]))
    }

    /// Cosine similarity of two vectors; 0 when either norm is below [`COSINE_EPS`].
    pub fn cosine_sim(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.expect_rank("cosine_sim", a, 1)?, self.expect_rank("cosine_sim", b, 1)?);
        if ta.len() != tb.len() {
            return Err(Error::shape("cosine_sim", format!("{} vs {}", ta.len(), tb.len())));
        }
        let value = match cosine_parts(&ta.data, &tb.data) {
            Some((c, _, _)) => c,
            None => {
                self.guard_hits += 1;
                0.0
            }
        };
        Ok(self.record(Tensor::scalar(value), Op::CosineSim(a, b), &[a, b]))
    }

    /// Row-by-row cosine similarity of two `[m,n]` matrices → `[m]`.
    pub fn row_cosine(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.expect_rank("row_cosine", a, 2)?, self.expect_rank("row_cosine", b, 2)?);
        if ta.shape() != tb.shape() {
            return Err(Error::shape("row_cosine", format!("{:?} vs {:?}", ta.shape(), tb.shape())));
        }
        let mut hits = 0;
        let out: Vec<f64> = (0..ta.rows())
            .map(|i| match cosine_parts(ta.row(i), tb.row(i)) {
                Some((c, _, _)) => c,
                None => {
                    hits += 1;
                    0.0
                }
            })
            .collect();
        self.guard_hits += hits;
        Ok(self.record(Tensor::vector(out), Op::RowCosine(a, b), &[a, b]))
    }

    /// Picks rows of a matrix (or entries of a vector) by index; repeats allowed.
    pub fn gather_rows(&mut self, a: Var, index: &[usize]) -> Result<Var> {
        let t = self.value(a);
        if t.rank() == 0 {
            return Err(Error::shape("gather_rows", "scalar input"));
        }
        let rows = t.rows();
        if let Some(&bad) = index.iter().find(|&&i| i >= rows) {
            return Err(Error::shape("gather_rows", format!("row {bad} of {rows}")));
        }
        let out = if t.rank() == 1 {
            Tensor::vector(index.iter().map(|&i| t.data[i]).collect())
        } else {
            let c = t.cols();
            let mut data = Vec::with_capacity(index.len() * c);
            for &i in index {
                data.extend_from_slice(t.row(i));
            }
            Tensor::matrix(index.len(), c, data)?
        };
        Ok(self.record(out, Op::GatherRows(a, index.to_vec()), &[a]))
    }

    /// Softmax within each contiguous segment `offsets[s]..offsets[s+1]` of a vector.
    pub fn segment_softmax(&mut self, a: Var, offsets: &[usize]) -> Result<Var> {
        let t = self.expect_rank("segment_softmax", a, 1)?;
        check_offsets("segment_softmax", offsets, t.len())?;
        let mut out = t.clone();
        for w in offsets.windows(2) {
            if w[0] < w[1] {
                softmax_in_place(&mut out.data[w[0]..w[1]]);
            }
        }
        Ok(self.record(out, Op::SegmentSoftmax(a, offsets.to_vec()), &[a]))
    }

    /// For each segment `s`, `Σ_{i ∈ s} w[i] · V[i,:]` → one row per segment.
    /// Empty segments produce zero rows.
    pub fn segment_weighted_sum(&mut self, values: Var, weights: Var, offsets: &[usize]) -> Result<Var> {
        let tv = self.expect_rank("segment_weighted_sum", values, 2)?;
        let tw = self.expect_rank("segment_weighted_sum", weights, 1)?;
        if tw.len() != tv.rows() {
            return Err(Error::shape(
                "segment_weighted_sum",
                format!("{} weights for {} rows", tw.len(), tv.rows()),
            ));
        }
        check_offsets("segment_weighted_sum", offsets, tv.rows())?;
        let c = tv.cols();
        let segments = offsets.len() - 1;
        let mut data = vec![0.0; segments * c];
        for s in 0..segments {
            let orow = &mut data[s * c..(s + 1) * c];
            for i in offsets[s]..offsets[s + 1] {
                let w = tw.data[i];
                for (o, x) in orow.iter_mut().zip(tv.row(i)) {
                    *o += w * x;
                }
            }
        }
        let out = Tensor::matrix(segments, c, data)?;
        Ok(self.record(out, Op::SegmentWeightedSum(values, weights, offsets.to_vec()), &[values, weights]))
    }

    /// `Σ_j w[j] · X_j` over same-shaped tensors.
    pub fn weighted_sum(&mut self, parts: &[Var], weights: Var) -> Result<Var> {
        let tw = self.expect_rank("weighted_sum", weights, 1)?;
        if parts.is_empty() || tw.len() != parts.len() {
            return Err(Error::shape(
                "weighted_sum",
                format!("{} weights for {} tensors", tw.len(), parts.len()),
            ));
        }
        let w = tw.data.clone();
        let shape = self.value(parts[0]).shape.clone();
        let mut out = Tensor::zeros(&shape);
        for (&p, wj) in parts.iter().zip(&w) {
            let t = self.value(p);
            if t.shape != shape {
                return Err(Error::shape("weighted_sum", format!("{:?} vs {:?}", t.shape, shape)));
            }
            for (o, x) in out.data.iter_mut().zip(&t.data) {
                *o += wj * x;
            }
        }
        let mut inputs = parts.to_vec();
        inputs.push(weights);
        Ok(self.record(out, Op::WeightedSum(parts.to_vec(), weights), &inputs))
    }

    /// Summed softmax cross-entropy of logit rows against class indices,
    /// computed through a max-shifted log-sum-exp.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let t = self.expect_rank("cross_entropy", logits, 2)?;
        if t.rows() != labels.len() {
            return Err(Error::shape(
                "cross_entropy",
                format!("{} rows, {} labels", t.rows(), labels.len()),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= t.cols()) {
            return Err(Error::shape("cross_entropy", format!("label {bad} with {} classes", t.cols())));
        }
        let mut probs = t.clone();
        let c = t.cols();
        let mut loss = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            let row = t.row(i);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            loss += lse - row[y];
            softmax_in_place(&mut probs.data[i * c..(i + 1) * c]);
        }
        Ok(self.record(
            Tensor::scalar(loss),
            Op::CrossEntropy(logits, labels.to_vec(), probs),
            &[logits],
        ))
    }

    /// Gradients of the scalar `loss` with respect to every node that
    /// depends on a leaf.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lt = self.value(loss);
        if lt.len() != 1 || lt.rank() > 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lt.shape()
            )));
        }
        if !lt.all_finite() {
            return Err(Error::Contract(format!("backward from non-finite loss {}", lt.data[0])));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::new(lt.shape.clone(), vec![1.0]).unwrap());

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let mut send = |v: Var, delta: Tensor| {
            if !self.needs(v) {
                return;
            }
            match &mut grads[v.0] {
                Some(acc) => acc.add_assign(&delta),
                slot @ None => *slot = Some(delta),
            }
        };
        let like = |v: Var, data: Vec<f64>| Tensor {
            shape: self.value(v).shape.clone(),
            data,
        };

        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                if self.needs(*a) {
                    send(*a, like(*a, gemm_bt(&g.data, &tb.data, m, n, k)));
                }
                if self.needs(*b) {
                    send(*b, like(*b, gemm_at(&ta.data, &g.data, m, k, n)));
                }
            }
            Op::MatVec(a, x) => {
                let (ta, tx) = (self.value(*a), self.value(*x));
                let (m, k) = (ta.rows(), ta.cols());
                if self.needs(*a) {
                    send(*a, like(*a, gemm(&g.data, &tx.data, m, 1, k)));
                }
                if self.needs(*x) {
                    send(*x, like(*x, gemm_at(&ta.data, &g.data, m, k, 1)));
                }
            }
            Op::Linear(x, w) => {
                let (tx, tw) = (self.value(*x), self.value(*w));
                let (m, k, n) = (tx.rows(), tx.cols(), tw.rows());
                if self.needs(*x) {
                    send(*x, like(*x, gemm(&g.data, &tw.data, m, n, k)));
                }
                if self.needs(*w) {
                    let dwt = gemm_at(&tx.data, &g.data, m, k, n);
                    send(*w, like(*w, transpose(&dwt, k, n)));
                }
            }
            Op::Add(a, b) => {
                send(*a, g.clone());
                send(*b, g.clone());
            }
            Op::AddRow(a, b) => {
                send(*a, g.clone());
                let n = self.value(*b).len();
                let mut db = vec![0.0; n];
                for row in g.data.chunks(n.max(1)) {
                    for (d, x) in db.iter_mut().zip(row) {
                        *d += x;
                    }
                }
                send(*b, like(*b, db));
            }
            Op::Scale(a, c) => send(*a, like(*a, g.data.iter().map(|x| x * c).collect())),
            Op::Concat(parts, axis) => {
                let first = self.value(parts[0]);
                if first.rank() < 2 || *axis == 0 {
                    let mut at = 0;
                    for &p in parts {
                        let len = self.value(p).len();
                        send(p, like(p, g.data[at..at + len].to_vec()));
                        at += len;
                    }
                } else {
                    let total = g.cols();
                    let mut col = 0;
                    for &p in parts {
                        let t = self.value(p);
                        let w = t.cols();
                        let mut data = Vec::with_capacity(t.len());
                        for i in 0..t.rows() {
                            data.extend_from_slice(&g.data[i * total + col..i * total + col + w]);
                        }
                        send(p, like(p, data));
                        col += w;
                    }
                }
            }
            Op::Slice(a, axis, range) => {
                let t = self.value(*a);
                let mut d = vec![0.0; t.len()];
                match (t.rank(), axis) {
                    (1, _) => d[range.clone()].copy_from_slice(&g.data),
                    (_, 0) => {
                        let c = t.cols();
                        d[range.start * c..range.end * c].copy_from_slice(&g.data);
                    }
                    _ => {
                        let c = t.cols();
                        let w = range.len();
                        for i in 0..t.rows() {
                            d[i * c + range.start..i * c + range.end].copy_from_slice(&g.data[i * w..(i + 1) * w]);
                        }
                    }
                }
                send(*a, like(*a, d));
            }
            Op::RowMean(a) => {
                let t = self.value(*a);
                let m = t.rows() as f64;
                let mut d = Vec::with_capacity(t.len());
                for _ in 0..t.rows() {
                    d.extend(g.data.iter().map(|x| x / m));
                }
                send(*a, like(*a, d));
            }
            Op::Sum(a) => {
                let n = self.value(*a).len();
                send(*a, like(*a, vec![g.data[0]; n]));
            }
            Op::Tanh(a) => {
                let d = node.value.data.iter().zip(&g.data).map(|(y, gy)| gy * (1.0 - y * y)).collect();
                send(*a, like(*a, d));
            }
            Op::Elu(a) => {
                let x = &self.value(*a).data;
                let d = x
                    .iter()
                    .zip(&node.value.data)
                    .zip(&g.data)
                    .map(|((x, y), gy)| if *x > 0.0 { *gy } else { gy * (y + 1.0) })
                    .collect();
                send(*a, like(*a, d));
            }
            Op::Log(a) => {
                let x = &self.value(*a).data;
                send(*a, like(*a, x.iter().zip(&g.data).map(|(x, gy)| gy / x).collect()));
            }
            Op::SoftmaxVec(a) => {
                let y = &node.value.data;
                let inner = dot(y, &g.data);
                send(*a, like(*a, y.iter().zip(&g.data).map(|(y, gy)| y * (gy - inner)).collect()));
            }
            Op::Dot(a, b) => {
                let gs = g.data[0];
                let (ta, tb) = (self.value(*a), self.value(*b));
                send(*a, like(*a, tb.data.iter().map(|x| x * gs).collect()));
                send(*b, like(*b, ta.data.iter().map(|x| x * gs).collect()));
            }
            Op::CosineSim(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (da, db) = cosine_grads(&ta.data, &tb.data, g.data[0]);
                send(*a, like(*a, da));
                send(*b, like(*b, db));
            }
            Op::RowCosine(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let c = ta.cols();
                let mut da = Vec::with_capacity(ta.len());
                let mut db = Vec::with_capacity(tb.len());
                for i in 0..ta.rows() {
                    let (ga, gb) = cosine_grads(ta.row(i), tb.row(i), g.data[i]);
                    da.extend(ga);
                    db.extend(gb);
                }
                debug_assert_eq!(da.len(), ta.rows() * c);
                send(*a, like(*a, da));
                send(*b, like(*b, db));
            }
            Op::GatherRows(a, index) => {
                let t = self.value(*a);
                let c = t.cols();
                let mut d = vec![0.0; t.len()];
                for (k, &i) in index.iter().enumerate() {
                    for (x, y) in d[i * c..(i + 1) * c].iter_mut().zip(&g.data[k * c..(k + 1) * c]) {
                        *x += y;
                    }
                }
                send(*a, like(*a, d));
            }
            Op::SegmentSoftmax(a, offsets) => {
                let y = &node.value.data;
                let mut d = vec![0.0; y.len()];
                for w in offsets.windows(2) {
                    let r = w[0]..w[1];
                    let inner = dot(&y[r.clone()], &g.data[r.clone()]);
                    for i in r {
                        d[i] = y[i] * (g.data[i] - inner);
                    }
                }
                send(*a, like(*a, d));
            }
            Op::SegmentWeightedSum(values, weights, offsets) => {
                let (tv, tw) = (self.value(*values), self.value(*weights));
                let c = tv.cols();
                let mut dv = vec![0.0; tv.len()];
                let mut dw = vec![0.0; tw.len()];
                for s in 0..offsets.len() - 1 {
                    let gs = &g.data[s * c..(s + 1) * c];
                    for i in offsets[s]..offsets[s + 1] {
                        let w = tw.data[i];
                        for (d, gy) in dv[i * c..(i + 1) * c].iter_mut().zip(gs) {
                            *d = w * gy;
                        }
                        dw[i] = dot(tv.row(i), gs);
                    }
                }
                send(*values, like(*values, dv));
                send(*weights, like(*weights, dw));
            }
            Op::WeightedSum(parts, weights) => {
                let w = self.value(*weights).data.clone();
                let mut dw = vec![0.0; w.len()];
                for (j, &p) in parts.iter().enumerate() {
                    dw[j] = dot(&self.value(p).data, &g.data);
                    send(p, like(p, g.data.iter().map(|x| x * w[j]).collect()));
                }
                send(*weights, like(*weights, dw));
            }
            Op::CrossEntropy(logits, labels, probs) => {
                let gs = g.data[0];
                let c = probs.cols();
                let mut d: Vec<f64> = probs.data.iter().map(|p| p * gs).collect();
                for (i, &y) in labels.iter().enumerate() {
                    d[i * c + y] -= gs;
                }
                send(*logits, like(*logits, d));
            }
        }
    }
}

fn cosine_grads(a: &[f64], b: &[f64], g: f64) -> (Vec<f64>, Vec<f64>) {
    match cosine_parts(a, b) {
        None => (vec![0.0; a.len()], vec![0.0; b.len()]),
        Some((c, na, nb)) => {
            let inv = 1.0 / (na * nb);
            let da = a.iter().zip(b).map(|(x, y)| g * (y * inv - c * x / (na * na))).collect();
            let db = a.iter().zip(b).map(|(x, y)| g * (x * inv - c * y / (nb * nb))).collect();
            (da, db)
        }
    }
}

/// Relative errors are divided by at least this much, so gradients that are
/// essentially zero are compared on an absolute scale.
pub const REL_ERR_FLOOR: f64 = 1e-3;

/// `|a − n| / max(|a|, |n|, REL_ERR_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GradCheckStatus {
    Pass,
    Fail,
    /// An evaluation touched the cosine guard, where the function is not differentiable.
    Skipped,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ElementCheck {
    pub input: usize,
    pub element: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub status: GradCheckStatus,
    pub max_rel_err: f64,
    pub checked: usize,
    /// Largest errors first.
    pub worst: Vec<ElementCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.status != GradCheckStatus::Fail
    }
}

/// Compares the tape gradient of `f` at `x` with central differences.
pub fn grad_check<F>(f: F, x: &Tensor, step: f64, tolerance: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    grad_check_many(|tape, vars| f(tape, vars[0]), std::slice::from_ref(x), step, tolerance)
}

/// [`grad_check`] over several inputs at once; `f` receives one leaf per input.
pub fn grad_check_many<F>(f: F, inputs: &[Tensor], step: f64, tolerance: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |vals: &[Tensor]| -> Result<(f64, usize)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = vals.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok((tape.value(out).item(), tape.guard_hits()))
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let mut guard = tape.guard_hits();
    let grads = tape.backward(out)?;

    let mut checks = Vec::new();
    let mut work = inputs.to_vec();
    for (k, v) in vars.iter().enumerate() {
        let analytic = grads.get_or_zeros(*v, &inputs[k]);
        for e in 0..inputs[k].len() {
            let orig = work[k].data[e];
            work[k].data[e] = orig + step;
            let (plus, g1) = eval(&work)?;
            work[k].data[e] = orig - step;
            let (minus, g2) = eval(&work)?;
            work[k].data[e] = orig;
            guard += g1 + g2;
            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic.data[e];
            checks.push(ElementCheck {
                input: k,
                element: e,
                analytic: a,
                numeric,
                rel_err: relative_error(a, numeric),
            });
        }
    }
    checks.sort_by(|a, b| b.rel_err.total_cmp(&a.rel_err));
    let max_rel_err = checks.first().map_or(0.0, |c| c.rel_err);
    let status = if guard > 0 {
        GradCheckStatus::Skipped
    } else if max_rel_err <= tolerance {
        GradCheckStatus::Pass
    } else {
        GradCheckStatus::Fail
    };
    let checked = checks.len();
    checks.truncate(10);
    Ok(GradCheckReport {
        status,
        max_rel_err,
        checked,
        worst: checks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn elu_standard_points() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::vector(vec![0.0, 1.0, -1.0]));
        let y = tape.elu(x);
        let v = tape.value(y).data();
        assert_eq!(v[0], 0.0);
        assert_eq!(v[1], 1.0);
        assert_abs_diff_eq!(v[2], (-1.0f64).exp() - 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(v[2], -0.6321, epsilon = 1e-4);
    }

    #[test]
    fn softmax_singleton_and_shift() {
        let mut tape = Tape::new();
        let one = tape.constant(Tensor::vector(vec![4.2]));
        let s = tape.softmax_vec(one).unwrap();
        assert_eq!(tape.value(s).data(), &[1.0]);

        let x = tape.constant(Tensor::vector(vec![0.3, -1.0, 2.0]));
        let xs = tape.constant(Tensor::vector(vec![100.3, 99.0, 102.0]));
        let a = tape.softmax_vec(x).unwrap();
        let b = tape.softmax_vec(xs).unwrap();
        for (p, q) in tape.value(a).data().iter().zip(tape.value(b).data()) {
            assert_abs_diff_eq!(p, q, epsilon = 1e-12);
        }
    }

    #[test]
    fn cosine_points() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::vector(vec![0.5, -2.0, 1.0]));
        let c = tape.cosine_sim(x, x).unwrap();
        assert_abs_diff_eq!(tape.value(c).item(), 1.0, epsilon = 1e-15);
        let e1 = tape.constant(Tensor::vector(vec![1.0, 0.0]));
        let e2 = tape.constant(Tensor::vector(vec![0.0, 1.0]));
        let c = tape.cosine_sim(e1, e2).unwrap();
        assert_eq!(tape.value(c).item(), 0.0);
    }

    #[test]
    fn cosine_guard_gives_zero_value_and_gradient() {
        let mut tape = Tape::new();
        let z = tape.leaf(Tensor::vector(vec![0.0, 0.0]));
        let y = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
        let c = tape.cosine_sim(z, y).unwrap();
        assert_eq!(tape.value(c).item(), 0.0);
        assert_eq!(tape.guard_hits(), 1);
        let g = tape.backward(c).unwrap();
        assert_eq!(g.get(z).unwrap().data(), &[0.0, 0.0]);
        assert_eq!(g.get(y).unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn square_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![3.0]));
        let y = tape.dot(x, x).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(tape.value(y).item(), 9.0);
        assert_eq!(g.get(x).unwrap().data(), &[6.0]);
    }

    #[test]
    fn sum_of_softmax_has_zero_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![0.1, -0.7, 1.3, 0.0]));
        let s = tape.softmax_vec(x).unwrap();
        let total = tape.sum(s);
        let g = tape.backward(total).unwrap();
        for d in g.get(x).unwrap().data() {
            assert_abs_diff_eq!(*d, 0.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn backward_needs_a_scalar() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(tape.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn log_domain_error() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, 0.0]));
        assert!(matches!(tape.log(x), Err(Error::Domain { .. })));
    }

    #[test]
    fn shape_errors() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::zeros(&[2, 3]));
        let b = tape.leaf(Tensor::zeros(&[2, 3]));
        assert!(matches!(tape.matmul(a, b), Err(Error::Shape { .. })));
        let v = tape.leaf(Tensor::zeros(&[2]));
        assert!(tape.matvec(a, v).is_err());
        assert!(tape.add(a, v).is_err());
        assert!(tape.gather_rows(a, &[2]).is_err());
        assert!(tape.segment_softmax(v, &[0, 1]).is_err());
    }

    #[test]
    fn fan_out_accumulates() {
        // f = x·x + 3x  via two uses of x, at x = 2 → 2x + 3 = 7
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![2.0]));
        let sq = tape.dot(x, x).unwrap();
        let three = tape.scale(x, 3.0);
        let lin = tape.sum(three);
        let f = tape.add(sq, lin).unwrap();
        let g = tape.backward(f).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[7.0]);
    }

    #[test]
    fn grad_check_linear_map_is_tight() {
        let w = Tensor::matrix(2, 3, vec![0.5, -1.0, 2.0, 0.25, 0.0, -3.0]).unwrap();
        let x = Tensor::vector(vec![0.3, -0.2, 1.1]);
        let report = grad_check(
            |tape, x| {
                let w = tape.constant(w.clone());
                let y = tape.matvec(w, x)?;
                Ok(tape.sum(y))
            },
            &x,
            1e-6,
            1e-9,
        )
        .unwrap();
        assert_eq!(report.status, GradCheckStatus::Pass, "{report:?}");
    }

    #[test]
    fn grad_check_tanh_composition() {
        let x = Tensor::vector(vec![0.4, -1.3, 0.9]);
        let report = grad_check(
            |tape, x| {
                let t = tape.tanh(x);
                let s = tape.scale(t, 2.0);
                let t2 = tape.tanh(s);
                let d = tape.dot(t2, x)?;
                Ok(d)
            },
            &x,
            1e-6,
            1e-6,
        )
        .unwrap();
        assert_eq!(report.status, GradCheckStatus::Pass, "{report:?}");
    }

    #[test]
    fn grad_check_flags_cosine_guard() {
        let x = Tensor::vector(vec![0.0, 0.0]);
        let report = grad_check(
            |tape, x| {
                let y = tape.constant(Tensor::vector(vec![1.0, 1.0]));
                tape.cosine_sim(x, y)
            },
            &x,
            1e-6,
            1e-6,
        )
        .unwrap();
        assert_eq!(report.status, GradCheckStatus::Skipped);
    }
}
