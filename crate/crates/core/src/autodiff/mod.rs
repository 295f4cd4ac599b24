//! Tape-based reverse-mode differentiation over dense row-major tensors,
//! restricted to the operators the rescoring network needs.
//!
//! Nodes are appended in evaluation order, so the node list is already a
//! topological order and [`Graph::backward`] simply walks it in reverse.
//! Gradients are accumulated, never overwritten, so a tensor feeding several
//! consumers receives the sum of their contributions.

mod adam;
mod tensor;

pub use adam::{adam_step, AdamState};
pub use tensor::Tensor;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Input,
    Linear { x: Var, w: Var, b: Var },
    Relu(Var),
    Add(Var, Var),
    Concat(Vec<Var>),
    GatherRows { x: Var, rows: Vec<usize> },
    ScatterAddRows { x: Var, rows: Vec<usize> },
    /// `argmax[r * cols + c]` is the input row that produced output `(r, c)`.
    SegmentMax { x: Var, argmax: Vec<usize> },
    PickColumns { x: Var, cols: Vec<usize> },
    LogisticLoss { s: Var, y: Vec<T>, w: Vec<T> },
    Sum(Var),
}

#[derive(Debug)]
struct Node<T> {
    tensor: Tensor<T>,
    op: Op<T>,
}

#[derive(Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

/// `log(1 + exp(-z))` without overflow.
pub fn softplus_neg<T: Scalar>(z: T) -> T {
    (-z.abs()).exp().ln_1p() + (-z).max(T::zero())
}

pub fn sigmoid<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

/// Grad buffer of `v` if it participates in differentiation.
fn grad_slot<T: Scalar>(nodes: &mut [Node<T>], v: Var) -> Option<&mut [T]> {
    let t = &mut nodes[v.0].tensor;
    t.requires_grad().then(|| t.grad_mut_or_zero())
}

fn add_into<T: Scalar>(dst: Option<&mut [T]>, src: &[T]) {
    if let Some(dst) = dst {
        for (d, &s) in dst.iter_mut().zip(src) {
            *d += s;
        }
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, tensor: Tensor<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { tensor, op });
        Var(self.nodes.len() - 1)
    }

    fn needs_grad(&self, inputs: &[Var]) -> bool {
        inputs.iter().any(|v| self.nodes[v.0].tensor.requires_grad())
    }

    fn derived(&mut self, tensor: Tensor<T>, inputs: &[Var], op: Op<T>) -> Var {
        let tensor = if self.needs_grad(inputs) {
            tensor.with_grad()
        } else {
            tensor
        };
        self.push(tensor, op)
    }

    /// Leaf node; differentiable iff `tensor.requires_grad()`.
    pub fn input(&mut self, tensor: Tensor<T>) -> Var {
        self.push(tensor, Op::Input)
    }

    /// Differentiable leaf.
    pub fn parameter(&mut self, tensor: Tensor<T>) -> Var {
        self.push(tensor.with_grad(), Op::Input)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].tensor
    }

    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].tensor.grad()
    }

    fn matrix(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        let t = self.value(v);
        if t.shape().len() != 2 {
            return Err(Error::shape(op, format!("expected a matrix, got shape {:?}", t.shape())));
        }
        Ok((t.rows(), t.cols()))
    }

    /// `x W + b` for `x: [n, in]`, `W: [in, out]`, `b: [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (n, d_in) = self.matrix(x, "linear")?;
        let (w_in, d_out) = self.matrix(w, "linear")?;
        if w_in != d_in || self.value(b).len() != d_out {
            return Err(Error::shape(
                "linear",
                format!(
                    "x {:?}, W {:?}, b {:?}",
                    self.value(x).shape(),
                    self.value(w).shape(),
                    self.value(b).shape()
                ),
            ));
        }
        let xv = self.value(x).values();
        let wv = self.value(w).values();
        let bv = self.value(b).values();
        let mut out = Vec::with_capacity(n * d_out);
        for r in 0..n {
            let start = out.len();
            out.extend_from_slice(bv);
            let acc = &mut out[start..];
            for (k, &xk) in xv[r * d_in..(r + 1) * d_in].iter().enumerate() {
                if xk == T::zero() {
                    continue;
                }
                for (o, &wkj) in acc.iter_mut().zip(&wv[k * d_out..(k + 1) * d_out]) {
                    *o += xk * wkj;
                }
            }
        }
        let t = Tensor::new(vec![n, d_out], out)?;
        Ok(self.derived(t, &[x, w, b], Op::Linear { x, w, b }))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let src = self.value(x);
        let values = src.values().iter().map(|&v| v.max(T::zero())).collect();
        let t = Tensor::new(src.shape().to_vec(), values).expect("same shape");
        self.derived(t, &[x], Op::Relu(x))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape(
                "add",
                format!("{:?} vs {:?}", ta.shape(), tb.shape()),
            ));
        }
        let values = ta.values().iter().zip(tb.values()).map(|(&p, &q)| p + q).collect();
        let t = Tensor::new(ta.shape().to_vec(), values)?;
        Ok(self.derived(t, &[a, b], Op::Add(a, b)))
    }

    /// Concatenates matrices with equal row counts along the feature axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::shape("concat", "no inputs"))?;
        let n = self.matrix(first, "concat")?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (rows, cols) = self.matrix(p, "concat")?;
            if rows != n {
                return Err(Error::shape("concat", format!("row counts {n} and {rows}")));
            }
            widths.push(cols);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(n * total);
        for r in 0..n {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(r));
            }
        }
        let t = Tensor::new(vec![n, total], out)?;
        Ok(self.derived(t, parts, Op::Concat(parts.to_vec())))
    }

    /// Row `k` of the output is row `rows[k]` of `x`.
    pub fn gather_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let (n, cols) = self.matrix(x, "gather_rows")?;
        if let Some(&bad) = rows.iter().find(|&&r| r >= n) {
            return Err(Error::shape("gather_rows", format!("row {bad} of {n}")));
        }
        let src = self.value(x);
        let mut out = Vec::with_capacity(rows.len() * cols);
        for &r in rows {
            out.extend_from_slice(src.row(r));
        }
        let t = Tensor::new(vec![rows.len(), cols], out)?;
        Ok(self.derived(t, &[x], Op::GatherRows { x, rows: rows.to_vec() }))
    }

    /// Sums row `k` of `x` into output row `rows[k]`; the output has
    /// `out_rows` rows.
    pub fn scatter_add_rows(&mut self, x: Var, rows: &[usize], out_rows: usize) -> Result<Var> {
        let (n, cols) = self.matrix(x, "scatter_add_rows")?;
        if rows.len() != n {
            return Err(Error::shape("scatter_add_rows", format!("{} targets for {n} rows", rows.len())));
        }
        if let Some(&bad) = rows.iter().find(|&&r| r >= out_rows) {
            return Err(Error::shape("scatter_add_rows", format!("target {bad} of {out_rows}")));
        }
        let mut out = vec![T::zero(); out_rows * cols];
        let src = self.value(x);
        for (k, &r) in rows.iter().enumerate() {
            for (o, &v) in out[r * cols..(r + 1) * cols].iter_mut().zip(src.row(k)) {
                *o += v;
            }
        }
        let t = Tensor::new(vec![out_rows, cols], out)?;
        Ok(self.derived(t, &[x], Op::ScatterAddRows { x, rows: rows.to_vec() }))
    }

    /// Columnwise maximum over the rows of each segment. Every segment in
    /// `0..num_segments` must own at least one row; on ties the first row wins.
    pub fn segment_max(&mut self, x: Var, segments: &[usize], num_segments: usize) -> Result<Var> {
        let (k, cols) = self.matrix(x, "segment_max")?;
        if segments.len() != k {
            return Err(Error::shape("segment_max", format!("{} segment ids for {k} rows", segments.len())));
        }
        let mut argmax = vec![usize::MAX; num_segments * cols];
        let mut out = vec![T::zero(); num_segments * cols];
        let src = self.value(x);
        for (r, &s) in segments.iter().enumerate() {
            if s >= num_segments {
                return Err(Error::shape("segment_max", format!("segment id {s} of {num_segments}")));
            }
            let base = s * cols;
            for (c, &v) in src.row(r).iter().enumerate() {
                if argmax[base + c] == usize::MAX || v > out[base + c] {
                    out[base + c] = v;
                    argmax[base + c] = r;
                }
            }
        }
        if cols > 0 {
            if let Some(empty) = (0..num_segments).find(|&s| argmax[s * cols] == usize::MAX) {
                return Err(Error::EmptySegment(empty));
            }
        }
        let t = Tensor::new(vec![num_segments, cols], out)?;
        Ok(self.derived(t, &[x], Op::SegmentMax { x, argmax }))
    }

    /// Picks entry `cols[r]` from every row `r`, giving a vector.
    pub fn pick_columns(&mut self, x: Var, cols: &[usize]) -> Result<Var> {
        let (n, width) = self.matrix(x, "pick_columns")?;
        if cols.len() != n || cols.iter().any(|&c| c >= width) {
            return Err(Error::shape("pick_columns", format!("{} picks from [{n}, {width}]", cols.len())));
        }
        let src = self.value(x);
        let out = cols.iter().enumerate().map(|(r, &c)| src.row(r)[c]).collect();
        let t = Tensor::new(vec![n], out)?;
        Ok(self.derived(t, &[x], Op::PickColumns { x, cols: cols.to_vec() }))
    }

    /// `Σ w_i log(1 + exp(-s_i y_i))` as a one-element tensor.
    pub fn weighted_logistic_loss(&mut self, s: Var, y: &[T], w: &[T]) -> Result<Var> {
        let n = self.value(s).len();
        if y.len() != n || w.len() != n {
            return Err(Error::shape(
                "weighted_logistic_loss",
                format!("{n} scores, {} labels, {} weights", y.len(), w.len()),
            ));
        }
        let total = self
            .value(s)
            .values()
            .iter()
            .zip(y)
            .zip(w)
            .map(|((&si, &yi), &wi)| wi * softplus_neg(si * yi))
            .sum();
        let op = Op::LogisticLoss {
            s,
            y: y.to_vec(),
            w: w.to_vec(),
        };
        Ok(self.derived(Tensor::scalar(total), &[s], op))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).values().iter().copied().sum();
        self.derived(Tensor::scalar(total), &[x], Op::Sum(x))
    }

    /// Propagates d`root`/d(node) to every differentiable node recorded
    /// before `root`. `root` must hold a single value.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.value(root).len() != 1 {
            return Err(Error::shape(
                "backward",
                format!("root must be scalar, got {:?}", self.value(root).shape()),
            ));
        }
        if !self.value(root).requires_grad() {
            return Ok(());
        }
        self.nodes[root.0].tensor.grad_mut_or_zero()[0] += T::one();
        for i in (0..=root.0).rev() {
            let (before, rest) = self.nodes.split_at_mut(i);
            let node = &mut rest[0];
            if matches!(node.op, Op::Input) {
                continue;
            }
            let Some(g) = node.tensor.take_grad() else {
                continue;
            };
            backprop(before, &node.op, &node.tensor, &g);
            node.tensor.put_grad(g);
        }
        Ok(())
    }
}

fn backprop<T: Scalar>(nodes: &mut [Node<T>], op: &Op<T>, out: &Tensor<T>, g: &[T]) {
    match op {
        Op::Input => {}
        Op::Linear { x, w, b } => {
            let (n, d_out) = (out.rows(), out.cols());
            let d_in = nodes[x.0].tensor.cols();
            if nodes[x.0].tensor.requires_grad() {
                let wv = nodes[w.0].tensor.values();
                let mut dx = vec![T::zero(); n * d_in];
                for r in 0..n {
                    let gr = &g[r * d_out..(r + 1) * d_out];
                    for k in 0..d_in {
                        dx[r * d_in + k] = gr
                            .iter()
                            .zip(&wv[k * d_out..(k + 1) * d_out])
                            .map(|(&a, &b)| a * b)
                            .sum();
                    }
                }
                add_into(grad_slot(nodes, *x), &dx);
            }
            if nodes[w.0].tensor.requires_grad() {
                let xv = nodes[x.0].tensor.values();
                let mut dw = vec![T::zero(); d_in * d_out];
                for r in 0..n {
                    let gr = &g[r * d_out..(r + 1) * d_out];
                    for (k, &xk) in xv[r * d_in..(r + 1) * d_in].iter().enumerate() {
                        if xk == T::zero() {
                            continue;
                        }
                        for (d, &gj) in dw[k * d_out..(k + 1) * d_out].iter_mut().zip(gr) {
                            *d += xk * gj;
                        }
                    }
                }
                add_into(grad_slot(nodes, *w), &dw);
            }
            if let Some(db) = grad_slot(nodes, *b) {
                for r in 0..n {
                    for (d, &gj) in db.iter_mut().zip(&g[r * d_out..(r + 1) * d_out]) {
                        *d += gj;
                    }
                }
            }
        }
        Op::Relu(x) => {
            if let Some(dx) = grad_slot(nodes, *x) {
                for ((d, &v), &gi) in dx.iter_mut().zip(out.values()).zip(g) {
                    if v > T::zero() {
                        *d += gi;
                    }
                }
            }
        }
        Op::Add(a, b) => {
            add_into(grad_slot(nodes, *a), g);
            add_into(grad_slot(nodes, *b), g);
        }
        Op::Concat(parts) => {
            let n = out.rows();
            let total = out.cols();
            let mut offset = 0;
            for p in parts {
                let width = nodes[p.0].tensor.cols();
                if let Some(dp) = grad_slot(nodes, *p) {
                    for r in 0..n {
                        let src = &g[r * total + offset..r * total + offset + width];
                        for (d, &s) in dp[r * width..(r + 1) * width].iter_mut().zip(src) {
                            *d += s;
                        }
                    }
                }
                offset += width;
            }
        }
        Op::GatherRows { x, rows } => {
            let cols = out.cols();
            if let Some(dx) = grad_slot(nodes, *x) {
                for (k, &r) in rows.iter().enumerate() {
                    for (d, &s) in dx[r * cols..(r + 1) * cols].iter_mut().zip(&g[k * cols..(k + 1) * cols]) {
                        *d += s;
                    }
                }
            }
        }
        Op::ScatterAddRows { x, rows } => {
            let cols = out.cols();
            if let Some(dx) = grad_slot(nodes, *x) {
                for (k, &r) in rows.iter().enumerate() {
                    for (d, &s) in dx[k * cols..(k + 1) * cols].iter_mut().zip(&g[r * cols..(r + 1) * cols]) {
                        *d += s;
                    }
                }
            }
        }
        Op::SegmentMax { x, argmax } => {
            let cols = out.cols();
            if let Some(dx) = grad_slot(nodes, *x) {
                for (k, (&src_row, &gi)) in argmax.iter().zip(g).enumerate() {
                    dx[src_row * cols + k % cols] += gi;
                }
            }
        }
        Op::PickColumns { x, cols } => {
            let width = nodes[x.0].tensor.cols();
            if let Some(dx) = grad_slot(nodes, *x) {
                for (r, (&c, &gi)) in cols.iter().zip(g).enumerate() {
                    dx[r * width + c] += gi;
                }
            }
        }
        Op::LogisticLoss { s, y, w } => {
            let sv: Vec<T> = nodes[s.0].tensor.values().to_vec();
            if let Some(ds) = grad_slot(nodes, *s) {
                for (((d, &si), &yi), &wi) in ds.iter_mut().zip(&sv).zip(y).zip(w) {
                    *d += g[0] * -(wi * yi * sigmoid(-si * yi));
                }
            }
        }
        Op::Sum(x) => {
            if let Some(dx) = grad_slot(nodes, *x) {
                for d in dx.iter_mut() {
                    *d += g[0];
                }
            }
        }
    }
}
