//! A small reverse-mode differentiation tape over dense `f64` matrices.
//!
//! Every value is a 2-D array (row vectors are `1 × n`). Operations append
//! nodes to the tape; [`Tape::backward`] walks the tape in reverse and
//! accumulates gradients for parameter leaves into caller-owned buffers.
//! Parameter leaves borrow their storage, so building a tape never copies
//! model weights.

use std::borrow::Cow;

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, ArrayView2, Axis, Zip};

/// Variance floor inside row-wise layer normalization.
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Input,
    Param(usize),
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    MulRow(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Scale(Var, f64),
    SoftmaxRows(Var),
    LayerNormRows(Var, Vec<f64>),
    ConcatRows(Var, Var),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    Transpose(Var),
    Reshape(Var),
    InterleaveBlocks(Var, Var, usize),
    RepeatRows(Var, usize),
    SelectRows(Var, Var, Vec<bool>),
    BlockAttention(BlockAttention),
    CrossEntropyRows(Var, Vec<usize>, Array2<f64>),
}

#[derive(Debug)]
struct BlockAttention {
    q: Var,
    k: Var,
    v: Var,
    block: usize,
    queries: usize,
    heads: usize,
    /// Softmax weights, block-major then head (`queries × block` each).
    weights: Vec<Array2<f64>>,
}

#[derive(Debug)]
struct Node<'p> {
    value: Cow<'p, Array2<f64>>,
    op: Op,
    needs_grad: bool,
}

/// Records a computation for later differentiation.
#[derive(Debug, Default)]
pub struct Tape<'p> {
    nodes: Vec<Node<'p>>,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl<'p> Tape<'p> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Cow<'p, Array2<f64>>, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn derived(&mut self, value: Array2<f64>, op: Op, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.push(Cow::Owned(value), op, needs_grad)
    }

    /// A constant input; no gradient flows into it.
    pub fn input(&mut self, value: Array2<f64>) -> Var {
        self.push(Cow::Owned(value), Op::Input, false)
    }

    /// A borrowed parameter tensor; its gradient lands in slot `index` of
    /// the buffer passed to [`Tape::backward`].
    pub fn param(&mut self, index: usize, value: &'p Array2<f64>) -> Var {
        self.push(Cow::Borrowed(value), Op::Param(index), true)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        self.derived(v, Op::MatMul(a, b), &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.derived(v, Op::Add(a, b), &[a, b])
    }

    /// Adds a `1 × n` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let v = self.value(a) + self.value(row);
        self.derived(v, Op::AddRow(a, row), &[a, row])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) * self.value(b);
        self.derived(v, Op::Mul(a, b), &[a, b])
    }

    /// Multiplies every row of `a` elementwise by a `1 × n` row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let v = self.value(a) * self.value(row);
        self.derived(v, Op::MulRow(a, row), &[a, row])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(sigmoid);
        self.derived(v, Op::Sigmoid(a), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::tanh);
        self.derived(v, Op::Tanh(a), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x.max(0.0));
        self.derived(v, Op::Relu(a), &[a])
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let v = self.value(a) * factor;
        self.derived(v, Op::Scale(a, factor), &[a])
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut v = self.value(a).clone();
        for mut row in v.rows_mut() {
            let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            row.mapv_inplace(|x| (x - max).exp());
            let sum = row.sum();
            row.mapv_inplace(|x| x / sum);
        }
        self.derived(v, Op::SoftmaxRows(a), &[a])
    }

    /// Row-wise standardization without gain or bias.
    pub fn layer_norm_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let cols = x.ncols() as f64;
        let mut v = x.clone();
        let mut inv_std = Vec::with_capacity(x.nrows());
        for mut row in v.rows_mut() {
            let mean = row.sum() / cols;
            row.mapv_inplace(|x| x - mean);
            let var = row.fold(0.0, |acc, x| acc + x * x) / cols;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            row.mapv_inplace(|x| x * is);
            inv_std.push(is);
        }
        self.derived(v, Op::LayerNormRows(a, inv_std), &[a])
    }

    pub fn concat_rows(&mut self, a: Var, b: Var) -> Var {
        let v = ndarray::concatenate(Axis(0), &[self.value(a).view(), self.value(b).view()])
            .expect("concat_rows: column counts differ");
        self.derived(v, Op::ConcatRows(a, b), &[a, b])
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let v = self.value(a).slice(s![start..start + len, ..]).to_owned();
        self.derived(v, Op::SliceRows(a, start), &[a])
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let v = self.value(a).slice(s![.., start..start + len]).to_owned();
        self.derived(v, Op::SliceCols(a, start), &[a])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<ArrayView2<f64>> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("concat_cols: row counts differ");
        self.derived(v, Op::ConcatCols(parts.to_vec()), parts)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).t().to_owned();
        self.derived(v, Op::Transpose(a), &[a])
    }

    /// Row-major flatten into a single `1 × (r·c)` row.
    pub fn flatten(&mut self, a: Var) -> Var {
        let n = self.value(a).len();
        self.reshape(a, 1, n)
    }

    /// Row-major reshape.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let v = Array2::from_shape_vec((rows, cols), self.value(a).iter().copied().collect())
            .expect("reshape: element count differs");
        self.derived(v, Op::Reshape(a), &[a])
    }

    /// Stacks blocks `[m_b; x_b]`, where `m_b` is the `b`-th run of
    /// `block` rows of `m` and `x_b` is row `b` of `x`.
    pub fn interleave_blocks(&mut self, m: Var, x: Var, block: usize) -> Var {
        let (mv, xv) = (self.value(m), self.value(x));
        let n = xv.nrows();
        assert_eq!(
            mv.nrows(),
            n * block,
            "interleave_blocks: row counts differ"
        );
        let mut v = Array2::zeros((n * (block + 1), mv.ncols()));
        for b in 0..n {
            let at = b * (block + 1);
            v.slice_mut(s![at..at + block, ..])
                .assign(&mv.slice(s![b * block..(b + 1) * block, ..]));
            v.row_mut(at + block).assign(&xv.row(b));
        }
        self.derived(v, Op::InterleaveBlocks(m, x, block), &[m, x])
    }

    /// Repeats every row `times` times in place.
    pub fn repeat_rows(&mut self, a: Var, times: usize) -> Var {
        let x = self.value(a);
        let mut v = Array2::zeros((x.nrows() * times, x.ncols()));
        for (r, row) in x.rows().into_iter().enumerate() {
            for t in 0..times {
                v.row_mut(r * times + t).assign(&row);
            }
        }
        self.derived(v, Op::RepeatRows(a, times), &[a])
    }

    /// Row `r` from `a` where `take_a[r]`, otherwise from `b`.
    pub fn select_rows(&mut self, a: Var, b: Var, take_a: Vec<bool>) -> Var {
        let mut v = self.value(b).clone();
        assert_eq!(v.nrows(), take_a.len(), "select_rows: mask length");
        for (r, &t) in take_a.iter().enumerate() {
            if t {
                v.row_mut(r).assign(&self.value(a).row(r));
            }
        }
        self.derived(v, Op::SelectRows(a, b, take_a), &[a, b])
    }

    /// Multi-head scaled dot-product attention inside independent blocks.
    ///
    /// `q`, `k`, `v` are stacked blocks of `block` rows. In each block the
    /// first `queries` rows of `q` attend over all `block` rows of `k`/`v`,
    /// one softmax per head on a column slice of width `cols / heads`. The
    /// result stacks `queries` rows per block.
    pub fn block_attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        block: usize,
        queries: usize,
        heads: usize,
    ) -> Var {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let width = qv.ncols();
        let n = qv.nrows() / block;
        let dh = width / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut out = Array2::zeros((n * queries, width));
        let mut weights = Vec::with_capacity(n * heads);
        for b in 0..n {
            let at = b * block;
            for h in 0..heads {
                let cols = h * dh..(h + 1) * dh;
                let qb = qv.slice(s![at..at + queries, cols.clone()]);
                let kb = kv.slice(s![at..at + block, cols.clone()]);
                let vb = vv.slice(s![at..at + block, cols.clone()]);
                let mut a = qb.dot(&kb.t());
                for mut row in a.rows_mut() {
                    row.mapv_inplace(|x| x * scale);
                    let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
                    row.mapv_inplace(|x| (x - max).exp());
                    let sum = row.sum();
                    row.mapv_inplace(|x| x / sum);
                }
                out.slice_mut(s![b * queries..(b + 1) * queries, cols])
                    .assign(&a.dot(&vb));
                weights.push(a);
            }
        }
        let op = Op::BlockAttention(BlockAttention {
            q,
            k,
            v,
            block,
            queries,
            heads,
            weights,
        });
        self.derived(out, op, &[q, k, v])
    }

    /// Attention weights recorded by a [`Tape::block_attention`] node,
    /// block-major then head.
    pub fn attention_weights(&self, v: Var) -> &[Array2<f64>] {
        match &self.nodes[v.0].op {
            Op::BlockAttention(att) => &att.weights,
            _ => panic!("attention_weights: not an attention node"),
        }
    }

    /// `-log softmax(logits)[label]` for a `1 × n` logit row.
    pub fn cross_entropy(&mut self, logits: Var, label: usize) -> Var {
        debug_assert_eq!(self.value(logits).nrows(), 1);
        self.cross_entropy_rows(logits, vec![label])
    }

    /// Per-row cross-entropy as an `r × 1` column.
    pub fn cross_entropy_rows(&mut self, logits: Var, labels: Vec<usize>) -> Var {
        let z = self.value(logits);
        assert_eq!(z.nrows(), labels.len(), "cross_entropy_rows: label count");
        let mut probs = z.clone();
        let mut v = Array2::zeros((z.nrows(), 1));
        for (r, mut row) in probs.rows_mut().into_iter().enumerate() {
            let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            let log_sum = row.fold(0.0, |acc, &x| acc + (x - max).exp()).ln() + max;
            v[(r, 0)] = log_sum - row[labels[r]];
            row.mapv_inplace(|x| (x - log_sum).exp());
        }
        self.derived(v, Op::CrossEntropyRows(logits, labels, probs), &[logits])
    }

    fn accumulate(
        &self,
        grads: &mut [Option<Array2<f64>>],
        param_grads: &mut [Array2<f64>],
        target: Var,
        g: Array2<f64>,
    ) {
        let node = &self.nodes[target.0];
        if !node.needs_grad {
            return;
        }
        if let Op::Param(p) = node.op {
            param_grads[p] += &g;
            return;
        }
        match &mut grads[target.0] {
            Some(acc) => *acc += &g,
            slot => *slot = Some(g),
        }
    }

    fn accumulate_product(
        &self,
        grads: &mut [Option<Array2<f64>>],
        param_grads: &mut [Array2<f64>],
        target: Var,
        lhs: ArrayView2<f64>,
        rhs: ArrayView2<f64>,
    ) {
        let node = &self.nodes[target.0];
        if !node.needs_grad {
            return;
        }
        if let Op::Param(p) = node.op {
            general_mat_mul(1.0, &lhs, &rhs, 1.0, &mut param_grads[p]);
            return;
        }
        match &mut grads[target.0] {
            Some(acc) => general_mat_mul(1.0, &lhs, &rhs, 1.0, acc),
            slot => *slot = Some(lhs.dot(&rhs)),
        }
    }

    fn block_attention_backward(
        &self,
        att: &BlockAttention,
        g: &Array2<f64>,
    ) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
        let (qv, kv, vv) = (self.value(att.q), self.value(att.k), self.value(att.v));
        let (block, queries, heads) = (att.block, att.queries, att.heads);
        let dh = qv.ncols() / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut gq = Array2::zeros(qv.raw_dim());
        let mut gk = Array2::zeros(kv.raw_dim());
        let mut gv = Array2::zeros(vv.raw_dim());
        for b in 0..qv.nrows() / block {
            let at = b * block;
            for h in 0..heads {
                let cols = h * dh..(h + 1) * dh;
                let a = &att.weights[b * heads + h];
                let gb = g.slice(s![b * queries..(b + 1) * queries, cols.clone()]);
                let qb = qv.slice(s![at..at + queries, cols.clone()]);
                let kb = kv.slice(s![at..at + block, cols.clone()]);
                let vb = vv.slice(s![at..at + block, cols.clone()]);
                let mut dl = gb.dot(&vb.t());
                for (mut drow, arow) in dl.rows_mut().into_iter().zip(a.rows()) {
                    let inner = drow.dot(&arow);
                    Zip::from(&mut drow)
                        .and(&arow)
                        .for_each(|d, &w| *d = w * (*d - inner) * scale);
                }
                general_mat_mul(
                    1.0,
                    &a.t(),
                    &gb,
                    1.0,
                    &mut gv.slice_mut(s![at..at + block, cols.clone()]),
                );
                general_mat_mul(
                    1.0,
                    &dl,
                    &kb,
                    1.0,
                    &mut gq.slice_mut(s![at..at + queries, cols.clone()]),
                );
                general_mat_mul(
                    1.0,
                    &dl.t(),
                    &qb,
                    1.0,
                    &mut gk.slice_mut(s![at..at + block, cols]),
                );
            }
        }
        (gq, gk, gv)
    }

    /// Back-propagates from the scalar node `root` (seed gradient 1) and
    /// adds parameter gradients into `param_grads`, indexed as registered
    /// with [`Tape::param`].
    pub fn backward(&self, root: Var, param_grads: &mut [Array2<f64>]) {
        let mut grads: Vec<Option<Array2<f64>>> = Vec::with_capacity(root.0 + 1);
        grads.resize_with(root.0 + 1, || None);
        grads[root.0] = Some(Array2::ones(self.value(root).raw_dim()));

        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let y = &node.value;
            match &node.op {
                Op::Input | Op::Param(_) => {}
                Op::MatMul(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    self.accumulate_product(&mut grads, param_grads, *a, g.view(), vb.t());
                    self.accumulate_product(&mut grads, param_grads, *b, va.t(), g.view());
                }
                Op::Add(a, b) => {
                    self.accumulate(&mut grads, param_grads, *a, g.clone());
                    self.accumulate(&mut grads, param_grads, *b, g);
                }
                Op::AddRow(a, row) => {
                    let gr = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    self.accumulate(&mut grads, param_grads, *row, gr);
                    self.accumulate(&mut grads, param_grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let ga = &g * self.value(*b);
                    let gb = &g * self.value(*a);
                    self.accumulate(&mut grads, param_grads, *a, ga);
                    self.accumulate(&mut grads, param_grads, *b, gb);
                }
                Op::MulRow(a, row) => {
                    let gr = (&g * self.value(*a)).sum_axis(Axis(0)).insert_axis(Axis(0));
                    let ga = &g * self.value(*row);
                    self.accumulate(&mut grads, param_grads, *a, ga);
                    self.accumulate(&mut grads, param_grads, *row, gr);
                }
                Op::Sigmoid(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga)
                        .and(&**y)
                        .for_each(|g, &y| *g *= y * (1.0 - y));
                    self.accumulate(&mut grads, param_grads, *a, ga);
                }
                Op::Tanh(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga)
                        .and(&**y)
                        .for_each(|g, &y| *g *= 1.0 - y * y);
                    self.accumulate(&mut grads, param_grads, *a, ga);
                }
                Op::Relu(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga).and(&**y).for_each(|g, &y| {
                        if y <= 0.0 {
                            *g = 0.0
                        }
                    });
                    self.accumulate(&mut grads, param_grads, *a, ga);
                }
                Op::Scale(a, f) => {
                    self.accumulate(&mut grads, param_grads, *a, g * *f);
                }
                Op::SoftmaxRows(a) => {
                    let mut ga = g;
                    for (mut grow, yrow) in ga.rows_mut().into_iter().zip(y.rows()) {
                        let inner = grow.dot(&yrow);
                        Zip::from(&mut grow)
                            .and(&yrow)
                            .for_each(|g, &y| *g = y * (*g - inner));
                    }
                    self.accumulate(&mut grads, param_grads, *a, ga);
                }
                Op::LayerNormRows(a, inv_std) => {
                    let n = y.ncols() as f64;
                    let mut ga = g;
                    for ((mut grow, yrow), is) in
                        ga.rows_mut().into_iter().zip(y.rows()).zip(inv_std)
                    {
                        let mean_g = grow.sum() / n;
                        let mean_gy = grow.dot(&yrow) / n;
                        Zip::from(&mut grow)
                            .and(&yrow)
                            .for_each(|g, &y| *g = is * (*g - mean_g - y * mean_gy));
                    }
                    self.accumulate(&mut grads, param_grads, *a, ga);
                }
                Op::ConcatRows(a, b) => {
                    let ra = self.value(*a).nrows();
                    let ga = g.slice(s![..ra, ..]).to_owned();
                    let gb = g.slice(s![ra.., ..]).to_owned();
                    self.accumulate(&mut grads, param_grads, *a, ga);
                    self.accumulate(&mut grads, param_grads, *b, gb);
                }
                Op::SliceRows(a, start) => {
                    let mut ga = Array2::zeros(self.value(*a).raw_dim());
                    ga.slice_mut(s![*start..*start + g.nrows(), ..]).assign(&g);
                    self.accumulate(&mut grads, param_grads, *a, ga);
                }
                Op::SliceCols(a, start) => {
                    let mut ga = Array2::zeros(self.value(*a).raw_dim());
                    ga.slice_mut(s![.., *start..*start + g.ncols()]).assign(&g);
                    self.accumulate(&mut grads, param_grads, *a, ga);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let w = self.value(*p).ncols();
                        let gp = g.slice(s![.., offset..offset + w]).to_owned();
                        offset += w;
                        self.accumulate(&mut grads, param_grads, *p, gp);
                    }
                }
                Op::Transpose(a) => {
                    let ga = g.t().to_owned();
                    self.accumulate(&mut grads, param_grads, *a, ga);
                }
                Op::Reshape(a) => {
                    let ga = g
                        .as_standard_layout()
                        .into_owned()
                        .into_shape_with_order(self.value(*a).raw_dim())
                        .expect("reshape backward: shape");
                    self.accumulate(&mut grads, param_grads, *a, ga);
                }
                Op::InterleaveBlocks(m, x, block) => {
                    let n = self.value(*x).nrows();
                    let cols = g.ncols();
                    let mut gm = Array2::zeros((n * block, cols));
                    let mut gx = Array2::zeros((n, cols));
                    for b in 0..n {
                        let at = b * (block + 1);
                        gm.slice_mut(s![b * block..(b + 1) * block, ..])
                            .assign(&g.slice(s![at..at + block, ..]));
                        gx.row_mut(b).assign(&g.row(at + block));
                    }
                    self.accumulate(&mut grads, param_grads, *m, gm);
                    self.accumulate(&mut grads, param_grads, *x, gx);
                }
                Op::RepeatRows(a, times) => {
                    let mut ga = Array2::zeros(self.value(*a).raw_dim());
                    for (r, row) in g.rows().into_iter().enumerate() {
                        let mut acc = ga.row_mut(r / times);
                        acc += &row;
                    }
                    self.accumulate(&mut grads, param_grads, *a, ga);
                }
                Op::SelectRows(a, b, take_a) => {
                    let mut ga = g.clone();
                    let mut gb = g;
                    for (r, &t) in take_a.iter().enumerate() {
                        if t {
                            gb.row_mut(r).fill(0.0);
                        } else {
                            ga.row_mut(r).fill(0.0);
                        }
                    }
                    self.accumulate(&mut grads, param_grads, *a, ga);
                    self.accumulate(&mut grads, param_grads, *b, gb);
                }
                Op::BlockAttention(att) => {
                    let (gq, gk, gv) = self.block_attention_backward(att, &g);
                    self.accumulate(&mut grads, param_grads, att.q, gq);
                    self.accumulate(&mut grads, param_grads, att.k, gk);
                    self.accumulate(&mut grads, param_grads, att.v, gv);
                }
                Op::CrossEntropyRows(logits, labels, probs) => {
                    let mut ga = probs.clone();
                    for (r, &l) in labels.iter().enumerate() {
                        ga[(r, l)] -= 1.0;
                        let gr = g[(r, 0)];
                        ga.row_mut(r).mapv_inplace(|x| x * gr);
                    }
                    self.accumulate(&mut grads, param_grads, *logits, ga);
                }
            }
        }
    }
}
