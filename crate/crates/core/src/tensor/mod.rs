//! Dense tensor numerics with reverse-mode automatic differentiation.
//!
//! Everything trainable in this crate is built on two types: [`Tensor`], a
//! dense row-major array of `f64` values, and [`Tape`], which records the
//! primitive operations of a forward pass so gradients can be accumulated by
//! a reverse topological sweep. Storage is always 64-bit; the models are
//! small and the gradient checks demand the precision.
//!
//! A `Tape` is built fresh per forward pass: parameters are inserted as
//! leaves, ops are recorded, `backward` runs once, and the optimizer reads
//! the leaf gradients back out. Tapes are confined to a single thread;
//! `Tensor` values are plain data and may move freely between threads.

mod fmat;

pub use fmat::{read_fmat, read_fmat_file, write_fmat, write_fmat_file};

use crate::error::{Error, Result};

/// Dense row-major tensor of 64-bit reals.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.iter().any(|&d| d == 0) {
            return Err(Error::Numeric(format!(
                "tensor shape must be non-empty with positive dims, got {shape:?}"
            )));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::Numeric(format!(
                "shape {shape:?} implies {numel} elements but data has {}",
                data.len()
            )));
        }
        Ok(Tensor {
            shape,
            data,
            requires_grad: false,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Tensor::new(shape, vec![0.0; numel]).expect("zeros: valid shape")
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
            requires_grad: false,
        }
    }

    pub fn row(values: Vec<f64>) -> Self {
        let n = values.len();
        Tensor::new(vec![1, n], values).expect("row: non-empty")
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], data)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Numeric("from_rows: empty row list".into()));
        }
        let cols = rows[0].len();
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Numeric("from_rows: ragged rows".into()));
        }
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            data.extend_from_slice(r);
        }
        Tensor::new(vec![rows.len(), cols], data)
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    /// Interpret as a matrix: rank-1 `[n]` is a `1×n` row vector.
    pub fn dims2(&self) -> (usize, usize) {
        match self.shape.len() {
            1 => (1, self.shape[0]),
            2 => (self.shape[0], self.shape[1]),
            _ => panic!("dims2 on rank-{} tensor", self.shape.len()),
        }
    }

    pub fn get2(&self, r: usize, c: usize) -> f64 {
        let (_, cols) = self.dims2();
        self.data[r * cols + c]
    }

    pub fn is_scalar(&self) -> bool {
        self.numel() == 1
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorId(usize);

/// How the right-hand operand of an elementwise op is expanded.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Broadcast {
    None,
    /// rhs is a single value applied to every element.
    Scalar,
    /// rhs is a `1×p` row applied to every row of an `m×p` lhs.
    Row,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(TensorId, TensorId),
    Add(TensorId, TensorId, Broadcast),
    Mul(TensorId, TensorId, Broadcast),
    Div(TensorId, TensorId, Broadcast),
    Scale(TensorId, f64),
    Tanh(TensorId),
    Relu(TensorId),
    Sqrt(TensorId),
    SoftmaxColumns(TensorId),
    FrobeniusSq(TensorId),
    Sum(TensorId),
    ColSums(TensorId),
    Transpose(TensorId),
    Reshape(TensorId),
    ConcatRows(Vec<TensorId>),
    SliceRows(TensorId, usize, usize),
    /// Frame splicing with replication padding: output row `t` is the
    /// concatenation of input rows `clamp(t + off)` over the given offsets.
    Splice(TensorId, Vec<i64>),
    /// Mean over rows of `-log softmax(row)[label]`.
    CrossEntropyRows(TensorId, Vec<usize>),
}

struct Node {
    value: Vec<f64>,
    shape: Vec<usize>,
    grad: Vec<f64>,
    requires_grad: bool,
    op: Op,
}

impl Node {
    fn dims2(&self) -> (usize, usize) {
        match self.shape.len() {
            1 => (1, self.shape[0]),
            2 => (self.shape[0], self.shape[1]),
            _ => panic!("dims2 on rank-{} node", self.shape.len()),
        }
    }
}

/// Record of one forward computation; replays in reverse for gradients.
pub struct Tape {
    nodes: Vec<Node>,
    backward_done: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            backward_done: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Record a tensor as a leaf; its `requires_grad` flag decides whether
    /// `backward` accumulates a gradient for it.
    pub fn leaf(&mut self, t: &Tensor) -> TensorId {
        self.push(
            t.data.clone(),
            t.shape.clone(),
            t.requires_grad,
            Op::Leaf,
        )
    }

    /// Record a constant leaf that never receives a gradient.
    pub fn constant(&mut self, t: &Tensor) -> TensorId {
        self.push(t.data.clone(), t.shape.clone(), false, Op::Leaf)
    }

    /// Record a leaf that always receives a gradient.
    pub fn param(&mut self, t: &Tensor) -> TensorId {
        self.push(t.data.clone(), t.shape.clone(), true, Op::Leaf)
    }

    fn push(&mut self, value: Vec<f64>, shape: Vec<usize>, requires_grad: bool, op: Op) -> TensorId {
        let grad = vec![0.0; value.len()];
        self.nodes.push(Node {
            value,
            shape,
            grad,
            requires_grad,
            op,
        });
        TensorId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: TensorId) -> &[f64] {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    /// Scalar value of a single-element node.
    pub fn scalar_value(&self, id: TensorId) -> f64 {
        debug_assert_eq!(self.nodes[id.0].value.len(), 1);
        self.nodes[id.0].value[0]
    }

    /// Copy a node's value out as a standalone tensor.
    pub fn tensor(&self, id: TensorId) -> Tensor {
        Tensor {
            shape: self.nodes[id.0].shape.clone(),
            data: self.nodes[id.0].value.clone(),
            requires_grad: false,
        }
    }

    /// Gradient accumulated for `id`; valid after [`Tape::backward`].
    pub fn grad(&self, id: TensorId) -> Result<&[f64]> {
        if !self.backward_done {
            return Err(Error::Numeric(
                "gradient requested before backward() was run".into(),
            ));
        }
        Ok(&self.nodes[id.0].grad)
    }

    /// Clear all accumulated gradients so `backward` may run again.
    pub fn zero_grads(&mut self) {
        for node in &mut self.nodes {
            node.grad.iter_mut().for_each(|g| *g = 0.0);
        }
        self.backward_done = false;
    }

    fn require_from(&self, ids: &[TensorId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    // ── Forward ops ─────────────────────────────────────────────────────

    /// Matrix product `a × b`; operands are matrices (rank-1 is a row).
    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (m, ka) = self.nodes[a.0].dims2();
        let (kb, n) = self.nodes[b.0].dims2();
        if ka != kb {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: self.nodes[a.0].shape.clone(),
                rhs: self.nodes[b.0].shape.clone(),
            });
        }
        let mut out = vec![0.0; m * n];
        {
            let lhs = &self.nodes[a.0].value;
            let rhs = &self.nodes[b.0].value;
            for i in 0..m {
                for p in 0..ka {
                    let x = lhs[i * ka + p];
                    if x == 0.0 {
                        continue;
                    }
                    let row = &rhs[p * n..(p + 1) * n];
                    let dst = &mut out[i * n..(i + 1) * n];
                    for j in 0..n {
                        dst[j] += x * row[j];
                    }
                }
            }
        }
        let rg = self.require_from(&[a, b]);
        Ok(self.push(out, vec![m, n], rg, Op::MatMul(a, b)))
    }

    fn broadcast_kind(&self, op: &'static str, a: TensorId, b: TensorId) -> Result<Broadcast> {
        let (m, p) = self.nodes[a.0].dims2();
        let (bm, bp) = self.nodes[b.0].dims2();
        if (m, p) == (bm, bp) {
            Ok(Broadcast::None)
        } else if bm * bp == 1 {
            Ok(Broadcast::Scalar)
        } else if bm == 1 && bp == p {
            Ok(Broadcast::Row)
        } else {
            Err(Error::ShapeMismatch {
                op,
                lhs: self.nodes[a.0].shape.clone(),
                rhs: self.nodes[b.0].shape.clone(),
            })
        }
    }

    fn elementwise_binary(
        &mut self,
        op: &'static str,
        a: TensorId,
        b: TensorId,
        f: impl Fn(f64, f64) -> f64,
        make: impl Fn(TensorId, TensorId, Broadcast) -> Op,
    ) -> Result<TensorId> {
        let bc = self.broadcast_kind(op, a, b)?;
        let (_, p) = self.nodes[a.0].dims2();
        let out: Vec<f64> = {
            let lhs = &self.nodes[a.0].value;
            let rhs = &self.nodes[b.0].value;
            match bc {
                Broadcast::None => lhs.iter().zip(rhs).map(|(&x, &y)| f(x, y)).collect(),
                Broadcast::Scalar => lhs.iter().map(|&x| f(x, rhs[0])).collect(),
                Broadcast::Row => lhs
                    .iter()
                    .enumerate()
                    .map(|(i, &x)| f(x, rhs[i % p]))
                    .collect(),
            }
        };
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.require_from(&[a, b]);
        Ok(self.push(out, shape, rg, make(a, b, bc)))
    }

    /// Elementwise sum. `b` may be a scalar or a `1×p` bias row.
    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.elementwise_binary("add", a, b, |x, y| x + y, Op::Add)
    }

    /// Elementwise product with the same broadcasting as `add`.
    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.elementwise_binary("mul", a, b, |x, y| x * y, Op::Mul)
    }

    /// Elementwise quotient with the same broadcasting as `add`.
    pub fn div(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.elementwise_binary("div", a, b, |x, y| x / y, Op::Div)
    }

    /// Multiply every element by a constant.
    pub fn scale(&mut self, a: TensorId, c: f64) -> TensorId {
        let out: Vec<f64> = self.nodes[a.0].value.iter().map(|&x| c * x).collect();
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.nodes[a.0].requires_grad;
        self.push(out, shape, rg, Op::Scale(a, c))
    }

    pub fn tanh(&mut self, a: TensorId) -> TensorId {
        let out: Vec<f64> = self.nodes[a.0].value.iter().map(|x| x.tanh()).collect();
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.nodes[a.0].requires_grad;
        self.push(out, shape, rg, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: TensorId) -> TensorId {
        let out: Vec<f64> = self.nodes[a.0].value.iter().map(|x| x.max(0.0)).collect();
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.nodes[a.0].requires_grad;
        self.push(out, shape, rg, Op::Relu(a))
    }

    pub fn sqrt(&mut self, a: TensorId) -> TensorId {
        let out: Vec<f64> = self.nodes[a.0].value.iter().map(|x| x.sqrt()).collect();
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.nodes[a.0].requires_grad;
        self.push(out, shape, rg, Op::Sqrt(a))
    }

    /// Column-wise softmax of a `T×h` matrix, stabilized by per-column max
    /// subtraction. Errors on non-finite input.
    pub fn softmax_columns(&mut self, a: TensorId) -> Result<TensorId> {
        let (rows, cols) = self.nodes[a.0].dims2();
        if self.nodes[a.0].shape.len() != 2 {
            return Err(Error::Numeric(
                "softmax_columns requires a rank-2 tensor".into(),
            ));
        }
        if self.nodes[a.0].value.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(
                "softmax_columns: non-finite input".into(),
            ));
        }
        let mut out = vec![0.0; rows * cols];
        {
            let x = &self.nodes[a.0].value;
            for j in 0..cols {
                let mut max = f64::NEG_INFINITY;
                for i in 0..rows {
                    max = max.max(x[i * cols + j]);
                }
                let mut sum = 0.0;
                for i in 0..rows {
                    let e = (x[i * cols + j] - max).exp();
                    out[i * cols + j] = e;
                    sum += e;
                }
                for i in 0..rows {
                    out[i * cols + j] /= sum;
                }
            }
        }
        let rg = self.nodes[a.0].requires_grad;
        Ok(self.push(out, vec![rows, cols], rg, Op::SoftmaxColumns(a)))
    }

    /// Sum of squared entries, as a scalar.
    pub fn frobenius_sq(&mut self, a: TensorId) -> TensorId {
        let s: f64 = self.nodes[a.0].value.iter().map(|x| x * x).sum();
        let rg = self.nodes[a.0].requires_grad;
        self.push(vec![s], vec![1], rg, Op::FrobeniusSq(a))
    }

    /// Sum of all entries, as a scalar.
    pub fn sum(&mut self, a: TensorId) -> TensorId {
        let s: f64 = self.nodes[a.0].value.iter().sum();
        let rg = self.nodes[a.0].requires_grad;
        self.push(vec![s], vec![1], rg, Op::Sum(a))
    }

    /// Column sums of an `m×p` matrix, as a `1×p` row.
    pub fn col_sums(&mut self, a: TensorId) -> TensorId {
        let (m, p) = self.nodes[a.0].dims2();
        let mut out = vec![0.0; p];
        for i in 0..m {
            for j in 0..p {
                out[j] += self.nodes[a.0].value[i * p + j];
            }
        }
        let rg = self.nodes[a.0].requires_grad;
        self.push(out, vec![1, p], rg, Op::ColSums(a))
    }

    pub fn transpose(&mut self, a: TensorId) -> TensorId {
        let (m, p) = self.nodes[a.0].dims2();
        let mut out = vec![0.0; m * p];
        for i in 0..m {
            for j in 0..p {
                out[j * m + i] = self.nodes[a.0].value[i * p + j];
            }
        }
        let rg = self.nodes[a.0].requires_grad;
        self.push(out, vec![p, m], rg, Op::Transpose(a))
    }

    pub fn reshape(&mut self, a: TensorId, shape: Vec<usize>) -> Result<TensorId> {
        let numel: usize = shape.iter().product();
        if numel != self.nodes[a.0].value.len() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: self.nodes[a.0].shape.clone(),
                rhs: shape,
            });
        }
        let out = self.nodes[a.0].value.clone();
        let rg = self.nodes[a.0].requires_grad;
        Ok(self.push(out, shape, rg, Op::Reshape(a)))
    }

    /// Stack matrices with equal column counts on top of each other.
    pub fn concat_rows(&mut self, parts: &[TensorId]) -> Result<TensorId> {
        if parts.is_empty() {
            return Err(Error::Numeric("concat_rows: empty input".into()));
        }
        let (_, cols) = self.nodes[parts[0].0].dims2();
        let mut total_rows = 0;
        for &p in parts {
            let (m, c) = self.nodes[p.0].dims2();
            if c != cols {
                return Err(Error::ShapeMismatch {
                    op: "concat_rows",
                    lhs: self.nodes[parts[0].0].shape.clone(),
                    rhs: self.nodes[p.0].shape.clone(),
                });
            }
            total_rows += m;
        }
        let mut out = Vec::with_capacity(total_rows * cols);
        for &p in parts {
            out.extend_from_slice(&self.nodes[p.0].value);
        }
        let rg = self.require_from(parts);
        Ok(self.push(
            out,
            vec![total_rows, cols],
            rg,
            Op::ConcatRows(parts.to_vec()),
        ))
    }

    /// Rows `start..end` of a matrix.
    pub fn slice_rows(&mut self, a: TensorId, start: usize, end: usize) -> Result<TensorId> {
        let (m, p) = self.nodes[a.0].dims2();
        if start >= end || end > m {
            return Err(Error::Numeric(format!(
                "slice_rows: range {start}..{end} out of bounds for {m} rows"
            )));
        }
        let out = self.nodes[a.0].value[start * p..end * p].to_vec();
        let rg = self.nodes[a.0].requires_grad;
        Ok(self.push(out, vec![end - start, p], rg, Op::SliceRows(a, start, end)))
    }

    /// Temporal context splicing: output row `t` concatenates input rows
    /// `t + off` for each offset, clamped to the sequence (replication
    /// padding), so the output keeps exactly `T` rows.
    pub fn splice_rows(&mut self, a: TensorId, offsets: &[i64]) -> Result<TensorId> {
        if offsets.is_empty() {
            return Err(Error::Numeric("splice_rows: empty offset list".into()));
        }
        let (t_len, f) = self.nodes[a.0].dims2();
        let k = offsets.len();
        let mut out = vec![0.0; t_len * k * f];
        for t in 0..t_len {
            for (c, &off) in offsets.iter().enumerate() {
                let src = (t as i64 + off).clamp(0, t_len as i64 - 1) as usize;
                let dst = t * k * f + c * f;
                out[dst..dst + f]
                    .copy_from_slice(&self.nodes[a.0].value[src * f..(src + 1) * f]);
            }
        }
        let rg = self.nodes[a.0].requires_grad;
        Ok(self.push(
            out,
            vec![t_len, k * f],
            rg,
            Op::Splice(a, offsets.to_vec()),
        ))
    }

    /// Mean over rows of the cross-entropy between `softmax(row)` and the
    /// row's label. Numerically stabilized via log-sum-exp.
    pub fn cross_entropy_rows(&mut self, logits: TensorId, labels: &[usize]) -> Result<TensorId> {
        let (rows, cols) = self.nodes[logits.0].dims2();
        if labels.len() != rows {
            return Err(Error::Numeric(format!(
                "cross_entropy_rows: {} labels for {} rows",
                labels.len(),
                rows
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= cols) {
            return Err(Error::Numeric(format!(
                "cross_entropy_rows: label {bad} out of range for {cols} classes"
            )));
        }
        let mut total = 0.0;
        for (r, &label) in labels.iter().enumerate() {
            let row = &self.nodes[logits.0].value[r * cols..(r + 1) * cols];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
            total += lse - row[label];
        }
        total /= rows as f64;
        let rg = self.nodes[logits.0].requires_grad;
        Ok(self.push(
            vec![total],
            vec![1],
            rg,
            Op::CrossEntropyRows(logits, labels.to_vec()),
        ))
    }

    // ── Backward ────────────────────────────────────────────────────────

    /// Accumulate gradients of a scalar loss into every recorded node that
    /// requires them. May be called once per tape; use [`Tape::zero_grads`]
    /// to reset before running it again.
    pub fn backward(&mut self, loss: TensorId) -> Result<()> {
        if loss.0 >= self.nodes.len() {
            return Err(Error::Numeric("backward: unrecorded tensor".into()));
        }
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::Numeric(format!(
                "backward: loss must be scalar, got shape {:?}",
                self.nodes[loss.0].shape
            )));
        }
        if self.backward_done {
            return Err(Error::Numeric(
                "backward already run on this record; call zero_grads first".into(),
            ));
        }
        self.backward_done = true;
        self.nodes[loss.0].grad[0] = 1.0;

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let op = self.nodes[i].op.clone();
            match op {
                Op::Leaf => {}

                Op::MatMul(a, b) => {
                    let (m, k) = self.nodes[a.0].dims2();
                    let (_, n) = self.nodes[b.0].dims2();
                    if self.nodes[a.0].requires_grad {
                        // dA = dC × Bᵀ
                        let mut da = vec![0.0; m * k];
                        for r in 0..m {
                            for p in 0..k {
                                let mut s = 0.0;
                                for j in 0..n {
                                    s += self.nodes[i].grad[r * n + j]
                                        * self.nodes[b.0].value[p * n + j];
                                }
                                da[r * k + p] = s;
                            }
                        }
                        accumulate(&mut self.nodes[a.0].grad, &da);
                    }
                    if self.nodes[b.0].requires_grad {
                        // dB = Aᵀ × dC
                        let mut db = vec![0.0; k * n];
                        for r in 0..m {
                            for p in 0..k {
                                let x = self.nodes[a.0].value[r * k + p];
                                if x == 0.0 {
                                    continue;
                                }
                                for j in 0..n {
                                    db[p * n + j] += x * self.nodes[i].grad[r * n + j];
                                }
                            }
                        }
                        accumulate(&mut self.nodes[b.0].grad, &db);
                    }
                }

                Op::Add(a, b, bc) => {
                    if self.nodes[a.0].requires_grad {
                        let g = self.nodes[i].grad.clone();
                        accumulate(&mut self.nodes[a.0].grad, &g);
                    }
                    if self.nodes[b.0].requires_grad {
                        let g = self.reduce_to_rhs(i, b, bc, |_, _| 1.0);
                        accumulate(&mut self.nodes[b.0].grad, &g);
                    }
                }

                Op::Mul(a, b, bc) => {
                    let (_, p) = self.nodes[a.0].dims2();
                    if self.nodes[a.0].requires_grad {
                        let g: Vec<f64> = self.nodes[i]
                            .grad
                            .iter()
                            .enumerate()
                            .map(|(idx, &g)| g * self.rhs_at(b, bc, idx, p))
                            .collect();
                        accumulate(&mut self.nodes[a.0].grad, &g);
                    }
                    if self.nodes[b.0].requires_grad {
                        let lhs = self.nodes[a.0].value.clone();
                        let g = self.reduce_to_rhs(i, b, bc, |idx, _| lhs[idx]);
                        accumulate(&mut self.nodes[b.0].grad, &g);
                    }
                }

                Op::Div(a, b, bc) => {
                    let (_, p) = self.nodes[a.0].dims2();
                    if self.nodes[a.0].requires_grad {
                        let g: Vec<f64> = self.nodes[i]
                            .grad
                            .iter()
                            .enumerate()
                            .map(|(idx, &g)| g / self.rhs_at(b, bc, idx, p))
                            .collect();
                        accumulate(&mut self.nodes[a.0].grad, &g);
                    }
                    if self.nodes[b.0].requires_grad {
                        let lhs = self.nodes[a.0].value.clone();
                        let g = self.reduce_to_rhs(i, b, bc, |idx, y| -lhs[idx] / (y * y));
                        accumulate(&mut self.nodes[b.0].grad, &g);
                    }
                }

                Op::Scale(a, c) => {
                    if self.nodes[a.0].requires_grad {
                        let g: Vec<f64> = self.nodes[i].grad.iter().map(|&g| c * g).collect();
                        accumulate(&mut self.nodes[a.0].grad, &g);
                    }
                }

                Op::Tanh(a) => {
                    if self.nodes[a.0].requires_grad {
                        let g: Vec<f64> = self.nodes[i]
                            .grad
                            .iter()
                            .zip(&self.nodes[i].value)
                            .map(|(&g, &y)| g * (1.0 - y * y))
                            .collect();
                        accumulate(&mut self.nodes[a.0].grad, &g);
                    }
                }

                Op::Relu(a) => {
                    if self.nodes[a.0].requires_grad {
                        let g: Vec<f64> = self.nodes[i]
                            .grad
                            .iter()
                            .zip(&self.nodes[a.0].value)
                            .map(|(&g, &x)| if x > 0.0 { g } else { 0.0 })
                            .collect();
                        accumulate(&mut self.nodes[a.0].grad, &g);
                    }
                }

                Op::Sqrt(a) => {
                    if self.nodes[a.0].requires_grad {
                        let g: Vec<f64> = self.nodes[i]
                            .grad
                            .iter()
                            .zip(&self.nodes[i].value)
                            .map(|(&g, &y)| g / (2.0 * y))
                            .collect();
                        accumulate(&mut self.nodes[a.0].grad, &g);
                    }
                }

                Op::SoftmaxColumns(a) => {
                    if self.nodes[a.0].requires_grad {
                        let (rows, cols) = self.nodes[i].dims2();
                        let mut g = vec![0.0; rows * cols];
                        for j in 0..cols {
                            let mut dot = 0.0;
                            for r in 0..rows {
                                let idx = r * cols + j;
                                dot += self.nodes[i].grad[idx] * self.nodes[i].value[idx];
                            }
                            for r in 0..rows {
                                let idx = r * cols + j;
                                g[idx] = self.nodes[i].value[idx]
                                    * (self.nodes[i].grad[idx] - dot);
                            }
                        }
                        accumulate(&mut self.nodes[a.0].grad, &g);
                    }
                }

                Op::FrobeniusSq(a) => {
                    if self.nodes[a.0].requires_grad {
                        let g0 = self.nodes[i].grad[0];
                        let g: Vec<f64> = self.nodes[a.0]
                            .value
                            .iter()
                            .map(|&x| 2.0 * x * g0)
                            .collect();
                        accumulate(&mut self.nodes[a.0].grad, &g);
                    }
                }

                Op::Sum(a) => {
                    if self.nodes[a.0].requires_grad {
                        let g0 = self.nodes[i].grad[0];
                        let g = vec![g0; self.nodes[a.0].value.len()];
                        accumulate(&mut self.nodes[a.0].grad, &g);
                    }
                }

                Op::ColSums(a) => {
                    if self.nodes[a.0].requires_grad {
                        let (m, p) = self.nodes[a.0].dims2();
                        let mut g = vec![0.0; m * p];
                        for r in 0..m {
                            for j in 0..p {
                                g[r * p + j] = self.nodes[i].grad[j];
                            }
                        }
                        accumulate(&mut self.nodes[a.0].grad, &g);
                    }
                }

                Op::Transpose(a) => {
                    if self.nodes[a.0].requires_grad {
                        let (m, p) = self.nodes[a.0].dims2();
                        let mut g = vec![0.0; m * p];
                        for r in 0..m {
                            for j in 0..p {
                                g[r * p + j] = self.nodes[i].grad[j * m + r];
                            }
                        }
                        accumulate(&mut self.nodes[a.0].grad, &g);
                    }
                }

                Op::Reshape(a) => {
                    if self.nodes[a.0].requires_grad {
                        let g = self.nodes[i].grad.clone();
                        accumulate(&mut self.nodes[a.0].grad, &g);
                    }
                }

                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for part in parts {
                        let len = self.nodes[part.0].value.len();
                        if self.nodes[part.0].requires_grad {
                            let g = self.nodes[i].grad[offset..offset + len].to_vec();
                            accumulate(&mut self.nodes[part.0].grad, &g);
                        }
                        offset += len;
                    }
                }

                Op::SliceRows(a, start, _end) => {
                    if self.nodes[a.0].requires_grad {
                        let (_, p) = self.nodes[a.0].dims2();
                        let g = self.nodes[i].grad.clone();
                        let base = start * p;
                        for (k, &gv) in g.iter().enumerate() {
                            self.nodes[a.0].grad[base + k] += gv;
                        }
                    }
                }

                Op::Splice(a, offsets) => {
                    if self.nodes[a.0].requires_grad {
                        let (t_len, f) = self.nodes[a.0].dims2();
                        let k = offsets.len();
                        let g = self.nodes[i].grad.clone();
                        for t in 0..t_len {
                            for (c, &off) in offsets.iter().enumerate() {
                                let src = (t as i64 + off).clamp(0, t_len as i64 - 1) as usize;
                                for j in 0..f {
                                    self.nodes[a.0].grad[src * f + j] +=
                                        g[t * k * f + c * f + j];
                                }
                            }
                        }
                    }
                }

                Op::CrossEntropyRows(logits, labels) => {
                    if self.nodes[logits.0].requires_grad {
                        let (rows, cols) = self.nodes[logits.0].dims2();
                        let g0 = self.nodes[i].grad[0];
                        let mut g = vec![0.0; rows * cols];
                        for (r, &label) in labels.iter().enumerate() {
                            let row = &self.nodes[logits.0].value[r * cols..(r + 1) * cols];
                            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                            let exps: Vec<f64> = row.iter().map(|&x| (x - max).exp()).collect();
                            let sum: f64 = exps.iter().sum();
                            for c in 0..cols {
                                let softmax = exps[c] / sum;
                                let onehot = if c == label { 1.0 } else { 0.0 };
                                g[r * cols + c] = g0 * (softmax - onehot) / rows as f64;
                            }
                        }
                        accumulate(&mut self.nodes[logits.0].grad, &g);
                    }
                }
            }
        }
        Ok(())
    }

    /// Value of the rhs operand as seen by flat output index `idx`.
    fn rhs_at(&self, b: TensorId, bc: Broadcast, idx: usize, cols: usize) -> f64 {
        match bc {
            Broadcast::None => self.nodes[b.0].value[idx],
            Broadcast::Scalar => self.nodes[b.0].value[0],
            Broadcast::Row => self.nodes[b.0].value[idx % cols],
        }
    }

    /// Reduce the output gradient onto the rhs operand of a broadcast op.
    /// `local(idx, rhs_value)` is the partial derivative w.r.t. the rhs as a
    /// function of the flat output index.
    fn reduce_to_rhs(
        &self,
        out: usize,
        b: TensorId,
        bc: Broadcast,
        local: impl Fn(usize, f64) -> f64,
    ) -> Vec<f64> {
        let grad = &self.nodes[out].grad;
        let (_, p) = self.nodes[out].dims2();
        match bc {
            Broadcast::None => grad
                .iter()
                .enumerate()
                .map(|(idx, &g)| g * local(idx, self.nodes[b.0].value[idx]))
                .collect(),
            Broadcast::Scalar => {
                let y = self.nodes[b.0].value[0];
                let s = grad
                    .iter()
                    .enumerate()
                    .map(|(idx, &g)| g * local(idx, y))
                    .sum();
                vec![s]
            }
            Broadcast::Row => {
                let mut out_g = vec![0.0; p];
                for (idx, &g) in grad.iter().enumerate() {
                    let j = idx % p;
                    out_g[j] += g * local(idx, self.nodes[b.0].value[j]);
                }
                out_g
            }
        }
    }
}

fn accumulate(target: &mut [f64], src: &[f64]) {
    for (t, s) in target.iter_mut().zip(src) {
        *t += s;
    }
}

/// Uniform Glorot initialization: entries drawn from
/// `±√(6 / (fan_in + fan_out))`.
pub fn glorot_uniform<R: rand::Rng>(rng: &mut R, rows: usize, cols: usize) -> Tensor {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-limit..limit))
        .collect();
    Tensor::new(vec![rows, cols], data).expect("glorot: positive dims")
}

// ── Gradient checking ───────────────────────────────────────────────────

/// Relative error between an analytic and a numeric derivative.
fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compare the recorded gradients of a scalar function against central
/// finite differences over every coordinate of every parameter. Returns the
/// maximum relative error.
pub fn grad_check_multi<F>(build: F, params: &[Tensor], step: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[TensorId]) -> Result<TensorId>,
{
    if step <= 0.0 {
        return Err(Error::Numeric("grad_check: step must be positive".into()));
    }
    let eval = |values: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let ids: Vec<TensorId> = values.iter().map(|t| tape.param(t)).collect();
        let loss = build(&mut tape, &ids)?;
        if tape.nodes[loss.0].value.len() != 1 {
            return Err(Error::Numeric("grad_check: loss must be scalar".into()));
        }
        Ok(tape.scalar_value(loss))
    };

    // Analytic pass.
    let mut tape = Tape::new();
    let ids: Vec<TensorId> = params.iter().map(|t| tape.param(t)).collect();
    let loss = build(&mut tape, &ids)?;
    tape.backward(loss)?;
    let analytic: Vec<Vec<f64>> = ids
        .iter()
        .map(|&id| tape.grad(id).map(|g| g.to_vec()))
        .collect::<Result<_>>()?;

    let mut worst = 0.0f64;
    let mut work: Vec<Tensor> = params.to_vec();
    for (p, base) in params.iter().enumerate() {
        for i in 0..base.numel() {
            let orig = base.data()[i];
            work[p].data_mut()[i] = orig + step;
            let up = eval(&work)?;
            work[p].data_mut()[i] = orig - step;
            let down = eval(&work)?;
            work[p].data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * step);
            worst = worst.max(relative_error(analytic[p][i], numeric));
        }
    }
    Ok(worst)
}

/// Single-tensor form of [`grad_check_multi`]: maximum relative error of the
/// analytic gradient of `f` at `x` against central differences.
pub fn grad_check<F>(f: F, x: &Tensor, step: f64) -> Result<f64>
where
    F: Fn(&mut Tape, TensorId) -> Result<TensorId>,
{
    grad_check_multi(|tape, ids| f(tape, ids[0]), std::slice::from_ref(x), step)
}
