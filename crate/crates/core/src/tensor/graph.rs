use alloc::vec;
use alloc::vec::Vec;

use super::array::{finite, kernels, RealArray};
use super::TensorError;
use crate::math;

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Shift(Var),
    MatMul(Var, Var),
    Transpose(Var),
    Exp(Var),
    Ln(Var),
    Softplus(Var),
    LeakyRelu(Var, f64),
    ClampNonPos(Var),
    ClampNonNeg(Var),
    RowSoftmax(Var),
    LogSoftmax(Var),
    Sum(Var),
    Mean(Var),
    SumRows(Var),
    GatherCols(Var, Vec<usize>),
    GatherRows(Var, Vec<usize>),
    ConcatCols(Var, Var),
    /// Stores the per-row divisor `max(‖row‖, eps)` and whether the eps
    /// floor was active.
    L2NormalizeRows(Var, Vec<(f64, bool)>),
}

impl Op {
    fn inputs(&self) -> [Option<Var>; 2] {
        use Op::*;
        match self {
            Leaf => [None, None],
            Add(a, b) | Sub(a, b) | Mul(a, b) | MatMul(a, b) | ConcatCols(a, b) => {
                [Some(*a), Some(*b)]
            }
            Scale(a, _)
            | Shift(a)
            | Transpose(a)
            | Exp(a)
            | Ln(a)
            | Softplus(a)
            | LeakyRelu(a, _)
            | ClampNonPos(a)
            | ClampNonNeg(a)
            | RowSoftmax(a)
            | LogSoftmax(a)
            | Sum(a)
            | Mean(a)
            | SumRows(a)
            | GatherCols(a, _)
            | GatherRows(a, _)
            | L2NormalizeRows(a, _) => [Some(*a), None],
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    value: RealArray,
    op: Op,
}

/// Append-only record of array operations supporting reverse-mode
/// differentiation.
///
/// Nodes are only ever appended and reference earlier nodes, so the record
/// is topologically ordered by construction.
#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradient slots produced by [`Graph::backward`], one per node.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    slots: Vec<Option<RealArray>>,
}

impl Gradients {
    /// Gradient of the root with respect to `v`, or `None` if `v` does not
    /// influence the root.
    pub fn get(&self, v: Var) -> Option<&RealArray> {
        self.slots.get(v.0).and_then(|s| s.as_ref())
    }

    /// Like [`Gradients::get`] but yields zeros shaped like `like` for
    /// unreachable nodes.
    pub fn get_or_zeros(&self, v: Var, like: &RealArray) -> RealArray {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| RealArray::zeros(like.shape()))
    }
}

struct Broadcast {
    rows: usize,
    cols: usize,
}

fn broadcast_dims(
    op: &'static str,
    a: &RealArray,
    b: &RealArray,
) -> Result<Broadcast, TensorError> {
    let (ar, ac) = a.dims2();
    let (br, bc) = b.dims2();
    let dim = |x: usize, y: usize| -> Option<usize> {
        if x == y || y == 1 {
            Some(x)
        } else if x == 1 {
            Some(y)
        } else {
            None
        }
    };
    match (dim(ar, br), dim(ac, bc)) {
        (Some(rows), Some(cols)) => Ok(Broadcast { rows, cols }),
        _ => Err(TensorError::ShapeMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        }),
    }
}

fn out_shape(a: &RealArray, b: &RealArray, bc: &Broadcast) -> Vec<usize> {
    if a.shape().is_empty() && b.shape().is_empty() {
        Vec::new()
    } else {
        vec![bc.rows, bc.cols]
    }
}

#[inline]
fn bidx(arr: &RealArray, i: usize, j: usize) -> usize {
    let (r, c) = arr.dims2();
    (if r == 1 { 0 } else { i }) * c + if c == 1 { 0 } else { j }
}

/// Sums a full `rows × cols` gradient down to the (possibly broadcast)
/// shape of `target`.
fn reduce_to(target: &RealArray, g: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; target.len()];
    for i in 0..rows {
        for j in 0..cols {
            out[bidx(target, i, j)] += g[i * cols + j];
        }
    }
    out
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

    pub fn value(&self, v: Var) -> &RealArray {
        &self.nodes[v.0].value
    }

    fn node(&self, v: Var) -> Result<&RealArray, TensorError> {
        self.nodes
            .get(v.0)
            .map(|n| &n.value)
            .ok_or(TensorError::UnknownVar(v.0))
    }

    fn push(&mut self, value: RealArray, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn push_checked(
        &mut self,
        name: &'static str,
        shape: Vec<usize>,
        data: Vec<f64>,
        op: Op,
    ) -> Result<Var, TensorError> {
        finite(name, &data)?;
        Ok(self.push(RealArray::from_parts(shape, data), op))
    }

    /// Records an input array (parameter or constant).
    pub fn leaf(&mut self, value: RealArray) -> Var {
        self.push(value, Op::Leaf)
    }

    /// New leaf holding the current value of `v`; gradients stop here.
    pub fn detach(&mut self, v: Var) -> Result<Var, TensorError> {
        let value = self.node(v)?.clone();
        Ok(self.leaf(value))
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var, TensorError> {
        let (av, bv) = (self.node(a)?, self.node(b)?);
        let bc = broadcast_dims(name, av, bv)?;
        let mut data = Vec::with_capacity(bc.rows * bc.cols);
        for i in 0..bc.rows {
            for j in 0..bc.cols {
                data.push(f(av.data()[bidx(av, i, j)], bv.data()[bidx(bv, i, j)]));
            }
        }
        let shape = out_shape(av, bv, &bc);
        self.push_checked(name, shape, data, op)
    }

    /// Elementwise sum with broadcasting of unit rows/columns.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise product with broadcasting.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    fn unary(
        &mut self,
        name: &'static str,
        a: Var,
        f: impl Fn(f64) -> f64,
        op: Op,
    ) -> Result<Var, TensorError> {
        let av = self.node(a)?;
        let shape = av.shape().to_vec();
        let data = av.data().iter().map(|&x| f(x)).collect();
        self.push_checked(name, shape, data, op)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Result<Var, TensorError> {
        self.unary("scale", a, |x| x * k, Op::Scale(a, k))
    }

    /// Adds a constant to every element.
    pub fn shift(&mut self, a: Var, k: f64) -> Result<Var, TensorError> {
        self.unary("shift", a, |x| x + k, Op::Shift(a))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var, TensorError> {
        self.unary("exp", a, math::exp, Op::Exp(a))
    }

    pub fn ln(&mut self, a: Var) -> Result<Var, TensorError> {
        self.unary("ln", a, math::ln, Op::Ln(a))
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var, TensorError> {
        self.unary("softplus", a, math::softplus, Op::Softplus(a))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Result<Var, TensorError> {
        self.unary(
            "leaky_relu",
            a,
            move |x| if x > 0.0 { x } else { slope * x },
            Op::LeakyRelu(a, slope),
        )
    }

    /// `min(x, 0)`; derivative 1 for `x < 0`, 0 otherwise.
    pub fn clamp_nonpos(&mut self, a: Var) -> Result<Var, TensorError> {
        self.unary("clamp_nonpos", a, |x| x.min(0.0), Op::ClampNonPos(a))
    }

    /// `max(x, 0)`; derivative 1 for `x > 0`, 0 otherwise.
    pub fn clamp_nonneg(&mut self, a: Var) -> Result<Var, TensorError> {
        self.unary("clamp_nonneg", a, |x| x.max(0.0), Op::ClampNonNeg(a))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (av, bv) = (self.node(a)?, self.node(b)?);
        let (n, k) = av.dims2();
        let (k2, m) = bv.dims2();
        if k != k2 {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: av.shape().to_vec(),
                rhs: bv.shape().to_vec(),
            });
        }
        let data = kernels::matmul(av.data(), bv.data(), n, k, m);
        self.push_checked("matmul", vec![n, m], data, Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, TensorError> {
        let t = self.node(a)?.transpose();
        Ok(self.push(t, Op::Transpose(a)))
    }

    /// Softmax along each row, computed with max subtraction.
    pub fn row_softmax(&mut self, a: Var) -> Result<Var, TensorError> {
        let av = self.node(a)?;
        let (r, c) = av.dims2();
        let mut data = Vec::with_capacity(r * c);
        for i in 0..r {
            data.extend(softmax_row(av.row(i)));
        }
        self.push_checked("row_softmax", vec![r, c], data, Op::RowSoftmax(a))
    }

    /// Log-softmax along each row.
    pub fn log_softmax(&mut self, a: Var) -> Result<Var, TensorError> {
        let av = self.node(a)?;
        let (r, c) = av.dims2();
        let mut data = Vec::with_capacity(r * c);
        for i in 0..r {
            let row = av.row(i);
            let lse = log_sum_exp(row);
            data.extend(row.iter().map(|x| x - lse));
        }
        self.push_checked("log_softmax", vec![r, c], data, Op::LogSoftmax(a))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, TensorError> {
        let s: f64 = self.node(a)?.data().iter().sum();
        self.push_checked("sum", Vec::new(), vec![s], Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var, TensorError> {
        let av = self.node(a)?;
        let s = av.data().iter().sum::<f64>() / av.len() as f64;
        self.push_checked("mean", Vec::new(), vec![s], Op::Mean(a))
    }

    /// Sums each row: `r × c → r × 1`.
    pub fn sum_rows(&mut self, a: Var) -> Result<Var, TensorError> {
        let av = self.node(a)?;
        let r = av.rows();
        let data = (0..r).map(|i| av.row(i).iter().sum()).collect();
        self.push_checked("sum_rows", vec![r, 1], data, Op::SumRows(a))
    }

    /// Picks `a[i, idx[i]]` for each row: `r × c → r × 1`.
    pub fn gather_cols(&mut self, a: Var, idx: &[usize]) -> Result<Var, TensorError> {
        let av = self.node(a)?;
        let (r, c) = av.dims2();
        if idx.len() != r {
            return Err(TensorError::ShapeMismatch {
                op: "gather_cols",
                lhs: av.shape().to_vec(),
                rhs: vec![idx.len()],
            });
        }
        let mut data = Vec::with_capacity(r);
        for (i, &j) in idx.iter().enumerate() {
            if j >= c {
                return Err(TensorError::IndexOutOfRange {
                    op: "gather_cols",
                    index: j,
                    extent: c,
                });
            }
            data.push(av.get(i, j));
        }
        self.push_checked(
            "gather_cols",
            vec![r, 1],
            data,
            Op::GatherCols(a, idx.to_vec()),
        )
    }

    /// Row lookup: `table[idx[i], :]` for each `i`.
    pub fn gather_rows(&mut self, table: Var, idx: &[usize]) -> Result<Var, TensorError> {
        let tv = self.node(table)?;
        let (r, c) = tv.dims2();
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            if i >= r {
                return Err(TensorError::IndexOutOfRange {
                    op: "gather_rows",
                    index: i,
                    extent: r,
                });
            }
            data.extend_from_slice(tv.row(i));
        }
        self.push_checked(
            "gather_rows",
            vec![idx.len(), c],
            data,
            Op::GatherRows(table, idx.to_vec()),
        )
    }

    /// Horizontal concatenation of two matrices with equal row counts.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (av, bv) = (self.node(a)?, self.node(b)?);
        let (ar, ac) = av.dims2();
        let (br, bc) = bv.dims2();
        if ar != br {
            return Err(TensorError::ShapeMismatch {
                op: "concat_cols",
                lhs: av.shape().to_vec(),
                rhs: bv.shape().to_vec(),
            });
        }
        let mut data = Vec::with_capacity(ar * (ac + bc));
        for i in 0..ar {
            data.extend_from_slice(av.row(i));
            data.extend_from_slice(bv.row(i));
        }
        self.push_checked("concat_cols", vec![ar, ac + bc], data, Op::ConcatCols(a, b))
    }

    /// Divides each row by `max(‖row‖₂, eps)`.
    pub fn l2_normalize_rows(&mut self, a: Var, eps: f64) -> Result<Var, TensorError> {
        let av = self.node(a)?;
        let (r, c) = av.dims2();
        let mut data = Vec::with_capacity(r * c);
        let mut divisors = Vec::with_capacity(r);
        for i in 0..r {
            let row = av.row(i);
            let n = math::norm(row);
            if !n.is_finite() {
                return Err(TensorError::NonFinite {
                    op: "l2_normalize_rows",
                });
            }
            let (d, floored) = if n >= eps { (n, false) } else { (eps, true) };
            divisors.push((d, floored));
            data.extend(row.iter().map(|x| x / d));
        }
        self.push_checked(
            "l2_normalize_rows",
            vec![r, c],
            data,
            Op::L2NormalizeRows(a, divisors),
        )
    }

    /// Reverse pass from a single-element `root`.
    ///
    /// Returns one gradient slot per node; nodes that do not influence the
    /// root have no gradient.
    pub fn backward(&self, root: Var) -> Result<Gradients, TensorError> {
        let root_value = self.node(root)?;
        if !root_value.is_scalar() {
            return Err(TensorError::NonScalarRoot {
                shape: root_value.shape().to_vec(),
            });
        }
        let mut slots: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        slots[root.0] = Some(vec![1.0]);

        for idx in (0..=root.0).rev() {
            let Some(g) = slots[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            for input in node.op.inputs().into_iter().flatten() {
                if input.0 >= idx {
                    return Err(TensorError::CycleDetected { node: idx });
                }
            }
            self.propagate(idx, &g, &mut slots)?;
            slots[idx] = Some(g);
        }

        let mut out = Vec::with_capacity(self.nodes.len());
        for (i, slot) in slots.into_iter().enumerate() {
            out.push(match slot {
                Some(g) => {
                    finite("backward", &g)?;
                    Some(RealArray::from_parts(
                        self.nodes[i].value.shape().to_vec(),
                        g,
                    ))
                }
                None => None,
            });
        }
        out.resize(self.nodes.len(), None);
        Ok(Gradients { slots: out })
    }

    fn propagate(
        &self,
        idx: usize,
        g: &[f64],
        slots: &mut [Option<Vec<f64>>],
    ) -> Result<(), TensorError> {
        let node = &self.nodes[idx];
        let out = &node.value;
        let (rows, cols) = out.dims2();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                let ga = reduce_to(self.value(*a), g, rows, cols);
                let gb = reduce_to(self.value(*b), g, rows, cols);
                accumulate(slots, *a, ga);
                accumulate(slots, *b, gb);
            }
            Op::Sub(a, b) => {
                let ga = reduce_to(self.value(*a), g, rows, cols);
                let gb: Vec<f64> = reduce_to(self.value(*b), g, rows, cols)
                    .into_iter()
                    .map(|x| -x)
                    .collect();
                accumulate(slots, *a, ga);
                accumulate(slots, *b, gb);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let mut ga_full = vec![0.0; rows * cols];
                let mut gb_full = vec![0.0; rows * cols];
                for i in 0..rows {
                    for j in 0..cols {
                        let k = i * cols + j;
                        ga_full[k] = g[k] * bv.data()[bidx(bv, i, j)];
                        gb_full[k] = g[k] * av.data()[bidx(av, i, j)];
                    }
                }
                let ga = reduce_to(av, &ga_full, rows, cols);
                let gb = reduce_to(bv, &gb_full, rows, cols);
                accumulate(slots, *a, ga);
                accumulate(slots, *b, gb);
            }
            Op::Scale(a, k) => {
                accumulate(slots, *a, g.iter().map(|x| x * k).collect());
            }
            Op::Shift(a) => accumulate(slots, *a, g.to_vec()),
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (n, k) = av.dims2();
                let m = bv.cols();
                let ga = kernels::matmul_bt(g, bv.data(), n, m, k);
                let gb = kernels::matmul_at(av.data(), g, n, k, m);
                accumulate(slots, *a, ga);
                accumulate(slots, *b, gb);
            }
            Op::Transpose(a) => {
                // g is cols×rows of the input's transpose; transpose back.
                let mut ga = vec![0.0; rows * cols];
                for i in 0..rows {
                    for j in 0..cols {
                        ga[j * rows + i] = g[i * cols + j];
                    }
                }
                accumulate(slots, *a, ga);
            }
            Op::Exp(a) => {
                let ga = g.iter().zip(out.data()).map(|(g, y)| g * y).collect();
                accumulate(slots, *a, ga);
            }
            Op::Ln(a) => {
                let x = self.value(*a).data();
                accumulate(slots, *a, g.iter().zip(x).map(|(g, x)| g / x).collect());
            }
            Op::Softplus(a) => {
                let x = self.value(*a).data();
                let ga = g
                    .iter()
                    .zip(x)
                    .map(|(g, &x)| g * math::sigmoid(x))
                    .collect();
                accumulate(slots, *a, ga);
            }
            Op::LeakyRelu(a, slope) => {
                let x = self.value(*a).data();
                let ga = g
                    .iter()
                    .zip(x)
                    .map(|(g, &x)| if x > 0.0 { *g } else { g * slope })
                    .collect();
                accumulate(slots, *a, ga);
            }
            Op::ClampNonPos(a) => {
                let x = self.value(*a).data();
                let ga = g
                    .iter()
                    .zip(x)
                    .map(|(g, &x)| if x < 0.0 { *g } else { 0.0 })
                    .collect();
                accumulate(slots, *a, ga);
            }
            Op::ClampNonNeg(a) => {
                let x = self.value(*a).data();
                let ga = g
                    .iter()
                    .zip(x)
                    .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
                    .collect();
                accumulate(slots, *a, ga);
            }
            Op::RowSoftmax(a) => {
                let mut ga = vec![0.0; rows * cols];
                for i in 0..rows {
                    let y = out.row(i);
                    let gr = &g[i * cols..(i + 1) * cols];
                    let inner: f64 = gr.iter().zip(y).map(|(g, y)| g * y).sum();
                    for j in 0..cols {
                        ga[i * cols + j] = y[j] * (gr[j] - inner);
                    }
                }
                accumulate(slots, *a, ga);
            }
            Op::LogSoftmax(a) => {
                let mut ga = vec![0.0; rows * cols];
                for i in 0..rows {
                    let y = out.row(i);
                    let gr = &g[i * cols..(i + 1) * cols];
                    let total: f64 = gr.iter().sum();
                    for j in 0..cols {
                        ga[i * cols + j] = gr[j] - math::exp(y[j]) * total;
                    }
                }
                accumulate(slots, *a, ga);
            }
            Op::Sum(a) => {
                let n = self.value(*a).len();
                accumulate(slots, *a, vec![g[0]; n]);
            }
            Op::Mean(a) => {
                let n = self.value(*a).len();
                accumulate(slots, *a, vec![g[0] / n as f64; n]);
            }
            Op::SumRows(a) => {
                let (r, c) = self.value(*a).dims2();
                let mut ga = Vec::with_capacity(r * c);
                for &gi in g.iter().take(r) {
                    ga.extend(core::iter::repeat_n(gi, c));
                }
                accumulate(slots, *a, ga);
            }
            Op::GatherCols(a, idx) => {
                let (r, c) = self.value(*a).dims2();
                let mut ga = vec![0.0; r * c];
                for (i, &j) in idx.iter().enumerate() {
                    ga[i * c + j] += g[i];
                }
                accumulate(slots, *a, ga);
            }
            Op::GatherRows(t, idx) => {
                let (r, c) = self.value(*t).dims2();
                let mut gt = vec![0.0; r * c];
                for (i, &row) in idx.iter().enumerate() {
                    for j in 0..c {
                        gt[row * c + j] += g[i * c + j];
                    }
                }
                accumulate(slots, *t, gt);
            }
            Op::ConcatCols(a, b) => {
                let ac = self.value(*a).cols();
                let bc = self.value(*b).cols();
                let mut ga = Vec::with_capacity(rows * ac);
                let mut gb = Vec::with_capacity(rows * bc);
                for i in 0..rows {
                    let gr = &g[i * cols..(i + 1) * cols];
                    ga.extend_from_slice(&gr[..ac]);
                    gb.extend_from_slice(&gr[ac..]);
                }
                accumulate(slots, *a, ga);
                accumulate(slots, *b, gb);
            }
            Op::L2NormalizeRows(a, divisors) => {
                let mut ga = vec![0.0; rows * cols];
                for (i, &(d, floored)) in divisors.iter().enumerate() {
                    let y = out.row(i);
                    let gr = &g[i * cols..(i + 1) * cols];
                    if floored {
                        for j in 0..cols {
                            ga[i * cols + j] = gr[j] / d;
                        }
                    } else {
                        let inner = math::dot(gr, y);
                        for j in 0..cols {
                            ga[i * cols + j] = (gr[j] - y[j] * inner) / d;
                        }
                    }
                }
                accumulate(slots, *a, ga);
            }
        }
        Ok(())
    }
}

fn accumulate(slots: &mut [Option<Vec<f64>>], v: Var, contribution: Vec<f64>) {
    match &mut slots[v.0] {
        Some(existing) => {
            for (e, c) in existing.iter_mut().zip(&contribution) {
                *e += c;
            }
        }
        empty @ None => *empty = Some(contribution),
    }
}

pub(crate) fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + math::ln(row.iter().map(|x| math::exp(x - max)).sum::<f64>())
}

pub(crate) fn softmax_row(row: &[f64]) -> impl Iterator<Item = f64> + '_ {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = row.iter().map(|x| math::exp(x - max)).sum();
    row.iter().map(move |x| math::exp(x - max) / total)
}
