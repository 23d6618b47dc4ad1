//! Reverse-mode differentiation over matrix-valued nodes.
//!
//! The tape is an append-only list of nodes in topological order. Two
//! backward passes are available:
//!
//! * [`Tape::backward`] computes numeric adjoints for every node.
//! * [`Tape::grad_graph`] records the backward pass itself as new nodes, so
//!   the resulting gradients can be fed into further computation and
//!   differentiated again. Only the primitives needed by critic networks
//!   (affine maps, (leaky) ReLU, sums, slicing, elementwise products) have a
//!   recordable backward; anything else yields [`SabrError::Capability`].
//!
//! Activation masks are recorded as constants, which makes the second
//! derivative of (leaky) ReLU zero everywhere.

use std::rc::Rc;

use super::matrix::Matrix;
use crate::error::{Result, SabrError};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    MulConst(Var, Rc<Matrix>),
    Relu(Var),
    LeakyRelu(Var, f64),
    SumRows(Var),
    SumCols(Var),
    BroadcastRows(Var),
    BroadcastCols(Var),
    ConcatCols(Var, Var),
    SliceCols(Var, usize),
    PadCols(Var, usize),
    RowNorm(Var),
    Square(Var),
    Sum(Var),
    Mean(Var),
    /// Mean softmax cross-entropy; the softmax is cached in `Node::aux`.
    SoftmaxXent(Var, Rc<Vec<usize>>),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Transpose(..) => "transpose",
            Op::AddRow(..) => "add_row",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::MulConst(..) => "mul_const",
            Op::Relu(..) => "relu",
            Op::LeakyRelu(..) => "leaky_relu",
            Op::SumRows(..) => "sum_rows",
            Op::SumCols(..) => "sum_cols",
            Op::BroadcastRows(..) => "broadcast_rows",
            Op::BroadcastCols(..) => "broadcast_cols",
            Op::ConcatCols(..) => "concat_cols",
            Op::SliceCols(..) => "slice_cols",
            Op::PadCols(..) => "pad_cols",
            Op::RowNorm(..) => "row_norm",
            Op::Square(..) => "square",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::SoftmaxXent(..) => "softmax_cross_entropy",
        }
    }
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Matrix,
    aux: Option<Matrix>,
    needs_grad: bool,
}

/// Numeric adjoints produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Adjoint of `v`, or zeros of `shape` when `v` does not influence the output.
    pub fn get_or_zeros(&self, v: Var, shape: (usize, usize)) -> Matrix {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Matrix::zeros(shape.0, shape.1))
    }
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn mask_relu(x: &Matrix) -> Matrix {
    x.map(|v| if v > 0.0 { 1.0 } else { 0.0 })
}

fn mask_leaky(x: &Matrix, slope: f64) -> Matrix {
    x.map(|v| if v > 0.0 { 1.0 } else { slope })
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        debug_assert_eq!(m.shape(), (1, 1));
        m.get(0, 0)
    }

    fn push(&mut self, op: Op, value: Matrix, aux: Option<Matrix>) -> Var {
        let needs_grad = match &op {
            Op::Leaf => false,
            _ => self.inputs(&op).iter().any(|i| self.nodes[i.0].needs_grad),
        };
        self.nodes.push(Node {
            op,
            value,
            aux,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn inputs(&self, op: &Op) -> Vec<Var> {
        match *op {
            Op::Leaf => vec![],
            Op::MatMul(a, b)
            | Op::AddRow(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::Div(a, b)
            | Op::ConcatCols(a, b) => vec![a, b],
            Op::Transpose(a)
            | Op::Scale(a, _)
            | Op::AddScalar(a)
            | Op::MulConst(a, _)
            | Op::Relu(a)
            | Op::LeakyRelu(a, _)
            | Op::SumRows(a)
            | Op::SumCols(a)
            | Op::BroadcastRows(a)
            | Op::BroadcastCols(a)
            | Op::SliceCols(a, _)
            | Op::PadCols(a, _)
            | Op::RowNorm(a)
            | Op::Square(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::SoftmaxXent(a, _) => vec![a],
        }
    }

    /// A differentiable leaf (parameter or input we want gradients for).
    pub fn var(&mut self, m: Matrix) -> Var {
        self.nodes.push(Node {
            op: Op::Leaf,
            value: m,
            aux: None,
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, m: Matrix) -> Var {
        self.push(Op::Leaf, m, None)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.push(Op::MatMul(a, b), v, None))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).transpose();
        self.push(Op::Transpose(a), v, None)
    }

    /// `x·W + b` with `b` a `1×h` row broadcast over the batch.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xw = self.matmul(x, w)?;
        self.add_row(xw, b)
    }

    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).add_row(self.value(b))?;
        Ok(self.push(Op::AddRow(a, b), v, None))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).add(self.value(b))?;
        Ok(self.push(Op::Add(a, b), v, None))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).sub(self.value(b))?;
        Ok(self.push(Op::Sub(a, b), v, None))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).hadamard(self.value(b))?;
        Ok(self.push(Op::Mul(a, b), v, None))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).zip_map(self.value(b), |x, y| x / y)?;
        Ok(self.push(Op::Div(a, b), v, None))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).scale(s);
        self.push(Op::Scale(a, s), v, None)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).map(|x| x + s);
        self.push(Op::AddScalar(a), v, None)
    }

    pub fn mul_const(&mut self, a: Var, m: Matrix) -> Result<Var> {
        let v = self.value(a).hadamard(&m)?;
        Ok(self.push(Op::MulConst(a, Rc::new(m)), v, None))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push(Op::Relu(a), v, None)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let v = self.value(a).map(|x| if x > 0.0 { x } else { slope * x });
        self.push(Op::LeakyRelu(a, slope), v, None)
    }

    pub fn sum_rows(&mut self, a: Var) -> Var {
        let v = self.value(a).sum_rows();
        self.push(Op::SumRows(a), v, None)
    }

    pub fn sum_cols(&mut self, a: Var) -> Var {
        let v = self.value(a).sum_cols();
        self.push(Op::SumCols(a), v, None)
    }

    pub fn broadcast_rows(&mut self, a: Var, n: usize) -> Result<Var> {
        if self.value(a).rows() != 1 {
            return Err(SabrError::dim(
                "broadcast_rows",
                self.value(a).shape_str(),
                "1xN",
            ));
        }
        let v = self.value(a).broadcast_rows(n);
        Ok(self.push(Op::BroadcastRows(a), v, None))
    }

    pub fn broadcast_cols(&mut self, a: Var, m: usize) -> Result<Var> {
        if self.value(a).cols() != 1 {
            return Err(SabrError::dim(
                "broadcast_cols",
                self.value(a).shape_str(),
                "Nx1",
            ));
        }
        let v = self.value(a).broadcast_cols(m);
        Ok(self.push(Op::BroadcastCols(a), v, None))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).concat_cols(self.value(b))?;
        Ok(self.push(Op::ConcatCols(a, b), v, None))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let cols = self.value(a).cols();
        if start > end || end > cols {
            return Err(SabrError::dim(
                "slice_cols",
                self.value(a).shape_str(),
                format!("{start}..{end}"),
            ));
        }
        let v = self.value(a).slice_cols(start, end);
        Ok(self.push(Op::SliceCols(a, start), v, None))
    }

    pub fn pad_cols(&mut self, a: Var, start: usize, total: usize) -> Result<Var> {
        if start + self.value(a).cols() > total {
            return Err(SabrError::dim(
                "pad_cols",
                self.value(a).shape_str(),
                format!("{start}+..{total}"),
            ));
        }
        let v = self.value(a).pad_cols(start, total);
        Ok(self.push(Op::PadCols(a, start), v, None))
    }

    /// Per-row L2 norm, `n×1`.
    pub fn row_norm(&mut self, a: Var) -> Var {
        let v = self.value(a).row_norms();
        self.push(Op::RowNorm(a), v, None)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x * x);
        self.push(Op::Square(a), v, None)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Matrix::scalar(self.value(a).sum());
        self.push(Op::Sum(a), v, None)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = Matrix::scalar(self.value(a).mean());
        self.push(Op::Mean(a), v, None)
    }

    /// `Σ a⊙b` as a `1×1` node.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let p = self.mul(a, b)?;
        Ok(self.sum(p))
    }

    /// Mean over rows of `−log softmax(logits)[row, target]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let z = self.value(logits);
        if z.rows() != targets.len() {
            return Err(SabrError::dim(
                "softmax_cross_entropy",
                z.shape_str(),
                format!("{} targets", targets.len()),
            ));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= z.cols()) {
            return Err(SabrError::Usage(format!(
                "target class {bad} outside {} logits",
                z.cols()
            )));
        }
        let probs = softmax_rows(z);
        let mut loss = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            // log p = z_t − logsumexp(z)
            let row = z.row(r);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss += lse - row[t];
        }
        let n = targets.len().max(1) as f64;
        let value = Matrix::scalar(loss / n);
        Ok(self.push(
            Op::SoftmaxXent(logits, Rc::new(targets.to_vec())),
            value,
            Some(probs),
        ))
    }

    fn check_scalar(&self, out: Var) -> Result<()> {
        let shape = self.value(out).shape();
        if shape != (1, 1) {
            return Err(SabrError::Usage(format!(
                "backward requires a scalar output, got {}x{}",
                shape.0, shape.1
            )));
        }
        Ok(())
    }

    /// Numeric adjoints of the scalar `out` with respect to every node.
    pub fn backward(&self, out: Var) -> Result<Gradients> {
        self.check_scalar(out)?;
        let mut grads: Vec<Option<Matrix>> = vec![None; out.0 + 1];
        grads[out.0] = Some(Matrix::scalar(1.0));
        for idx in (0..=out.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            for (input, contrib) in self.numeric_vjp(node, &g)? {
                if !self.nodes[input.0].needs_grad {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => acc.add_assign(&contrib)?,
                    slot @ None => *slot = Some(contrib),
                }
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn numeric_vjp(&self, node: &Node, g: &Matrix) -> Result<Vec<(Var, Matrix)>> {
        let val = |v: Var| &self.nodes[v.0].value;
        Ok(match &node.op {
            Op::Leaf => vec![],
            Op::MatMul(a, b) => vec![(*a, g.matmul_t(val(*b))?), (*b, val(*a).t_matmul(g)?)],
            Op::Transpose(a) => vec![(*a, g.transpose())],
            Op::AddRow(a, b) => vec![(*a, g.clone()), (*b, g.sum_rows())],
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Op::Sub(a, b) => vec![(*a, g.clone()), (*b, g.scale(-1.0))],
            Op::Mul(a, b) => vec![(*a, g.hadamard(val(*b))?), (*b, g.hadamard(val(*a))?)],
            Op::Div(a, b) => {
                let (x, y) = (val(*a), val(*b));
                let ga = g.zip_map(y, |g, y| g / y)?;
                let gb = g.hadamard(x)?.zip_map(y, |gx, y| -gx / (y * y))?;
                vec![(*a, ga), (*b, gb)]
            }
            Op::Scale(a, s) => vec![(*a, g.scale(*s))],
            Op::AddScalar(a) => vec![(*a, g.clone())],
            Op::MulConst(a, m) => vec![(*a, g.hadamard(m)?)],
            Op::Relu(a) => vec![(*a, g.hadamard(&mask_relu(val(*a)))?)],
            Op::LeakyRelu(a, s) => vec![(*a, g.hadamard(&mask_leaky(val(*a), *s))?)],
            Op::SumRows(a) => vec![(*a, g.broadcast_rows(val(*a).rows()))],
            Op::SumCols(a) => vec![(*a, g.broadcast_cols(val(*a).cols()))],
            Op::BroadcastRows(a) => vec![(*a, g.sum_rows())],
            Op::BroadcastCols(a) => vec![(*a, g.sum_cols())],
            Op::ConcatCols(a, b) => {
                let ca = val(*a).cols();
                vec![(*a, g.slice_cols(0, ca)), (*b, g.slice_cols(ca, g.cols()))]
            }
            Op::SliceCols(a, start) => vec![(*a, g.pad_cols(*start, val(*a).cols()))],
            Op::PadCols(a, start) => {
                let ca = val(*a).cols();
                vec![(*a, g.slice_cols(*start, start + ca))]
            }
            Op::RowNorm(a) => {
                let x = val(*a);
                let mut out = Matrix::zeros(x.rows(), x.cols());
                for r in 0..x.rows() {
                    let norm = node.value.get(r, 0);
                    // subgradient 0 at the origin
                    if norm > 0.0 {
                        let k = g.get(r, 0) / norm;
                        for (o, xv) in out.row_mut(r).iter_mut().zip(x.row(r)) {
                            *o = k * xv;
                        }
                    }
                }
                vec![(*a, out)]
            }
            Op::Square(a) => vec![(*a, g.hadamard(&val(*a).scale(2.0))?)],
            Op::Sum(a) => {
                let (r, c) = val(*a).shape();
                vec![(*a, Matrix::filled(r, c, g.get(0, 0)))]
            }
            Op::Mean(a) => {
                let (r, c) = val(*a).shape();
                let n = (r * c).max(1) as f64;
                vec![(*a, Matrix::filled(r, c, g.get(0, 0) / n))]
            }
            Op::SoftmaxXent(a, targets) => {
                let mut d = node.aux.clone().expect("softmax cached");
                let n = targets.len().max(1) as f64;
                for (r, &t) in targets.iter().enumerate() {
                    let row = d.row_mut(r);
                    row[t] -= 1.0;
                }
                vec![(*a, d.scale(g.get(0, 0) / n))]
            }
        })
    }

    /// Records the gradient of scalar `out` w.r.t. each of `wrt` as new
    /// differentiable nodes.
    ///
    /// Only nodes on a path from `wrt` to `out` are differentiated. Inputs in
    /// `wrt` that do not influence `out` get a constant zero node.
    pub fn grad_graph(&mut self, out: Var, wrt: &[Var]) -> Result<Vec<Var>> {
        self.check_scalar(out)?;
        let mut reaches = vec![false; out.0 + 1];
        for &w in wrt {
            if w.0 <= out.0 {
                reaches[w.0] = true;
            }
        }
        for idx in 0..=out.0 {
            if !reaches[idx] {
                reaches[idx] = self
                    .inputs(&self.nodes[idx].op)
                    .iter()
                    .any(|i| reaches[i.0]);
            }
        }
        let mut grads: Vec<Option<Var>> = vec![None; out.0 + 1];
        grads[out.0] = Some(self.constant(Matrix::scalar(1.0)));
        for idx in (0..=out.0).rev() {
            if !reaches[idx] || !self.nodes[idx].needs_grad {
                continue;
            }
            let Some(g) = grads[idx] else { continue };
            let op = self.nodes[idx].op.clone();
            let need = |v: Var| reaches[v.0];
            let contribs = self.symbolic_vjp(&op, g, &need)?;
            for (input, contrib) in contribs {
                grads[input.0] = Some(match grads[input.0] {
                    Some(prev) => self.add(prev, contrib)?,
                    None => contrib,
                });
            }
        }
        Ok(wrt
            .iter()
            .map(|&w| match grads.get(w.0).copied().flatten() {
                Some(g) => g,
                None => {
                    let (r, c) = self.value(w).shape();
                    self.constant(Matrix::zeros(r, c))
                }
            })
            .collect())
    }

    fn symbolic_vjp(
        &mut self,
        op: &Op,
        g: Var,
        need: &dyn Fn(Var) -> bool,
    ) -> Result<Vec<(Var, Var)>> {
        let mut out = Vec::with_capacity(2);
        match *op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if need(a) {
                    let bt = self.transpose(b);
                    out.push((a, self.matmul(g, bt)?));
                }
                if need(b) {
                    let at = self.transpose(a);
                    out.push((b, self.matmul(at, g)?));
                }
            }
            Op::Transpose(a) => out.push((a, self.transpose(g))),
            Op::AddRow(a, b) => {
                if need(a) {
                    out.push((a, g));
                }
                if need(b) {
                    out.push((b, self.sum_rows(g)));
                }
            }
            Op::Add(a, b) => {
                if need(a) {
                    out.push((a, g));
                }
                if need(b) {
                    out.push((b, g));
                }
            }
            Op::Sub(a, b) => {
                if need(a) {
                    out.push((a, g));
                }
                if need(b) {
                    out.push((b, self.scale(g, -1.0)));
                }
            }
            Op::Mul(a, b) => {
                if need(a) {
                    out.push((a, self.mul(g, b)?));
                }
                if need(b) {
                    out.push((b, self.mul(g, a)?));
                }
            }
            Op::Scale(a, s) => out.push((a, self.scale(g, s))),
            Op::AddScalar(a) => out.push((a, g)),
            Op::MulConst(a, ref m) => {
                let m = (**m).clone();
                out.push((a, self.mul_const(g, m)?));
            }
            Op::Relu(a) => {
                let mask = mask_relu(self.value(a));
                out.push((a, self.mul_const(g, mask)?));
            }
            Op::LeakyRelu(a, s) => {
                let mask = mask_leaky(self.value(a), s);
                out.push((a, self.mul_const(g, mask)?));
            }
            Op::SumRows(a) => {
                let n = self.value(a).rows();
                out.push((a, self.broadcast_rows(g, n)?));
            }
            Op::SumCols(a) => {
                let m = self.value(a).cols();
                out.push((a, self.broadcast_cols(g, m)?));
            }
            Op::BroadcastRows(a) => out.push((a, self.sum_rows(g))),
            Op::BroadcastCols(a) => out.push((a, self.sum_cols(g))),
            Op::ConcatCols(a, b) => {
                let ca = self.value(a).cols();
                let total = self.value(g).cols();
                if need(a) {
                    out.push((a, self.slice_cols(g, 0, ca)?));
                }
                if need(b) {
                    out.push((b, self.slice_cols(g, ca, total)?));
                }
            }
            Op::SliceCols(a, start) => {
                let total = self.value(a).cols();
                out.push((a, self.pad_cols(g, start, total)?));
            }
            Op::PadCols(a, start) => {
                let ca = self.value(a).cols();
                out.push((a, self.slice_cols(g, start, start + ca)?));
            }
            Op::Square(a) => {
                let two_a = self.scale(a, 2.0);
                out.push((a, self.mul(g, two_a)?));
            }
            Op::Sum(a) | Op::Mean(a) => {
                let (r, c) = self.value(a).shape();
                let col = self.broadcast_rows(g, r)?;
                let full = self.broadcast_cols(col, c)?;
                let full = if matches!(op, Op::Mean(_)) {
                    self.scale(full, 1.0 / (r * c).max(1) as f64)
                } else {
                    full
                };
                out.push((a, full));
            }
            Op::Div(..) | Op::RowNorm(..) | Op::SoftmaxXent(..) => {
                return Err(SabrError::Capability(format!(
                    "`{}` has no recordable backward; second-order gradients are limited to affine, activation, sum and slicing primitives",
                    op.name()
                )))
            }
        }
        Ok(out)
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(z: &Matrix) -> Matrix {
    let mut out = z.clone();
    for r in 0..z.rows() {
        let row = out.row_mut(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    out
}
