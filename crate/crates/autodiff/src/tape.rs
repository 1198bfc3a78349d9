//! The recording tape.
//!
//! Every operation appends a node holding its value and the indices of its
//! parents; [`Tape::backward`] walks the nodes in reverse insertion order,
//! which is a valid reverse topological order because parents always
//! precede their children.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::Arc;

use crate::functions as fun;
use crate::tensor::{matmul_nn, matmul_nt, matmul_tn, Tensor};
use crate::AdError;

static NEXT_TAPE_ID: AtomicU32 = AtomicU32::new(1);

/// Handle to a node on a particular tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u32,
    index: u32,
}

impl Var {
    pub fn index(self) -> usize {
        self.index as usize
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    AddRow(usize, usize),
    MulScalar(usize, usize),
    Scale(usize, f64),
    Offset(usize),
    Exp(usize),
    Ln(usize),
    Sqrt(usize),
    Square(usize),
    Sigmoid(usize),
    Silu(usize, Arc<Tensor>),
    SiluD1(usize, usize, Arc<Tensor>),
    SiluD2(usize, usize, Option<usize>, Arc<Tensor>),
    Relu(usize),
    Softplus(usize),
    Abs(usize),
    MatMulNt(usize, usize),
    SliceCols(usize, usize),
    GatherRows(usize, Vec<usize>),
    ScatterAddRows(usize, Vec<usize>),
    Reshape(usize),
    PadCols(usize, usize),
    ReverseCols(usize),
    ConcatCols(Vec<usize>),
    SumAll(usize),
    RowSum(usize),
    RowMin(usize, Vec<usize>),
    Minimum(usize, usize),
    Maximum(usize, usize),
    SmoothL1(usize, usize, f64),
}

impl Op {
    fn parents(&self) -> Vec<usize> {
        use Op::*;
        match self {
            Leaf => vec![],
            Add(a, b) | Sub(a, b) | Mul(a, b) | Div(a, b) | AddRow(a, b) | MulScalar(a, b)
            | SiluD1(a, b, _) | MatMulNt(a, b) | Minimum(a, b) | Maximum(a, b)
            | SmoothL1(a, b, _) => vec![*a, *b],
            SiluD2(a, b, c, _) => {
                let mut v = vec![*a, *b];
                v.extend(c);
                v
            }
            Scale(a, _) | Offset(a) | Exp(a) | Ln(a) | Sqrt(a) | Square(a) | Sigmoid(a)
            | Silu(a, _) | Relu(a) | Softplus(a) | Abs(a) | SliceCols(a, _) | GatherRows(a, _)
            | ScatterAddRows(a, _) | Reshape(a) | PadCols(a, _) | ReverseCols(a) | SumAll(a)
            | RowSum(a) | RowMin(a, _) => vec![*a],
            ConcatCols(parts) => parts.clone(),
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Arena of recorded operations; one per evaluation context.
pub struct Tape {
    id: u32,
    nodes: Vec<Node>,
    adjoints: Vec<Option<Tensor>>,
    swept: bool,
    /// Sigmoids of nodes fed to the SiLU family, shared by its jet ops.
    sigmoids: HashMap<usize, Arc<Tensor>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            adjoints: Vec::new(),
            swept: false,
            sigmoids: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn idx(&self, v: Var) -> usize {
        assert!(
            v.tape == self.id && (v.index as usize) < self.nodes.len(),
            "variable does not belong to this tape"
        );
        v.index as usize
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let requires_grad = op
            .parents()
            .iter()
            .any(|&p| self.nodes[p].requires_grad);
        self.push_node(value, op, requires_grad)
    }

    fn push_node(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        let index = self.nodes.len() as u32;
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.adjoints.push(None);
        Var {
            tape: self.id,
            index,
        }
    }

    /// A differentiable input.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push_node(value, Op::Leaf, true)
    }

    /// A non-differentiable input.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_node(value, Op::Leaf, false)
    }

    pub fn var(&mut self, value: f64) -> Var {
        self.param(Tensor::scalar(value))
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.constant(Tensor::scalar(value))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[self.idx(v)].value
    }

    pub fn item(&self, v: Var) -> f64 {
        self.value(v).item()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[self.idx(v)].requires_grad
    }

    /// Parents of a node, in operand order.
    pub fn parents(&self, v: Var) -> Vec<Var> {
        self.nodes[self.idx(v)]
            .op
            .parents()
            .into_iter()
            .map(|index| Var {
                tape: self.id,
                index: index as u32,
            })
            .collect()
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: impl FnOnce(usize) -> Op) -> Var {
        let ia = self.idx(a);
        let value = self.nodes[ia].value.map(f);
        self.push(value, op(ia))
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: impl FnOnce(usize, usize) -> Op,
    ) -> Var {
        let (ia, ib) = (self.idx(a), self.idx(b));
        let value = self.nodes[ia].value.zip_map(&self.nodes[ib].value, f);
        self.push(value, op(ia, ib))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x - y, Op::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x * y, Op::Mul)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x / y, Op::Div)
    }

    pub fn minimum(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, f64::min, Op::Minimum)
    }

    pub fn maximum(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, f64::max, Op::Maximum)
    }

    /// Elementwise smooth-L1 of `a - b`.
    pub fn smooth_l1(&mut self, a: Var, b: Var, beta: f64) -> Var {
        assert!(beta > 0.0, "smooth_l1 needs beta > 0");
        self.binary(
            a,
            b,
            move |x, y| fun::smooth_l1(x - y, beta),
            move |ia, ib| Op::SmoothL1(ia, ib, beta),
        )
    }

    /// `a + row`, broadcasting a `1 x cols` row over every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (ia, ir) = (self.idx(a), self.idx(row));
        let (av, rv) = (&self.nodes[ia].value, &self.nodes[ir].value);
        assert_eq!(rv.rows(), 1, "add_row expects a single row");
        assert_eq!(av.cols(), rv.cols(), "add_row width mismatch");
        let mut out = av.clone();
        let cols = av.cols();
        for chunk in out.data_mut().chunks_mut(cols) {
            for (o, r) in chunk.iter_mut().zip(rv.data()) {
                *o += *r;
            }
        }
        self.push(out, Op::AddRow(ia, ir))
    }

    /// `a * s` for a `1 x 1` node `s`.
    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Var {
        let (ia, is) = (self.idx(a), self.idx(s));
        let sv = self.nodes[is].value.item();
        let value = self.nodes[ia].value.map(|x| x * sv);
        self.push(value, Op::MulScalar(ia, is))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| x * c, |ia| Op::Scale(ia, c))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn offset(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| x + c, Op::Offset)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp)
    }

    pub fn ln(&mut self, a: Var) -> Result<Var, AdError> {
        if let Some(&bad) = self.value(a).data().iter().find(|v| !(**v > 0.0)) {
            return Err(AdError::Domain {
                op: "ln",
                value: bad,
            });
        }
        Ok(self.unary(a, f64::ln, Op::Ln))
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var, AdError> {
        if let Some(&bad) = self.value(a).data().iter().find(|v| !(**v > 0.0)) {
            return Err(AdError::Domain {
                op: "sqrt",
                value: bad,
            });
        }
        Ok(self.unary(a, f64::sqrt, Op::Sqrt))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, fun::sigmoid, Op::Sigmoid)
    }

    fn sigmoid_of(&mut self, i: usize) -> Arc<Tensor> {
        let nodes = &self.nodes;
        self.sigmoids
            .entry(i)
            .or_insert_with(|| Arc::new(nodes[i].value.map(fun::sigmoid)))
            .clone()
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let ia = self.idx(a);
        let s = self.sigmoid_of(ia);
        let value = self.nodes[ia].value.zip_map(&s, |x, s| x * s);
        self.push(value, Op::Silu(ia, s))
    }

    /// `silu'(h) * h1`, the first-order jet component of `silu(h)`.
    pub fn silu_jet1(&mut self, h: Var, h1: Var) -> Var {
        let (ih, i1) = (self.idx(h), self.idx(h1));
        let s = self.sigmoid_of(ih);
        let hv = &self.nodes[ih].value;
        let d1 = &self.nodes[i1].value;
        assert_eq!(hv.shape(), d1.shape(), "silu_jet1 shape mismatch");
        let mut value = hv.zip_map(&s, fun::silu_d1_given);
        value.data_mut().iter_mut().zip(d1.data()).for_each(|(o, d)| *o *= d);
        self.push(value, Op::SiluD1(ih, i1, s))
    }

    /// `silu''(h) * h1² + silu'(h) * h2`; `h2 = None` means `h2 ≡ 0`.
    pub fn silu_jet2(&mut self, h: Var, h1: Var, h2: Option<Var>) -> Var {
        let (ih, i1) = (self.idx(h), self.idx(h1));
        let i2 = h2.map(|v| self.idx(v));
        let s = self.sigmoid_of(ih);
        let hv = &self.nodes[ih].value;
        let d1 = &self.nodes[i1].value;
        assert_eq!(hv.shape(), d1.shape(), "silu_jet2 shape mismatch");
        let mut value = hv.zip_map(&s, fun::silu_d2_given);
        value.data_mut().iter_mut().zip(d1.data()).for_each(|(o, d)| *o *= d * d);
        if let Some(i2) = i2 {
            let d2 = &self.nodes[i2].value;
            assert_eq!(hv.shape(), d2.shape(), "silu_jet2 shape mismatch");
            for (k, o) in value.data_mut().iter_mut().enumerate() {
                *o += fun::silu_d1_given(hv.data()[k], s.data()[k]) * d2.data()[k];
            }
        }
        self.push(value, Op::SiluD2(ih, i1, i2, s))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Op::Relu)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, fun::softplus, Op::Softplus)
    }

    /// `|a|`; the derivative at exactly zero is taken as +1.
    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, f64::abs, Op::Abs)
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let (ia, ib) = (self.idx(a), self.idx(b));
        let value = matmul_nt(&self.nodes[ia].value, &self.nodes[ib].value);
        self.push(value, Op::MatMulNt(ia, ib))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let ia = self.idx(a);
        let av = &self.nodes[ia].value;
        assert!(start + len <= av.cols(), "slice_cols out of range");
        let mut data = Vec::with_capacity(av.rows() * len);
        for r in 0..av.rows() {
            data.extend_from_slice(&av.row_slice(r)[start..start + len]);
        }
        let value = Tensor::new(av.rows(), len, data);
        self.push(value, Op::SliceCols(ia, start))
    }

    pub fn gather_rows(&mut self, a: Var, rows: &[usize]) -> Var {
        let ia = self.idx(a);
        let av = &self.nodes[ia].value;
        let mut data = Vec::with_capacity(rows.len() * av.cols());
        for &r in rows {
            data.extend_from_slice(av.row_slice(r));
        }
        let value = Tensor::new(rows.len(), av.cols(), data);
        self.push(value, Op::GatherRows(ia, rows.to_vec()))
    }

    /// `out[targets[r]] += a[r]` into an `n_out`-row result.
    pub fn scatter_add_rows(&mut self, a: Var, targets: &[usize], n_out: usize) -> Var {
        let ia = self.idx(a);
        let av = &self.nodes[ia].value;
        assert_eq!(targets.len(), av.rows(), "scatter_add_rows index length");
        let cols = av.cols();
        let mut out = Tensor::zeros(n_out, cols);
        for (r, &t) in targets.iter().enumerate() {
            let dst = &mut out.data_mut()[t * cols..(t + 1) * cols];
            for (o, v) in dst.iter_mut().zip(av.row_slice(r)) {
                *o += *v;
            }
        }
        self.push(out, Op::ScatterAddRows(ia, targets.to_vec()))
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let ia = self.idx(a);
        let value = self.nodes[ia].value.clone().reshaped(rows, cols);
        self.push(value, Op::Reshape(ia))
    }

    /// Zero-pads `left` columns before and `right` columns after.
    pub fn pad_cols(&mut self, a: Var, left: usize, right: usize) -> Var {
        let ia = self.idx(a);
        let av = &self.nodes[ia].value;
        let cols = av.cols() + left + right;
        let mut out = Tensor::zeros(av.rows(), cols);
        for r in 0..av.rows() {
            out.data_mut()[r * cols + left..r * cols + left + av.cols()]
                .copy_from_slice(av.row_slice(r));
        }
        self.push(out, Op::PadCols(ia, left))
    }

    pub fn reverse_cols(&mut self, a: Var) -> Var {
        let ia = self.idx(a);
        let av = &self.nodes[ia].value;
        let mut out = av.clone();
        let cols = av.cols();
        for chunk in out.data_mut().chunks_mut(cols.max(1)) {
            chunk.reverse();
        }
        self.push(out, Op::ReverseCols(ia))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let idx: Vec<usize> = parts.iter().map(|&p| self.idx(p)).collect();
        assert!(!idx.is_empty(), "concat_cols needs at least one part");
        let rows = self.nodes[idx[0]].value.rows();
        let cols: usize = idx.iter().map(|&i| self.nodes[i].value.cols()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &i in &idx {
                let v = &self.nodes[i].value;
                assert_eq!(v.rows(), rows, "concat_cols row mismatch");
                data.extend_from_slice(v.row_slice(r));
            }
        }
        self.push(Tensor::new(rows, cols, data), Op::ConcatCols(idx))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let ia = self.idx(a);
        let value = Tensor::scalar(self.nodes[ia].value.sum());
        self.push(value, Op::SumAll(ia))
    }

    pub fn row_sum(&mut self, a: Var) -> Var {
        let ia = self.idx(a);
        let av = &self.nodes[ia].value;
        let sums = (0..av.rows()).map(|r| av.row_slice(r).iter().sum()).collect();
        self.push(Tensor::column(sums), Op::RowSum(ia))
    }

    /// Row-wise minimum; the gradient goes to the first minimizing column.
    pub fn row_min(&mut self, a: Var) -> Var {
        let ia = self.idx(a);
        let av = &self.nodes[ia].value;
        assert!(av.cols() > 0, "row_min of an empty row");
        let mut mins = Vec::with_capacity(av.rows());
        let mut arg = Vec::with_capacity(av.rows());
        for r in 0..av.rows() {
            let row = av.row_slice(r);
            let mut best = 0;
            for (c, &v) in row.iter().enumerate() {
                if v < row[best] {
                    best = c;
                }
            }
            mins.push(row[best]);
            arg.push(best);
        }
        self.push(Tensor::column(mins), Op::RowMin(ia, arg))
    }

    /// Runs the reverse sweep from a `1 x 1` output, seeding its adjoint
    /// with 1. Adjoints are retained for leaves only.
    pub fn backward(&mut self, output: Var) -> Result<(), AdError> {
        if output.tape != self.id || output.index() >= self.nodes.len() {
            return Err(AdError::DetachedInput);
        }
        if self.swept {
            return Err(AdError::AlreadySwept);
        }
        let out = output.index();
        if self.nodes[out].value.shape() != (1, 1) {
            return Err(AdError::NonScalarOutput(self.nodes[out].value.shape()));
        }
        self.swept = true;
        self.adjoints[out] = Some(Tensor::scalar(1.0));
        for i in (0..=out).rev() {
            let (lower, upper) = self.adjoints.split_at_mut(i);
            let node = &self.nodes[i];
            let g = match node.op {
                Op::Leaf => continue,
                _ => match upper[0].take() {
                    Some(g) => g,
                    None => continue,
                },
            };
            backprop(&self.nodes, i, &g, lower);
        }
        Ok(())
    }

    /// Adjoint of a leaf after [`Tape::backward`]; `None` if unreached.
    pub fn adjoint(&self, v: Var) -> Option<&Tensor> {
        self.adjoints[self.idx(v)].as_ref()
    }

    /// Clears adjoints so the tape can be swept again.
    pub fn reset(&mut self) {
        self.adjoints.iter_mut().for_each(|a| *a = None);
        self.swept = false;
    }

    /// `∂output/∂input` for scalar inputs; the tape is reset afterward.
    pub fn gradient(&mut self, output: Var, inputs: &[Var]) -> Result<Vec<f64>, AdError> {
        let grads = self.gradient_tensors(output, inputs)?;
        grads
            .into_iter()
            .map(|g| {
                if g.shape() == (1, 1) {
                    Ok(g.item())
                } else {
                    Err(AdError::NonScalarInput(g.shape()))
                }
            })
            .collect()
    }

    /// Tensor-valued gradients; unreached inputs get zeros.
    pub fn gradient_tensors(
        &mut self,
        output: Var,
        inputs: &[Var],
    ) -> Result<Vec<Tensor>, AdError> {
        for v in inputs {
            if v.tape != self.id || v.index() >= self.nodes.len() {
                return Err(AdError::DetachedInput);
            }
        }
        self.backward(output)?;
        let out = inputs
            .iter()
            .map(|&v| {
                let shape = self.nodes[v.index()].value.shape();
                self.adjoints[v.index()]
                    .clone()
                    .unwrap_or_else(|| Tensor::zeros(shape.0, shape.1))
            })
            .collect();
        self.reset();
        Ok(out)
    }
}

fn accumulate(nodes: &[Node], adjoints: &mut [Option<Tensor>], target: usize, delta: Tensor) {
    if !nodes[target].requires_grad {
        return;
    }
    match &mut adjoints[target] {
        Some(acc) => acc.add_assign(&delta),
        slot @ None => *slot = Some(delta),
    }
}

fn backprop(nodes: &[Node], i: usize, g: &Tensor, adj: &mut [Option<Tensor>]) {
    let val = |j: usize| &nodes[j].value;
    let wants = |j: usize| nodes[j].requires_grad;
    let out = &nodes[i].value;
    match &nodes[i].op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            if wants(*a) {
                accumulate(nodes, adj, *a, g.clone());
            }
            if wants(*b) {
                accumulate(nodes, adj, *b, g.clone());
            }
        }
        Op::Sub(a, b) => {
            if wants(*a) {
                accumulate(nodes, adj, *a, g.clone());
            }
            if wants(*b) {
                accumulate(nodes, adj, *b, g.map(|x| -x));
            }
        }
        Op::Mul(a, b) => {
            if wants(*a) {
                accumulate(nodes, adj, *a, g.zip_map(val(*b), |x, y| x * y));
            }
            if wants(*b) {
                accumulate(nodes, adj, *b, g.zip_map(val(*a), |x, y| x * y));
            }
        }
        Op::Div(a, b) => {
            if wants(*a) {
                accumulate(nodes, adj, *a, g.zip_map(val(*b), |x, y| x / y));
            }
            if wants(*b) {
                // d(a/b)/db = -out / b
                let t = g.zip_map(out, |x, o| x * o);
                accumulate(nodes, adj, *b, t.zip_map(val(*b), |x, y| -x / y));
            }
        }
        Op::AddRow(a, r) => {
            if wants(*a) {
                accumulate(nodes, adj, *a, g.clone());
            }
            if wants(*r) {
                let cols = g.cols();
                let mut sums = vec![0.0; cols];
                for chunk in g.data().chunks(cols.max(1)) {
                    for (s, v) in sums.iter_mut().zip(chunk) {
                        *s += *v;
                    }
                }
                accumulate(nodes, adj, *r, Tensor::row(sums));
            }
        }
        Op::MulScalar(a, s) => {
            let sv = val(*s).item();
            if wants(*a) {
                accumulate(nodes, adj, *a, g.map(|x| x * sv));
            }
            if wants(*s) {
                let dot: f64 = g.data().iter().zip(val(*a).data()).map(|(x, y)| x * y).sum();
                accumulate(nodes, adj, *s, Tensor::scalar(dot));
            }
        }
        Op::Scale(a, c) => accumulate(nodes, adj, *a, g.map(|x| x * c)),
        Op::Offset(a) => accumulate(nodes, adj, *a, g.clone()),
        Op::Exp(a) => accumulate(nodes, adj, *a, g.zip_map(out, |x, o| x * o)),
        Op::Ln(a) => accumulate(nodes, adj, *a, g.zip_map(val(*a), |x, y| x / y)),
        Op::Sqrt(a) => accumulate(nodes, adj, *a, g.zip_map(out, |x, o| 0.5 * x / o)),
        Op::Square(a) => accumulate(nodes, adj, *a, g.zip_map(val(*a), |x, y| 2.0 * x * y)),
        Op::Sigmoid(a) => accumulate(nodes, adj, *a, g.zip_map(out, |x, s| x * s * (1.0 - s))),
        Op::Silu(a, s) => {
            let mut t = g.zip_map(val(*a), |x, h| x * h);
            for ((o, &x), &sk) in t.data_mut().iter_mut().zip(g.data()).zip(s.data()) {
                // g·silu'(h) = g·s(1 + h(1 - s)) = g·s + (g·h)·s(1 - s)
                *o = x * sk + *o * sk * (1.0 - sk);
            }
            accumulate(nodes, adj, *a, t);
        }
        Op::SiluD1(h, h1, s) => {
            let (hv, d1) = (val(*h), val(*h1));
            if wants(*h) {
                let mut t = g.clone();
                for k in 0..t.len() {
                    t.data_mut()[k] *= fun::silu_d2_given(hv.data()[k], s.data()[k]) * d1.data()[k];
                }
                accumulate(nodes, adj, *h, t);
            }
            if wants(*h1) {
                let mut t = g.clone();
                for k in 0..t.len() {
                    t.data_mut()[k] *= fun::silu_d1_given(hv.data()[k], s.data()[k]);
                }
                accumulate(nodes, adj, *h1, t);
            }
        }
        Op::SiluD2(h, h1, h2, s) => {
            let (hv, d1) = (val(*h), val(*h1));
            let d2 = h2.map(val);
            if wants(*h) {
                let mut t = Tensor::zeros(hv.rows(), hv.cols());
                for k in 0..t.len() {
                    let (x, sk) = (hv.data()[k], s.data()[k]);
                    let a = d1.data()[k];
                    let mut v = fun::silu_d3_given(x, sk) * a * a;
                    if let Some(d2) = d2 {
                        v += fun::silu_d2_given(x, sk) * d2.data()[k];
                    }
                    t.data_mut()[k] = g.data()[k] * v;
                }
                accumulate(nodes, adj, *h, t);
            }
            if wants(*h1) {
                let mut t = g.clone();
                for k in 0..t.len() {
                    t.data_mut()[k] *= 2.0 * fun::silu_d2_given(hv.data()[k], s.data()[k]) * d1.data()[k];
                }
                accumulate(nodes, adj, *h1, t);
            }
            if let Some(h2) = h2 {
                if wants(*h2) {
                    let mut t = g.clone();
                    for k in 0..t.len() {
                        t.data_mut()[k] *= fun::silu_d1_given(hv.data()[k], s.data()[k]);
                    }
                    accumulate(nodes, adj, *h2, t);
                }
            }
        }
        Op::Relu(a) => accumulate(
            nodes,
            adj,
            *a,
            g.zip_map(val(*a), |x, h| if h > 0.0 { x } else { 0.0 }),
        ),
        Op::Softplus(a) => accumulate(
            nodes,
            adj,
            *a,
            g.zip_map(val(*a), |x, h| x * fun::sigmoid(h)),
        ),
        Op::Abs(a) => accumulate(
            nodes,
            adj,
            *a,
            g.zip_map(val(*a), |x, h| if h >= 0.0 { x } else { -x }),
        ),
        Op::MatMulNt(a, b) => {
            if wants(*a) {
                accumulate(nodes, adj, *a, matmul_nn(g, val(*b)));
            }
            if wants(*b) {
                accumulate(nodes, adj, *b, matmul_tn(g, val(*a)));
            }
        }
        Op::SliceCols(a, start) => {
            let av = val(*a);
            let mut t = Tensor::zeros(av.rows(), av.cols());
            let (cols, len) = (av.cols(), g.cols());
            for r in 0..av.rows() {
                t.data_mut()[r * cols + start..r * cols + start + len]
                    .copy_from_slice(g.row_slice(r));
            }
            accumulate(nodes, adj, *a, t);
        }
        Op::GatherRows(a, rows) => {
            let av = val(*a);
            let cols = av.cols();
            let mut t = Tensor::zeros(av.rows(), cols);
            for (k, &r) in rows.iter().enumerate() {
                let dst = &mut t.data_mut()[r * cols..(r + 1) * cols];
                for (o, v) in dst.iter_mut().zip(g.row_slice(k)) {
                    *o += *v;
                }
            }
            accumulate(nodes, adj, *a, t);
        }
        Op::ScatterAddRows(a, targets) => {
            let cols = g.cols();
            let mut data = Vec::with_capacity(targets.len() * cols);
            for &t in targets {
                data.extend_from_slice(g.row_slice(t));
            }
            accumulate(nodes, adj, *a, Tensor::new(targets.len(), cols, data));
        }
        Op::Reshape(a) => {
            let (r, c) = val(*a).shape();
            accumulate(nodes, adj, *a, g.clone().reshaped(r, c));
        }
        Op::PadCols(a, left) => {
            let av = val(*a);
            let mut data = Vec::with_capacity(av.len());
            for r in 0..av.rows() {
                data.extend_from_slice(&g.row_slice(r)[*left..*left + av.cols()]);
            }
            accumulate(nodes, adj, *a, Tensor::new(av.rows(), av.cols(), data));
        }
        Op::ReverseCols(a) => {
            let mut t = g.clone();
            let cols = t.cols();
            for chunk in t.data_mut().chunks_mut(cols.max(1)) {
                chunk.reverse();
            }
            accumulate(nodes, adj, *a, t);
        }
        Op::ConcatCols(parts) => {
            let mut offset = 0;
            for &p in parts {
                let pc = val(p).cols();
                if wants(p) {
                    let mut data = Vec::with_capacity(g.rows() * pc);
                    for r in 0..g.rows() {
                        data.extend_from_slice(&g.row_slice(r)[offset..offset + pc]);
                    }
                    accumulate(nodes, adj, p, Tensor::new(g.rows(), pc, data));
                }
                offset += pc;
            }
        }
        Op::SumAll(a) => {
            let (r, c) = val(*a).shape();
            accumulate(nodes, adj, *a, Tensor::filled(r, c, g.item()));
        }
        Op::RowSum(a) => {
            let (r, c) = val(*a).shape();
            let mut t = Tensor::zeros(r, c);
            for row in 0..r {
                let gv = g.data()[row];
                t.data_mut()[row * c..(row + 1) * c].iter_mut().for_each(|v| *v = gv);
            }
            accumulate(nodes, adj, *a, t);
        }
        Op::RowMin(a, arg) => {
            let (r, c) = val(*a).shape();
            let mut t = Tensor::zeros(r, c);
            for (row, &col) in arg.iter().enumerate() {
                t.data_mut()[row * c + col] = g.data()[row];
            }
            accumulate(nodes, adj, *a, t);
        }
        Op::Minimum(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            if wants(*a) {
                let t = Tensor::new(
                    g.rows(),
                    g.cols(),
                    (0..g.len())
                        .map(|k| if av.data()[k] <= bv.data()[k] { g.data()[k] } else { 0.0 })
                        .collect(),
                );
                accumulate(nodes, adj, *a, t);
            }
            if wants(*b) {
                let t = Tensor::new(
                    g.rows(),
                    g.cols(),
                    (0..g.len())
                        .map(|k| if av.data()[k] <= bv.data()[k] { 0.0 } else { g.data()[k] })
                        .collect(),
                );
                accumulate(nodes, adj, *b, t);
            }
        }
        Op::Maximum(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            if wants(*a) {
                let t = Tensor::new(
                    g.rows(),
                    g.cols(),
                    (0..g.len())
                        .map(|k| if av.data()[k] >= bv.data()[k] { g.data()[k] } else { 0.0 })
                        .collect(),
                );
                accumulate(nodes, adj, *a, t);
            }
            if wants(*b) {
                let t = Tensor::new(
                    g.rows(),
                    g.cols(),
                    (0..g.len())
                        .map(|k| if av.data()[k] >= bv.data()[k] { 0.0 } else { g.data()[k] })
                        .collect(),
                );
                accumulate(nodes, adj, *b, t);
            }
        }
        Op::SmoothL1(a, b, beta) => {
            let e = val(*a).zip_map(val(*b), |x, y| x - y);
            let t = g.zip_map(&e, |x, err| x * fun::smooth_l1_grad(err, *beta));
            if wants(*b) {
                accumulate(nodes, adj, *b, t.map(|x| -x));
            }
            if wants(*a) {
                accumulate(nodes, adj, *a, t);
            }
        }
    }
}
