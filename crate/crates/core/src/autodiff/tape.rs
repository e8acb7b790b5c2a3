use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

use crate::autodiff::ops::{bce_term, OpKind};
use crate::autodiff::{AutodiffError, Tensor};
use crate::scalar::Scalar;

struct Node<T> {
    kind: OpKind<T>,
    inputs: [usize; 2],
    arity: u8,
    value: Rc<Tensor<T>>,
    requires_grad: bool,
}

/// Append-only record of tensor operations.
///
/// Node inputs always precede the node, so the node list is a topological
/// order. One tape per thread; tapes are not `Send`.
pub struct Tape<T: Scalar> {
    nodes: RefCell<Vec<Node<T>>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> fmt::Debug for Tape<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tape({} nodes)", self.len())
    }
}

/// Handle to a value recorded on a [`Tape`].
pub struct Var<'t, T: Scalar> {
    tape: &'t Tape<T>,
    id: usize,
}

impl<T: Scalar> Clone for Var<'_, T> {
    fn clone(&self) -> Self {
        *self
    }
}

impl<T: Scalar> Copy for Var<'_, T> {}

impl<T: Scalar> fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A leaf whose gradient is tracked.
    pub fn param(&self, value: Tensor<T>) -> Var<'_, T> {
        self.leaf(value, true)
    }

    /// A leaf treated as a constant by backward.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.leaf(value, false)
    }

    pub fn scalar(&self, x: T) -> Var<'_, T> {
        self.constant(Tensor::scalar(x))
    }

    fn leaf(&self, value: Tensor<T>, requires_grad: bool) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            kind: OpKind::Leaf,
            inputs: [0, 0],
            arity: 0,
            value: Rc::new(value),
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn value(&self, id: usize) -> Rc<Tensor<T>> {
        self.nodes.borrow()[id].value.clone()
    }

    /// Records `kind` without shape validation.
    fn record(&self, kind: OpKind<T>, inputs: &[usize]) -> usize {
        let value = {
            let nodes = self.nodes.borrow();
            let ins: Vec<&Tensor<T>> = inputs.iter().map(|&i| &*nodes[i].value).collect();
            kind.eval(&ins)
        };
        let mut nodes = self.nodes.borrow_mut();
        let requires_grad = inputs.iter().any(|&i| nodes[i].requires_grad);
        let mut ids = [0; 2];
        ids[..inputs.len()].copy_from_slice(inputs);
        nodes.push(Node {
            kind,
            inputs: ids,
            arity: inputs.len() as u8,
            value: Rc::new(value),
            requires_grad,
        });
        nodes.len() - 1
    }

    fn apply<'t>(
        &'t self,
        kind: OpKind<T>,
        inputs: &[Var<'t, T>],
    ) -> Result<Var<'t, T>, AutodiffError> {
        let shapes: Vec<[usize; 2]> = inputs.iter().map(|v| v.shape()).collect();
        kind.output_shape(&shapes)?;
        let ids: Vec<usize> = inputs.iter().map(|v| v.id).collect();
        Ok(Var {
            tape: self,
            id: self.record(kind, &ids),
        })
    }

    /// Reverse pass with plain tensors: gradients of a scalar `root` w.r.t. every leaf.
    pub fn backward(&self, root: Var<'_, T>) -> Result<Gradients<T>, AutodiffError> {
        let shape = root.shape();
        if shape != [1, 1] {
            return Err(AutodiffError::NonScalarRoot(shape));
        }
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Rc<Tensor<T>>>> = vec![None; root.id + 1];
        grads[root.id] = Some(Rc::new(Tensor::ones(1, 1)));
        for id in (0..=root.id).rev() {
            let node = &nodes[id];
            if node.arity == 0 {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            let ins = &node.inputs[..node.arity as usize];
            let need = [
                nodes[ins[0]].requires_grad,
                ins.len() > 1 && nodes[ins[1]].requires_grad,
            ];
            let values: Vec<Rc<Tensor<T>>> = ins.iter().map(|&i| nodes[i].value.clone()).collect();
            let pieces = vjp(&Eager, &node.kind, &values, &node.value, &g, need);
            for (&input, piece) in ins.iter().zip(pieces) {
                let Some(piece) = piece else { continue };
                match &mut grads[input] {
                    Some(acc) => Rc::make_mut(acc).add_assign(&piece),
                    slot => *slot = Some(piece),
                }
            }
        }
        Ok(Gradients { grads })
    }

    /// Reverse pass recorded on this tape, so the returned gradients are
    /// themselves differentiable (used for second-order meta-gradients).
    pub fn grad_graph<'t>(
        &'t self,
        root: Var<'t, T>,
        wrt: &[Var<'t, T>],
    ) -> Result<Vec<Var<'t, T>>, AutodiffError> {
        let shape = root.shape();
        if shape != [1, 1] {
            return Err(AutodiffError::NonScalarRoot(shape));
        }
        let alg = Recorded(self);
        let mut grads: Vec<Option<usize>> = vec![None; root.id + 1];
        grads[root.id] = Some(alg.constant(Tensor::ones(1, 1)));
        for id in (0..=root.id).rev() {
            let Some(g) = grads[id] else { continue };
            let (kind, ins, need) = {
                let nodes = self.nodes.borrow();
                let node = &nodes[id];
                if node.arity == 0 {
                    continue;
                }
                let ins = node.inputs[..node.arity as usize].to_vec();
                let need = [
                    nodes[ins[0]].requires_grad,
                    ins.len() > 1 && nodes[ins[1]].requires_grad,
                ];
                (node.kind.clone(), ins, need)
            };
            let pieces = vjp(&alg, &kind, &ins, &id, &g, need);
            for (&input, piece) in ins.iter().zip(pieces) {
                let Some(piece) = piece else { continue };
                grads[input] = Some(match grads[input] {
                    Some(acc) => alg.apply(OpKind::Add, &[&acc, &piece]),
                    None => piece,
                });
            }
        }
        Ok(wrt
            .iter()
            .map(|v| match grads.get(v.id).copied().flatten() {
                Some(id) => Var { tape: self, id },
                None => {
                    let [r, c] = v.shape();
                    self.constant(Tensor::zeros(r, c))
                }
            })
            .collect())
    }
}

/// Leaf gradients from [`Tape::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Rc<Tensor<T>>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient w.r.t. `var`; zeros when `var` does not influence the root.
    pub fn wrt(&self, var: Var<'_, T>) -> Tensor<T> {
        match self.grads.get(var.id).and_then(Option::as_ref) {
            Some(g) => (**g).clone(),
            None => {
                let [r, c] = var.shape();
                Tensor::zeros(r, c)
            }
        }
    }
}

impl<'t, T: Scalar> Var<'t, T> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn value(&self) -> Rc<Tensor<T>> {
        self.tape.value(self.id)
    }

    pub fn shape(&self) -> [usize; 2] {
        self.tape.nodes.borrow()[self.id].value.shape()
    }

    /// Value of a `1 × 1` variable.
    pub fn item(&self) -> T {
        self.value().item()
    }

    pub fn backward(&self) -> Result<Gradients<T>, AutodiffError> {
        self.tape.backward(*self)
    }

    fn unary(self, kind: OpKind<T>) -> Result<Self, AutodiffError> {
        self.tape.apply(kind, &[self])
    }

    fn binary(self, kind: OpKind<T>, other: Self) -> Result<Self, AutodiffError> {
        self.tape.apply(kind, &[self, other])
    }

    pub fn matmul(self, other: Self) -> Result<Self, AutodiffError> {
        self.binary(OpKind::MatMul, other)
    }

    /// `self · otherᵀ`
    pub fn matmul_nt(self, other: Self) -> Result<Self, AutodiffError> {
        self.binary(OpKind::MatMulNT, other)
    }

    /// `selfᵀ · other`
    pub fn matmul_tn(self, other: Self) -> Result<Self, AutodiffError> {
        self.binary(OpKind::MatMulTN, other)
    }

    pub fn add(self, other: Self) -> Result<Self, AutodiffError> {
        self.binary(OpKind::Add, other)
    }

    pub fn sub(self, other: Self) -> Result<Self, AutodiffError> {
        self.binary(OpKind::Sub, other)
    }

    /// Elementwise product.
    pub fn mul(self, other: Self) -> Result<Self, AutodiffError> {
        self.binary(OpKind::Mul, other)
    }

    pub fn scale(self, c: T) -> Result<Self, AutodiffError> {
        self.unary(OpKind::Scale(c))
    }

    pub fn add_scalar(self, c: T) -> Result<Self, AutodiffError> {
        self.unary(OpKind::AddScalar(c))
    }

    /// Elementwise product with a constant tensor.
    pub fn mul_const(self, c: Rc<Tensor<T>>) -> Result<Self, AutodiffError> {
        self.unary(OpKind::MulConst(c))
    }

    pub fn scale_rows(self, factors: Rc<Vec<T>>) -> Result<Self, AutodiffError> {
        self.unary(OpKind::ScaleRows(factors))
    }

    /// Column-wise concatenation (`axis = 1`).
    pub fn concat(self, other: Self) -> Result<Self, AutodiffError> {
        self.binary(OpKind::ConcatCols, other)
    }

    pub fn slice_cols(self, start: usize, len: usize) -> Result<Self, AutodiffError> {
        self.unary(OpKind::SliceCols { start, len })
    }

    pub fn gather_rows(self, idx: Rc<Vec<usize>>) -> Result<Self, AutodiffError> {
        self.unary(OpKind::GatherRows(idx))
    }

    pub fn scatter_add_rows(self, idx: Rc<Vec<usize>>, rows: usize) -> Result<Self, AutodiffError> {
        self.unary(OpKind::ScatterAddRows { idx, rows })
    }

    pub fn sum(self) -> Result<Self, AutodiffError> {
        self.unary(OpKind::SumAll)
    }

    pub fn row_sum(self) -> Result<Self, AutodiffError> {
        self.unary(OpKind::RowSum)
    }

    pub fn col_sum(self) -> Result<Self, AutodiffError> {
        self.unary(OpKind::ColSum)
    }

    pub fn broadcast_rows(self, rows: usize) -> Result<Self, AutodiffError> {
        self.unary(OpKind::BroadcastRows(rows))
    }

    pub fn broadcast_cols(self, cols: usize) -> Result<Self, AutodiffError> {
        self.unary(OpKind::BroadcastCols(cols))
    }

    /// Mean along `axis` (0: over rows giving `1 × c`, 1: over columns giving `n × 1`).
    pub fn mean(self, axis: usize) -> Result<Self, AutodiffError> {
        let [r, c] = self.shape();
        match axis {
            0 if r > 0 => self.col_sum()?.scale(T::one() / T::lit(r as f64)),
            1 if c > 0 => self.row_sum()?.scale(T::one() / T::lit(c as f64)),
            0 | 1 => Err(AutodiffError::DomainError("mean over an empty axis")),
            _ => Err(AutodiffError::DomainError("axis must be 0 or 1")),
        }
    }

    pub fn leaky_relu(self, slope: T) -> Result<Self, AutodiffError> {
        self.unary(OpKind::LeakyRelu(slope))
    }

    pub fn sigmoid(self) -> Result<Self, AutodiffError> {
        self.unary(OpKind::Sigmoid)
    }

    /// Row-wise softmax.
    pub fn softmax(self) -> Result<Self, AutodiffError> {
        self.unary(OpKind::Softmax)
    }

    pub fn logsumexp(self) -> Result<Self, AutodiffError> {
        if self.shape()[1] == 0 {
            return Err(AutodiffError::DomainError("logsumexp over an empty row"));
        }
        self.unary(OpKind::LogSumExp)
    }

    pub fn row_inv_norm(self) -> Result<Self, AutodiffError> {
        self.unary(OpKind::RowInvNorm)
    }

    /// Inner product of two equally shaped tensors.
    pub fn inner(self, other: Self) -> Result<Self, AutodiffError> {
        self.mul(other)?.sum()
    }

    /// Scales every row to unit Euclidean norm; zero rows stay zero with zero gradient.
    pub fn l2_normalize(self) -> Result<Self, AutodiffError> {
        let cols = self.shape()[1];
        let inv = self.row_inv_norm()?.broadcast_cols(cols)?;
        self.mul(inv)
    }

    /// `self · wᵀ + b` with `w: out × in` and `b: 1 × out`.
    pub fn linear(self, w: Self, b: Option<Self>) -> Result<Self, AutodiffError> {
        let y = self.matmul_nt(w)?;
        match b {
            Some(b) => {
                let rows = y.shape()[0];
                y.add(b.broadcast_rows(rows)?)
            }
            None => Ok(y),
        }
    }

    pub fn pick_cols(self, idx: Rc<Vec<usize>>) -> Result<Self, AutodiffError> {
        self.unary(OpKind::PickCols(idx))
    }

    /// `n × 1` to `n × cols`, row `r`'s value placed at column `idx[r]`.
    pub fn place_cols(self, idx: Rc<Vec<usize>>, cols: usize) -> Result<Self, AutodiffError> {
        self.unary(OpKind::PlaceCols { idx, cols })
    }

    /// Places `self` at column `start` of a zero matrix with `total` columns.
    pub fn embed_cols(self, start: usize, total: usize) -> Result<Self, AutodiffError> {
        self.unary(OpKind::EmbedCols { start, total })
    }

    /// A `1 × 1` value repeated to `rows × cols`.
    pub fn broadcast(self, rows: usize, cols: usize) -> Result<Self, AutodiffError> {
        self.unary(OpKind::Broadcast { rows, cols })
    }

    /// Mean softmax cross entropy of logit rows against class indices.
    pub fn cross_entropy(self, labels: &[usize]) -> Result<Self, AutodiffError> {
        let [rows, cols] = self.shape();
        if cols == 0 {
            return Err(AutodiffError::DomainError(
                "cross entropy over an empty class dimension",
            ));
        }
        if rows == 0 {
            return Err(AutodiffError::DomainError(
                "cross entropy over an empty batch",
            ));
        }
        if labels.len() != rows {
            return Err(AutodiffError::ShapeMismatch {
                op: "cross_entropy",
                left: [rows, cols],
                right: [labels.len(), 1],
            });
        }
        let picked = self.pick_cols(Rc::new(labels.to_vec()))?;
        self.logsumexp()?
            .sub(picked)?
            .sum()?
            .scale(T::one() / T::lit(rows as f64))
    }

    /// Mean binary cross entropy of raw scores (sigmoid applied internally) against 0/1 labels.
    pub fn binary_cross_entropy(self, labels: &[T]) -> Result<Self, AutodiffError> {
        let [rows, cols] = self.shape();
        if rows * cols == 0 {
            return Err(AutodiffError::DomainError(
                "binary cross entropy over an empty batch",
            ));
        }
        let y =
            Tensor::new(rows, cols, labels.to_vec()).map_err(|_| AutodiffError::ShapeMismatch {
                op: "binary_cross_entropy",
                left: [rows, cols],
                right: [labels.len(), 1],
            })?;
        self.unary(OpKind::BceLogits(Rc::new(y)))?
            .sum()?
            .scale(T::one() / T::lit((rows * cols) as f64))
    }
}

/// Value algebra the vector-Jacobian products are written against: plain
/// tensors for ordinary backward, recorded nodes for differentiable backward.
trait Algebra<T: Scalar> {
    type V: Clone;
    fn apply(&self, kind: OpKind<T>, inputs: &[&Self::V]) -> Self::V;
    fn value(&self, v: &Self::V) -> Rc<Tensor<T>>;
    fn constant(&self, t: Tensor<T>) -> Self::V;
}

struct Eager;

impl<T: Scalar> Algebra<T> for Eager {
    type V = Rc<Tensor<T>>;

    fn apply(&self, kind: OpKind<T>, inputs: &[&Self::V]) -> Self::V {
        let ins: Vec<&Tensor<T>> = inputs.iter().map(|v| &***v).collect();
        Rc::new(kind.eval(&ins))
    }

    fn value(&self, v: &Self::V) -> Rc<Tensor<T>> {
        v.clone()
    }

    fn constant(&self, t: Tensor<T>) -> Self::V {
        Rc::new(t)
    }
}

struct Recorded<'t, T: Scalar>(&'t Tape<T>);

impl<T: Scalar> Algebra<T> for Recorded<'_, T> {
    type V = usize;

    fn apply(&self, kind: OpKind<T>, inputs: &[&usize]) -> usize {
        let ids: Vec<usize> = inputs.iter().map(|&&i| i).collect();
        self.0.record(kind, &ids)
    }

    fn value(&self, v: &usize) -> Rc<Tensor<T>> {
        self.0.value(*v)
    }

    fn constant(&self, t: Tensor<T>) -> usize {
        self.0.constant(t).id
    }
}

/// Vector-Jacobian products of every primitive, written once for both algebras.
fn vjp<T: Scalar, A: Algebra<T>>(
    alg: &A,
    kind: &OpKind<T>,
    inputs: &[A::V],
    output: &A::V,
    g: &A::V,
    need: [bool; 2],
) -> [Option<A::V>; 2] {
    let a = &inputs[0];
    let shape_a = || alg.value(a).shape();
    let one = |v: A::V| [need[0].then_some(v), None];
    let neg = |v: &A::V| alg.apply(OpKind::Scale(-T::one()), &[v]);
    match kind {
        OpKind::Leaf => [None, None],
        OpKind::MatMul => {
            let b = &inputs[1];
            [
                need[0].then(|| alg.apply(OpKind::MatMulNT, &[g, b])),
                need[1].then(|| alg.apply(OpKind::MatMulTN, &[a, g])),
            ]
        }
        OpKind::MatMulNT => {
            let b = &inputs[1];
            [
                need[0].then(|| alg.apply(OpKind::MatMul, &[g, b])),
                need[1].then(|| alg.apply(OpKind::MatMulTN, &[g, a])),
            ]
        }
        OpKind::MatMulTN => {
            let b = &inputs[1];
            [
                need[0].then(|| alg.apply(OpKind::MatMulNT, &[b, g])),
                need[1].then(|| alg.apply(OpKind::MatMul, &[a, g])),
            ]
        }
        OpKind::Add => [need[0].then(|| g.clone()), need[1].then(|| g.clone())],
        OpKind::Sub => [need[0].then(|| g.clone()), need[1].then(|| neg(g))],
        OpKind::Mul => {
            let b = &inputs[1];
            [
                need[0].then(|| alg.apply(OpKind::Mul, &[g, b])),
                need[1].then(|| alg.apply(OpKind::Mul, &[g, a])),
            ]
        }
        OpKind::Scale(c) => one(alg.apply(OpKind::Scale(*c), &[g])),
        OpKind::AddScalar(_) => one(g.clone()),
        OpKind::MulConst(c) => one(alg.apply(OpKind::MulConst(c.clone()), &[g])),
        OpKind::ScaleRows(f) => one(alg.apply(OpKind::ScaleRows(f.clone()), &[g])),
        OpKind::ConcatCols => {
            let p = shape_a()[1];
            let q = alg.value(&inputs[1]).shape()[1];
            [
                need[0].then(|| alg.apply(OpKind::SliceCols { start: 0, len: p }, &[g])),
                need[1].then(|| alg.apply(OpKind::SliceCols { start: p, len: q }, &[g])),
            ]
        }
        OpKind::SliceCols { start, .. } => {
            let total = shape_a()[1];
            one(alg.apply(
                OpKind::EmbedCols {
                    start: *start,
                    total,
                },
                &[g],
            ))
        }
        OpKind::EmbedCols { start, .. } => {
            let len = shape_a()[1];
            one(alg.apply(OpKind::SliceCols { start: *start, len }, &[g]))
        }
        OpKind::GatherRows(idx) => {
            let rows = shape_a()[0];
            one(alg.apply(
                OpKind::ScatterAddRows {
                    idx: idx.clone(),
                    rows,
                },
                &[g],
            ))
        }
        OpKind::ScatterAddRows { idx, .. } => one(alg.apply(OpKind::GatherRows(idx.clone()), &[g])),
        OpKind::SumAll => {
            let [rows, cols] = shape_a();
            one(alg.apply(OpKind::Broadcast { rows, cols }, &[g]))
        }
        OpKind::Broadcast { .. } => one(alg.apply(OpKind::SumAll, &[g])),
        OpKind::RowSum => one(alg.apply(OpKind::BroadcastCols(shape_a()[1]), &[g])),
        OpKind::BroadcastCols(_) => one(alg.apply(OpKind::RowSum, &[g])),
        OpKind::ColSum => one(alg.apply(OpKind::BroadcastRows(shape_a()[0]), &[g])),
        OpKind::BroadcastRows(_) => one(alg.apply(OpKind::ColSum, &[g])),
        OpKind::LeakyRelu(slope) => {
            let x = alg.value(a);
            let mask = x.map(|v| if v >= T::zero() { T::one() } else { *slope });
            one(alg.apply(OpKind::MulConst(Rc::new(mask)), &[g]))
        }
        OpKind::Sigmoid => {
            let y = output;
            let one_minus = alg.apply(OpKind::AddScalar(T::one()), &[&neg(y)]);
            let dy = alg.apply(OpKind::Mul, &[y, &one_minus]);
            one(alg.apply(OpKind::Mul, &[g, &dy]))
        }
        OpKind::Softmax => {
            let y = output;
            let cols = shape_a()[1];
            let gy = alg.apply(OpKind::Mul, &[g, y]);
            let s = alg.apply(OpKind::RowSum, &[&gy]);
            let s = alg.apply(OpKind::BroadcastCols(cols), &[&s]);
            let ys = alg.apply(OpKind::Mul, &[y, &s]);
            one(alg.apply(OpKind::Sub, &[&gy, &ys]))
        }
        OpKind::LogSumExp => {
            let cols = shape_a()[1];
            let sm = alg.apply(OpKind::Softmax, &[a]);
            let gb = alg.apply(OpKind::BroadcastCols(cols), &[g]);
            one(alg.apply(OpKind::Mul, &[&gb, &sm]))
        }
        OpKind::RowInvNorm => {
            // d(1/‖x‖)/dx = -x / ‖x‖³
            let inv = output;
            let cols = shape_a()[1];
            let inv2 = alg.apply(OpKind::Mul, &[inv, inv]);
            let inv3 = alg.apply(OpKind::Mul, &[&inv2, inv]);
            let t = neg(&alg.apply(OpKind::Mul, &[g, &inv3]));
            let t = alg.apply(OpKind::BroadcastCols(cols), &[&t]);
            one(alg.apply(OpKind::Mul, &[&t, a]))
        }
        OpKind::PickCols(idx) => {
            let cols = shape_a()[1];
            one(alg.apply(
                OpKind::PlaceCols {
                    idx: idx.clone(),
                    cols,
                },
                &[g],
            ))
        }
        OpKind::PlaceCols { idx, .. } => one(alg.apply(OpKind::PickCols(idx.clone()), &[g])),
        OpKind::BceLogits(y) => {
            let s = alg.value(a);
            let mask = Tensor::new(
                s.rows(),
                s.cols(),
                s.data()
                    .iter()
                    .zip(y.data())
                    .map(|(&s, &y)| {
                        if bce_term(s, y).1 {
                            T::one()
                        } else {
                            T::zero()
                        }
                    })
                    .collect(),
            )
            .expect("bce mask shape");
            let p = alg.apply(OpKind::Sigmoid, &[a]);
            let yc = alg.constant((**y).clone());
            let d = alg.apply(OpKind::Sub, &[&p, &yc]);
            let gd = alg.apply(OpKind::Mul, &[g, &d]);
            one(alg.apply(OpKind::MulConst(Rc::new(mask)), &[&gd]))
        }
    }
}
