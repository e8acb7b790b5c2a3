//! Primitive operations: shape rules and forward kernels.

use std::rc::Rc;

use crate::autodiff::{AutodiffError, Tensor};
use crate::scalar::Scalar;

/// Upper bound on a single binary cross-entropy term: `-ln(1e-12)`.
///
/// Equivalent to flooring the probability assigned to the true label at 1e-12.
pub const BCE_LOSS_CAP: f64 = 27.631021115928547;

#[derive(Clone, Debug)]
pub enum OpKind<T> {
    Leaf,
    /// `a · b`
    MatMul,
    /// `a · bᵀ`
    MatMulNT,
    /// `aᵀ · b`
    MatMulTN,
    Add,
    Sub,
    Mul,
    Scale(T),
    AddScalar(T),
    MulConst(Rc<Tensor<T>>),
    /// Multiplies row `r` by `factors[r]`.
    ScaleRows(Rc<Vec<T>>),
    ConcatCols,
    SliceCols {
        start: usize,
        len: usize,
    },
    /// Inverse of `SliceCols`: places the input at column `start` of a zero matrix.
    EmbedCols {
        start: usize,
        total: usize,
    },
    GatherRows(Rc<Vec<usize>>),
    /// Output row `idx[i]` accumulates input row `i`.
    ScatterAddRows {
        idx: Rc<Vec<usize>>,
        rows: usize,
    },
    SumAll,
    /// Scalar to `rows × cols`.
    Broadcast {
        rows: usize,
        cols: usize,
    },
    /// `n × c` to `n × 1`.
    RowSum,
    /// `n × 1` to `n × cols`.
    BroadcastCols(usize),
    /// `n × c` to `1 × c`.
    ColSum,
    /// `1 × c` to `rows × c`.
    BroadcastRows(usize),
    LeakyRelu(T),
    Sigmoid,
    /// Row-wise softmax.
    Softmax,
    /// Row-wise log-sum-exp, `n × c` to `n × 1`.
    LogSumExp,
    /// `1 / ‖row‖₂` per row (`0` for a zero row), `n × c` to `n × 1`.
    RowInvNorm,
    /// Picks column `idx[r]` of each row, `n × c` to `n × 1`.
    PickCols(Rc<Vec<usize>>),
    /// Inverse of `PickCols`: `n × 1` to `n × cols`.
    PlaceCols {
        idx: Rc<Vec<usize>>,
        cols: usize,
    },
    /// Elementwise `-[y ln σ(s) + (1-y) ln(1-σ(s))]`, capped at [`BCE_LOSS_CAP`].
    BceLogits(Rc<Tensor<T>>),
}

fn mismatch(op: &'static str, left: [usize; 2], right: [usize; 2]) -> AutodiffError {
    AutodiffError::ShapeMismatch { op, left, right }
}

impl<T: Scalar> OpKind<T> {
    pub fn name(&self) -> &'static str {
        match self {
            OpKind::Leaf => "leaf",
            OpKind::MatMul => "matmul",
            OpKind::MatMulNT => "matmul_nt",
            OpKind::MatMulTN => "matmul_tn",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::Scale(_) => "scale",
            OpKind::AddScalar(_) => "add_scalar",
            OpKind::MulConst(_) => "mul_const",
            OpKind::ScaleRows(_) => "scale_rows",
            OpKind::ConcatCols => "concat",
            OpKind::SliceCols { .. } => "slice_cols",
            OpKind::EmbedCols { .. } => "embed_cols",
            OpKind::GatherRows(_) => "gather_rows",
            OpKind::ScatterAddRows { .. } => "scatter_add_rows",
            OpKind::SumAll => "sum",
            OpKind::Broadcast { .. } => "broadcast",
            OpKind::RowSum => "row_sum",
            OpKind::BroadcastCols(_) => "broadcast_cols",
            OpKind::ColSum => "col_sum",
            OpKind::BroadcastRows(_) => "broadcast_rows",
            OpKind::LeakyRelu(_) => "leaky_relu",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Softmax => "softmax",
            OpKind::LogSumExp => "logsumexp",
            OpKind::RowInvNorm => "row_inv_norm",
            OpKind::PickCols(_) => "pick_cols",
            OpKind::PlaceCols { .. } => "place_cols",
            OpKind::BceLogits(_) => "binary_cross_entropy",
        }
    }

    /// Validates input shapes and returns the output shape.
    pub fn output_shape(&self, inputs: &[[usize; 2]]) -> Result<[usize; 2], AutodiffError> {
        let name = self.name();
        let a = inputs[0];
        let same = |b: [usize; 2]| {
            if a == b {
                Ok(a)
            } else {
                Err(mismatch(name, a, b))
            }
        };
        match self {
            OpKind::Leaf => Ok(a),
            OpKind::MatMul => {
                let b = inputs[1];
                if a[1] == b[0] {
                    Ok([a[0], b[1]])
                } else {
                    Err(mismatch(name, a, b))
                }
            }
            OpKind::MatMulNT => {
                let b = inputs[1];
                if a[1] == b[1] {
                    Ok([a[0], b[0]])
                } else {
                    Err(mismatch(name, a, b))
                }
            }
            OpKind::MatMulTN => {
                let b = inputs[1];
                if a[0] == b[0] {
                    Ok([a[1], b[1]])
                } else {
                    Err(mismatch(name, a, b))
                }
            }
            OpKind::Add | OpKind::Sub | OpKind::Mul => same(inputs[1]),
            OpKind::Scale(_) | OpKind::AddScalar(_) | OpKind::LeakyRelu(_) | OpKind::Sigmoid => {
                Ok(a)
            }
            OpKind::MulConst(c) => same(c.shape()),
            OpKind::BceLogits(y) => same(y.shape()),
            OpKind::ScaleRows(f) => {
                if f.len() == a[0] {
                    Ok(a)
                } else {
                    Err(mismatch(name, a, [f.len(), 1]))
                }
            }
            OpKind::ConcatCols => {
                let b = inputs[1];
                if a[0] == b[0] {
                    Ok([a[0], a[1] + b[1]])
                } else {
                    Err(mismatch(name, a, b))
                }
            }
            OpKind::SliceCols { start, len } => {
                if start + len <= a[1] {
                    Ok([a[0], *len])
                } else {
                    Err(mismatch(name, a, [*start, *len]))
                }
            }
            OpKind::EmbedCols { start, total } => {
                if start + a[1] <= *total {
                    Ok([a[0], *total])
                } else {
                    Err(mismatch(name, a, [*start, *total]))
                }
            }
            OpKind::GatherRows(idx) => match idx.iter().find(|&&i| i >= a[0]) {
                Some(&bad) => Err(mismatch(name, a, [bad, 0])),
                None => Ok([idx.len(), a[1]]),
            },
            OpKind::ScatterAddRows { idx, rows } => {
                if idx.len() != a[0] {
                    return Err(mismatch(name, a, [idx.len(), 0]));
                }
                match idx.iter().find(|&&i| i >= *rows) {
                    Some(&bad) => Err(mismatch(name, a, [bad, *rows])),
                    None => Ok([*rows, a[1]]),
                }
            }
            OpKind::SumAll => Ok([1, 1]),
            OpKind::Broadcast { rows, cols } => same([1, 1]).map(|_| [*rows, *cols]),
            OpKind::RowSum | OpKind::LogSumExp | OpKind::RowInvNorm => Ok([a[0], 1]),
            OpKind::BroadcastCols(cols) => {
                if a[1] == 1 {
                    Ok([a[0], *cols])
                } else {
                    Err(mismatch(name, a, [a[0], 1]))
                }
            }
            OpKind::ColSum => Ok([1, a[1]]),
            OpKind::BroadcastRows(rows) => {
                if a[0] == 1 {
                    Ok([*rows, a[1]])
                } else {
                    Err(mismatch(name, a, [1, a[1]]))
                }
            }
            OpKind::Softmax => {
                if a[1] == 0 {
                    Err(AutodiffError::DomainError("softmax over an empty row"))
                } else {
                    Ok(a)
                }
            }
            OpKind::PickCols(idx) => {
                if idx.len() != a[0] {
                    Err(mismatch(name, a, [idx.len(), 1]))
                } else if idx.iter().any(|&i| i >= a[1]) {
                    Err(AutodiffError::DomainError("class index out of range"))
                } else {
                    Ok([a[0], 1])
                }
            }
            OpKind::PlaceCols { idx, cols } => {
                if a[1] != 1 || idx.len() != a[0] || idx.iter().any(|&i| i >= *cols) {
                    Err(mismatch(name, a, [idx.len(), *cols]))
                } else {
                    Ok([a[0], *cols])
                }
            }
        }
    }

    /// Forward kernel. Inputs must already satisfy [`OpKind::output_shape`].
    pub fn eval(&self, inputs: &[&Tensor<T>]) -> Tensor<T> {
        let a = inputs[0];
        match self {
            OpKind::Leaf => a.clone(),
            OpKind::MatMul => matmul(a, inputs[1]),
            OpKind::MatMulNT => matmul_nt(a, inputs[1]),
            OpKind::MatMulTN => matmul_tn(a, inputs[1]),
            OpKind::Add => zip(a, inputs[1], |x, y| x + y),
            OpKind::Sub => zip(a, inputs[1], |x, y| x - y),
            OpKind::Mul => zip(a, inputs[1], |x, y| x * y),
            OpKind::Scale(c) => a.map(|x| x * *c),
            OpKind::AddScalar(c) => a.map(|x| x + *c),
            OpKind::MulConst(c) => zip(a, c, |x, y| x * y),
            OpKind::ScaleRows(f) => {
                let mut out = a.clone();
                let cols = a.cols();
                for (r, &s) in f.iter().enumerate() {
                    for x in &mut out.data_mut()[r * cols..(r + 1) * cols] {
                        *x *= s;
                    }
                }
                out
            }
            OpKind::ConcatCols => {
                let b = inputs[1];
                Tensor::from_fn(a.rows(), a.cols() + b.cols(), |r, c| {
                    if c < a.cols() {
                        a.get(r, c)
                    } else {
                        b.get(r, c - a.cols())
                    }
                })
            }
            OpKind::SliceCols { start, len } => {
                Tensor::from_fn(a.rows(), *len, |r, c| a.get(r, start + c))
            }
            OpKind::EmbedCols { start, total } => {
                let mut out = Tensor::zeros(a.rows(), *total);
                for r in 0..a.rows() {
                    out.data_mut()[r * total + start..r * total + start + a.cols()]
                        .copy_from_slice(a.row_slice(r));
                }
                out
            }
            OpKind::GatherRows(idx) => {
                let mut data = Vec::with_capacity(idx.len() * a.cols());
                for &i in idx.iter() {
                    data.extend_from_slice(a.row_slice(i));
                }
                Tensor::new(idx.len(), a.cols(), data).expect("gather shape")
            }
            OpKind::ScatterAddRows { idx, rows } => {
                let cols = a.cols();
                let mut out = Tensor::zeros(*rows, cols);
                let data = out.data_mut();
                for (src, &dst) in idx.iter().enumerate() {
                    for (o, &x) in data[dst * cols..(dst + 1) * cols]
                        .iter_mut()
                        .zip(a.row_slice(src))
                    {
                        *o += x;
                    }
                }
                out
            }
            OpKind::SumAll => Tensor::scalar(a.data().iter().copied().sum()),
            OpKind::Broadcast { rows, cols } => Tensor::filled(*rows, *cols, a.item()),
            OpKind::RowSum => Tensor::column(
                (0..a.rows())
                    .map(|r| a.row_slice(r).iter().copied().sum())
                    .collect(),
            ),
            OpKind::BroadcastCols(cols) => Tensor::from_fn(a.rows(), *cols, |r, _| a.get(r, 0)),
            OpKind::ColSum => {
                let mut out = Tensor::zeros(1, a.cols());
                for r in 0..a.rows() {
                    for (o, &x) in out.data_mut().iter_mut().zip(a.row_slice(r)) {
                        *o += x;
                    }
                }
                out
            }
            OpKind::BroadcastRows(rows) => Tensor::from_fn(*rows, a.cols(), |_, c| a.get(0, c)),
            OpKind::LeakyRelu(slope) => a.map(|x| if x >= T::zero() { x } else { x * *slope }),
            OpKind::Sigmoid => a.map(sigmoid),
            OpKind::Softmax => softmax_rows(a),
            OpKind::LogSumExp => {
                Tensor::column((0..a.rows()).map(|r| logsumexp(a.row_slice(r))).collect())
            }
            OpKind::RowInvNorm => Tensor::column(
                (0..a.rows())
                    .map(|r| {
                        let n = a.row_slice(r).iter().map(|&x| x * x).sum::<T>().sqrt();
                        if n > T::zero() {
                            T::one() / n
                        } else {
                            T::zero()
                        }
                    })
                    .collect(),
            ),
            OpKind::PickCols(idx) => {
                Tensor::column(idx.iter().enumerate().map(|(r, &c)| a.get(r, c)).collect())
            }
            OpKind::PlaceCols { idx, cols } => {
                let mut out = Tensor::zeros(a.rows(), *cols);
                for (r, &c) in idx.iter().enumerate() {
                    out.data_mut()[r * cols + c] = a.get(r, 0);
                }
                out
            }
            OpKind::BceLogits(y) => zip(a, y, |s, y| bce_term(s, y).0),
        }
    }
}

pub(crate) fn zip<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Tensor::new(a.rows(), a.cols(), data).expect("zip shape")
}

pub(crate) fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    let mut out = vec![T::zero(); m * n];
    let (ad, bd) = (a.data(), b.data());
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let x = ad[i * k + p];
            if x == T::zero() {
                continue;
            }
            for (o, &y) in row.iter_mut().zip(&bd[p * n..(p + 1) * n]) {
                *o += x * y;
            }
        }
    }
    Tensor::new(m, n, out).expect("matmul shape")
}

pub(crate) fn matmul_nt<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    let (m, k, n) = (a.rows(), a.cols(), b.rows());
    let mut out = Vec::with_capacity(m * n);
    for i in 0..m {
        let ar = &a.data()[i * k..(i + 1) * k];
        for j in 0..n {
            let br = &b.data()[j * k..(j + 1) * k];
            out.push(ar.iter().zip(br).map(|(&x, &y)| x * y).sum());
        }
    }
    Tensor::new(m, n, out).expect("matmul_nt shape")
}

pub(crate) fn matmul_tn<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    let (k, m, n) = (a.rows(), a.cols(), b.cols());
    let mut out = vec![T::zero(); m * n];
    for p in 0..k {
        let ar = &a.data()[p * m..(p + 1) * m];
        let br = &b.data()[p * n..(p + 1) * n];
        for (i, &x) in ar.iter().enumerate() {
            if x == T::zero() {
                continue;
            }
            for (o, &y) in out[i * n..(i + 1) * n].iter_mut().zip(br) {
                *o += x * y;
            }
        }
    }
    Tensor::new(m, n, out).expect("matmul_tn shape")
}

pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// `ln(1 + e^x)` without overflow.
pub(crate) fn softplus<T: Scalar>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

/// Returns the capped loss term and whether the cap is inactive.
pub(crate) fn bce_term<T: Scalar>(s: T, y: T) -> (T, bool) {
    let raw = softplus(s) - y * s;
    let cap = T::lit(BCE_LOSS_CAP);
    if raw < cap {
        (raw, true)
    } else {
        (cap, false)
    }
}

fn logsumexp<T: Scalar>(row: &[T]) -> T {
    let m = row.iter().copied().fold(T::neg_infinity(), T::max);
    if !m.is_finite() {
        return m;
    }
    m + row.iter().map(|&x| (x - m).exp()).sum::<T>().ln()
}

fn softmax_rows<T: Scalar>(a: &Tensor<T>) -> Tensor<T> {
    let mut out = a.clone();
    let cols = a.cols();
    for r in 0..a.rows() {
        let row = &mut out.data_mut()[r * cols..(r + 1) * cols];
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut z = T::zero();
        for x in row.iter_mut() {
            *x = (*x - m).exp();
            z += *x;
        }
        for x in row.iter_mut() {
            *x /= z;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: usize, cols: usize, v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(rows, cols, v).unwrap()
    }

    #[test]
    fn matmul_variants_agree() {
        let a = t(2, 3, &[1., 2., 3., 4., 5., 6.]);
        let b = t(3, 2, &[7., 8., 9., 10., 11., 12.]);
        let ab = matmul(&a, &b);
        assert_eq!(ab.data(), &[58., 64., 139., 154.]);
        let bt = Tensor::from_fn(2, 3, |r, c| b.get(c, r));
        assert_eq!(matmul_nt(&a, &bt), ab);
        let at = Tensor::from_fn(3, 2, |r, c| a.get(c, r));
        assert_eq!(matmul_tn(&at, &b), ab);
    }

    #[test]
    fn shape_rules() {
        let k: OpKind<f64> = OpKind::MatMul;
        assert!(k.output_shape(&[[2, 3], [2, 3]]).is_err());
        assert_eq!(
            OpKind::<f64>::ConcatCols
                .output_shape(&[[2, 3], [2, 1]])
                .unwrap(),
            [2, 4]
        );
        assert!(OpKind::<f64>::Softmax.output_shape(&[[1, 0]]).is_err());
        let g = OpKind::<f64>::GatherRows(Rc::new(vec![0, 5]));
        assert!(g.output_shape(&[[3, 2]]).is_err());
    }

    #[test]
    fn stable_scalar_helpers() {
        assert_eq!(sigmoid(0.0f64), 0.5);
        assert!(sigmoid(-800.0f64) >= 0.0);
        assert!((softplus(0.0f64) - 2f64.ln()).abs() < 1e-15);
        assert!(softplus(800.0f64) == 800.0);
        let (loss, active) = bce_term(30.0f64, 1.0);
        assert!(loss < 1e-12 && active);
        let (loss, active) = bce_term(-100.0f64, 1.0);
        assert_eq!(loss, BCE_LOSS_CAP);
        assert!(!active);
        assert!((BCE_LOSS_CAP - (-(1e-12f64).ln())).abs() < 1e-12);
    }
}
