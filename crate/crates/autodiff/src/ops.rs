//! Operator overloads and the method vocabulary on [`Expr`].

use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};
use std::rc::Rc;

use crate::tape::{Expr, Op, Tape};
use crate::Shape;

impl fmt::Debug for Expr<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Expr#{}{}", self.id, self.shape())
    }
}

impl<'t> Expr<'t> {
    pub fn id(self) -> usize {
        self.id
    }

    /// The tape this expression is recorded on.
    pub fn tape(self) -> &'t Tape {
        self.tape
    }

    pub fn shape(self) -> Shape {
        self.tape.shape_of(self.id)
    }

    pub fn numel(self) -> usize {
        self.shape().numel()
    }

    /// Current forward value, row-major.
    pub fn value(self) -> Vec<f64> {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    /// Value of a single-element expression.
    pub fn item(self) -> f64 {
        let nodes = self.tape.nodes.borrow();
        let v = &nodes[self.id].value;
        assert_eq!(v.len(), 1, "item() on shape {}", nodes[self.id].shape);
        v[0]
    }

    fn unary(self, op: Op) -> Expr<'t> {
        self.tape.push_op(op, self.shape())
    }

    fn binary(self, rhs: Expr<'t>, make: fn(usize, usize) -> Op) -> Expr<'t> {
        assert!(
            std::ptr::eq(self.tape, rhs.tape),
            "operands recorded on different tapes"
        );
        let (sa, sb) = (self.shape(), rhs.shape());
        if sa == sb {
            return self.tape.push_op(make(self.id, rhs.id), sa);
        }
        if sb.numel() == 1 && (sa.numel() != 1 || sa.dims().len() >= sb.dims().len()) {
            let b = rhs.broadcast_to(sa.clone());
            return self.tape.push_op(make(self.id, b.id), sa);
        }
        if sa.numel() == 1 {
            let a = self.broadcast_to(sb.clone());
            return self.tape.push_op(make(a.id, rhs.id), sb);
        }
        panic!("shape mismatch: {sa} vs {sb}");
    }

    pub fn exp(self) -> Expr<'t> {
        self.unary(Op::Exp(self.id))
    }

    pub fn ln(self) -> Expr<'t> {
        self.unary(Op::Log(self.id))
    }

    pub fn sin(self) -> Expr<'t> {
        self.unary(Op::Sin(self.id))
    }

    pub fn cos(self) -> Expr<'t> {
        self.unary(Op::Cos(self.id))
    }

    pub fn powf(self, p: f64) -> Expr<'t> {
        self.unary(Op::Powf(self.id, p))
    }

    pub fn sqrt(self) -> Expr<'t> {
        self.powf(0.5)
    }

    pub fn square(self) -> Expr<'t> {
        self * self
    }

    pub fn sigmoid(self) -> Expr<'t> {
        self.unary(Op::Sigmoid(self.id))
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    pub fn softplus(self) -> Expr<'t> {
        self.unary(Op::Softplus(self.id))
    }

    /// `ln σ(x) = -softplus(-x)`.
    pub fn log_sigmoid(self) -> Expr<'t> {
        -(-self).softplus()
    }

    pub fn tanh(self) -> Expr<'t> {
        self.unary(Op::Tanh(self.id))
    }

    /// Identity forward, zero gradient backward.
    pub fn stop_gradient(self) -> Expr<'t> {
        self.unary(Op::StopGradient(self.id))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(self) -> Expr<'t> {
        self.tape.push_op(Op::Sum(self.id), Shape::scalar())
    }

    pub fn mean(self) -> Expr<'t> {
        let n = self.numel() as f64;
        self.sum() / n
    }

    /// Matrix reduction: axis 0 sums over rows (result has one entry per
    /// column), axis 1 over columns.
    pub fn sum_axis(self, axis: usize) -> Expr<'t> {
        let (r, c) = self
            .shape()
            .as_matrix()
            .unwrap_or_else(|| panic!("sum_axis needs a matrix, got {}", self.shape()));
        let out = match axis {
            0 => c,
            1 => r,
            _ => panic!("axis {axis} out of range"),
        };
        self.tape.push_op(Op::SumAxis(self.id, axis), Shape::vector(out))
    }

    /// Repeat a vector of length `m` into an `[n, m]` matrix (axis 0) or an
    /// `[m, n]` matrix (axis 1).
    pub fn expand(self, axis: usize, n: usize) -> Expr<'t> {
        let s = self.shape();
        let m = match s.dims() {
            [m] => *m,
            _ => panic!("expand needs a vector, got {s}"),
        };
        let shape = match axis {
            0 => Shape::matrix(n, m),
            1 => Shape::matrix(m, n),
            _ => panic!("axis {axis} out of range"),
        };
        self.tape.push_op(Op::Expand(self.id, axis, n), shape)
    }

    /// Fill `shape` with this single-element expression.
    pub fn broadcast_to(self, shape: impl Into<Shape>) -> Expr<'t> {
        let shape = shape.into();
        assert_eq!(self.numel(), 1, "broadcast_to from shape {}", self.shape());
        self.tape.push_op(Op::Broadcast(self.id), shape)
    }

    /// `[m,k]·[k,n]`, `[m,k]·[k]` or `[k]·[k,n]`.
    pub fn matmul(self, rhs: Expr<'t>) -> Expr<'t> {
        let (sa, sb) = (self.shape(), rhs.shape());
        let shape = match (sa.dims(), sb.dims()) {
            ([m, k], [k2, n]) if k == k2 => Shape::matrix(*m, *n),
            ([m, k], [k2]) if k == k2 => Shape::vector(*m),
            ([k], [k2, n]) if k == k2 => Shape::vector(*n),
            _ => panic!("matmul shape mismatch: {sa} x {sb}"),
        };
        self.tape.push_op(Op::MatMul(self.id, rhs.id), shape)
    }

    /// Matrix transpose.
    pub fn t(self) -> Expr<'t> {
        let (r, c) = self
            .shape()
            .as_matrix()
            .unwrap_or_else(|| panic!("transpose needs a matrix, got {}", self.shape()));
        self.tape.push_op(Op::Transpose(self.id), Shape::matrix(c, r))
    }

    pub fn reshape(self, shape: impl Into<Shape>) -> Expr<'t> {
        let shape = shape.into();
        assert_eq!(
            shape.numel(),
            self.numel(),
            "cannot reshape {} into {shape}",
            self.shape()
        );
        self.tape.push_op(Op::Reshape(self.id), shape)
    }

    /// `out[j] = self[idx[j]]` over the flattened operand.
    pub fn gather(self, idx: &[usize], shape: impl Into<Shape>) -> Expr<'t> {
        self.gather_rc(idx.into(), shape.into())
    }

    pub(crate) fn gather_rc(self, idx: Rc<[usize]>, shape: Shape) -> Expr<'t> {
        assert_eq!(idx.len(), shape.numel(), "gather index count vs shape {shape}");
        let n = self.numel();
        assert!(idx.iter().all(|&i| i < n), "gather index out of range");
        self.tape.push_op(Op::Gather(self.id, idx), shape)
    }

    /// `out[idx[j]] += self[j]` into a zero tensor of `shape`.
    pub fn scatter_add(self, idx: &[usize], shape: impl Into<Shape>) -> Expr<'t> {
        self.scatter_add_rc(idx.into(), shape.into())
    }

    pub(crate) fn scatter_add_rc(self, idx: Rc<[usize]>, shape: Shape) -> Expr<'t> {
        assert_eq!(idx.len(), self.numel(), "scatter index count vs operand");
        let n = shape.numel();
        assert!(idx.iter().all(|&i| i < n), "scatter index out of range");
        self.tape.push_op(Op::ScatterAdd(self.id, idx), shape)
    }

    /// Element `i` of the flattened expression, as a scalar.
    pub fn index(self, i: usize) -> Expr<'t> {
        self.gather(&[i], Shape::scalar())
    }

    /// Contiguous range of a vector.
    pub fn slice(self, start: usize, len: usize) -> Expr<'t> {
        let idx: Vec<usize> = (start..start + len).collect();
        self.gather(&idx, Shape::vector(len))
    }

    pub fn row(self, i: usize) -> Expr<'t> {
        let (_, c) = self.shape().as_matrix().expect("row of a matrix");
        self.gather(&(i * c..(i + 1) * c).collect::<Vec<_>>(), Shape::vector(c))
    }

    pub fn column(self, j: usize) -> Expr<'t> {
        let (r, c) = self.shape().as_matrix().expect("column of a matrix");
        let idx: Vec<usize> = (0..r).map(|i| i * c + j).collect();
        self.gather(&idx, Shape::vector(r))
    }

    pub fn dot(self, rhs: Expr<'t>) -> Expr<'t> {
        (self * rhs).sum()
    }

    /// Outer product of two vectors.
    pub fn outer(self, rhs: Expr<'t>) -> Expr<'t> {
        let (m, n) = (self.numel(), rhs.numel());
        self.reshape([m, 1]).matmul(rhs.reshape([1, n]))
    }

    /// `ln Σ exp(x)` over all elements, shifted by the (constant) maximum.
    pub fn log_sum_exp(self) -> Expr<'t> {
        let m = self.value().into_iter().fold(f64::NEG_INFINITY, f64::max);
        let m = if m.is_finite() { m } else { 0.0 };
        (self - m).exp().sum().ln() + m
    }

    /// Row-wise (axis 1) or column-wise (axis 0) log-sum-exp of a matrix.
    pub fn log_sum_exp_axis(self, axis: usize) -> Expr<'t> {
        let (r, c) = self.shape().as_matrix().expect("log_sum_exp_axis on a matrix");
        let v = self.value();
        let fix = |m: f64| if m.is_finite() { m } else { 0.0 };
        let maxes: Vec<f64> = if axis == 1 {
            (0..r)
                .map(|i| fix(v[i * c..(i + 1) * c].iter().copied().fold(f64::NEG_INFINITY, f64::max)))
                .collect()
        } else {
            (0..c)
                .map(|j| fix((0..r).map(|i| v[i * c + j]).fold(f64::NEG_INFINITY, f64::max)))
                .collect()
        };
        let n = maxes.len();
        let m = self.tape.constant(maxes, Shape::vector(n));
        let other = if axis == 1 { c } else { r };
        let spread = if axis == 1 { m.expand(1, other) } else { m.expand(0, other) };
        (self - spread).exp().sum_axis(axis).ln() + m
    }

    /// Row-wise log-softmax of a matrix, or log-softmax of a vector.
    pub fn log_softmax(self) -> Expr<'t> {
        match self.shape().dims() {
            [_] => self - self.log_sum_exp(),
            [_, c] => {
                let c = *c;
                self - self.log_sum_exp_axis(1).expand(1, c)
            }
            _ => panic!("log_softmax needs a vector or matrix"),
        }
    }

    pub fn softmax(self) -> Expr<'t> {
        self.log_softmax().exp()
    }

    /// Concatenate vectors end to end.
    pub fn concat(parts: &[Expr<'t>]) -> Expr<'t> {
        assert!(!parts.is_empty(), "concat of nothing");
        let total: usize = parts.iter().map(|p| p.numel()).sum();
        let mut offset = 0;
        let mut acc: Option<Expr<'t>> = None;
        for p in parts {
            let n = p.numel();
            let idx: Vec<usize> = (offset..offset + n).collect();
            let placed = p.scatter_add(&idx, Shape::vector(total));
            acc = Some(match acc {
                Some(a) => a + placed,
                None => placed,
            });
            offset += n;
        }
        acc.unwrap()
    }

    /// Stack equal-length vectors as the rows of a matrix.
    pub fn stack_rows(rows: &[Expr<'t>]) -> Expr<'t> {
        let c = rows.first().expect("stack of nothing").numel();
        assert!(rows.iter().all(|r| r.numel() == c), "ragged rows");
        Expr::concat(rows).reshape([rows.len(), c])
    }

    /// Elementwise log-density of `N(mean, exp(log_sd)²)`.
    pub fn normal_log_pdf(self, mean: Expr<'t>, log_sd: Expr<'t>) -> Expr<'t> {
        let z = (self - mean) / log_sd.exp();
        z.square() * -0.5 - log_sd - 0.5 * (2.0 * std::f64::consts::PI).ln()
    }
}

macro_rules! binop {
    ($trait:ident, $method:ident, $op:ident) => {
        impl<'t> $trait for Expr<'t> {
            type Output = Expr<'t>;
            fn $method(self, rhs: Expr<'t>) -> Expr<'t> {
                self.binary(rhs, Op::$op)
            }
        }

        impl<'t> $trait<f64> for Expr<'t> {
            type Output = Expr<'t>;
            fn $method(self, rhs: f64) -> Expr<'t> {
                let c = self.tape.scalar(rhs);
                self.binary(c, Op::$op)
            }
        }

        impl<'t> $trait<Expr<'t>> for f64 {
            type Output = Expr<'t>;
            fn $method(self, rhs: Expr<'t>) -> Expr<'t> {
                let c = rhs.tape.scalar(self);
                c.binary(rhs, Op::$op)
            }
        }
    };
}

binop!(Add, add, Add);
binop!(Sub, sub, Sub);
binop!(Mul, mul, Mul);
binop!(Div, div, Div);

impl<'t> Neg for Expr<'t> {
    type Output = Expr<'t>;
    fn neg(self) -> Expr<'t> {
        self.unary(Op::Neg(self.id))
    }
}
