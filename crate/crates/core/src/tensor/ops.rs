use super::graph::{record, Op};
use super::{Matrix, Shape, Tensor, TensorError};

/// Elementwise operation kinds accepted by [`elementwise`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Elementwise {
    Add,
    Sub,
    Mul,
    Scale(f64),
    Square,
    LeakyRelu(f64),
    Sigmoid,
    Log,
    Exp,
}

/// Reductions to a scalar accepted by [`reduce`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduction {
    Sum,
    Mean,
    L2Norm,
    SumSquares,
}

/// Applies `kind` to one (unary) or two (binary) operands.
pub fn elementwise(kind: Elementwise, inputs: &[&Tensor]) -> Result<Tensor, TensorError> {
    let binary = matches!(kind, Elementwise::Add | Elementwise::Sub | Elementwise::Mul);
    let expected = if binary { 2 } else { 1 };
    if inputs.len() != expected {
        return Err(TensorError::Arity { op: "elementwise", expected, got: inputs.len() });
    }
    let x = inputs[0];
    match kind {
        Elementwise::Add => x.add(inputs[1]),
        Elementwise::Sub => x.sub(inputs[1]),
        Elementwise::Mul => x.mul(inputs[1]),
        Elementwise::Scale(c) => Ok(x.scale(c)),
        Elementwise::Square => Ok(x.square()),
        Elementwise::LeakyRelu(slope) => Ok(x.leaky_relu(slope)),
        Elementwise::Sigmoid => Ok(x.sigmoid()),
        Elementwise::Log => x.ln(),
        Elementwise::Exp => Ok(x.exp()),
    }
}

/// Reduces `x` to a `1 × 1` tensor.
pub fn reduce(kind: Reduction, x: &Tensor) -> Result<Tensor, TensorError> {
    if x.shape().is_empty() {
        return Err(TensorError::Empty("reduce"));
    }
    Ok(match kind {
        Reduction::Sum => x.sum(),
        Reduction::Mean => x.mean(),
        Reduction::L2Norm => x.l2_norm(),
        Reduction::SumSquares => x.sum_squares(),
    })
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

impl Tensor {
    fn unary(&self, name: &'static str, op: Op, value: Matrix) -> Tensor {
        record(name, op, &[self], value).expect("a single operand always shares its own graph")
    }

    /// Lines up a binary operation, expanding a `1 × 1` operand if needed.
    fn broadcast_pair(&self, other: &Tensor, op: &'static str) -> Result<(Tensor, Tensor), TensorError> {
        let (ls, rs) = (self.shape(), other.shape());
        if ls == rs {
            Ok((self.clone(), other.clone()))
        } else if rs.is_scalar() {
            Ok((self.clone(), other.expand(ls)?))
        } else if ls.is_scalar() {
            Ok((self.expand(rs)?, other.clone()))
        } else {
            Err(TensorError::ShapeMismatch { op, left: ls, right: rs })
        }
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor, TensorError> {
        let (a, b) = self.broadcast_pair(other, "add")?;
        let v = a.value.zip_map(&b.value, |x, y| x + y);
        record("add", Op::Add, &[&a, &b], v)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor, TensorError> {
        let (a, b) = self.broadcast_pair(other, "sub")?;
        let v = a.value.zip_map(&b.value, |x, y| x - y);
        record("sub", Op::Sub, &[&a, &b], v)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor, TensorError> {
        let (a, b) = self.broadcast_pair(other, "mul")?;
        let v = a.value.zip_map(&b.value, |x, y| x * y);
        record("mul", Op::Mul, &[&a, &b], v)
    }

    pub fn scale(&self, c: f64) -> Tensor {
        self.unary("scale", Op::Scale(c), self.value.map(|v| v * c))
    }

    pub fn neg(&self) -> Tensor {
        self.scale(-1.0)
    }

    pub fn square(&self) -> Tensor {
        self.unary("square", Op::Square, self.value.map(|v| v * v))
    }

    /// `x` for `x ≥ 0`, `slope · x` otherwise.
    pub fn leaky_relu(&self, slope: f64) -> Tensor {
        self.unary("leaky_relu", Op::LeakyRelu(slope), self.value.map(|v| if v >= 0.0 { v } else { slope * v }))
    }

    pub fn sigmoid(&self) -> Tensor {
        self.unary("sigmoid", Op::Sigmoid, self.value.map(sigmoid))
    }

    /// Natural logarithm; every entry must be strictly positive.
    pub fn ln(&self) -> Result<Tensor, TensorError> {
        if let Some(bad) = self.value.as_slice().iter().find(|v| !(**v > 0.0)) {
            return Err(TensorError::Domain { op: "ln", detail: format!("non-positive input {bad}") });
        }
        Ok(self.unary("ln", Op::Ln, self.value.map(f64::ln)))
    }

    pub fn exp(&self) -> Tensor {
        self.unary("exp", Op::Exp, self.value.map(f64::exp))
    }

    /// `1/x` elementwise, with `1/0` defined as 0.
    pub fn recip(&self) -> Tensor {
        self.unary("recip", Op::Recip, self.value.map(|v| if v == 0.0 { 0.0 } else { 1.0 / v }))
    }

    /// Square root; the gradient at 0 is taken to be 0.
    pub fn sqrt(&self) -> Result<Tensor, TensorError> {
        if let Some(bad) = self.value.as_slice().iter().find(|v| **v < 0.0 || v.is_nan()) {
            return Err(TensorError::Domain { op: "sqrt", detail: format!("negative input {bad}") });
        }
        Ok(self.unary("sqrt", Op::Sqrt, self.value.map(f64::sqrt)))
    }

    /// `max(x, lo)`; no gradient flows where the clamp is active.
    pub fn clamp_min(&self, lo: f64) -> Tensor {
        self.unary("clamp_min", Op::ClampMin(lo), self.value.map(|v| v.max(lo)))
    }

    /// Matrix product `self · other`.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor, TensorError> {
        self.matmul_ext(other, false, false)
    }

    /// `op(self) · op(other)`, where each flag transposes its operand.
    pub fn matmul_ext(&self, other: &Tensor, trans_a: bool, trans_b: bool) -> Result<Tensor, TensorError> {
        let (a, b) = (self.shape(), other.shape());
        let k_a = if trans_a { a.rows } else { a.cols };
        let k_b = if trans_b { b.cols } else { b.rows };
        if k_a != k_b {
            return Err(TensorError::ShapeMismatch { op: "matmul", left: a, right: b });
        }
        let v = self.value.matmul_t(&other.value, trans_a, trans_b);
        record("matmul", Op::MatMul { ta: trans_a, tb: trans_b }, &[self, other], v)
    }

    pub fn transpose(&self) -> Tensor {
        self.unary("transpose", Op::Transpose, self.value.transpose())
    }

    /// Sum of all entries as a `1 × 1` tensor.
    pub fn sum(&self) -> Tensor {
        self.unary("sum", Op::SumAll, Matrix::scalar(self.value.sum()))
    }

    pub fn mean(&self) -> Tensor {
        let n = self.shape().len().max(1) as f64;
        self.sum().scale(1.0 / n)
    }

    pub fn sum_squares(&self) -> Tensor {
        self.square().sum()
    }

    /// Euclidean norm of all entries; its gradient at the origin is 0.
    pub fn l2_norm(&self) -> Tensor {
        self.sum_squares().sqrt().expect("sum of squares is non-negative")
    }

    /// Broadcasts a `1 × 1` tensor to `shape`.
    pub fn expand(&self, shape: Shape) -> Result<Tensor, TensorError> {
        if !self.shape().is_scalar() {
            return Err(TensorError::ShapeMismatch { op: "expand", left: self.shape(), right: shape });
        }
        let v = Matrix::filled(shape.rows, shape.cols, self.value.item());
        Ok(self.unary("expand", Op::Expand, v))
    }

    /// `m × n → m × 1`.
    pub fn row_sums(&self) -> Tensor {
        self.unary("row_sums", Op::RowSums, self.value.row_sums())
    }

    /// `m × n → 1 × n`.
    pub fn col_sums(&self) -> Tensor {
        self.unary("col_sums", Op::ColSums, self.value.col_sums())
    }

    /// Repeats an `m × 1` column `cols` times.
    pub fn expand_cols(&self, cols: usize) -> Result<Tensor, TensorError> {
        let s = self.shape();
        if s.cols != 1 {
            return Err(TensorError::ShapeMismatch { op: "expand_cols", left: s, right: Shape::new(s.rows, cols) });
        }
        let mut v = Matrix::zeros(s.rows, cols);
        for r in 0..s.rows {
            v.row_mut(r).fill(self.value.get(r, 0));
        }
        Ok(self.unary("expand_cols", Op::ExpandCols, v))
    }

    /// Repeats a `1 × n` row `rows` times.
    pub fn expand_rows(&self, rows: usize) -> Result<Tensor, TensorError> {
        let s = self.shape();
        if s.rows != 1 {
            return Err(TensorError::ShapeMismatch { op: "expand_rows", left: s, right: Shape::new(rows, s.cols) });
        }
        let mut v = Matrix::zeros(rows, s.cols);
        for r in 0..rows {
            v.row_mut(r).copy_from_slice(self.value.as_slice());
        }
        Ok(self.unary("expand_rows", Op::ExpandRows, v))
    }

    /// Adds a `1 × n` row to every row of `self`.
    pub fn add_row(&self, row: &Tensor) -> Result<Tensor, TensorError> {
        let s = self.shape();
        if row.shape() != Shape::new(1, s.cols) {
            return Err(TensorError::ShapeMismatch { op: "add_row", left: s, right: row.shape() });
        }
        self.add(&row.expand_rows(s.rows)?)
    }

    /// Multiplies each row by the matching entry of an `m × 1` column.
    pub fn mul_col(&self, col: &Tensor) -> Result<Tensor, TensorError> {
        let s = self.shape();
        if col.shape() != Shape::new(s.rows, 1) {
            return Err(TensorError::ShapeMismatch { op: "mul_col", left: s, right: col.shape() });
        }
        self.mul(&col.expand_cols(s.cols)?)
    }

    /// Per-row squared norms, `m × 1`.
    pub fn row_sum_squares(&self) -> Tensor {
        self.square().row_sums()
    }

    /// Per-row Euclidean norms, `m × 1`; gradient 0 for a zero row.
    pub fn row_norms(&self) -> Tensor {
        self.row_sum_squares().sqrt().expect("sums of squares are non-negative")
    }

    /// Scales every row to unit Euclidean norm.
    pub fn normalize_rows(&self) -> Result<Tensor, TensorError> {
        let norms = self.row_norms();
        if let Some(row) = norms.value.as_slice().iter().position(|&n| n == 0.0) {
            return Err(TensorError::DegenerateNorm { row });
        }
        self.mul_col(&norms.recip())
    }

    /// Row-wise softmax.
    pub fn softmax_rows(&self) -> Tensor {
        let s = self.shape();
        // Shifting by a constant leaves both the value and the gradient unchanged.
        let mut shift = Matrix::zeros(s.rows, s.cols);
        for r in 0..s.rows {
            let m = self.value.row(r).iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            shift.row_mut(r).fill(m);
        }
        let e = self.sub(&Tensor::constant(shift)).expect("same shape").exp();
        e.mul_col(&e.row_sums().recip()).expect("column matches rows")
    }

    /// Row-wise log-softmax; its gradient does not vanish when a
    /// probability underflows.
    pub fn log_softmax_rows(&self) -> Tensor {
        let s = self.shape();
        let mut shift = Matrix::zeros(s.rows, s.cols);
        for r in 0..s.rows {
            let m = self.value.row(r).iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            shift.row_mut(r).fill(m);
        }
        let shifted = self.sub(&Tensor::constant(shift)).expect("same shape");
        // each row sum is at least 1, so the logarithm is defined
        let log_z = shifted.exp().row_sums().ln().expect("row sums >= 1");
        shifted.sub(&log_z.expand_cols(s.cols).expect("column")).expect("same shape")
    }

    /// Checks that this tensor has exactly `shape`.
    pub fn expect_shape(&self, shape: Shape, op: &'static str) -> Result<(), TensorError> {
        if self.shape() != shape {
            return Err(TensorError::ShapeMismatch { op, left: self.shape(), right: shape });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{grad, Graph};

    fn v(vals: &[f64]) -> Matrix {
        Matrix::row_vector(vals)
    }

    #[test]
    fn identity_and_projection_products() {
        let i2 = Tensor::constant(Matrix::identity(2));
        let x = Tensor::constant(Matrix::column_vector(&[3.0, 4.0]));
        assert_eq!(i2.matmul(&x).unwrap().value().as_slice(), &[3.0, 4.0]);

        let p = Tensor::constant(Matrix::from_vec(2, 3, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0]));
        let x = Tensor::constant(Matrix::column_vector(&[1.0, 2.0, 3.0]));
        assert_eq!(p.matmul(&x).unwrap().value().as_slice(), &[1.0, 2.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let a = Tensor::constant(Matrix::zeros(2, 3));
        let b = Tensor::constant(Matrix::zeros(2, 3));
        let err = a.matmul(&b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2x3]") && msg.contains("matmul"), "{msg}");
    }

    #[test]
    fn pointwise_examples() {
        let x = Tensor::scalar(-1.0);
        assert!((x.leaky_relu(0.2).item() + 0.2).abs() < 1e-15);
        assert_eq!(Tensor::scalar(0.0).sigmoid().item(), 0.5);
        let err = Tensor::constant(v(&[1.0, 0.0])).ln().unwrap_err();
        assert!(matches!(err, TensorError::Domain { op: "ln", .. }));
    }

    #[test]
    fn reduction_examples() {
        let x = Tensor::constant(v(&[3.0, 4.0]));
        assert_eq!(reduce(Reduction::SumSquares, &x).unwrap().item(), 25.0);
        assert_eq!(reduce(Reduction::L2Norm, &Tensor::constant(v(&[0.0, 0.0]))).unwrap().item(), 0.0);
        assert_eq!(reduce(Reduction::Mean, &Tensor::constant(Matrix::ones(2, 2))).unwrap().item(), 1.0);
    }

    #[test]
    fn l2_norm_subgradient_at_origin_is_zero() {
        let g = Graph::new();
        let x = g.leaf(v(&[0.0, 0.0, 0.0]));
        let d = grad(&x.l2_norm(), &[&x], false).unwrap();
        assert_eq!(d[0].value().as_slice(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn square_gradient_and_second_derivative_of_cube() {
        let g = Graph::new();
        let x = g.leaf(Matrix::scalar(3.0));
        let d = grad(&x.square(), &[&x], false).unwrap();
        assert_eq!(d[0].item(), 6.0);

        let x = g.leaf(Matrix::scalar(2.0));
        let cube = x.square().mul(&x).unwrap();
        let d1 = grad(&cube, &[&x], true).unwrap();
        assert_eq!(d1[0].item(), 12.0);
        let d2 = grad(&d1[0], &[&x], false).unwrap();
        assert_eq!(d2[0].item(), 12.0);
    }

    #[test]
    fn unrecorded_backward_leaves_graph_untouched() {
        let g = Graph::new();
        let x = g.leaf(v(&[1.0, -2.0]));
        let y = x.sigmoid().sum();
        let before = g.len();
        grad(&y, &[&x], false).unwrap();
        assert_eq!(g.len(), before);
        grad(&y, &[&x], true).unwrap();
        assert!(g.len() > before);
    }

    #[test]
    fn fan_out_accumulates() {
        let g = Graph::new();
        let x = g.leaf(Matrix::scalar(1.5));
        // y = x + x·x + 3x
        let y = x.add(&x.mul(&x).unwrap()).unwrap().add(&x.scale(3.0)).unwrap();
        let d = grad(&y, &[&x], false).unwrap();
        assert_eq!(d[0].item(), 1.0 + 3.0 + 3.0);
    }

    #[test]
    fn unreachable_target_gets_zero_of_its_shape() {
        let g = Graph::new();
        let x = g.leaf(v(&[1.0, 2.0]));
        let y = g.leaf(Matrix::zeros(2, 3));
        let d = grad(&x.sum(), &[&y], false).unwrap();
        assert_eq!(d[0].shape(), Shape::new(2, 3));
        assert_eq!(d[0].value().max_abs(), 0.0);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let g = Graph::new();
        let x = g.leaf(v(&[1.0, 2.0]));
        assert!(matches!(grad(&x, &[&x], false), Err(TensorError::NotScalar(_))));
    }

    #[test]
    fn mixing_graphs_is_an_error() {
        let a = Graph::new().leaf(Matrix::scalar(1.0));
        let b = Graph::new().leaf(Matrix::scalar(1.0));
        assert!(matches!(a.add(&b), Err(TensorError::GraphMismatch(_))));
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let x = Tensor::constant(Matrix::from_vec(2, 3, vec![1.0, 2.0, 3.0, -100.0, 0.0, 100.0]));
        let p = x.softmax_rows();
        for s in p.value().row_sums().as_slice() {
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn node_count_is_deterministic() {
        let run = || {
            let g = Graph::new();
            let x = g.leaf(Matrix::from_vec(2, 2, vec![0.1, 0.2, 0.3, 0.4]));
            let w = g.leaf(Matrix::from_vec(2, 2, vec![1.0, -1.0, 0.5, 2.0]));
            let loss = x.matmul(&w).unwrap().sigmoid().sum_squares();
            let d = grad(&loss, &[&x], true).unwrap();
            grad(&d[0].sum(), &[&w], false).unwrap();
            g.len()
        };
        assert_eq!(run(), run());
    }
}
