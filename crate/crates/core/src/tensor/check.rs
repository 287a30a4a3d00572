use super::Matrix;

/// Central-difference gradient of `f` at `x`, evaluated without any graph.
///
/// Panics if `step` is not positive.
pub fn finite_diff(mut f: impl FnMut(&Matrix) -> f64, x: &Matrix, step: f64) -> Matrix {
    assert!(step > 0.0, "finite-difference step must be positive");
    let mut probe = x.clone();
    let mut out = Matrix::zeros(x.rows(), x.cols());
    for i in 0..x.len() {
        let orig = probe.as_slice()[i];
        probe.as_mut_slice()[i] = orig + step;
        let up = f(&probe);
        probe.as_mut_slice()[i] = orig - step;
        let down = f(&probe);
        probe.as_mut_slice()[i] = orig;
        out.as_mut_slice()[i] = (up - down) / (2.0 * step);
    }
    out
}

/// `‖a − b‖∞ / max(‖a‖∞, ‖b‖∞, floor)`.
///
/// The floor keeps near-zero gradients from turning rounding noise into a
/// large relative error.
pub fn relative_error(a: &Matrix, b: &Matrix, floor: f64) -> f64 {
    assert_eq!(a.shape(), b.shape());
    let diff = a.zip_map(b, |x, y| x - y).max_abs();
    diff / a.max_abs().max(b.max_abs()).max(floor)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_at_one() {
        let d = finite_diff(|m| m.item() * m.item(), &Matrix::scalar(1.0), 1e-5);
        assert!((d.item() - 2.0).abs() < 1e-8);
    }

    #[test]
    fn constant_function_has_zero_gradient() {
        let d = finite_diff(|_| 4.2, &Matrix::row_vector(&[1.0, 2.0, 3.0]), 1e-5);
        assert_eq!(d.max_abs(), 0.0);
    }
}
