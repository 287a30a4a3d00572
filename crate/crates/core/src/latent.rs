//! Latent optimisation: the reconstruction inner loop.
//!
//! Starting from a latent on the unit sphere, each step moves against the
//! gradient of a measurement error and projects back onto the sphere. With
//! recording enabled, the whole unrolled loop stays on the graph so an outer
//! loss can be differentiated through it, including through the step size.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::nets::{Bound, ParamSet};
use crate::tensor::{grad, Graph, Matrix, Tensor, TensorError};

pub const DEFAULT_LATENT_DIM: usize = 100;
pub const DEFAULT_STEPS: usize = 3;
pub const DEFAULT_STEP_SIZE: f64 = 0.01;
/// Name of the step-size parameter inside the generator's [`ParamSet`].
pub const LOG_ALPHA: &str = "log_alpha";

/// Iterates `z_0 … z_T` of one latent optimisation run (batched row-wise).
#[derive(Clone, Debug)]
pub struct LatentTrace {
    pub points: Vec<Tensor>,
    pub step_size: Tensor,
}

impl LatentTrace {
    pub fn initial(&self) -> &Tensor {
        &self.points[0]
    }

    pub fn last(&self) -> &Tensor {
        self.points.last().expect("a trace always holds z0")
    }

    pub fn steps(&self) -> usize {
        self.points.len() - 1
    }
}

/// `n` latents drawn i.i.d. standard normal and scaled to unit norm.
pub fn sample_latents<R: Rng + ?Sized>(rng: &mut R, n: usize, latent_dim: usize) -> Matrix {
    assert!(latent_dim > 0, "latent dimension must be positive");
    let mut z = Matrix::zeros(n, latent_dim);
    for r in 0..n {
        let row = z.row_mut(r);
        loop {
            for v in row.iter_mut() {
                *v = StandardNormal.sample(rng);
            }
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                row.iter_mut().for_each(|v| *v /= norm);
                break;
            }
        }
    }
    z
}

/// One unit-norm latent as a `1 × latent_dim` row.
pub fn sample_latent(latent_dim: usize, seed: u64) -> Matrix {
    sample_latents(&mut ChaCha8Rng::seed_from_u64(seed), 1, latent_dim)
}

/// `normalize(z − α·g)`, row by row.
pub fn latent_step(z: &Tensor, g: &Tensor, alpha: &Tensor) -> Result<Tensor> {
    if z.shape() != g.shape() {
        return Err(TensorError::ShapeMismatch { op: "latent_step", left: z.shape(), right: g.shape() }.into());
    }
    if !alpha.shape().is_scalar() || !(alpha.item() >= 0.0) || !alpha.item().is_finite() {
        return Err(Error::Tensor(TensorError::Domain {
            op: "latent_step",
            detail: format!("step size must be a finite non-negative scalar, got {:?}", alpha.value()),
        }));
    }
    let moved = z.sub(&g.mul(alpha)?)?;
    Ok(moved.normalize_rows()?)
}

/// Runs `steps` latent updates on `error_fn(m, z)`.
///
/// `error_fn` may return per-row errors or a scalar; rows are independent,
/// so the gradient of their sum gives every row its own gradient. With
/// `record` set the gradients are recorded so later losses can be
/// differentiated through the whole trace. Without it every point is a
/// constant and the graph only ever holds the current step.
pub fn optimize_latent<F>(
    graph: &Graph,
    mut error_fn: F,
    m: &Tensor,
    z0: &Tensor,
    steps: usize,
    alpha: &Tensor,
    record: bool,
) -> Result<LatentTrace>
where
    F: FnMut(&Tensor, &Tensor) -> Result<Tensor>,
{
    let start = if z0.is_constant() { graph.leaf(z0.value().clone()) } else { z0.clone() };
    let mut points = vec![if record { start.clone() } else { start.detach() }];
    let mut z = start;
    let alpha_used = if record { alpha.clone() } else { alpha.detach() };
    for _ in 0..steps {
        let err = error_fn(m, &z)?.sum();
        let g = grad(&err, &[&z], record)?.remove(0);
        if record {
            z = latent_step(&z, &g, &alpha_used)?;
            points.push(z.clone());
        } else {
            let next = latent_step(&z.detach(), &g, &alpha_used)?;
            points.push(next.clone());
            z = graph.leaf(next.value().clone());
        }
    }
    Ok(LatentTrace { points, step_size: alpha_used })
}

/// Adds a trainable step size `α = exp(log_alpha)` starting at `alpha0`.
pub fn init_step_size(params: &mut ParamSet, alpha0: f64) {
    assert!(alpha0 > 0.0, "initial step size must be positive");
    params.insert(LOG_ALPHA, Matrix::scalar(alpha0.ln()));
}

/// `exp(log_alpha)` as a differentiable scalar.
pub fn learned_alpha(params: &Bound) -> Result<Tensor> {
    Ok(params.get(LOG_ALPHA)?.exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(v: &[f64]) -> Tensor {
        Tensor::constant(Matrix::row_vector(v))
    }

    #[test]
    fn sampled_latents_are_unit_and_deterministic() {
        let z = sample_latent(DEFAULT_LATENT_DIM, 4);
        assert_eq!(z.cols(), 100);
        assert!((z.norm() - 1.0).abs() < 1e-12);
        assert_eq!(z, sample_latent(100, 4));
    }

    #[test]
    fn step_fixed_points() {
        let z = row(&[0.6, 0.8]);
        let same = latent_step(&z, &row(&[0.0, 0.0]), &Tensor::scalar(0.3)).unwrap();
        assert_eq!(same.value(), z.value());
        let same = latent_step(&z, &row(&[5.0, -1.0]), &Tensor::scalar(0.0)).unwrap();
        assert_eq!(same.value(), z.value());
    }

    #[test]
    fn step_then_normalise_by_hand() {
        let z = row(&[0.6, 0.8]);
        let out = latent_step(&z, &row(&[1.0, 0.0]), &Tensor::scalar(0.1)).unwrap();
        let norm = (0.5f64 * 0.5 + 0.8 * 0.8).sqrt();
        assert!((norm - 0.943_398_1).abs() < 1e-7);
        let got = out.value().as_slice();
        assert!((got[0] - 0.5 / norm).abs() < 1e-15);
        assert!((got[1] - 0.8 / norm).abs() < 1e-15);
        assert!((got[0] - 0.530).abs() < 1e-3 && (got[1] - 0.848).abs() < 1e-3);
    }

    #[test]
    fn degenerate_step_is_an_error() {
        let z = row(&[1.0, 0.0]);
        let err = latent_step(&z, &row(&[1.0, 0.0]), &Tensor::scalar(1.0)).unwrap_err();
        assert!(matches!(err, Error::Tensor(TensorError::DegenerateNorm { row: 0 })));
    }

    #[test]
    fn zero_steps_return_the_start() {
        let g = Graph::new();
        let z0 = Tensor::constant(sample_latent(5, 1));
        let trace = optimize_latent(&g, |_, z| Ok(z.sum_squares()), &Tensor::scalar(0.0), &z0, 0, &Tensor::scalar(0.1), true)
            .unwrap();
        assert_eq!(trace.points.len(), 1);
        assert_eq!(trace.initial().value(), z0.value());
    }

    #[test]
    fn trace_points_are_unit_norm_and_prefix_stable() {
        let target = Tensor::constant(Matrix::from_vec(2, 3, vec![1.0, 2.0, -1.0, 0.0, 0.5, 0.5]));
        let z0 = Tensor::constant(sample_latents(&mut ChaCha8Rng::seed_from_u64(3), 2, 3));
        let run = |steps| {
            let g = Graph::new();
            let err = |m: &Tensor, z: &Tensor| Ok(z.sub(m)?.row_sum_squares());
            optimize_latent(&g, err, &target, &z0, steps, &Tensor::scalar(0.2), true).unwrap()
        };
        let long = run(3);
        assert_eq!(long.steps(), 3);
        for p in &long.points {
            for r in p.value().as_slice().chunks(3) {
                let norm: f64 = r.iter().map(|v| v * v).sum::<f64>().sqrt();
                assert!((norm - 1.0).abs() < 1e-12);
            }
        }
        assert_eq!(run(0).initial().value(), long.initial().value());
        assert_eq!(run(2).points[2].value(), long.points[2].value());
    }

    #[test]
    fn recorded_and_unrecorded_runs_agree() {
        let target = Tensor::constant(Matrix::from_vec(1, 3, vec![0.3, -0.2, 0.9]));
        let z0 = Tensor::constant(sample_latent(3, 8));
        let err = |m: &Tensor, z: &Tensor| Ok(z.sigmoid().sub(m)?.row_sum_squares());
        let a = optimize_latent(&Graph::new(), err, &target, &z0, 3, &Tensor::scalar(0.5), true).unwrap();
        let b = optimize_latent(&Graph::new(), err, &target, &z0, 3, &Tensor::scalar(0.5), false).unwrap();
        for (p, q) in a.points.iter().zip(&b.points) {
            assert_eq!(p.value(), q.value());
        }
        assert!(b.points.iter().all(|p| p.is_constant()));
    }

    #[test]
    fn initial_step_size() {
        let mut p = ParamSet::new();
        init_step_size(&mut p, DEFAULT_STEP_SIZE);
        let alpha = learned_alpha(&p.constants()).unwrap().item();
        assert!((alpha - 0.01).abs() < 1e-15);

        p.insert(LOG_ALPHA, Matrix::scalar(-800.0));
        assert_eq!(learned_alpha(&p.constants()).unwrap().item(), 0.0);
    }
}
