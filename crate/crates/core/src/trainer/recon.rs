use crate::error::{Error, Result};
use crate::latent::{learned_alpha, optimize_latent};
use crate::nets::{generate, ParamSet};
use crate::objectives::squared_distance;
use crate::tensor::{Graph, Matrix, Tensor};

use super::{argmax_rows, Family, Model};

/// Rows processed per latent-optimisation batch.
const CHUNK: usize = 256;

#[derive(Clone, Debug, PartialEq)]
pub struct Reconstruction {
    pub x_hat: Matrix,
    /// `‖x − x̂‖²` per item.
    pub sq_errors: Vec<f64>,
    pub z0: Matrix,
    pub z_hat: Matrix,
    pub alpha: f64,
}

impl Reconstruction {
    pub fn mean_error(&self) -> f64 {
        self.sq_errors.iter().sum::<f64>() / self.sq_errors.len().max(1) as f64
    }

    /// `‖ẑ − z₀‖²` per item.
    pub fn z_moves(&self) -> Vec<f64> {
        (0..self.z0.rows())
            .map(|r| self.z0.row(r).iter().zip(self.z_hat.row(r)).map(|(a, b)| (a - b).powi(2)).sum())
            .collect()
    }
}

/// Measures every signal and recovers it by `steps` latent updates from
/// `z0`. For the classifier family the target class of each item is
/// `targets`, or the classifier's own decision when absent.
pub fn reconstruct(
    model: &Model,
    theta: &ParamSet,
    phi: &ParamSet,
    signals: &Matrix,
    targets: Option<&[usize]>,
    z0: &Matrix,
    steps: usize,
) -> Result<Reconstruction> {
    if signals.cols() != model.gen.output_dim {
        return Err(Error::Data(format!("signals have dimension {}, model expects {}", signals.cols(), model.gen.output_dim)));
    }
    if z0.rows() != signals.rows() || z0.cols() != model.gen.latent_dim {
        return Err(Error::Data(format!("starting latents {} do not match {} signals", z0.shape(), signals.rows())));
    }
    let (theta, phi) = (theta.constants(), phi.constants());
    let alpha = learned_alpha(&theta)?;
    let n = signals.rows();
    let mut x_hat = Matrix::zeros(n, model.gen.output_dim);
    let mut z_hat = Matrix::zeros(n, model.gen.latent_dim);
    let mut sq_errors = Vec::with_capacity(n);
    for start in (0..n).step_by(CHUNK) {
        let idx: Vec<usize> = (start..(start + CHUNK).min(n)).collect();
        let x = Tensor::constant(signals.select_rows(&idx));
        let m = model.measure(&phi, &x)?;
        let chunk_targets = match (model.family, targets) {
            (Family::CsSgan, Some(t)) => Some(idx.iter().map(|&i| t[i]).collect::<Vec<_>>()),
            (Family::CsSgan, None) => Some(argmax_rows(m.value(), model.num_classes().unwrap_or(1))),
            _ => None,
        };
        let error = |m: &Tensor, z: &Tensor| model.error(&theta, &phi, m, z, chunk_targets.as_deref());
        let trace = optimize_latent(&Graph::new(), error, &m, &Tensor::constant(z0.select_rows(&idx)), steps, &alpha, false)?;
        let xh = generate(&theta, &model.gen, trace.last())?;
        sq_errors.extend_from_slice(squared_distance(&x, &xh)?.value().as_slice());
        for (k, &i) in idx.iter().enumerate() {
            x_hat.row_mut(i).copy_from_slice(xh.value().row(k));
            z_hat.row_mut(i).copy_from_slice(trace.last().value().row(k));
        }
    }
    Ok(Reconstruction { x_hat, sq_errors, z0: z0.clone(), z_hat, alpha: alpha.item() })
}

/// Summary statistics of a reconstruction run over a dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalSummary {
    pub count: usize,
    pub mean: f64,
    pub std: f64,
    pub alpha: f64,
    pub z_move_mean: f64,
    pub z_move_std: f64,
    /// Classifier accuracy on labelled data (classifier family only).
    pub accuracy: Option<f64>,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len().max(1) as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn evaluate(
    model: &Model,
    theta: &ParamSet,
    phi: &ParamSet,
    signals: &Matrix,
    labels: Option<&[usize]>,
    z0: &Matrix,
    steps: usize,
) -> Result<EvalSummary> {
    let r = reconstruct(model, theta, phi, signals, None, z0, steps)?;
    let (mean, std) = mean_std(&r.sq_errors);
    let (z_move_mean, z_move_std) = mean_std(&r.z_moves());
    let accuracy = match (model.num_classes(), labels) {
        (Some(k), Some(labels)) => {
            let scores = model.measure(&phi.constants(), &Tensor::constant(signals.clone()))?;
            let hits = argmax_rows(scores.value(), k).iter().zip(labels).filter(|(p, l)| p == l).count();
            Some(hits as f64 / labels.len().max(1) as f64)
        }
        _ => None,
    };
    Ok(EvalSummary { count: signals.rows(), mean, std, alpha: r.alpha, z_move_mean, z_move_std, accuracy })
}

/// Generator samples at the end of latent optimisation from `z0`.
///
/// Only families whose measurement error does not read a target
/// measurement can sample this way: the discriminator families under
/// teacher forcing, and the classifier family given `targets`.
pub fn sample(model: &Model, theta: &ParamSet, phi: &ParamSet, z0: &Matrix, targets: Option<&[usize]>, steps: usize) -> Result<LatentSamples> {
    let free = match model.family {
        Family::CsGan | Family::LsGan => model.teacher_forcing,
        Family::CsSgan => targets.is_some(),
        Family::Dcs => false,
    };
    if !free {
        return Err(Error::Data(format!("{} samples need a target measurement", model.family)));
    }
    let (theta, phi) = (theta.constants(), phi.constants());
    let alpha = learned_alpha(&theta)?;
    let m = Tensor::constant(Matrix::zeros(z0.rows(), model.meas.measurement_dim));
    let error = |m: &Tensor, z: &Tensor| model.error(&theta, &phi, m, z, targets);
    let trace = optimize_latent(&Graph::new(), error, &m, &Tensor::constant(z0.clone()), steps, &alpha, false)?;
    let x = generate(&theta, &model.gen, trace.last())?;
    Ok(LatentSamples { x: x.value().clone(), z_hat: trace.last().value().clone() })
}

#[derive(Clone, Debug, PartialEq)]
pub struct LatentSamples {
    pub x: Matrix,
    pub z_hat: Matrix,
}
