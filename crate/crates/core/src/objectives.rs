//! Losses of the model family, all written so that smaller is better.
//!
//! Per-item measurement errors return a `B × 1` column (one row per batch
//! item) because latent optimisation needs them separately; training losses
//! return batch-mean scalars.

use crate::error::{Error, Result};
use crate::nets::{generate, measure, Bound, GeneratorSpec, MeasurementSpec};
use crate::tensor::{Matrix, Shape, Tensor, TensorError};

/// Probabilities are clamped to at least this before taking logarithms.
pub const PROB_FLOOR: f64 = 1e-7;
pub const DEFAULT_TRANSPORT_BETA: f64 = 3.0;

/// Per-row squared Euclidean distance.
pub fn squared_distance(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    Ok(a.sub(b)?.row_sum_squares())
}

/// `‖m − F(G(z))‖²` for every row.
pub fn measurement_error_l2(
    m: &Tensor,
    z: &Tensor,
    theta: &Bound,
    gen: &GeneratorSpec,
    phi: &Bound,
    meas: &MeasurementSpec,
) -> Result<Tensor> {
    let x_hat = generate(theta, gen, z)?;
    let m_hat = measure(phi, meas, &x_hat)?;
    if m_hat.shape() != m.shape() {
        return Err(TensorError::ShapeMismatch { op: "measurement_error_l2", left: m.shape(), right: m_hat.shape() }.into());
    }
    squared_distance(m, &m_hat)
}

/// Mean of `(‖F(x1) − F(x2)‖ − ‖x1 − x2‖)²` over all rows of all pairs.
///
/// Linear measurements evaluate `F(x1 − x2)`; for nonlinear ones the
/// measured distance is `‖F(x1) − F(x2)‖`. The two coincide for linear `F`.
pub fn rip_loss(phi: &Bound, spec: &MeasurementSpec, pairs: &[(Tensor, Tensor)]) -> Result<Tensor> {
    if pairs.is_empty() {
        return Err(Error::Data("rip_loss needs at least one pair".into()));
    }
    let mut total: Option<Tensor> = None;
    let mut rows = 0usize;
    for (x1, x2) in pairs {
        if x1.shape() != x2.shape() {
            return Err(TensorError::ShapeMismatch { op: "rip_loss", left: x1.shape(), right: x2.shape() }.into());
        }
        let diff = x1.sub(x2)?;
        let measured = if spec.family.is_linear() {
            measure(phi, spec, &diff)?
        } else {
            measure(phi, spec, x1)?.sub(&measure(phi, spec, x2)?)?
        };
        let gap = measured.row_norms().sub(&diff.row_norms())?.square().sum();
        rows += x1.shape().rows;
        total = Some(match total {
            None => gap,
            Some(t) => t.add(&gap)?,
        });
    }
    Ok(total.expect("non-empty").scale(1.0 / rows as f64))
}

/// A real sample with the generated samples at the start and end of latent
/// optimisation (row-batched).
#[derive(Clone, Debug)]
pub struct TripletBatch {
    pub x_data: Tensor,
    pub g0: Tensor,
    pub g_t: Tensor,
}

impl TripletBatch {
    pub fn new(x_data: Tensor, g0: Tensor, g_t: Tensor) -> Result<Self> {
        for other in [&g0, &g_t] {
            if other.shape() != x_data.shape() {
                return Err(TensorError::ShapeMismatch { op: "triplet", left: x_data.shape(), right: other.shape() }.into());
            }
        }
        Ok(TripletBatch { x_data, g0, g_t })
    }

    /// Cuts the generated members from the graph.
    pub fn detach_generated(&self) -> Self {
        TripletBatch { x_data: self.x_data.clone(), g0: self.g0.detach(), g_t: self.g_t.detach() }
    }
}

/// The three pairs `(x, g0)`, `(x, gT)`, `(g0, gT)`, in that order.
pub fn make_triplet_pairs(t: &TripletBatch) -> [(Tensor, Tensor); 3] {
    [
        (t.x_data.clone(), t.g0.clone()),
        (t.x_data.clone(), t.g_t.clone()),
        (t.g0.clone(), t.g_t.clone()),
    ]
}

fn check_probabilities(op: &'static str, p: &Tensor) -> Result<()> {
    if let Some(bad) = p.value().as_slice().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(TensorError::Domain { op, detail: format!("probability {bad} outside [0, 1]") }.into());
    }
    Ok(())
}

fn safe_ln(p: &Tensor) -> Result<Tensor> {
    Ok(p.clamp_min(PROB_FLOOR).ln()?)
}

/// `−[ln D(x) + ln(1 − D(x̂))]`, batch-averaged.
pub fn gan_discriminator_loss(d_real: &Tensor, d_fake: &Tensor) -> Result<Tensor> {
    check_probabilities("gan_discriminator_loss", d_real)?;
    check_probabilities("gan_discriminator_loss", d_fake)?;
    let real = safe_ln(d_real)?.mean();
    let fake = safe_ln(&d_fake.neg().add(&Tensor::scalar(1.0))?)?.mean();
    Ok(real.add(&fake)?.neg())
}

/// `−ln D(G(z))` per row: the teacher-forced measurement error, which is
/// also the non-saturating generator loss.
pub fn gan_measurement_error(d_fake: &Tensor) -> Result<Tensor> {
    check_probabilities("gan_measurement_error", d_fake)?;
    Ok(safe_ln(d_fake)?.neg())
}

/// `−[m ln D(G(z)) + (1 − m) ln(1 − D(G(z)))]` per row, with the measured
/// `m = D(x)` in place of the target value 1.
pub fn gan_measurement_error_soft(m: &Tensor, d_fake: &Tensor) -> Result<Tensor> {
    check_probabilities("gan_measurement_error_soft", m)?;
    check_probabilities("gan_measurement_error_soft", d_fake)?;
    let one = Tensor::scalar(1.0);
    let pos = m.mul(&safe_ln(d_fake)?)?;
    let neg = one.sub(m)?.mul(&safe_ln(&one.sub(d_fake)?)?)?;
    Ok(pos.add(&neg)?.neg())
}

/// `(F(x) − 1)² + F(x̂)²`, batch-averaged.
pub fn lsgan_measurement_loss(f_real: &Tensor, f_fake: &Tensor) -> Result<Tensor> {
    let real = f_real.sub(&Tensor::scalar(1.0))?.square().mean();
    Ok(real.add(&f_fake.square().mean())?)
}

/// `‖F(G(z)) − 1‖²` per row.
pub fn lsgan_measurement_error(f_fake: &Tensor) -> Result<Tensor> {
    Ok(f_fake.sub(&Tensor::scalar(1.0))?.row_sum_squares())
}

fn one_hot(rows: usize, classes: usize, labels: &[usize]) -> Matrix {
    let mut m = Matrix::zeros(rows, classes);
    for (r, &l) in labels.iter().enumerate() {
        m.set(r, l, 1.0);
    }
    m
}

fn check_labels(op: &'static str, s: Shape, labels: &[usize]) -> Result<()> {
    if labels.len() != s.rows {
        return Err(TensorError::ShapeMismatch { op, left: s, right: Shape::new(labels.len(), 1) }.into());
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= s.cols) {
        return Err(Error::Data(format!("{op}: label {bad} out of range for {} classes", s.cols)));
    }
    Ok(())
}

fn check_real_targets(probs: &Tensor, targets: &[usize]) -> Result<()> {
    let real_classes = probs.shape().cols.saturating_sub(1);
    if let Some(&bad) = targets.iter().find(|&&t| t >= real_classes) {
        return Err(Error::Data(format!("target class {bad} is not a real class (K = {real_classes})")));
    }
    Ok(())
}

/// `−ln p[label]` for each row.
fn nll_rows(probs: &Tensor, labels: &[usize], op: &'static str) -> Result<Tensor> {
    check_labels(op, probs.shape(), labels)?;
    check_probabilities(op, probs)?;
    let picked = probs.mul(&Tensor::constant(one_hot(probs.shape().rows, probs.shape().cols, labels)))?.row_sums();
    Ok(safe_ln(&picked)?.neg())
}

/// `−ln softmax(logits)[label]` for each row, without any clamping.
fn nll_logits(logits: &Tensor, labels: &[usize], op: &'static str) -> Result<Tensor> {
    let s = logits.shape();
    check_labels(op, s, labels)?;
    Ok(logits.log_softmax_rows().mul(&Tensor::constant(one_hot(s.rows, s.cols, labels)))?.row_sums().neg())
}

/// [`sgan_classifier_loss`] from the classifier's logits.
pub fn sgan_classifier_loss_logits(logits: &Tensor, labels: &[usize]) -> Result<Tensor> {
    Ok(nll_logits(logits, labels, "sgan_classifier_loss")?.mean())
}

/// [`sgan_measurement_error`] from the classifier's logits.
pub fn sgan_measurement_error_logits(logits: &Tensor, targets: &[usize]) -> Result<Tensor> {
    check_real_targets(logits, targets)?;
    nll_logits(logits, targets, "sgan_measurement_error")
}

/// Negative log-likelihood of the labels under the `K+1`-way classifier,
/// batch-averaged. Generated samples carry label `K`.
pub fn sgan_classifier_loss(probs: &Tensor, labels: &[usize]) -> Result<Tensor> {
    Ok(nll_rows(probs, labels, "sgan_classifier_loss")?.mean())
}

/// `−ln p[target]` per row, where every target is a real class (`< K`).
pub fn sgan_measurement_error(probs: &Tensor, targets: &[usize]) -> Result<Tensor> {
    check_real_targets(probs, targets)?;
    nll_rows(probs, targets, "sgan_measurement_error")
}

/// `β · ‖ẑ − z₀‖²`, averaged over rows.
pub fn transport_penalty(z_hat: &Tensor, z0: &Tensor, beta: f64) -> Result<Tensor> {
    if beta < 0.0 {
        return Err(TensorError::Domain { op: "transport_penalty", detail: format!("beta {beta} < 0") }.into());
    }
    Ok(squared_distance(z_hat, z0)?.mean().scale(beta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::{Architecture, MeasurementFamily, OutputActivation, ParamSet};

    fn t(rows: usize, cols: usize, v: &[f64]) -> Tensor {
        Tensor::constant(Matrix::from_vec(rows, cols, v.to_vec()))
    }

    fn linear(f: Matrix) -> (Bound, MeasurementSpec) {
        let spec = MeasurementSpec::linear(MeasurementFamily::LearnedLinear, f.rows(), f.cols());
        let mut p = ParamSet::new();
        p.insert("meas.F", f);
        (p.constants(), spec)
    }

    #[test]
    fn measurement_error_by_hand() {
        // G is an identity-output network that ignores z and emits (1,1,1).
        let gen = GeneratorSpec {
            latent_dim: 2,
            hidden_width: 1,
            depth: 0,
            output_dim: 3,
            output_activation: OutputActivation::Identity,
            leaky_slope: 0.2,
        };
        let mut theta = ParamSet::new();
        theta.insert("gen.w0", Matrix::zeros(2, 3));
        theta.insert("gen.b0", Matrix::row_vector(&[1.0, 1.0, 1.0]));
        let (phi, meas) = linear(Matrix::from_vec(2, 3, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0]));
        let x = t(1, 3, &[1.0, 2.0, 3.0]);
        let m = measure(&phi, &meas, &x).unwrap();
        assert_eq!(m.value().as_slice(), &[1.0, 2.0]);
        let e = measurement_error_l2(&m, &t(1, 2, &[0.6, 0.8]), &theta.constants(), &gen, &phi, &meas).unwrap();
        assert_eq!(e.item(), 1.0);

        // the third coordinate is in the null space of F
        theta.insert("gen.b0", Matrix::row_vector(&[1.0, 2.0, -40.0]));
        let e = measurement_error_l2(&m, &t(1, 2, &[0.6, 0.8]), &theta.constants(), &gen, &phi, &meas).unwrap();
        assert_eq!(e.item(), 0.0);
    }

    #[test]
    fn rip_examples() {
        let (id, spec) = linear(Matrix::identity(3));
        let x1 = t(2, 3, &[1.0, 2.0, 3.0, -1.0, 0.0, 0.5]);
        let x2 = t(2, 3, &[0.0, 2.0, 1.0, 4.0, 4.0, 4.0]);
        assert_eq!(rip_loss(&id, &spec, &[(x1.clone(), x2.clone())]).unwrap().item(), 0.0);
        assert_eq!(rip_loss(&id, &spec, &[(x1.clone(), x1.clone())]).unwrap().item(), 0.0);

        let (twice, spec) = linear(Matrix::from_vec(2, 2, vec![2.0, 0.0, 0.0, 2.0]));
        let a = t(1, 2, &[0.3, 0.4]);
        let b = t(1, 2, &[0.3, 1.4]);
        assert!((rip_loss(&twice, &spec, &[(a, b)]).unwrap().item() - 1.0).abs() < 1e-15);
        assert!(rip_loss(&twice, &spec, &[]).is_err());
    }

    #[test]
    fn triplets() {
        let x = t(1, 2, &[1.0, 0.0]);
        let tb = TripletBatch::new(x.clone(), x.clone(), x.clone()).unwrap();
        let pairs = make_triplet_pairs(&tb);
        assert_eq!(pairs.len(), 3);
        let (id, spec) = linear(Matrix::identity(2));
        assert_eq!(rip_loss(&id, &spec, &pairs).unwrap().item(), 0.0);

        let tb = TripletBatch::new(t(1, 2, &[1.0, 0.0]), t(1, 2, &[2.0, 0.0]), t(1, 2, &[3.0, 0.0])).unwrap();
        let p = make_triplet_pairs(&tb);
        let firsts: Vec<f64> = p.iter().map(|(a, b)| a.value().get(0, 0) * 10.0 + b.value().get(0, 0)).collect();
        assert_eq!(firsts, vec![12.0, 13.0, 23.0]);
        assert!(TripletBatch::new(t(1, 2, &[0.0, 0.0]), t(1, 3, &[0.0; 3]), t(1, 2, &[0.0; 2])).is_err());
    }

    #[test]
    fn gan_losses() {
        let eps = 1e-9;
        let perfect = gan_discriminator_loss(&Tensor::scalar(1.0 - eps), &Tensor::scalar(eps)).unwrap().item();
        assert!(perfect.abs() < 1e-8);
        let half = gan_discriminator_loss(&Tensor::scalar(0.5), &Tensor::scalar(0.5)).unwrap().item();
        assert!((half - 2.0 * 2f64.ln()).abs() < 1e-15);
        assert!((half - 1.3863).abs() < 1e-4);
        let (r, f) = (0.8, 0.3);
        let a = gan_discriminator_loss(&Tensor::scalar(r), &Tensor::scalar(f)).unwrap().item();
        let b = gan_discriminator_loss(&Tensor::scalar(1.0 - f), &Tensor::scalar(1.0 - r)).unwrap().item();
        assert!((a - b).abs() < 1e-15);
        assert!(gan_discriminator_loss(&Tensor::scalar(1.2), &Tensor::scalar(0.5)).is_err());

        assert!(gan_measurement_error(&Tensor::scalar(1.0)).unwrap().item().abs() < 1e-15);
        assert!((gan_measurement_error(&Tensor::scalar(0.5)).unwrap().item() - std::f64::consts::LN_2).abs() < 1e-12);
        let grid: Vec<f64> = (1..100).map(|i| i as f64 / 100.0).collect();
        let errs = gan_measurement_error(&t(99, 1, &grid)).unwrap();
        for (d, e) in grid.iter().zip(errs.value().as_slice()) {
            assert!((e + d.ln()).abs() < 1e-15);
        }
        assert!(errs.value().as_slice().windows(2).all(|w| w[1] < w[0]));

        // with m = 1 the soft error is the teacher-forced one
        let soft = gan_measurement_error_soft(&Tensor::scalar(1.0), &Tensor::scalar(0.3)).unwrap().item();
        assert!((soft + 0.3f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn lsgan_losses() {
        assert_eq!(lsgan_measurement_loss(&Tensor::scalar(1.0), &Tensor::scalar(0.0)).unwrap().item(), 0.0);
        assert_eq!(lsgan_measurement_loss(&Tensor::scalar(0.0), &Tensor::scalar(1.0)).unwrap().item(), 2.0);
        assert_eq!(lsgan_measurement_error(&Tensor::scalar(3.0)).unwrap().item(), 4.0);
    }

    #[test]
    fn sgan_losses() {
        let k1 = 11;
        let uniform = t(1, k1, &vec![1.0 / k1 as f64; k1]);
        let l = sgan_classifier_loss(&uniform, &[10]).unwrap().item();
        assert!((l - 11f64.ln()).abs() < 1e-12 && (l - 2.3979).abs() < 1e-4);
        let e = sgan_measurement_error(&uniform, &[3]).unwrap().item();
        assert!((e - 11f64.ln()).abs() < 1e-12);

        let mut onehot = vec![0.0; k1];
        onehot[4] = 1.0;
        let p = t(1, k1, &onehot);
        assert_eq!(sgan_classifier_loss(&p, &[4]).unwrap().item(), 0.0);
        assert_eq!(sgan_measurement_error(&p, &[4]).unwrap().item(), 0.0);

        assert!(sgan_measurement_error(&uniform, &[10]).is_err());
        assert!(sgan_classifier_loss(&uniform, &[11]).is_err());

        let lo = sgan_measurement_error(&t(1, 3, &[0.2, 0.3, 0.5]), &[0]).unwrap().item();
        let hi = sgan_measurement_error(&t(1, 3, &[0.6, 0.3, 0.1]), &[0]).unwrap().item();
        assert!(hi < lo);
    }

    #[test]
    fn logit_forms_agree_and_survive_underflow() {
        let logits = t(2, 4, &[0.3, -1.0, 2.0, 0.1, 5.0, 0.0, -2.0, 1.0]);
        let probs = logits.softmax_rows();
        let a = sgan_measurement_error(&probs, &[1, 2]).unwrap();
        let b = sgan_measurement_error_logits(&logits, &[1, 2]).unwrap();
        for (x, y) in a.value().as_slice().iter().zip(b.value().as_slice()) {
            assert!((x - y).abs() < 1e-12);
        }
        let la = sgan_classifier_loss(&probs, &[3, 0]).unwrap().item();
        let lb = sgan_classifier_loss_logits(&logits, &[3, 0]).unwrap().item();
        assert!((la - lb).abs() < 1e-12);
        assert!(sgan_measurement_error_logits(&logits, &[3, 0]).is_err());

        // p[0] = e^-60 is far below the clamp, yet the gradient stays exact
        let g = crate::tensor::Graph::new();
        let l = g.leaf(Matrix::row_vector(&[0.0, 60.0, 0.0]));
        let e = sgan_measurement_error_logits(&l, &[0]).unwrap().item();
        assert!((e - 60.0).abs() < 1e-9);
        let d = crate::tensor::grad(&sgan_measurement_error_logits(&l, &[0]).unwrap().sum(), &[&l], false).unwrap();
        assert!((d[0].value().get(0, 0) + 1.0).abs() < 1e-12);
        assert!((d[0].value().get(0, 1) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn transport() {
        let z = t(1, 2, &[0.6, 0.8]);
        assert_eq!(transport_penalty(&z, &z, 3.0).unwrap().item(), 0.0);
        let z_hat = t(1, 2, &[1.6, -0.2]);
        assert!((transport_penalty(&z_hat, &z, DEFAULT_TRANSPORT_BETA).unwrap().item() - 6.0).abs() < 1e-12);
    }

    #[test]
    fn nonlinear_rip_uses_difference_of_measurements() {
        let spec = MeasurementSpec::mlp(MeasurementFamily::LearnedMlp, 2, 3, 4, 1);
        let p = spec.init_params(5).constants();
        let x1 = t(1, 3, &[0.1, 0.2, 0.3]);
        let x2 = t(1, 3, &[0.5, -0.2, 0.0]);
        let got = rip_loss(&p, &spec, &[(x1.clone(), x2.clone())]).unwrap().item();
        let fm = measure(&p, &spec, &x1).unwrap().value().zip_map(measure(&p, &spec, &x2).unwrap().value(), |a, b| a - b);
        let dx = x1.value().zip_map(x2.value(), |a, b| a - b);
        let expect = (fm.norm() - dx.norm()).powi(2);
        assert!((got - expect).abs() < 1e-15);
    }
}
