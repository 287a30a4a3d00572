//! Training: per-family steps, the Adam optimiser, the outer loop and its
//! metrics, plus reconstruction and evaluation of trained parameters.

mod adam;
mod config;
mod recon;
mod run;
mod step;

pub use adam::{AdamConfig, AdamState};
pub use config::{DataKind, Family, RunConfig, Scheme};
pub use recon::{evaluate, reconstruct, sample, EvalSummary, LatentSamples, Reconstruction};
pub use run::{train_loop, train_until, MetricRow, Observer, METRICS_HEADER};
pub use step::{StepMetrics, TrainState, Updates};

use crate::error::{Error, Result};
use crate::nets::{generate, measure, measure_logits, Bound, GeneratorSpec, MeasurementSpec};
use crate::objectives::{gan_measurement_error, gan_measurement_error_soft, lsgan_measurement_error, sgan_measurement_error_logits, squared_distance};
use crate::tensor::{Tensor, TensorError};

/// Independent seed streams derived from one run seed.
pub mod seeds {
    pub const GEN_INIT: u64 = 1;
    pub const MEAS_INIT: u64 = 2;
    pub const BATCHES: u64 = 3;
    pub const STEPS: u64 = 4;
    pub const PROBE: u64 = 5;
    pub const RECONSTRUCT: u64 = 6;

    /// SplitMix64 of `seed` offset by the stream tag.
    pub fn derive(seed: u64, stream: u64) -> u64 {
        let mut z = seed.wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
}

/// The architecture pair and the measurement error that couples them.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub family: Family,
    pub gen: GeneratorSpec,
    pub meas: MeasurementSpec,
    pub teacher_forcing: bool,
}

impl Model {
    pub fn from_config(cfg: &RunConfig) -> Self {
        Model {
            family: cfg.family,
            gen: cfg.generator_spec(),
            meas: cfg.measurement_spec(),
            teacher_forcing: cfg.teacher_forcing,
        }
    }

    pub fn num_classes(&self) -> Option<usize> {
        self.meas.num_classes()
    }

    /// The measurement the error works on: the classifier family keeps its
    /// logits so log-probabilities never underflow; the others use the
    /// measurement itself.
    pub fn measure(&self, phi: &Bound, x: &Tensor) -> Result<Tensor> {
        match self.family {
            Family::CsSgan => measure_logits(phi, &self.meas, x),
            _ => measure(phi, &self.meas, x),
        }
    }

    /// Per-row measurement error given the measurement `m` of the target and
    /// `m_hat` of the generated signal.
    pub fn error_from(&self, m: &Tensor, m_hat: &Tensor, targets: Option<&[usize]>) -> Result<Tensor> {
        match self.family {
            Family::Dcs => {
                if m.shape() != m_hat.shape() {
                    return Err(TensorError::ShapeMismatch { op: "measurement error", left: m.shape(), right: m_hat.shape() }.into());
                }
                squared_distance(m, m_hat)
            }
            Family::CsGan if self.teacher_forcing => gan_measurement_error(m_hat),
            Family::CsGan => gan_measurement_error_soft(m, m_hat),
            Family::LsGan if self.teacher_forcing => lsgan_measurement_error(m_hat),
            Family::LsGan => squared_distance(m, m_hat),
            Family::CsSgan => {
                let targets = targets.ok_or_else(|| Error::Data("cssgan measurement error needs target classes".into()))?;
                sgan_measurement_error_logits(m_hat, targets)
            }
        }
    }

    /// Per-row measurement error of `G(z)` against `m`.
    pub fn error(&self, theta: &Bound, phi: &Bound, m: &Tensor, z: &Tensor, targets: Option<&[usize]>) -> Result<Tensor> {
        let m_hat = self.measure(phi, &generate(theta, &self.gen, z)?)?;
        self.error_from(m, &m_hat, targets)
    }
}

/// Index of the largest of the first `k` entries of every row.
pub fn argmax_rows(m: &crate::tensor::Matrix, k: usize) -> Vec<usize> {
    (0..m.rows())
        .map(|r| {
            let row = &m.row(r)[..k];
            let mut best = 0;
            for (i, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}
