use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::latent::sample_latents;
use crate::tensor::Matrix;

use super::{reconstruct, seeds, Family, TrainState};

pub const METRICS_HEADER: &str = "step,loss_G,loss_F,recon_error,alpha,z_move,wall_ms";

/// One line of the metric series.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub step: u64,
    pub loss_g: f64,
    pub loss_f: f64,
    /// Mean per-item `‖x − x̂‖²` on the probe set (dcs runs only).
    pub recon_error: Option<f64>,
    pub alpha: f64,
    pub z_move: f64,
    /// Mean wall-clock milliseconds per step since the previous row.
    pub wall_ms: f64,
}

impl MetricRow {
    pub fn to_csv(&self) -> String {
        let recon = self.recon_error.map(|v| v.to_string()).unwrap_or_default();
        format!("{},{},{},{},{},{},{:.3}", self.step, self.loss_g, self.loss_f, recon, self.alpha, self.z_move, self.wall_ms)
    }

    /// Equality of everything except timing.
    pub fn same_values(&self, other: &MetricRow) -> bool {
        MetricRow { wall_ms: 0.0, ..self.clone() } == MetricRow { wall_ms: 0.0, ..other.clone() }
    }
}

/// Hooks called by the training loop.
pub trait Observer {
    fn on_metrics(&mut self, _row: &MetricRow) -> Result<()> {
        Ok(())
    }

    fn on_checkpoint(&mut self, _state: &TrainState) -> Result<()> {
        Ok(())
    }
}

impl Observer for () {}

impl TrainState {
    /// Mean reconstruction error on `probe` from fixed starting latents.
    pub fn probe_error(&self, probe: &Matrix) -> Result<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(self.config.seed, seeds::PROBE));
        let z0 = sample_latents(&mut rng, probe.rows(), self.model.gen.latent_dim);
        let r = reconstruct(&self.model, &self.theta, &self.phi, probe, None, &z0, self.config.latent_steps)?;
        Ok(r.mean_error())
    }
}

/// Trains until `state.step == stop` (or leaves the state alone if it is
/// already there), reporting every `metrics_interval` steps and asking for a
/// checkpoint every `checkpoint_interval` steps.
pub fn train_until(state: &mut TrainState, data: &Dataset, probe: Option<&Matrix>, stop: u64, observer: &mut dyn Observer) -> Result<Vec<MetricRow>> {
    let mut rows = Vec::new();
    let mut clock = Instant::now();
    let mut since = 0u64;
    while state.step < stop {
        let m = state.train_step(data)?;
        since += 1;
        if !m.all_finite() {
            return Err(Error::Data(format!("non-finite metric at step {}: {m:?}", state.step)));
        }
        if state.step.is_multiple_of(state.config.metrics_interval) {
            let wall_ms = clock.elapsed().as_secs_f64() * 1e3 / since as f64;
            let recon_error = match (state.model.family, probe) {
                (Family::Dcs, Some(p)) => Some(state.probe_error(p)?),
                _ => None,
            };
            let row = MetricRow { step: state.step, loss_g: m.loss_g, loss_f: m.loss_f, recon_error, alpha: m.alpha, z_move: m.z_move, wall_ms };
            observer.on_metrics(&row)?;
            rows.push(row);
            clock = Instant::now();
            since = 0;
        }
        if state.step.is_multiple_of(state.config.checkpoint_interval) {
            observer.on_checkpoint(state)?;
        }
    }
    Ok(rows)
}

/// Runs to `total_steps` and checkpoints once more at exit.
pub fn train_loop(state: &mut TrainState, data: &Dataset, probe: Option<&Matrix>, observer: &mut dyn Observer) -> Result<Vec<MetricRow>> {
    let rows = train_until(state, data, probe, state.config.total_steps, observer)?;
    observer.on_checkpoint(state)?;
    Ok(rows)
}
