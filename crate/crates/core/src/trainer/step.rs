use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::{BatchStream, Dataset};
use crate::error::{Error, Result};
use crate::latent::{init_step_size, learned_alpha, optimize_latent, sample_latents, LatentTrace, LOG_ALPHA};
use crate::nets::{generate, measure, Architecture, Bound, ParamSet};
use crate::objectives::{
    gan_discriminator_loss, lsgan_measurement_loss, make_triplet_pairs, rip_loss, sgan_classifier_loss_logits, squared_distance,
    transport_penalty, TripletBatch,
};
use crate::tensor::{grad, Graph, Matrix, Tensor};

use super::{seeds, AdamState, Family, Model, RunConfig, Scheme};

/// Scalars reported for one training step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepMetrics {
    pub loss_g: f64,
    pub loss_f: f64,
    /// Step size used in this step's latent optimisation.
    pub alpha: f64,
    /// Mean `‖ẑ − z₀‖²` over the batch.
    pub z_move: f64,
}

impl StepMetrics {
    pub fn all_finite(&self) -> bool {
        [self.loss_g, self.loss_f, self.alpha, self.z_move].iter().all(|v| v.is_finite())
    }
}

/// Gradients of one step, aligned with the parameter sets.
#[derive(Clone, Debug)]
pub struct Updates {
    pub theta: Vec<Matrix>,
    /// `None` when the measurement is not trainable.
    pub phi: Option<Vec<Matrix>>,
}

/// Everything that evolves during training.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub config: RunConfig,
    pub model: Model,
    /// Generator parameters together with `log_alpha`.
    pub theta: ParamSet,
    pub phi: ParamSet,
    pub adam_gen: AdamState,
    pub adam_meas: AdamState,
    pub rng: ChaCha8Rng,
    pub batches: BatchStream,
    pub step: u64,
}

fn grads_of(loss: &Tensor, params: &Bound) -> Result<Vec<Matrix>> {
    Ok(grad(loss, &params.tensors(), false)?.into_iter().map(|t| t.value().clone()).collect())
}

impl TrainState {
    /// Fresh state for training on `n_train` rows.
    pub fn new(config: RunConfig, n_train: usize) -> Result<Self> {
        config.validate()?;
        let model = Model::from_config(&config);
        let mut theta = model.gen.init_params(seeds::derive(config.seed, seeds::GEN_INIT));
        init_step_size(&mut theta, config.step_size);
        let phi = model.meas.init_params(seeds::derive(config.seed, seeds::MEAS_INIT));
        let adam_gen = AdamState::new(&theta, config.adam());
        let adam_meas = AdamState::new(&phi, config.adam());
        let batches = BatchStream::new(n_train, config.batch_size, seeds::derive(config.seed, seeds::BATCHES))?;
        let rng = ChaCha8Rng::seed_from_u64(seeds::derive(config.seed, seeds::STEPS));
        Ok(TrainState { config, model, theta, phi, adam_gen, adam_meas, rng, batches, step: 0 })
    }

    pub fn alpha(&self) -> f64 {
        self.theta.get(LOG_ALPHA).map(|m| m.item().exp()).unwrap_or(0.0)
    }

    fn meas_trainable(&self) -> bool {
        self.model.meas.family.is_trainable()
    }

    /// One full step: forward pass, gradients, both parameter updates.
    pub fn train_step(&mut self, data: &Dataset) -> Result<StepMetrics> {
        let (metrics, updates) = self.compute_step(data)?;
        self.apply_generator_update(&updates)?;
        self.apply_measurement_update(&updates)?;
        self.step += 1;
        Ok(metrics)
    }

    /// Draws the next batch and latents and computes the step's gradients
    /// without touching any parameter.
    pub fn compute_step(&mut self, data: &Dataset) -> Result<(StepMetrics, Updates)> {
        if data.dim() != self.model.gen.output_dim {
            return Err(Error::Data(format!("data has dimension {}, model expects {}", data.dim(), self.model.gen.output_dim)));
        }
        let idx = self.batches.next_batch();
        let (x, labels) = data.gather(&idx);
        let z0 = sample_latents(&mut self.rng, idx.len(), self.model.gen.latent_dim);
        match self.model.family {
            Family::Dcs => self.step_dcs(x, z0),
            Family::CsGan | Family::LsGan => self.step_gan(x, z0),
            Family::CsSgan => {
                let labels = labels.ok_or_else(|| Error::Data("cssgan needs labelled data".into()))?;
                self.step_sgan(x, &labels, z0)
            }
        }
    }

    pub fn apply_generator_update(&mut self, u: &Updates) -> Result<()> {
        self.adam_gen.update(&mut self.theta, &u.theta)
    }

    pub fn apply_measurement_update(&mut self, u: &Updates) -> Result<()> {
        match &u.phi {
            Some(g) => self.adam_meas.update(&mut self.phi, g),
            None => Ok(()),
        }
    }

    fn bind(&self, graph: &Graph) -> (Bound, Bound) {
        let phi = if self.meas_trainable() { self.phi.bind(graph) } else { self.phi.constants() };
        (self.theta.bind(graph), phi)
    }

    fn latent_trace(&self, graph: &Graph, theta: &Bound, phi: &Bound, m: &Tensor, z0: Matrix, targets: Option<&[usize]>) -> Result<(LatentTrace, f64)> {
        let alpha = learned_alpha(theta)?;
        let error = |m: &Tensor, z: &Tensor| self.model.error(theta, phi, m, z, targets);
        let trace = optimize_latent(graph, error, m, &Tensor::constant(z0), self.config.latent_steps, &alpha, true)?;
        let z_move = squared_distance(trace.last(), trace.initial())?.value().sum() / m.shape().rows as f64;
        Ok((trace, z_move))
    }

    fn step_dcs(&mut self, x: Matrix, z0: Matrix) -> Result<(StepMetrics, Updates)> {
        let graph = Graph::new();
        let (theta, phi) = self.bind(&graph);
        let x = Tensor::constant(x);
        let mut m = measure(&phi, &self.model.meas, &x)?;
        if self.config.noise_sigma > 0.0 {
            let s = m.shape();
            let sigma = self.config.noise_sigma;
            let noise: Vec<f64> = (0..s.len()).map(|_| sigma * Distribution::<f64>::sample(&StandardNormal, &mut self.rng)).collect();
            m = m.add(&Tensor::constant(Matrix::from_vec(s.rows, s.cols, noise)))?;
        }
        let (trace, z_move) = self.latent_trace(&graph, &theta, &phi, &m, z0, None)?;
        let loss_g = self.model.error(&theta, &phi, &m, trace.last(), None)?.mean();

        let g0 = generate(&theta, &self.model.gen, trace.initial())?;
        let g_t = generate(&theta, &self.model.gen, trace.last())?;
        let mut triplet = TripletBatch::new(x, g0, g_t)?;
        // Under alternating updates L_F only shapes the measurement.
        if self.config.scheme == Scheme::Alternating || !self.meas_trainable() {
            triplet = triplet.detach_generated();
        }
        let loss_f = rip_loss(&phi, &self.model.meas, &make_triplet_pairs(&triplet))?;

        let metrics = StepMetrics { loss_g: loss_g.item(), loss_f: loss_f.item(), alpha: trace.step_size.item(), z_move };
        let updates = match (self.config.scheme, self.meas_trainable()) {
            (_, false) => Updates { theta: grads_of(&loss_g, &theta)?, phi: None },
            (Scheme::Alternating, true) => Updates { theta: grads_of(&loss_g, &theta)?, phi: Some(grads_of(&loss_f, &phi)?) },
            (Scheme::Joint, true) => {
                let total = loss_g.add(&loss_f)?;
                let wrt: Vec<&Tensor> = theta.tensors().into_iter().chain(phi.tensors()).collect();
                let mut all: Vec<Matrix> = grad(&total, &wrt, false)?.into_iter().map(|t| t.value().clone()).collect();
                let phi_grads = all.split_off(self.theta.len());
                Updates { theta: all, phi: Some(phi_grads) }
            }
        };
        Ok((metrics, updates))
    }

    /// Generator loss at `ẑ_T` plus the transport penalty, and the fake
    /// samples (cut from the graph) for the measurement loss.
    fn generator_side(&self, theta: &Bound, phi: &Bound, trace: &LatentTrace, m: &Tensor, targets: Option<&[usize]>) -> Result<(Tensor, Tensor)> {
        let fake = generate(theta, &self.model.gen, trace.last())?;
        let m_fake = self.model.measure(phi, &fake)?;
        let err = self.model.error_from(m, &m_fake, targets)?.mean();
        let loss_g = err.add(&transport_penalty(trace.last(), trace.initial(), self.config.beta)?)?;
        Ok((loss_g, fake.detach()))
    }

    fn step_gan(&mut self, x: Matrix, z0: Matrix) -> Result<(StepMetrics, Updates)> {
        let graph = Graph::new();
        let (theta, phi) = self.bind(&graph);
        let m_real = self.model.measure(&phi, &Tensor::constant(x))?;
        let (trace, z_move) = self.latent_trace(&graph, &theta, &phi, &m_real, z0, None)?;
        let (loss_g, fake) = self.generator_side(&theta, &phi, &trace, &m_real, None)?;
        let m_fake = self.model.measure(&phi, &fake)?;
        let loss_f = match self.model.family {
            Family::LsGan => lsgan_measurement_loss(&m_real, &m_fake)?,
            _ => gan_discriminator_loss(&m_real, &m_fake)?,
        };
        let metrics = StepMetrics { loss_g: loss_g.item(), loss_f: loss_f.item(), alpha: trace.step_size.item(), z_move };
        Ok((metrics, Updates { theta: grads_of(&loss_g, &theta)?, phi: Some(grads_of(&loss_f, &phi)?) }))
    }

    fn step_sgan(&mut self, x: Matrix, labels: &[usize], z0: Matrix) -> Result<(StepMetrics, Updates)> {
        let k = self.model.num_classes().expect("classifier measurement");
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::Data(format!("label {bad} out of range for {k} classes")));
        }
        let targets: Vec<usize> = (0..labels.len()).map(|_| self.rng.random_range(0..k)).collect();
        let graph = Graph::new();
        let (theta, phi) = self.bind(&graph);
        let logits_real = self.model.measure(&phi, &Tensor::constant(x))?;
        let (trace, z_move) = self.latent_trace(&graph, &theta, &phi, &logits_real, z0, Some(&targets))?;
        let (loss_g, fake) = self.generator_side(&theta, &phi, &trace, &logits_real, Some(&targets))?;
        let logits_fake = self.model.measure(&phi, &fake)?;
        let loss_f = sgan_classifier_loss_logits(&logits_real, labels)?.add(&sgan_classifier_loss_logits(&logits_fake, &vec![k; labels.len()])?)?;
        let metrics = StepMetrics { loss_g: loss_g.item(), loss_f: loss_f.item(), alpha: trace.step_size.item(), z_move };
        Ok((metrics, Updates { theta: grads_of(&loss_g, &theta)?, phi: Some(grads_of(&loss_f, &phi)?) }))
    }
}
