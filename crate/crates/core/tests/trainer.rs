use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use dcs::data::{synth_labeled_clusters, synth_sparse, Dataset};
use dcs::latent::sample_latents;
use dcs::nets::{generate, measure, MeasurementFamily, OutputActivation};
use dcs::objectives::squared_distance;
use dcs::tensor::Tensor;
use dcs::trainer::{train_loop, DataKind, Family, MetricRow, RunConfig, Scheme, TrainState};

fn dcs_config(measurement: MeasurementFamily) -> RunConfig {
    RunConfig {
        family: Family::Dcs,
        measurement,
        measurement_dim: 4,
        signal_dim: 12,
        latent_dim: 6,
        gen_hidden: 16,
        gen_depth: 1,
        meas_hidden: 16,
        meas_depth: 1,
        output_activation: OutputActivation::Identity,
        batch_size: 8,
        total_steps: 30,
        metrics_interval: 5,
        lr: 1e-3,
        data: DataKind::SynthSparse,
        data_k: 2,
        ..RunConfig::default()
    }
}

fn gan_config(family: Family) -> RunConfig {
    RunConfig {
        family,
        scheme: Scheme::Alternating,
        num_classes: 4,
        signal_dim: 2,
        latent_dim: 4,
        gen_hidden: 16,
        gen_depth: 1,
        meas_hidden: 16,
        meas_depth: 1,
        output_activation: OutputActivation::Identity,
        batch_size: 16,
        total_steps: 30,
        metrics_interval: 5,
        lr: 1e-3,
        data: DataKind::SynthClusters,
        ..RunConfig::default()
    }
}

fn sparse() -> Dataset {
    synth_sparse(256, 12, 2, 3).unwrap()
}

fn clusters() -> Dataset {
    synth_labeled_clusters(256, 2, 4, 0.05, 3).unwrap()
}

fn run(cfg: RunConfig, data: &Dataset) -> (TrainState, Vec<MetricRow>) {
    let mut st = TrainState::new(cfg, data.len()).unwrap();
    let probe = data.signals.select_rows(&[0, 1, 2, 3, 4]);
    let probe = (st.config.family == Family::Dcs).then_some(&probe);
    let rows = train_loop(&mut st, data, probe, &mut ()).unwrap();
    (st, rows)
}

#[test]
fn zero_latent_steps_loss_is_error_at_start() {
    let data = sparse();
    let cfg = RunConfig { latent_steps: 0, ..dcs_config(MeasurementFamily::RandomLinear) };
    let mut st = TrainState::new(cfg, data.len()).unwrap();

    let mut shadow = st.clone();
    let idx = shadow.batches.next_batch();
    let z0 = sample_latents(&mut shadow.rng, idx.len(), st.config.latent_dim);
    let x = Tensor::constant(data.signals.select_rows(&idx));
    let (theta, phi) = (st.theta.constants(), st.phi.constants());
    let m = measure(&phi, &st.model.meas, &x).unwrap();
    let m_hat = measure(&phi, &st.model.meas, &generate(&theta, &st.model.gen, &Tensor::constant(z0)).unwrap()).unwrap();
    let expected = squared_distance(&m, &m_hat).unwrap().mean().item();

    let metrics = st.train_step(&data).unwrap();
    assert!((metrics.loss_g - expected).abs() < 1e-12, "{} vs {expected}", metrics.loss_g);
    assert_eq!(metrics.z_move, 0.0);
}

#[test]
fn fixed_measurement_makes_schemes_agree() {
    let data = sparse();
    let cfg = dcs_config(MeasurementFamily::RandomLinear);
    let (a, rows_a) = run(RunConfig { scheme: Scheme::Joint, ..cfg.clone() }, &data);
    let (b, rows_b) = run(RunConfig { scheme: Scheme::Alternating, ..cfg }, &data);
    assert_eq!(rows_a.len(), rows_b.len());
    assert!(rows_a.iter().zip(&rows_b).all(|(x, y)| x.same_values(y)));
    assert_eq!(a.theta, b.theta);
}

#[test]
fn random_linear_measurement_never_moves() {
    let data = sparse();
    let cfg = dcs_config(MeasurementFamily::RandomLinear);
    let before = TrainState::new(cfg.clone(), data.len()).unwrap();
    let (after, _) = run(cfg, &data);
    assert_eq!(before.phi.fingerprint(), after.phi.fingerprint());
    assert_ne!(before.theta.fingerprint(), after.theta.fingerprint());
}

#[test]
fn alternating_updates_touch_one_side_only() {
    for (cfg, data) in [
        (gan_config(Family::CsGan), clusters()),
        (gan_config(Family::LsGan), clusters()),
        (gan_config(Family::CsSgan), clusters()),
        (RunConfig { scheme: Scheme::Alternating, ..dcs_config(MeasurementFamily::LearnedLinear) }, sparse()),
    ] {
        let mut st = TrainState::new(cfg, data.len()).unwrap();
        for _ in 0..3 {
            let (_, updates) = st.compute_step(&data).unwrap();
            let (theta, phi) = (st.theta.fingerprint(), st.phi.fingerprint());
            st.apply_generator_update(&updates).unwrap();
            assert_eq!(st.phi.fingerprint(), phi);
            assert_ne!(st.theta.fingerprint(), theta);
            let theta = st.theta.fingerprint();
            st.apply_measurement_update(&updates).unwrap();
            assert_eq!(st.theta.fingerprint(), theta);
            assert_ne!(st.phi.fingerprint(), phi);
        }
    }
}

#[test]
fn equal_seeds_give_identical_runs() {
    let data = sparse();
    for cfg in [dcs_config(MeasurementFamily::LearnedLinear), RunConfig { noise_sigma: 0.1, ..dcs_config(MeasurementFamily::LearnedMlp) }] {
        let (a, rows_a) = run(cfg.clone(), &data);
        let (b, rows_b) = run(cfg.clone(), &data);
        assert!(rows_a.iter().zip(&rows_b).all(|(x, y)| x.same_values(y)));
        assert_eq!(a.theta, b.theta);
        assert_eq!(a.phi, b.phi);
        let (c, _) = run(RunConfig { seed: 1, ..cfg }, &data);
        assert_ne!(a.theta, c.theta);
    }
    let data = clusters();
    let (a, _) = run(gan_config(Family::CsSgan), &data);
    let (b, _) = run(gan_config(Family::CsSgan), &data);
    assert_eq!(a.theta, b.theta);
}

#[test]
fn zero_steps_returns_initial_parameters() {
    let data = sparse();
    let cfg = RunConfig { total_steps: 0, ..dcs_config(MeasurementFamily::LearnedLinear) };
    let fresh = TrainState::new(cfg.clone(), data.len()).unwrap();
    let (st, rows) = run(cfg, &data);
    assert!(rows.is_empty());
    assert_eq!(st.theta, fresh.theta);
    assert_eq!(st.phi, fresh.phi);
    assert_eq!(st.step, 0);
}

#[test]
fn metric_series_has_one_row_per_interval() {
    let data = sparse();
    for (steps, interval, expected) in [(30, 5, 6), (23, 5, 4), (4, 5, 0), (1, 1, 1)] {
        let cfg = RunConfig { total_steps: steps, metrics_interval: interval, ..dcs_config(MeasurementFamily::LearnedLinear) };
        let (_, rows) = run(cfg, &data);
        assert_eq!(rows.len(), expected);
        assert!(rows.iter().enumerate().all(|(i, r)| r.step == (i as u64 + 1) * interval));
        assert!(rows.iter().all(|r| r.recon_error.is_some()));
    }
    let (_, rows) = run(gan_config(Family::CsGan), &clusters());
    assert!(rows.iter().all(|r| r.recon_error.is_none()));
}

#[test]
fn no_latent_movement_means_no_transport_penalty() {
    let data = clusters();
    let cfg = RunConfig { latent_steps: 0, beta: 100.0, ..gan_config(Family::CsGan) };
    let mut st = TrainState::new(cfg, data.len()).unwrap();
    let mut shadow = st.clone();
    let idx = shadow.batches.next_batch();
    let z0 = sample_latents(&mut shadow.rng, idx.len(), st.config.latent_dim);
    let fake = generate(&st.theta.constants(), &st.model.gen, &Tensor::constant(z0)).unwrap();
    let d = measure(&st.phi.constants(), &st.model.meas, &fake).unwrap();
    let expected = d.value().as_slice().iter().map(|p| -p.ln()).sum::<f64>() / idx.len() as f64;
    let m = st.train_step(&data).unwrap();
    assert_eq!(m.z_move, 0.0);
    assert!((m.loss_g - expected).abs() < 1e-12);
}

#[test]
fn transport_penalty_keeps_latents_close() {
    let data = synth_labeled_clusters(2000, 2, 8, 0.05, 1).unwrap();
    let cfg = RunConfig { num_classes: 8, latent_steps: 3, beta: 3.0, total_steps: 1500, lr: 5e-4, ..gan_config(Family::CsGan) };
    let mut st = TrainState::new(cfg, data.len()).unwrap();
    for _ in 0..1500 {
        let m = st.train_step(&data).unwrap();
        assert!(m.all_finite());
        assert!(m.z_move < 1.0, "step {}: {}", st.step, m.z_move);
    }
}

#[test]
fn classifier_rejects_out_of_range_labels() {
    let mut data = clusters();
    data.labels.as_mut().unwrap()[0] = 7;
    let cfg = RunConfig { batch_size: 256, ..gan_config(Family::CsSgan) };
    let mut st = TrainState::new(cfg, data.len()).unwrap();
    let err = st.train_step(&data).unwrap_err().to_string();
    assert!(err.contains("label 7"), "{err}");
}

#[test]
fn classifier_needs_labels() {
    let data = Dataset::new("unlabelled", clusters().signals, None).unwrap();
    let mut st = TrainState::new(gan_config(Family::CsSgan), data.len()).unwrap();
    assert!(st.train_step(&data).is_err());
}

#[test]
fn every_family_trains_with_finite_metrics() {
    let cases = [
        (dcs_config(MeasurementFamily::RandomLinear), sparse()),
        (dcs_config(MeasurementFamily::LearnedLinear), sparse()),
        (RunConfig { scheme: Scheme::Alternating, ..dcs_config(MeasurementFamily::LearnedMlp) }, sparse()),
        (gan_config(Family::CsGan), clusters()),
        (RunConfig { teacher_forcing: false, ..gan_config(Family::CsGan) }, clusters()),
        (gan_config(Family::LsGan), clusters()),
        (gan_config(Family::CsSgan), clusters()),
    ];
    for (cfg, data) in cases {
        let (st, rows) = run(cfg, &data);
        assert_eq!(st.step, 30);
        assert!(rows.iter().all(|r| r.loss_g.is_finite() && r.loss_f.is_finite() && r.alpha > 0.0));
    }
}

#[test]
fn joint_training_reduces_synthetic_reconstruction_error() {
    let data = synth_sparse(4000, 12, 2, 5).unwrap();
    let (train, probe) = data.split_tail(200);
    let cfg = RunConfig { total_steps: 2000, metrics_interval: 2000, lr: 3e-3, latent_dim: 20, gen_hidden: 64, ..dcs_config(MeasurementFamily::LearnedLinear) };
    let mut st = TrainState::new(cfg, train.len()).unwrap();
    let before = st.probe_error(&probe.signals).unwrap();
    let rows = train_loop(&mut st, &train, Some(&probe.signals), &mut ()).unwrap();
    let after = rows.last().unwrap().recon_error.unwrap();
    assert!(after < 0.9 * before, "{before} -> {after}");
}

#[test]
fn sampling_needs_a_free_measurement() {
    let st = TrainState::new(dcs_config(MeasurementFamily::LearnedLinear), 64).unwrap();
    let z0 = sample_latents(&mut ChaCha8Rng::seed_from_u64(0), 3, 6);
    assert!(dcs::trainer::sample(&st.model, &st.theta, &st.phi, &z0, None, 3).is_err());
    let st = TrainState::new(gan_config(Family::CsSgan), 64).unwrap();
    let z0 = sample_latents(&mut ChaCha8Rng::seed_from_u64(0), 3, 4);
    assert!(dcs::trainer::sample(&st.model, &st.theta, &st.phi, &z0, None, 3).is_err());
    let s = dcs::trainer::sample(&st.model, &st.theta, &st.phi, &z0, Some(&[0, 1, 2]), 3).unwrap();
    assert_eq!(s.x.shape().rows, 3);
}
