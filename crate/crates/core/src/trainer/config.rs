//! Run configuration as a flat `key = value` text file.
//!
//! Every field has a key; `#` starts a comment; unknown keys are rejected
//! so a misspelt hyperparameter cannot be silently ignored.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::latent::{DEFAULT_LATENT_DIM, DEFAULT_STEPS, DEFAULT_STEP_SIZE};
use crate::nets::{GeneratorSpec, MeasurementFamily, MeasurementSpec, OutputActivation, DEFAULT_LEAKY_SLOPE};
use crate::objectives::DEFAULT_TRANSPORT_BETA;

use super::adam::AdamConfig;

macro_rules! keyword_enum {
    ($name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        #[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
        pub enum $name {
            $($variant),+
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self {
                    $($name::$variant => $text),+
                })
            }
        }

        impl FromStr for $name {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($text => Ok($name::$variant),)+
                    other => Err(Error::Config(format!(
                        "unknown {} {other:?} (expected one of: {})",
                        stringify!($name),
                        [$($text),+].join(", ")
                    ))),
                }
            }
        }
    };
}

keyword_enum!(Family { Dcs => "dcs", CsGan => "csgan", CsSgan => "cssgan", LsGan => "lsgan" });
keyword_enum!(Scheme { Joint => "joint", Alternating => "alternating" });
keyword_enum!(DataKind { SynthSparse => "synth_sparse", SynthClusters => "synth_clusters", Idx => "idx" });

impl Family {
    pub fn is_adversarial(self) -> bool {
        self != Family::Dcs
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub family: Family,
    pub scheme: Scheme,
    /// Measurement family of `dcs` runs; the other families fix their own.
    pub measurement: MeasurementFamily,
    pub measurement_dim: usize,
    pub num_classes: usize,
    pub meas_hidden: usize,
    pub meas_depth: usize,

    pub latent_dim: usize,
    pub gen_hidden: usize,
    pub gen_depth: usize,
    pub signal_dim: usize,
    pub output_activation: OutputActivation,
    pub leaky_slope: f64,

    /// Latent optimisation steps `T`.
    pub latent_steps: usize,
    /// Initial latent step size `α₀`.
    pub step_size: f64,
    /// Transport penalty weight of the adversarial families.
    pub beta: f64,
    pub noise_sigma: f64,
    /// Use the target value 1 instead of the measured `D(x)` in the
    /// discriminator's measurement error during reconstruction.
    pub teacher_forcing: bool,

    pub batch_size: usize,
    pub total_steps: u64,
    pub seed: u64,
    pub lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,

    pub metrics_interval: u64,
    pub checkpoint_interval: u64,

    pub data: DataKind,
    pub data_n: usize,
    /// Sparsity for `synth_sparse`.
    pub data_k: usize,
    pub data_spread: f64,
    pub data_seed: u64,
    pub data_images: Option<PathBuf>,
    pub data_labels: Option<PathBuf>,
    /// Rows held out from the end of the data to track reconstruction error.
    pub probe_size: usize,

    pub metrics_path: Option<PathBuf>,
    pub checkpoint_path: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        RunConfig {
            family: Family::Dcs,
            scheme: Scheme::Joint,
            measurement: MeasurementFamily::LearnedLinear,
            measurement_dim: 10,
            num_classes: 10,
            meas_hidden: 500,
            meas_depth: 2,
            latent_dim: DEFAULT_LATENT_DIM,
            gen_hidden: 500,
            gen_depth: 2,
            signal_dim: 784,
            output_activation: OutputActivation::Sigmoid,
            leaky_slope: DEFAULT_LEAKY_SLOPE,
            latent_steps: DEFAULT_STEPS,
            step_size: DEFAULT_STEP_SIZE,
            beta: DEFAULT_TRANSPORT_BETA,
            noise_sigma: 0.0,
            teacher_forcing: true,
            batch_size: 64,
            total_steps: 400_000,
            seed: 0,
            lr: adam.lr,
            adam_beta1: adam.beta1,
            adam_beta2: adam.beta2,
            adam_eps: adam.eps,
            metrics_interval: 100,
            checkpoint_interval: 5000,
            data: DataKind::Idx,
            data_n: 10_000,
            data_k: 3,
            data_spread: 0.05,
            data_seed: 0,
            data_images: None,
            data_labels: None,
            probe_size: 256,
            metrics_path: None,
            checkpoint_path: None,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value.parse().map_err(|e| Error::Config(format!("{key}: cannot parse {value:?}: {e}")))
}

fn parse_path(value: &str) -> Option<PathBuf> {
    if value.is_empty() {
        None
    } else {
        Some(PathBuf::from(value))
    }
}

fn show_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

impl RunConfig {
    /// Sets one field from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value;
        match key {
            "family" => self.family = v.parse()?,
            "scheme" => self.scheme = v.parse()?,
            "measurement" => self.measurement = v.parse().map_err(|e: Error| Error::Config(format!("measurement: {e}")))?,
            "measurement_dim" => self.measurement_dim = parse(key, v)?,
            "num_classes" => self.num_classes = parse(key, v)?,
            "meas_hidden" => self.meas_hidden = parse(key, v)?,
            "meas_depth" => self.meas_depth = parse(key, v)?,
            "latent_dim" => self.latent_dim = parse(key, v)?,
            "gen_hidden" => self.gen_hidden = parse(key, v)?,
            "gen_depth" => self.gen_depth = parse(key, v)?,
            "signal_dim" => self.signal_dim = parse(key, v)?,
            "output_activation" => {
                self.output_activation = v.parse().map_err(|e: Error| Error::Config(format!("output_activation: {e}")))?
            }
            "leaky_slope" => self.leaky_slope = parse(key, v)?,
            "latent_steps" => self.latent_steps = parse(key, v)?,
            "step_size" => self.step_size = parse(key, v)?,
            "beta" => self.beta = parse(key, v)?,
            "noise_sigma" => self.noise_sigma = parse(key, v)?,
            "teacher_forcing" => self.teacher_forcing = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "total_steps" => self.total_steps = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "lr" => self.lr = parse(key, v)?,
            "adam_beta1" => self.adam_beta1 = parse(key, v)?,
            "adam_beta2" => self.adam_beta2 = parse(key, v)?,
            "adam_eps" => self.adam_eps = parse(key, v)?,
            "metrics_interval" => self.metrics_interval = parse(key, v)?,
            "checkpoint_interval" => self.checkpoint_interval = parse(key, v)?,
            "data" => self.data = v.parse()?,
            "data_n" => self.data_n = parse(key, v)?,
            "data_k" => self.data_k = parse(key, v)?,
            "data_spread" => self.data_spread = parse(key, v)?,
            "data_seed" => self.data_seed = parse(key, v)?,
            "data_images" => self.data_images = parse_path(v),
            "data_labels" => self.data_labels = parse_path(v),
            "probe_size" => self.probe_size = parse(key, v)?,
            "metrics_path" => self.metrics_path = parse_path(v),
            "checkpoint_path" => self.checkpoint_path = parse_path(v),
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Every field as `(key, value)`, in a fixed order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("family", self.family.to_string()),
            ("scheme", self.scheme.to_string()),
            ("measurement", self.measurement.to_string()),
            ("measurement_dim", self.measurement_dim.to_string()),
            ("num_classes", self.num_classes.to_string()),
            ("meas_hidden", self.meas_hidden.to_string()),
            ("meas_depth", self.meas_depth.to_string()),
            ("latent_dim", self.latent_dim.to_string()),
            ("gen_hidden", self.gen_hidden.to_string()),
            ("gen_depth", self.gen_depth.to_string()),
            ("signal_dim", self.signal_dim.to_string()),
            ("output_activation", self.output_activation.to_string()),
            ("leaky_slope", self.leaky_slope.to_string()),
            ("latent_steps", self.latent_steps.to_string()),
            ("step_size", self.step_size.to_string()),
            ("beta", self.beta.to_string()),
            ("noise_sigma", self.noise_sigma.to_string()),
            ("teacher_forcing", self.teacher_forcing.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("total_steps", self.total_steps.to_string()),
            ("seed", self.seed.to_string()),
            ("lr", self.lr.to_string()),
            ("adam_beta1", self.adam_beta1.to_string()),
            ("adam_beta2", self.adam_beta2.to_string()),
            ("adam_eps", self.adam_eps.to_string()),
            ("metrics_interval", self.metrics_interval.to_string()),
            ("checkpoint_interval", self.checkpoint_interval.to_string()),
            ("data", self.data.to_string()),
            ("data_n", self.data_n.to_string()),
            ("data_k", self.data_k.to_string()),
            ("data_spread", self.data_spread.to_string()),
            ("data_seed", self.data_seed.to_string()),
            ("data_images", show_path(&self.data_images)),
            ("data_labels", show_path(&self.data_labels)),
            ("probe_size", self.probe_size.to_string()),
            ("metrics_path", show_path(&self.metrics_path)),
            ("checkpoint_path", show_path(&self.checkpoint_path)),
        ]
    }

    /// Parses and validates a config text. Keys missing from the text keep
    /// their defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen = std::collections::HashSet::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, got {line:?}", no + 1)))?;
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!("line {}: duplicate key {key:?}", no + 1)));
            }
            cfg.set(key, value.trim()).map_err(|e| match e {
                Error::Config(msg) => Error::Config(format!("line {}: {msg}", no + 1)),
                other => other,
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        self.entries().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |field: &str, msg: String| Err(Error::Config(format!("{field}: {msg}")));
        if self.family.is_adversarial() && self.scheme != Scheme::Alternating {
            return fail("scheme", format!("family {} requires scheme = alternating", self.family));
        }
        if self.family == Family::Dcs {
            use MeasurementFamily::*;
            if !matches!(self.measurement, RandomLinear | LearnedLinear | LearnedMlp) {
                return fail("measurement", format!("{} is not a dcs measurement", self.measurement));
            }
        }
        if self.family == Family::CsSgan && self.num_classes < 2 {
            return fail("num_classes", "must be at least 2".into());
        }
        for (field, v) in [("batch_size", self.batch_size as u64), ("metrics_interval", self.metrics_interval), ("checkpoint_interval", self.checkpoint_interval)] {
            if v == 0 {
                return fail(field, "must be positive".into());
            }
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return fail("step_size", format!("must be positive, got {}", self.step_size));
        }
        if !(self.lr > 0.0) || !(self.adam_eps > 0.0) {
            return fail("lr", "learning rate and adam_eps must be positive".into());
        }
        for (field, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return fail(field, format!("must lie in [0, 1), got {b}"));
            }
        }
        for (field, v) in [("beta", self.beta), ("noise_sigma", self.noise_sigma), ("data_spread", self.data_spread)] {
            if !(v >= 0.0 && v.is_finite()) {
                return fail(field, format!("must be a finite non-negative number, got {v}"));
            }
        }
        match self.data {
            DataKind::Idx if self.data_images.is_none() => return fail("data_images", "required when data = idx".into()),
            DataKind::SynthSparse if self.data_k > self.signal_dim => {
                return fail("data_k", format!("sparsity {} exceeds signal_dim {}", self.data_k, self.signal_dim))
            }
            DataKind::SynthClusters if self.signal_dim < 2 => return fail("signal_dim", "clusters need at least 2 dims".into()),
            _ => {}
        }
        self.generator_spec().validate().map_err(|e| Error::Config(e.to_string()))?;
        self.measurement_spec().validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    pub fn generator_spec(&self) -> GeneratorSpec {
        GeneratorSpec {
            latent_dim: self.latent_dim,
            hidden_width: self.gen_hidden,
            depth: self.gen_depth,
            output_dim: self.signal_dim,
            output_activation: self.output_activation,
            leaky_slope: self.leaky_slope,
        }
    }

    pub fn measurement_spec(&self) -> MeasurementSpec {
        let d = self.signal_dim;
        let mut spec = match self.family {
            Family::Dcs if self.measurement.is_linear() => MeasurementSpec::linear(self.measurement, self.measurement_dim, d),
            Family::Dcs => MeasurementSpec::mlp(self.measurement, self.measurement_dim, d, self.meas_hidden, self.meas_depth),
            Family::CsGan => MeasurementSpec::discriminator(d, self.meas_hidden, self.meas_depth),
            Family::CsSgan => MeasurementSpec::classifier(self.num_classes, d, self.meas_hidden, self.meas_depth),
            Family::LsGan => MeasurementSpec::mlp(MeasurementFamily::LearnedMlp, 1, d, self.meas_hidden, self.meas_depth),
        };
        spec.leaky_slope = self.leaky_slope;
        spec
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig { lr: self.lr, beta1: self.adam_beta1, beta2: self.adam_beta2, eps: self.adam_eps }
    }
}
